"""Token sequences fed to the encoders: object descriptions, dialog contexts
and generation prefixes."""

from __future__ import annotations

from simmc_mm.corpus.records import VISUAL_KEYS, Dialog, ObjectRecord
from simmc_mm.encoders.vocab import TokenSequence, Vocabulary, tokenize
from simmc_mm.errors import LengthError


def build_itm_text(obj: ObjectRecord, vocab: Vocabulary) -> TokenSequence:
    """[CLS] followed by the visual values in VISUAL_KEYS order; empty values are skipped."""
    ids = [vocab.cls_id]
    for key in VISUAL_KEYS:
        value = obj.visual_meta.get(key, "")
        if value:
            ids.extend(tokenize(value, vocab))
    return TokenSequence(ids)


def _turn_blocks(dialog: Dialog, upto_turn: int, include_current_user: bool,
                 vocab: Vocabulary) -> list[tuple[int, list[int], int | None]]:
    """(turn index, ids, offset of [SYSTEM] within ids or None) per turn."""
    blocks = []
    for k in range(upto_turn):
        t = dialog.turns[k]
        user = [vocab.user_id] + tokenize(t.user_utterance, vocab)
        blocks.append((k, user + [vocab.system_id] + tokenize(t.system_utterance, vocab), len(user)))
    if include_current_user:
        t = dialog.turns[upto_turn]
        blocks.append((upto_turn, [vocab.user_id] + tokenize(t.user_utterance, vocab), None))
    return blocks


def build_context(dialog: Dialog, upto_turn: int, include_current_user: bool,
                  vocab: Vocabulary, max_len: int | None = None,
                  reserve: int = 0) -> TokenSequence:
    """``[CLS] [USER] u_1 [SYSTEM] s_1 ...`` over turns before ``upto_turn``,
    plus the user half of ``upto_turn`` when ``include_current_user``.

    With ``max_len`` set, whole turns are dropped oldest first until the
    sequence plus ``reserve`` trailing tokens fits. If the newest block alone
    is still too long, its leading tokens are cut.
    """
    if upto_turn > len(dialog.turns) or (include_current_user and upto_turn >= len(dialog.turns)):
        raise IndexError(f"turn {upto_turn} out of range for dialog {dialog.dialog_id}")
    blocks = _turn_blocks(dialog, upto_turn, include_current_user, vocab)
    if max_len is not None:
        budget = max_len - 1 - reserve
        if budget < 0:
            raise LengthError(f"max_len {max_len} leaves no room for [CLS] and {reserve} reserved")
        total = sum(len(b[1]) for b in blocks)
        while blocks and total > budget and len(blocks) > 1:
            total -= len(blocks.pop(0)[1])
        if blocks and total > budget:
            k, ids, sys_at = blocks[0]
            cut = total - budget
            sys_at = None if sys_at is None or sys_at < cut else sys_at - cut
            blocks = [(k, ids[cut:], sys_at)]
    ids = [vocab.cls_id]
    positions, turns = [], []
    for k, block_ids, sys_at in blocks:
        if sys_at is not None:
            positions.append(len(ids) + sys_at)
            turns.append(k)
        ids.extend(block_ids)
    return TokenSequence(ids, positions, turns)


def flatten_slot_values(slot_values: dict[str, str]) -> str:
    return " ".join(f"{k} : {slot_values[k]}" for k in sorted(slot_values))


def build_generation_input(dialog: Dialog, turn: int, vocab: Vocabulary,
                           max_len: int | None = None, reserve: int = 0) -> TokenSequence:
    """Context through the current user utterance, then
    ``[META] k : v ... [RES]``. ``reserve`` keeps room for the response."""
    meta = ([vocab.meta_id] + tokenize(flatten_slot_values(dialog.turns[turn].slot_values), vocab)
            + [vocab.res_id])
    ctx = build_context(dialog, turn, True, vocab, max_len=max_len, reserve=reserve + len(meta))
    return TokenSequence(ctx.ids + meta, list(ctx.system_positions), list(ctx.system_turns))


def generation_targets(dialog: Dialog, turn: int, vocab: Vocabulary) -> list[int]:
    """Response tokens that follow [RES], closed by [EOS]."""
    return tokenize(dialog.turns[turn].system_utterance, vocab) + [vocab.eos_id]
