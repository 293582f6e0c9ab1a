"""Closed word-level vocabulary and token sequences."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from simmc_mm.errors import ParseError

PAD, CLS, USER, SYSTEM, META, RES, EOS, UNK = (
    "[PAD]", "[CLS]", "[USER]", "[SYSTEM]", "[META]", "[RES]", "[EOS]", "[UNK]")
SPECIALS = (PAD, CLS, USER, SYSTEM, META, RES, EOS, UNK)
PAD_ID = 0


class Vocabulary:
    """Token <-> id map. Specials take ids 0..7 in ``SPECIALS`` order; the
    remaining words follow in sorted order, so equal word sets give equal ids.
    """

    def __init__(self, words: Iterable[str] = ()):
        extra = sorted(set(words) - set(SPECIALS))
        self._itos = list(SPECIALS) + extra
        self._stoi = {tok: i for i, tok in enumerate(self._itos)}

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Vocabulary":
        words = set()
        for text in texts:
            words.update(text.split())
        return cls(words)

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, token: str) -> bool:
        return token in self._stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._itos == other._itos

    def id(self, token: str) -> int:
        return self._stoi.get(token, self._stoi[UNK])

    def token(self, idx: int) -> str:
        return self._itos[idx]

    @property
    def pad_id(self) -> int:
        return self._stoi[PAD]

    @property
    def cls_id(self) -> int:
        return self._stoi[CLS]

    @property
    def user_id(self) -> int:
        return self._stoi[USER]

    @property
    def system_id(self) -> int:
        return self._stoi[SYSTEM]

    @property
    def meta_id(self) -> int:
        return self._stoi[META]

    @property
    def res_id(self) -> int:
        return self._stoi[RES]

    @property
    def eos_id(self) -> int:
        return self._stoi[EOS]

    @property
    def unk_id(self) -> int:
        return self._stoi[UNK]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self._itos[i] for i in ids]

    def to_table(self) -> str:
        """Sorted ``token<TAB>id`` lines."""
        rows = sorted(self._stoi.items())
        return "".join(f"{tok}\t{i}\n" for tok, i in rows)

    @classmethod
    def from_table(cls, text: str) -> "Vocabulary":
        pairs = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line:
                continue
            tok, sep, idx = line.rpartition("\t")
            if not sep or not idx.isdigit():
                raise ParseError(f"vocabulary table line {lineno}: expected 'token<TAB>id'")
            pairs.append((int(idx), tok))
        pairs.sort()
        itos = [tok for _, tok in pairs]
        if [i for i, _ in pairs] != list(range(len(pairs))) or tuple(itos[:len(SPECIALS)]) != SPECIALS:
            raise ParseError("vocabulary table ids are not contiguous or specials are misplaced")
        vocab = cls()
        vocab._itos = itos
        vocab._stoi = {tok: i for i, tok in enumerate(itos)}
        return vocab


@dataclass
class TokenSequence:
    """Token ids plus the positions of ``[SYSTEM]`` markers.

    ``system_turns[i]`` is the index of the dialog turn whose system utterance
    starts at ``system_positions[i]``. Trailing ``[PAD]`` ids are masked out.
    """

    ids: list[int]
    system_positions: list[int] = field(default_factory=list)
    system_turns: list[int] = field(default_factory=list)
    n_pad: int = 0

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def attention_mask(self) -> np.ndarray:
        mask = np.ones(len(self.ids), dtype=bool)
        if self.n_pad:
            mask[-self.n_pad:] = False
        return mask

    def padded(self, length: int, pad_id: int) -> "TokenSequence":
        extra = length - len(self.ids)
        if extra < 0:
            raise ValueError(f"cannot pad a length-{len(self.ids)} sequence to {length}")
        return TokenSequence(self.ids + [pad_id] * extra, list(self.system_positions),
                             list(self.system_turns), self.n_pad + extra)


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    """Whitespace word tokens mapped to ids; out-of-vocabulary words become [UNK]."""
    return [vocab.id(w) for w in text.split()]


def collate(seqs: list[TokenSequence], pad_id: int) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad to a ``(B, T)`` id matrix and boolean key mask."""
    width = max((len(s) for s in seqs), default=0)
    ids = np.full((len(seqs), width), pad_id, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s.ids
        mask[i, :len(s)] = s.attention_mask
    return ids, mask
