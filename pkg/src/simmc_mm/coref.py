"""Multimodal coreference: which scene objects does the current user
utterance refer to?

Scores come from the matching head applied to the context [CLS] vector and
``o_cls + b_cls`` (object crop plus scene background). Two auxiliary heads,
one on [CLS] (does the utterance refer to anything?) and one on every
[SYSTEM] marker (does that earlier system turn share objects with this
utterance?), feed a three-step rule that turns scores into matches.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from simmc_mm.corpus import Corpus, Dialog, build_context, crop_object
from simmc_mm.corpus.render import resize_nearest
from simmc_mm.encoders import PAD_ID, EncoderConfig, ImageEncoder, TextEncoder, TokenSequence, collate
from simmc_mm.errors import CapabilityError, ConfigError
from simmc_mm.metrics import object_counts, object_f1
from simmc_mm.numeric import ParameterSet, Tensor, no_grad, normal_init, ops
from simmc_mm.numeric.losses import bce_with_logits, cross_entropy
from simmc_mm.pretrain import MatchingHead, MatchingModel, matching_logit
from simmc_mm.training import OptimConfig, Trainer, minibatches, stream

THRESHOLD = 0.5


class Variant(str, enum.Enum):
    PLUS_M = "OursPlusM"
    MINUS_M = "OursMinusM"
    ONLY_S = "OnlyS"
    COMBINED = "Combined"


class Category(str, enum.Enum):
    RELATED = "related"
    UNRELATED = "unrelated"
    OTHERS = "others"


@dataclass(frozen=True)
class MatchDecision:
    object_id: int
    category: Category
    score: float | None
    matched: bool


# -- inference rules ----------------------------------------------------------

def categorize_objects(scene_object_ids, predicted_matching, prior_turns) -> dict[int, Category]:
    """``prior_turns`` maps each earlier system turn to the object ids it
    referenced; ``predicted_matching`` is the subset of those turns the
    system head flagged, or ``None`` when that head is off (every prior turn
    then counts as matching)."""
    if hasattr(scene_object_ids, "object_ids"):
        scene_object_ids = scene_object_ids.object_ids
    matching = set(prior_turns) if predicted_matching is None else set(predicted_matching)
    related, mentioned = set(), set()
    for turn, ids in prior_turns.items():
        mentioned.update(ids)
        if turn in matching:
            related.update(ids)
    out = {}
    for oid in scene_object_ids:
        if oid in related:
            out[oid] = Category.RELATED
        elif oid in mentioned:
            out[oid] = Category.UNRELATED
        else:
            out[oid] = Category.OTHERS
    return out


def _above(scores, oid, threshold) -> bool:
    return scores[oid] >= threshold


def match_decisions(variant, categories: dict[int, Category], scores, utterance_positive: bool,
                    threshold: float = THRESHOLD, use_utterance_head: bool = True) -> list[MatchDecision]:
    """Per-object decisions. For ``Combined``, ``scores`` is the pair
    ``(plus_m_scores, minus_m_scores)``; otherwise one ``id -> score`` map
    (ignored by ``OnlyS``, may be ``None`` there)."""
    variant = Variant(variant)
    plus = minus = scores
    if variant is Variant.COMBINED:
        if not (isinstance(scores, tuple) and len(scores) == 2 and None not in scores):
            raise CapabilityError("Combined needs scores from both a +M and a -M model")
        plus, minus = scores
    gate_closed = use_utterance_head and not utterance_positive
    out = []
    for oid in sorted(categories):
        cat = Category(categories[oid])
        if gate_closed or cat is Category.UNRELATED:
            hit = False
        elif variant is Variant.ONLY_S:
            hit = cat is Category.RELATED
        elif variant is Variant.PLUS_M:
            hit = cat is Category.RELATED and _above(plus, oid, threshold)
        elif variant is Variant.MINUS_M:
            hit = cat is Category.RELATED or _above(minus, oid, threshold)
        else:
            hit = _above(plus, oid, threshold) if cat is Category.RELATED else _above(minus, oid, threshold)
        shown = None
        if variant is Variant.COMBINED:
            src = plus if cat is Category.RELATED else minus
            shown = float(src[oid]) if oid in src else None
        elif variant is not Variant.ONLY_S and scores is not None and oid in scores:
            shown = float(scores[oid])
        out.append(MatchDecision(oid, cat, shown, hit))
    return out


def decide_matches(variant, categories, scores, utterance_positive: bool,
                   threshold: float = THRESHOLD, use_utterance_head: bool = True) -> set[int]:
    return {d.object_id for d in match_decisions(variant, categories, scores, utterance_positive,
                                                 threshold, use_utterance_head) if d.matched}


# -- examples -------------------------------------------------------------------

@dataclass
class CorefExample:
    dialog_id: int
    turn: int
    scene_id: str
    context: TokenSequence
    candidates: list[int]
    gold: set[int]
    system_labels: list[int]          # aligned with context.system_positions
    augmented: bool = False

    @property
    def utterance_label(self) -> int:
        return int(bool(self.gold))


def system_match_label(system_ids, gold) -> int:
    """An earlier system turn matches when it shares at least one object."""
    return int(bool(set(system_ids) & set(gold)))


def _candidates(scene_ids, gold, mentioned, n_neg, rng, use_mention_inform) -> list[int]:
    if rng is None:
        return list(scene_ids)
    pool = set(gold)
    if use_mention_inform:
        pool |= set(mentioned)
    rest = [o for o in scene_ids if o not in pool]
    take = min(n_neg, len(rest))
    if take:
        pool |= {int(o) for o in rng.choice(rest, size=take, replace=False)}
    return sorted(pool)


def build_examples(corpus: Corpus, dialogs: list[Dialog], max_len: int = 128, rng=None,
                   n_neg: int = 2, use_mention_inform: bool = False,
                   augment_system: bool = False) -> list[CorefExample]:
    """One example per user turn. With ``rng`` (training) candidates are the
    gold objects plus ``n_neg`` sampled scene objects, enlarged by the
    dialog's mention list under ``use_mention_inform``; without it every
    scene object is a candidate. ``augment_system`` adds one example per
    system utterance, whose gold set is that utterance's objects."""
    out = []
    for d in dialogs:
        scene_ids = corpus.scene_of(d).object_ids
        for k, t in enumerate(d.turns):
            ctx = build_context(d, k, True, corpus.vocab, max_len=max_len)
            gold = set(t.user_object_ids)
            labels = [system_match_label(d.turns[j].system_object_ids, gold) for j in ctx.system_turns]
            out.append(CorefExample(d.dialog_id, k, d.scene_id, ctx,
                                    _candidates(scene_ids, gold, d.mentioned_object_ids, n_neg, rng,
                                                use_mention_inform), gold, labels))
            if augment_system:
                sctx = build_context(d, k + 1, False, corpus.vocab, max_len=max_len)
                sgold = set(t.system_object_ids)
                out.append(CorefExample(d.dialog_id, k, d.scene_id, sctx,
                                        _candidates(scene_ids, sgold, d.mentioned_object_ids, n_neg, rng,
                                                    use_mention_inform), sgold, [], augmented=True))
    return out


# -- model --------------------------------------------------------------------

@dataclass
class CorefConfig:
    seed: int = 7
    optim: OptimConfig = field(default_factory=lambda: OptimConfig(epochs=5, lr=1e-3))
    use_mention_inform: bool = True
    use_utterance_head: bool = True
    use_system_head: bool = True
    use_system_augmentation: bool = True
    use_itm_init: bool = True
    use_btm_encoder: bool = True
    dialogs_per_batch: int = 2
    n_neg: int = 2
    max_len: int = 128
    # None follows the variant: balanced for +M, plain for -M
    balanced_match_loss: bool | None = None

    @property
    def variant(self) -> Variant:
        return Variant.PLUS_M if self.use_mention_inform else Variant.MINUS_M

    @property
    def balanced(self) -> bool:
        """+M decides Related objects, where the mention pool makes gold a
        minority of hard candidates; -M decides Others, where positives are
        rare at test time too, so it keeps the plain prior."""
        return self.use_mention_inform if self.balanced_match_loss is None else self.balanced_match_loss

    def flags(self) -> dict:
        flags = {k: getattr(self, k) for k in ("use_mention_inform", "use_utterance_head", "use_system_head",
                                                "use_system_augmentation", "use_itm_init", "use_btm_encoder")}
        flags["balanced_match_loss"] = self.balanced
        return flags


class CorefModel:
    """Text, object and background encoders, matching head and the optional
    utterance (``w_u``) and system (``w_s``) heads.

    Without a separate background encoder the object encoder also reads the
    background, downsampled to the crop size.
    """

    def __init__(self, text_cfg: EncoderConfig, image_cfg: EncoderConfig,
                 background_cfg: EncoderConfig | None, variant: Variant, params: ParameterSet,
                 scale: float = 100.0):
        self.text_cfg, self.image_cfg, self.background_cfg = text_cfg, image_cfg, background_cfg
        if background_cfg is not None and background_cfg.d_model != image_cfg.d_model:
            raise ConfigError(f"object width {image_cfg.d_model} != background width {background_cfg.d_model}")
        self.variant = Variant(variant)
        self.params = params
        self.text = TextEncoder(text_cfg, params.subset("text."))
        self.image = ImageEncoder(image_cfg, params.subset("image."))
        self.background = (ImageEncoder(background_cfg, params.subset("background."))
                           if background_cfg is not None else None)
        self.head = MatchingHead(params.subset("head."), scale)

    @property
    def has_utterance_head(self) -> bool:
        return "w_u" in self.params

    @property
    def has_system_head(self) -> bool:
        return "w_s" in self.params

    @classmethod
    def assemble(cls, cfg: CorefConfig, itm: MatchingModel, btm: MatchingModel | None,
                 vocab_size: int, rng) -> "CorefModel":
        """Encoders and head from the pretrained models per ``cfg`` flags;
        anything not loaded starts from ``rng``."""
        text_cfg, image_cfg = itm.text.cfg, itm.image.cfg
        if text_cfg.vocab_size != vocab_size:
            raise ConfigError(f"ITM text vocab {text_cfg.vocab_size} != corpus vocab {vocab_size}")
        ps = ParameterSet()
        if cfg.use_itm_init:
            ps.update(itm.text.params.copy(), "text.")
            ps.update(itm.image.params.copy(), "image.")
            ps.update(itm.head.params.copy(), "head.")
        else:
            ps.update(TextEncoder(text_cfg, None, rng).params, "text.")
            ps.update(ImageEncoder(image_cfg, None, rng).params, "image.")
            ps.update(MatchingHead.create(text_cfg.d_model, image_cfg.d_model,
                                          itm.head.params["wt"].shape[1], rng).params, "head.")
        background_cfg = None
        if cfg.use_btm_encoder:
            if btm is None:
                raise ConfigError("use_btm_encoder needs a BTM model")
            background_cfg = btm.image.cfg
            ps.update(btm.image.params.copy(), "background.")
        d = text_cfg.d_model
        if cfg.use_utterance_head:
            ps["w_u"] = normal_init(rng, d, 2)
        if cfg.use_system_head:
            ps["w_s"] = normal_init(rng, d, 2)
        return cls(text_cfg, image_cfg, background_cfg, cfg.variant, ps, itm.head.scale)

    # -- forward pieces --
    def encode_text(self, contexts: list[TokenSequence]) -> Tensor:
        ids, mask = collate(contexts, PAD_ID)
        return self.text.forward(ids, mask)

    def encode_scenes(self, corpus: Corpus, scene_ids: list[str]) -> tuple[Tensor, dict]:
        """``(rows, d)`` object-plus-background vectors and a
        ``(scene_id, object_id) -> row`` index."""
        crops, owner, keys = [], [], []
        for s, sid in enumerate(scene_ids):
            scene = corpus.scenes[sid]
            for oid in scene.object_ids:
                crops.append(crop_object(scene, oid, self.image_cfg.image_size).pixels)
                owner.append(s)
                keys.append((sid, oid))
        o_cls = self.image.forward(np.array(crops))[:, 0, :]
        backs = [corpus.scenes[sid].background.pixels for sid in scene_ids]
        if self.background is not None:
            b_cls = self.background.forward(np.array(backs))[:, 0, :]
        else:
            size = self.image_cfg.image_size
            b_cls = self.image.forward(np.array([resize_nearest(b, size, size) for b in backs]))[:, 0, :]
        return o_cls + b_cls[np.array(owner)], {k: i for i, k in enumerate(keys)}

    def forward(self, corpus: Corpus, examples: list[CorefExample]):
        """Matching logits over every (example, candidate) row plus the
        utterance and per-[SYSTEM] logits where the heads exist."""
        hidden = self.encode_text([e.context for e in examples])
        t_cls = hidden[:, 0, :]
        scene_ids = list(dict.fromkeys(e.scene_id for e in examples))
        vis, index = self.encode_scenes(corpus, scene_ids)
        ex_rows, obj_rows = [], []
        for i, e in enumerate(examples):
            for oid in e.candidates:
                ex_rows.append(i)
                obj_rows.append(index[(e.scene_id, oid)])
        match = matching_logit(t_cls[np.array(ex_rows)], vis[np.array(obj_rows)], self.head)
        utt = ops.matmul(t_cls, self.params["w_u"]) if self.has_utterance_head else None
        sys_logits, sys_rows = None, []
        if self.has_system_head:
            pos = [(i, p) for i, e in enumerate(examples) if not e.augmented
                   for p in e.context.system_positions]
            sys_rows = pos
            if pos:
                ii, pp = np.array([p[0] for p in pos]), np.array([p[1] for p in pos])
                sys_logits = ops.matmul(hidden[ii, pp], self.params["w_s"])
        return match, utt, sys_logits, sys_rows


def match_loss(match: Tensor, labels: np.ndarray, balanced: bool = True) -> Tensor:
    """BCE over candidate rows. ``balanced`` averages positives and negatives
    separately and weighs the two halves equally, so the 0.5 threshold is not
    dragged down by the surplus of negative candidates."""
    pos, neg = np.flatnonzero(labels == 1), np.flatnonzero(labels == 0)
    if not balanced or not len(pos) or not len(neg):
        return bce_with_logits(match, labels)
    return (bce_with_logits(match[pos], labels[pos]) + bce_with_logits(match[neg], labels[neg])) * 0.5


def joint_loss(model: CorefModel, corpus: Corpus, examples: list[CorefExample],
               balanced: bool = True) -> Tensor:
    """Equal-weight sum of match BCE, utterance CE and system CE; augmented
    examples skip the system term."""
    match, utt, sys_logits, sys_rows = model.forward(corpus, examples)
    labels = np.array([float(oid in e.gold) for e in examples for oid in e.candidates])
    loss = match_loss(match, labels, balanced)
    if utt is not None:
        loss = loss + cross_entropy(utt, np.array([e.utterance_label for e in examples]))
    if sys_logits is not None:
        targets = []
        for i, e in enumerate(examples):
            if not e.augmented:
                targets.extend(e.system_labels)
        loss = loss + cross_entropy(sys_logits, np.array(targets))
    return loss


# -- standalone head calls ----------------------------------------------------

def coref_score(context: TokenSequence, object_crop, background, model: CorefModel) -> float:
    """Score for one context against one crop and one background raster."""
    with no_grad():
        t_cls = model.encode_text([context])[:, 0, :]
        o = model.image.forward(object_crop.pixels[None])[:, 0, :]
        if model.background is not None:
            b = model.background.forward(background.pixels[None])[:, 0, :]
        else:
            size = model.image_cfg.image_size
            b = model.image.forward(resize_nearest(background.pixels, size, size)[None])[:, 0, :]
        return float(ops.sigmoid(matching_logit(t_cls, o + b, model.head)).data[0])


def utterance_classify(context: TokenSequence, model: CorefModel) -> np.ndarray:
    if not model.has_utterance_head:
        raise CapabilityError("model was trained without the utterance head")
    with no_grad():
        return ops.matmul(model.encode_text([context])[:, 0, :], model.params["w_u"]).data[0]


def system_matching(context: TokenSequence, model: CorefModel) -> list[np.ndarray]:
    if not model.has_system_head:
        raise CapabilityError("model was trained without the system-matching head")
    if not context.system_positions:
        return []
    with no_grad():
        h = model.encode_text([context]).data[0]
        return list(h[np.array(context.system_positions)] @ model.params["w_s"].data)


# -- training -------------------------------------------------------------------

@dataclass
class CorefRun:
    model: CorefModel
    config: CorefConfig
    log: list[dict]


def train_coref(corpus: Corpus, itm: MatchingModel, btm: MatchingModel | None,
                cfg: CorefConfig | None = None, eval_split: str | None = None) -> CorefRun:
    cfg = cfg or CorefConfig()
    if isinstance(cfg, dict):
        raise ConfigError("pass a CorefConfig")
    model = CorefModel.assemble(cfg, itm, btm, len(corpus.vocab), stream(cfg.seed, "coref.init"))
    rng = stream(cfg.seed, "coref.sample")
    train_dialogs = corpus.split("train")
    trainer = Trainer(model.params, cfg.optim, -(-len(train_dialogs) // cfg.dialogs_per_batch))
    log = []
    for epoch in range(1, cfg.optim.epochs + 1):
        losses = []
        # whole dialogs per step: their turns share one scene, so few crops to encode
        for idx in minibatches(len(train_dialogs), cfg.dialogs_per_batch, rng):
            examples = build_examples(corpus, [train_dialogs[i] for i in idx], cfg.max_len, rng,
                                      cfg.n_neg, cfg.use_mention_inform, cfg.use_system_augmentation)
            losses.append(trainer.step(lambda examples=examples: joint_loss(model, corpus, examples,
                                                                          cfg.balanced)))
        trainer.checkpoint()
        log.append({"epoch": epoch, "split": "train", "loss": float(np.mean(losses))})
        if eval_split:
            log.append({"epoch": epoch, "split": eval_split,
                        "f1": evaluate_coref(model, corpus, eval_split)["f1"]})
    return CorefRun(model, cfg, log)


# -- evaluation -------------------------------------------------------------

@dataclass
class TurnOutputs:
    scores: dict[int, float]
    utterance_positive: bool
    predicted_turns: set[int] | None


def model_outputs(model: CorefModel, corpus: Corpus, examples: list[CorefExample],
                  batch_size: int = 32) -> list[TurnOutputs]:
    out = []
    with no_grad():
        for s in range(0, len(examples), batch_size):
            chunk = examples[s:s + batch_size]
            match, utt, sys_logits, sys_rows = model.forward(corpus, chunk)
            probs = ops.sigmoid(match).data
            r = 0
            per = []
            for i, e in enumerate(chunk):
                scores = {oid: float(probs[r + j]) for j, oid in enumerate(e.candidates)}
                r += len(e.candidates)
                positive = True if utt is None else bool(utt.data[i, 1] > utt.data[i, 0])
                per.append(TurnOutputs(scores, positive, None if sys_logits is None else set()))
            if sys_logits is not None:
                z = sys_logits.data
                for row, (i, p) in enumerate(sys_rows):
                    if z[row, 1] > z[row, 0]:
                        e = chunk[i]
                        per[i].predicted_turns.add(e.context.system_turns[e.context.system_positions.index(p)])
            out.extend(per)
    return out


def prior_system_turns(dialog: Dialog, turn: int) -> dict[int, set[int]]:
    return {j: set(dialog.turns[j].system_object_ids) for j in range(turn)}


def predict_split(models: dict[Variant, CorefModel], variant, corpus: Corpus, split: str,
                  max_len: int = 128, threshold: float = THRESHOLD) -> list[tuple[CorefExample, list[MatchDecision]]]:
    """Decisions for every user turn of ``split``. ``Combined`` reads
    ``models[PLUS_M]`` and ``models[MINUS_M]`` and gates on the +M heads;
    other variants use ``models[variant]`` (``OnlyS`` falls back to the +M
    model for its system head)."""
    variant = Variant(variant)
    if variant is Variant.COMBINED:
        if Variant.PLUS_M not in models or Variant.MINUS_M not in models:
            raise CapabilityError("Combined needs both a +M and a -M model")
        lead = models[Variant.PLUS_M]
    elif variant is Variant.ONLY_S:
        lead = models.get(Variant.ONLY_S) or models.get(Variant.PLUS_M) or models.get(Variant.MINUS_M)
        if lead is None:
            raise CapabilityError("OnlyS needs a model for its system head")
    else:
        if variant not in models:
            raise CapabilityError(f"no model for variant {variant.value}")
        lead = models[variant]
    examples = build_examples(corpus, corpus.split(split), max_len)
    outs = model_outputs(lead, corpus, examples)
    other = model_outputs(models[Variant.MINUS_M], corpus, examples) if variant is Variant.COMBINED else None
    results = []
    for i, e in enumerate(examples):
        d = corpus.dialog(e.dialog_id)
        prior = prior_system_turns(d, e.turn)
        cats = categorize_objects(corpus.scenes[e.scene_id], outs[i].predicted_turns, prior)
        scores = (outs[i].scores, other[i].scores) if other is not None else outs[i].scores
        results.append((e, match_decisions(variant, cats, scores, outs[i].utterance_positive, threshold,
                                           use_utterance_head=lead.has_utterance_head)))
    return results


def evaluate_coref(models, corpus: Corpus, split: str, variant=None, threshold: float = THRESHOLD) -> dict:
    """Micro F1 of matched objects against gold user references."""
    if isinstance(models, CorefModel):
        variant = variant or models.variant
        models = {models.variant: models}
    variant = Variant(variant or Variant.COMBINED)
    results = predict_split(models, variant, corpus, split, threshold=threshold)
    preds = [{d.object_id for d in ds if d.matched} for _, ds in results]
    golds = [e.gold for e, _ in results]
    tp, fp, fn = object_counts(preds, golds)
    return {"f1": object_f1(preds, golds), "tp": tp, "fp": fp, "fn": fn, "turns": len(results),
            "variant": variant.value, "results": results}


def utterance_accuracy(model: CorefModel, corpus: Corpus, split: str) -> float:
    examples = build_examples(corpus, corpus.split(split))
    outs = model_outputs(model, corpus, examples)
    return float(np.mean([o.utterance_positive == bool(e.gold) for o, e in zip(outs, examples)]))


def with_flags(cfg: CorefConfig, **flags) -> CorefConfig:
    return replace(cfg, **flags)
