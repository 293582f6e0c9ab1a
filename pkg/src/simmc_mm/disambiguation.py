"""Disambiguation classifier: does the current user utterance need a
clarifying question?

The context text goes through a freshly initialised text encoder; crops of
objects the system mentioned earlier go through the ITM image encoder. Their
summaries are fused additively and classified into (not ambiguous, ambiguous).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from simmc_mm.corpus import Corpus, Dialog, build_context, crop_object
from simmc_mm.encoders import PAD_ID, EncoderConfig, ImageEncoder, TextEncoder, TokenSequence, collate
from simmc_mm.encoders.transformer import RasterImage
from simmc_mm.errors import DataError
from simmc_mm.numeric import ParameterSet, Tensor, no_grad, normal_init, ops
from simmc_mm.numeric.losses import cross_entropy
from simmc_mm.pretrain import MatchingModel
from simmc_mm.training import OptimConfig, Trainer, minibatches, stream


def collect_prior_system_ids(dialog: Dialog, turn: int) -> list[int]:
    """Object ids the system referenced before ``turn``, first mention order."""
    if not 0 <= turn < len(dialog.turns):
        raise IndexError(f"turn {turn} out of range for dialog {dialog.dialog_id}")
    seen: dict[int, None] = {}
    for t in dialog.turns[:turn]:
        for oid in sorted(t.system_object_ids):
            seen.setdefault(oid)
    return list(seen)


def collect_prior_system_objects(corpus: Corpus, dialog: Dialog, turn: int,
                                 crop_size: int = 32) -> list[RasterImage]:
    scene = corpus.scene_of(dialog)
    return [crop_object(scene, oid, crop_size) for oid in collect_prior_system_ids(dialog, turn)]


def mean_object_vectors(image: ImageEncoder, groups: list[list[RasterImage]], d_out: int,
                        w_o: Tensor) -> Tensor:
    """``W_o`` applied to the mean [CLS] vector of each group; zero rows for
    empty groups. All crops go through the encoder in one batch."""
    flat = [img.pixels for g in groups for img in g]
    if not flat:
        return Tensor(np.zeros((len(groups), d_out)))
    o_cls = image.forward(np.array(flat))[:, 0, :]
    # averaging matrix: row i spreads 1/n_i over the crops of group i
    avg = np.zeros((len(groups), len(flat)))
    start = 0
    for i, g in enumerate(groups):
        if g:
            avg[i, start:start + len(g)] = 1.0 / len(g)
        start += len(g)
    return ops.matmul(ops.matmul(Tensor(avg), o_cls), w_o)


@dataclass
class DisambiguationConfig:
    seed: int = 7
    optim: OptimConfig = field(default_factory=lambda: OptimConfig(epochs=5, lr=3e-3))
    batch_size: int = 16
    max_len: int = 128
    crop_size: int = 32


class DisambiguationModel:
    def __init__(self, text_cfg: EncoderConfig, image_cfg: EncoderConfig, rng=None,
                 params: ParameterSet | None = None, image_params: ParameterSet | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.text_cfg, self.image_cfg = text_cfg, image_cfg
        if params is not None:
            self.text = TextEncoder(text_cfg, params.subset("text."))
            self.image = ImageEncoder(image_cfg, params.subset("image."))
            self.params = params
            return
        self.text = TextEncoder(text_cfg, None, rng)
        self.image = ImageEncoder(image_cfg, image_params.copy() if image_params is not None else None, rng)
        self.params = ParameterSet()
        self.params.update(self.text.params, "text.")
        self.params.update(self.image.params, "image.")
        self.params["w_o"] = normal_init(rng, image_cfg.d_model, text_cfg.d_model)
        self.params["w_1"] = normal_init(rng, text_cfg.d_model, 2)

    @classmethod
    def from_itm(cls, itm: MatchingModel, vocab_size: int, rng) -> "DisambiguationModel":
        """Image encoder copied from the ITM model; text encoder starts from scratch."""
        text_cfg = itm.text.cfg
        if text_cfg.vocab_size != vocab_size:
            text_cfg = EncoderConfig(**{**text_cfg.to_dict(), "vocab_size": vocab_size})
        return cls(text_cfg, itm.image.cfg, rng, image_params=itm.image.params)

    def logits(self, contexts: list[TokenSequence], objects: list[list[RasterImage]]) -> Tensor:
        """``(B, 2)`` logits ``W_1(t_cls + W_o mean(o_cls))``."""
        ids, mask = collate(contexts, PAD_ID)
        t_cls = self.text.forward(ids, mask)[:, 0, :]
        img = mean_object_vectors(self.image, objects, self.text_cfg.d_model, self.params["w_o"])
        return ops.matmul(t_cls + img, self.params["w_1"])


def disambiguation_forward(context: TokenSequence, objects: list[RasterImage],
                           model: DisambiguationModel) -> np.ndarray:
    with no_grad():
        return model.logits([context], [objects]).data[0]


def decide(logits) -> bool:
    """Class 1 only when it strictly beats class 0, so ties read as not ambiguous."""
    return bool(logits[1] > logits[0])


@dataclass
class LabeledTurn:
    dialog_id: int
    turn: int
    context: TokenSequence
    objects: list[RasterImage]
    label: bool


def labeled_turns(corpus: Corpus, dialogs: list[Dialog], max_len: int = 128,
                  crop_size: int = 32) -> list[LabeledTurn]:
    out = []
    for d in dialogs:
        for k, t in enumerate(d.turns):
            if t.disambiguation_label is None:
                continue
            out.append(LabeledTurn(d.dialog_id, k, build_context(d, k, True, corpus.vocab, max_len=max_len),
                                   collect_prior_system_objects(corpus, d, k, crop_size),
                                   bool(t.disambiguation_label)))
    return out


def _loss(model: DisambiguationModel, items: list[LabeledTurn]) -> Tensor:
    logits = model.logits([x.context for x in items], [x.objects for x in items])
    return cross_entropy(logits, np.array([int(x.label) for x in items]))


def predict_turns(model: DisambiguationModel, items: list[LabeledTurn],
                  batch_size: int = 32) -> tuple[list[bool], np.ndarray]:
    """Predicted labels and class-1 probabilities."""
    preds, probs = [], []
    with no_grad():
        for i in range(0, len(items), batch_size):
            chunk = items[i:i + batch_size]
            z = model.logits([x.context for x in chunk], [x.objects for x in chunk]).data
            preds.extend(decide(row) for row in z)
            probs.extend(ops.softmax(Tensor(z), axis=-1).data[:, 1])
    return preds, np.array(probs)


def predict_disambiguation(model: DisambiguationModel, corpus: Corpus, dialog: Dialog,
                           turn: int, max_len: int = 128) -> bool:
    ctx = build_context(dialog, turn, True, corpus.vocab, max_len=max_len)
    objs = collect_prior_system_objects(corpus, dialog, turn, model.image_cfg.image_size)
    return decide(disambiguation_forward(ctx, objs, model))


@dataclass
class DisambiguationRun:
    model: DisambiguationModel
    config: DisambiguationConfig
    log: list[dict]


def train_subtask1(corpus: Corpus, itm: MatchingModel, cfg: DisambiguationConfig | None = None,
                   eval_split: str = "dev") -> DisambiguationRun:
    """CE training on the turns that carry a disambiguation label."""
    cfg = cfg or DisambiguationConfig()
    train = labeled_turns(corpus, corpus.split("train"), cfg.max_len, cfg.crop_size)
    if not train:
        raise DataError("no disambiguation-labeled turns in the train split")
    model = DisambiguationModel.from_itm(itm, len(corpus.vocab), stream(cfg.seed, "disamb.init"))
    held = labeled_turns(corpus, corpus.split(eval_split), cfg.max_len, cfg.crop_size) if eval_split else []
    rng = stream(cfg.seed, "disamb.sample")
    batches_per_epoch = -(-len(train) // cfg.batch_size)
    trainer = Trainer(model.params, cfg.optim, batches_per_epoch)
    log = []
    for epoch in range(1, cfg.optim.epochs + 1):
        losses = []
        for idx in minibatches(len(train), cfg.batch_size, rng):
            losses.append(trainer.step(lambda idx=idx: _loss(model, [train[i] for i in idx])))
        trainer.checkpoint()
        log.append({"epoch": epoch, "split": "train", "loss": float(np.mean(losses))})
        if held:
            preds, _ = predict_turns(model, held)
            acc = float(np.mean([p == x.label for p, x in zip(preds, held)]))
            log.append({"epoch": epoch, "split": eval_split, "accuracy": acc})
    return DisambiguationRun(model, cfg, log)
