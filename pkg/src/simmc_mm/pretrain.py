"""Image-text matching (crop vs. its metadata text) and background-text
matching (scene background vs. dialog context) pretraining."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from simmc_mm.corpus import Corpus, build_context, build_itm_text, crop_object
from simmc_mm.encoders import PAD_ID, EncoderConfig, ImageEncoder, TextEncoder, TokenSequence, collate
from simmc_mm.errors import ConfigError, SamplingError
from simmc_mm.numeric import LossKind, ParameterSet, Tensor, no_grad, normal_init, ops
from simmc_mm.numeric.losses import bce_with_logits, cross_entropy
from simmc_mm.training import OptimConfig, Trainer, minibatches, stream

SCALE = 100.0
OBJECTIVES = ("itm", "btm")


def text_config(vocab_size: int, **kw) -> EncoderConfig:
    base = dict(layers=2, heads=4, d_model=64, d_ff=128, max_len=128, vocab_size=vocab_size)
    base.update(kw)
    return EncoderConfig(**base)


def crop_config(**kw) -> EncoderConfig:
    """Object crops: 32 px, one 8 px patch per glyph cell."""
    base = dict(layers=2, heads=4, d_model=64, d_ff=128, image_size=32, patch_size=8)
    base.update(kw)
    return EncoderConfig(**base)


def background_config(**kw) -> EncoderConfig:
    """Backgrounds: 64 px, one 16 px patch per object slot."""
    base = dict(layers=2, heads=4, d_model=64, d_ff=128, image_size=64, patch_size=16)
    base.update(kw)
    return EncoderConfig(**base)


@dataclass
class MatchingHead:
    """Projections into a shared space and the fixed logit scale."""

    params: ParameterSet
    scale: float = SCALE

    @classmethod
    def create(cls, d_text: int, d_image: int, d_joint: int, rng, scale: float = SCALE):
        ps = ParameterSet()
        ps["wt"] = normal_init(rng, d_text, d_joint)
        ps["wv"] = normal_init(rng, d_image, d_joint)
        return cls(ps, scale)


def matching_logit(t_cls, o_cls, head: MatchingHead) -> Tensor:
    """``cos(t W_t, o W_v) * s`` along the last axis."""
    return ops.cosine_similarity(ops.matmul(t_cls, head.params["wt"]),
                                 ops.matmul(o_cls, head.params["wv"])) * head.scale


def matching_score(t_cls, o_cls, head: MatchingHead) -> Tensor:
    return ops.sigmoid(matching_logit(t_cls, o_cls, head))


@dataclass
class PretrainBatch:
    """Distinct texts and images plus ``(text, image, label)`` pair rows, so
    each input is encoded once however many pairs use it."""

    texts: list[TokenSequence]
    images: np.ndarray                  # (n_images, H, W, 3)
    pairs: np.ndarray                   # (n_pairs, 2) int indices
    labels: np.ndarray                  # (n_pairs,) 0/1
    image_keys: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.labels)


def sample_itm_batch(corpus: Corpus, scene_ids, k_neg: int, rng, crop_size: int = 32) -> PretrainBatch:
    """Every object of every listed scene as a positive, plus ``k_neg``
    negatives re-pairing its text with other objects of the same scene."""
    texts, crops, pairs, labels, keys = [], [], [], [], []
    for sid in scene_ids:
        scene = corpus.scenes[sid]
        n = len(scene.objects)
        if n < k_neg + 1:
            raise SamplingError(f"scene {sid} has {n} objects; need {k_neg + 1} for {k_neg} negatives")
        base = len(texts)
        for obj in scene.objects:
            texts.append(build_itm_text(obj, corpus.vocab))
            crops.append(crop_object(scene, obj.object_id, crop_size).pixels)
            keys.append((sid, obj.object_id))
        for i in range(n):
            pairs.append((base + i, base + i))
            labels.append(1)
            others = [j for j in range(n) if j != i]
            for j in rng.choice(others, size=k_neg, replace=False):
                pairs.append((base + i, base + int(j)))
                labels.append(0)
    return PretrainBatch(texts, np.array(crops), np.array(pairs, dtype=np.int64).reshape(-1, 2),
                         np.array(labels, dtype=np.float64), keys)


def sample_btm_batch(corpus: Corpus, dialogs, k_neg: int, rng, scene_pool=None,
                     max_len: int | None = None) -> PretrainBatch:
    """Full-dialog contexts paired with their background (positive) and with
    ``k_neg`` backgrounds of other scenes from ``scene_pool``."""
    pool = list(scene_pool) if scene_pool is not None else corpus.split_scene_ids("train")
    if len(pool) < k_neg + 1:
        raise SamplingError(f"{len(pool)} scenes in the pool; need {k_neg + 1} for {k_neg} negatives")
    slot = {sid: i for i, sid in enumerate(pool)}
    texts, pairs, labels = [], [], []
    for d in dialogs:
        if d.scene_id not in slot:
            raise SamplingError(f"dialog {d.dialog_id} scene {d.scene_id} missing from the pool")
        i = len(texts)
        texts.append(build_context(d, len(d.turns), False, corpus.vocab, max_len=max_len))
        pos = slot[d.scene_id]
        pairs.append((i, pos))
        labels.append(1)
        others = [j for j in range(len(pool)) if j != pos]
        for j in rng.choice(others, size=k_neg, replace=False):
            pairs.append((i, int(j)))
            labels.append(0)
    images = np.array([corpus.scenes[sid].background.pixels for sid in pool])
    return PretrainBatch(texts, images, np.array(pairs, dtype=np.int64).reshape(-1, 2),
                         np.array(labels, dtype=np.float64), pool)


class MatchingModel:
    """Text encoder, image encoder and matching head trained jointly."""

    def __init__(self, objective: str, text_cfg: EncoderConfig, image_cfg: EncoderConfig,
                 rng=None, d_joint: int | None = None, scale: float = SCALE, params=None):
        if objective not in OBJECTIVES:
            raise ConfigError(f"unknown matching objective {objective!r}")
        self.objective = objective
        rng = rng if rng is not None else np.random.default_rng(0)
        sub = (lambda p: params.subset(p)) if params is not None else (lambda p: None)
        self.text = TextEncoder(text_cfg, sub("text."), rng)
        self.image = ImageEncoder(image_cfg, sub("image."), rng)
        if params is not None:
            self.head = MatchingHead(params.subset("head."), scale)
        else:
            self.head = MatchingHead.create(text_cfg.d_model, image_cfg.d_model,
                                            d_joint or text_cfg.d_model, rng, scale)
        self.params = ParameterSet()
        self.params.update(self.text.params, "text.")
        self.params.update(self.image.params, "image.")
        self.params.update(self.head.params, "head.")

    def pair_logits(self, batch: PretrainBatch, rows=None) -> Tensor:
        pairs = batch.pairs if rows is None else batch.pairs[rows]
        t_used = np.unique(pairs[:, 0])
        i_used = np.unique(pairs[:, 1])
        ids, mask = collate([batch.texts[i] for i in t_used], PAD_ID)
        t_cls = self.text.forward(ids, mask)[:, 0, :]
        o_cls = self.image.forward(batch.images[i_used])[:, 0, :]
        t_rows = np.searchsorted(t_used, pairs[:, 0])
        i_rows = np.searchsorted(i_used, pairs[:, 1])
        return matching_logit(t_cls[t_rows], o_cls[i_rows], self.head)

    def scores(self, batch: PretrainBatch) -> np.ndarray:
        with no_grad():
            return ops.sigmoid(self.pair_logits(batch)).data


def matching_loss(logits: Tensor, labels: np.ndarray, kind: LossKind | str) -> Tensor:
    """BCE on the matching logit, or two-class CE over ``(-z, z)``."""
    if LossKind(kind) is LossKind.CE:
        two = ops.stack([-logits, logits], axis=-1)
        return cross_entropy(two, labels.astype(np.int64))
    return bce_with_logits(logits, labels)


def pair_accuracy(scores: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> float:
    return float(np.mean((scores >= threshold) == (labels == 1)))


@dataclass
class PretrainConfig:
    objective: str = "itm"
    seed: int = 7
    optim: OptimConfig = field(default_factory=lambda: OptimConfig(epochs=10, lr=1e-3))
    loss: str = "bce"
    k_neg: int = 1
    scale: float = SCALE
    batch_pairs: int = 24
    layers: int = 2
    d_model: int = 96
    max_len: int = 128

    def encoder_configs(self, vocab_size: int) -> tuple[EncoderConfig, EncoderConfig]:
        common = dict(layers=self.layers, d_model=self.d_model, d_ff=2 * self.d_model)
        text = text_config(vocab_size, max_len=self.max_len, **common)
        image = crop_config(**common) if self.objective == "itm" else background_config(**common)
        return text, image


@dataclass
class MatchingRun:
    model: MatchingModel
    config: PretrainConfig
    log: list[dict]

    @property
    def final_accuracy(self) -> float:
        held = [r for r in self.log if r["split"] != "train"]
        return held[-1]["accuracy"] if held else float("nan")


def _sample(corpus: Corpus, cfg: PretrainConfig, split: str, rng) -> PretrainBatch:
    if cfg.objective == "itm":
        return sample_itm_batch(corpus, corpus.split_scene_ids(split), cfg.k_neg, rng)
    return sample_btm_batch(corpus, corpus.split(split), cfg.k_neg, rng,
                            scene_pool=corpus.split_scene_ids(split), max_len=cfg.max_len)


def _row_batches(batch: PretrainBatch, size: int, rng) -> list[np.ndarray]:
    """Minibatches of pair rows that keep each text's positive and negatives together."""
    groups: dict[int, list[int]] = {}
    for r, t in enumerate(batch.pairs[:, 0]):
        groups.setdefault(int(t), []).append(r)
    per = max(1, size // max(len(g) for g in groups.values()))
    keys = list(groups)
    return [np.array([r for k in chunk for r in groups[keys[k]]])
            for chunk in minibatches(len(keys), per, rng)]


def evaluate_matching(model: MatchingModel, corpus: Corpus, split: str, cfg: PretrainConfig,
                      rng=None) -> tuple[float, float]:
    """(loss, accuracy at threshold 0.5) on freshly sampled pairs of ``split``."""
    rng = rng if rng is not None else stream(cfg.seed, "eval")
    batch = _sample(corpus, cfg, split, rng)
    with no_grad():
        logits = model.pair_logits(batch)
        loss = float(matching_loss(logits, batch.labels, cfg.loss).data)
        scores = ops.sigmoid(logits).data
    return loss, pair_accuracy(scores, batch.labels)


def train_matching(corpus: Corpus, cfg: PretrainConfig, eval_split: str = "dev",
                   model: MatchingModel | None = None, progress=None) -> MatchingRun:
    """Train encoders plus head on the train split; one log row per epoch
    and split. With ``epochs=0`` the returned model is the initialisation."""
    if cfg.objective not in OBJECTIVES:
        raise ConfigError(f"unknown matching objective {cfg.objective!r}")
    LossKind(cfg.loss)
    text_cfg, image_cfg = cfg.encoder_configs(len(corpus.vocab))
    if model is None:
        model = MatchingModel(cfg.objective, text_cfg, image_cfg,
                              rng=stream(cfg.seed, cfg.objective + ".init"), scale=cfg.scale)
    sample_rng = stream(cfg.seed, cfg.objective + ".sample")
    probe = _sample(corpus, cfg, "train", np.random.default_rng(0))
    steps = len(_row_batches(probe, cfg.batch_pairs, np.random.default_rng(0)))
    trainer = Trainer(model.params, cfg.optim, steps)
    log = []
    for epoch in range(1, cfg.optim.epochs + 1):
        batch = _sample(corpus, cfg, "train", sample_rng)
        losses = []
        for rows in _row_batches(batch, cfg.batch_pairs, sample_rng):
            losses.append(trainer.step(
                lambda rows=rows: matching_loss(model.pair_logits(batch, rows), batch.labels[rows], cfg.loss)))
        trainer.checkpoint()
        train_acc = pair_accuracy(model.scores(batch), batch.labels)
        log.append({"epoch": epoch, "split": "train", "loss": float(np.mean(losses)),
                    "accuracy": train_acc})
        if eval_split:
            loss, acc = evaluate_matching(model, corpus, eval_split, cfg)
            log.append({"epoch": epoch, "split": eval_split, "loss": loss, "accuracy": acc})
        if progress:
            progress(log[-1])
    return MatchingRun(model, cfg, log)


def with_epochs(cfg: PretrainConfig, epochs: int) -> PretrainConfig:
    return replace(cfg, optim=replace(cfg.optim, epochs=epochs))
