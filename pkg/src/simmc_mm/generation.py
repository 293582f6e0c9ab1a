"""Response generation: a causal decoder over ``context [META] slots [RES]``
whose every hidden state is shifted by the mean ITM vector of the objects
the system refers to in the current turn."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from simmc_mm.corpus import Corpus, Dialog, build_context, build_generation_input, crop_object, generation_targets
from simmc_mm.disambiguation import mean_object_vectors
from simmc_mm.encoders import PAD_ID, CausalDecoder, EncoderConfig, ImageEncoder, TokenSequence, collate, tokenize
from simmc_mm.encoders.transformer import RasterImage
from simmc_mm.errors import ConfigError, LengthError
from simmc_mm.metrics import bleu4
from simmc_mm.numeric import ParameterSet, Tensor, no_grad, normal_init, ops
from simmc_mm.numeric.losses import cross_entropy
from simmc_mm.pretrain import MatchingModel
from simmc_mm.training import OptimConfig, Trainer, minibatches, stream

MAX_NEW_TOKENS = 32


@dataclass
class GeneratorConfig:
    seed: int = 7
    optim: OptimConfig = field(default_factory=lambda: OptimConfig(epochs=5, lr=1e-3))
    use_objects: bool = True
    use_meta: bool = True
    use_user_utterance_augmentation: bool = True
    batch_size: int = 16
    max_len: int = 128


class GeneratorModel:
    def __init__(self, decoder_cfg: EncoderConfig, image_cfg: EncoderConfig, rng=None,
                 params: ParameterSet | None = None, image_params: ParameterSet | None = None):
        self.decoder_cfg, self.image_cfg = decoder_cfg, image_cfg
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params = ParameterSet()
            params.update(CausalDecoder(decoder_cfg, None, rng).params, "decoder.")
            image = image_params.copy() if image_params is not None else ImageEncoder(image_cfg, None, rng).params
            params.update(image, "image.")
            params["w_o"] = normal_init(rng, image_cfg.d_model, decoder_cfg.d_model)
            params["w_4"] = normal_init(rng, decoder_cfg.d_model, decoder_cfg.vocab_size)
        self.params = params
        self.decoder = CausalDecoder(decoder_cfg, params.subset("decoder."))
        self.image = ImageEncoder(image_cfg, params.subset("image."))

    @classmethod
    def from_itm(cls, itm: MatchingModel, vocab_size: int, rng) -> "GeneratorModel":
        dec = EncoderConfig(**{**itm.text.cfg.to_dict(), "vocab_size": vocab_size})
        return cls(dec, itm.image.cfg, rng, image_params=itm.image.params)

    def image_term(self, objects: list[list[RasterImage]]) -> Tensor:
        return mean_object_vectors(self.image, objects, self.decoder_cfg.d_model, self.params["w_o"])

    def hidden(self, seqs: list[TokenSequence], image_term: Tensor) -> Tensor:
        """``(B, T, d)`` decoder states plus the per-sequence image vector."""
        ids, mask = collate(seqs, PAD_ID)
        h = self.decoder.forward(ids, mask)
        return h + ops.reshape(image_term, (len(seqs), 1, self.decoder_cfg.d_model))

    def vocab_logits(self, h: Tensor) -> Tensor:
        return ops.matmul(h, self.params["w_4"])


def next_token_distribution(seq: TokenSequence, objects: list[RasterImage], model: GeneratorModel,
                            k: int) -> np.ndarray:
    """Probabilities for the token after position ``k``."""
    if not 0 <= k < len(seq):
        raise IndexError(f"position {k} outside a length-{len(seq)} sequence")
    with no_grad():
        h = model.hidden([seq], model.image_term([objects]))
        return ops.softmax(model.vocab_logits(h[np.array([0]), np.array([k])]), axis=-1).data[0]


def greedy_decode_batch(prefixes: list[TokenSequence], objects: list[list[RasterImage]],
                        model: GeneratorModel, eos_id: int,
                        max_new_tokens: int = MAX_NEW_TOKENS) -> list[list[int]]:
    """Argmax decoding for a batch; ``np.argmax`` returns the lowest id on ties.
    Generated tokens exclude the closing [EOS]. Decoding also stops where the
    decoder runs out of positions."""
    out: list[list[int]] = [[] for _ in prefixes]
    seqs = [list(p.ids) for p in prefixes]
    cap = model.decoder_cfg.max_len
    live = [i for i in range(len(prefixes)) if len(seqs[i]) <= cap]
    with no_grad():
        img = model.image_term(objects).data
        for _ in range(max_new_tokens):
            if not live:
                break
            batch = [TokenSequence(seqs[i]) for i in live]
            h = model.hidden(batch, Tensor(img[live]))
            last = np.array([len(s) - 1 for s in batch])
            z = model.vocab_logits(h[np.arange(len(live)), last]).data
            nxt = np.argmax(z, axis=-1)
            still = []
            for i, tok in zip(live, nxt):
                tok = int(tok)
                if tok == eos_id:
                    continue
                out[i].append(tok)
                seqs[i].append(tok)
                if len(seqs[i]) <= cap:
                    still.append(i)
            live = still
    return out


def greedy_decode(prefix: TokenSequence, objects: list[RasterImage], model: GeneratorModel,
                  eos_id: int, max_new_tokens: int = MAX_NEW_TOKENS) -> list[int]:
    return greedy_decode_batch([prefix], [objects], model, eos_id, max_new_tokens)[0]


@dataclass
class GenExample:
    dialog_id: int
    turn: int
    prefix: TokenSequence
    target: list[int]
    objects: list[RasterImage]
    user_side: bool = False


def _meta_free(dialog: Dialog, k: int, corpus: Corpus, max_len: int, reserve: int) -> TokenSequence:
    v = corpus.vocab
    ctx = build_context(dialog, k, True, v, max_len=max_len, reserve=reserve + 2)
    return TokenSequence(ctx.ids + [v.meta_id, v.res_id], list(ctx.system_positions), list(ctx.system_turns))


def build_gen_examples(corpus: Corpus, dialogs: list[Dialog], cfg: GeneratorConfig,
                       augment_user: bool = False) -> list[GenExample]:
    """System responses per turn, plus user utterances when ``augment_user``
    (prefix: the context before the user speaks, then ``[META] [RES]``)."""
    v = corpus.vocab
    crop = lambda d, ids: [crop_object(corpus.scene_of(d), o, 32) for o in sorted(ids)]  # noqa: E731
    out = []
    for d in dialogs:
        for k, t in enumerate(d.turns):
            target = generation_targets(d, k, v)
            if cfg.use_meta:
                prefix = build_generation_input(d, k, v, max_len=cfg.max_len, reserve=len(target))
            else:
                prefix = _meta_free(d, k, corpus, cfg.max_len, len(target))
            objs = crop(d, t.system_object_ids) if cfg.use_objects else []
            out.append(GenExample(d.dialog_id, k, prefix, target, objs))
            if augment_user:
                utarget = tokenize(t.user_utterance, v) + [v.eos_id]
                ctx = build_context(d, k, False, v, max_len=cfg.max_len, reserve=len(utarget) + 2)
                uprefix = TokenSequence(ctx.ids + [v.meta_id, v.res_id], list(ctx.system_positions),
                                        list(ctx.system_turns))
                uobjs = crop(d, t.user_object_ids) if cfg.use_objects else []
                out.append(GenExample(d.dialog_id, k, uprefix, utarget, uobjs, user_side=True))
    for e in out:
        if len(e.prefix) + len(e.target) - 1 > cfg.max_len:
            raise LengthError(f"dialog {e.dialog_id} turn {e.turn}: response does not fit max_len")
    return out


def lm_loss(model: GeneratorModel, examples: list[GenExample]) -> Tensor:
    """Teacher-forced CE over the tokens after [RES] only."""
    seqs = [TokenSequence(e.prefix.ids + e.target[:-1]) for e in examples]
    h = model.hidden(seqs, model.image_term([e.objects for e in examples]))
    rows, cols, targets = [], [], []
    for i, e in enumerate(examples):
        start = len(e.prefix) - 1
        for j, tok in enumerate(e.target):
            rows.append(i)
            cols.append(start + j)
            targets.append(tok)
    return cross_entropy(model.vocab_logits(h[np.array(rows), np.array(cols)]), np.array(targets))


@dataclass
class GeneratorRun:
    model: GeneratorModel
    config: GeneratorConfig
    log: list[dict]


def train_generator(corpus: Corpus, itm: MatchingModel, cfg: GeneratorConfig | None = None,
                    eval_split: str | None = None) -> GeneratorRun:
    cfg = cfg or GeneratorConfig()
    if cfg.max_len > itm.text.cfg.max_len:
        raise ConfigError(f"max_len {cfg.max_len} exceeds the decoder's {itm.text.cfg.max_len} positions")
    model = GeneratorModel.from_itm(itm, len(corpus.vocab), stream(cfg.seed, "gen.init"))
    examples = build_gen_examples(corpus, corpus.split("train"), cfg, cfg.use_user_utterance_augmentation)
    rng = stream(cfg.seed, "gen.sample")
    trainer = Trainer(model.params, cfg.optim, -(-len(examples) // cfg.batch_size))
    log = []
    for epoch in range(1, cfg.optim.epochs + 1):
        losses = []
        for idx in minibatches(len(examples), cfg.batch_size, rng):
            losses.append(trainer.step(lambda idx=idx: lm_loss(model, [examples[i] for i in idx])))
        trainer.checkpoint()
        log.append({"epoch": epoch, "split": "train", "loss": float(np.mean(losses))})
        if eval_split:
            log.append({"epoch": epoch, "split": eval_split,
                        "bleu4": evaluate_generator(model, corpus, eval_split, cfg)["bleu4"]})
    return GeneratorRun(model, cfg, log)


def generate_split(model: GeneratorModel, corpus: Corpus, split: str, cfg: GeneratorConfig,
                   batch_size: int = 64, max_new_tokens: int = MAX_NEW_TOKENS):
    """(example, generated words, reference words) for every system turn of ``split``."""
    examples = build_gen_examples(corpus, corpus.split(split), cfg)
    v = corpus.vocab
    out = []
    for s in range(0, len(examples), batch_size):
        chunk = examples[s:s + batch_size]
        gen = greedy_decode_batch([e.prefix for e in chunk], [e.objects for e in chunk], model,
                                  v.eos_id, max_new_tokens)
        for e, g in zip(chunk, gen):
            out.append((e, v.decode(g), v.decode(e.target[:-1])))
    return out


def evaluate_generator(model: GeneratorModel, corpus: Corpus, split: str, cfg: GeneratorConfig) -> dict:
    rows = generate_split(model, corpus, split, cfg)
    return {"bleu4": bleu4([g for _, g, _ in rows], [r for _, _, r in rows]), "rows": rows}
