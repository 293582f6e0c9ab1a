"""Pre-LN transformer stacks: bidirectional text encoder, patch image
encoder and causal decoder, all built on :mod:`simmc_mm.numeric`.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from simmc_mm.errors import ConfigError, LengthError, ShapeError
from simmc_mm.numeric import ops
from simmc_mm.numeric.optim import ParameterSet, normal_init
from simmc_mm.numeric.tensor import Tensor
from simmc_mm.encoders.vocab import TokenSequence, collate

MASK_VALUE = -1e9


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 2
    heads: int = 4
    d_model: int = 64
    d_ff: int = 128
    max_len: int = 128
    vocab_size: int = 0
    patch_size: int = 8
    image_size: int = 32
    image_width: int | None = None  # defaults to image_size (square)
    positional: str = "learned"  # or "sinusoidal"

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.layers < 1:
            raise ConfigError("need at least one layer")
        if self.positional not in ("learned", "sinusoidal"):
            raise ConfigError(f"unknown positional scheme {self.positional!r}")

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.image_size, self.image_width or self.image_size

    @property
    def n_patches(self) -> int:
        h, w = self.image_shape
        return (h // self.patch_size) * (w // self.patch_size)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RasterImage:
    """``(height, width, 3)`` float64 pixels in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ShapeError(f"raster must be (H, W, 3), got {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other) -> bool:
        return isinstance(other, RasterImage) and np.array_equal(self.pixels, other.pixels)


@dataclass
class EncodedContext:
    hidden: np.ndarray                # (len, d): per-token vectors
    cls: np.ndarray                   # (d,): equals hidden[0]
    system: list[np.ndarray] = field(default_factory=list)
    system_turns: list[int] = field(default_factory=list)


@dataclass
class EncodedImage:
    pooled: np.ndarray                # (d,): the [CLS]-patch output
    patches: np.ndarray               # (n_patches + 1, d), row 0 is [CLS]


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    div = np.exp(np.arange(0, d, 2) * (-math.log(10000.0) / d))
    table = np.zeros((n, d))
    table[:, 0::2] = np.sin(pos * div)
    table[:, 1::2] = np.cos(pos * div)[:, : d // 2]
    return table


def init_block(ps: ParameterSet, prefix: str, d: int, d_ff: int, rng) -> None:
    ps[prefix + "ln1.g"] = np.ones(d)
    ps[prefix + "ln1.b"] = np.zeros(d)
    ps[prefix + "attn.qkv.w"] = normal_init(rng, d, 3 * d)
    ps[prefix + "attn.qkv.b"] = np.zeros(3 * d)
    ps[prefix + "attn.out.w"] = normal_init(rng, d, d)
    ps[prefix + "attn.out.b"] = np.zeros(d)
    ps[prefix + "ln2.g"] = np.ones(d)
    ps[prefix + "ln2.b"] = np.zeros(d)
    ps[prefix + "ff.w1"] = normal_init(rng, d, d_ff)
    ps[prefix + "ff.b1"] = np.zeros(d_ff)
    ps[prefix + "ff.w2"] = normal_init(rng, d_ff, d)
    ps[prefix + "ff.b2"] = np.zeros(d)


def attention_bias(key_mask: np.ndarray | None, length: int, causal: bool) -> np.ndarray | None:
    """Additive ``(B|1, 1, T, T)`` bias: MASK_VALUE on padded keys and,
    when causal, on future positions."""
    bias = None
    if key_mask is not None and not key_mask.all():
        bias = np.where(key_mask, 0.0, MASK_VALUE)[:, None, None, :]
    if causal:
        tri = np.triu(np.full((length, length), MASK_VALUE), k=1)[None, None]
        bias = tri if bias is None else bias + tri
    return bias


def self_attention(h: Tensor, ps: ParameterSet, prefix: str, heads: int, bias) -> Tensor:
    b, t, d = h.shape
    dh = d // heads
    qkv = ops.linear(h, ps[prefix + "qkv.w"], ps[prefix + "qkv.b"])
    qkv = ops.transpose(ops.reshape(qkv, (b, t, 3, heads, dh)), (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
    if bias is not None:
        scores = scores + bias
    ctx = ops.matmul(ops.softmax(scores, axis=-1), v)
    ctx = ops.reshape(ops.transpose(ctx, (0, 2, 1, 3)), (b, t, d))
    return ops.linear(ctx, ps[prefix + "out.w"], ps[prefix + "out.b"])


def block(x: Tensor, ps: ParameterSet, prefix: str, heads: int, bias) -> Tensor:
    h = ops.layer_norm(x, ps[prefix + "ln1.g"], ps[prefix + "ln1.b"])
    x = x + self_attention(h, ps, prefix + "attn.", heads, bias)
    h = ops.layer_norm(x, ps[prefix + "ln2.g"], ps[prefix + "ln2.b"])
    h = ops.gelu(ops.linear(h, ps[prefix + "ff.w1"], ps[prefix + "ff.b1"]))
    return x + ops.linear(h, ps[prefix + "ff.w2"], ps[prefix + "ff.b2"])


class _Stack:
    """Shared machinery: position table, blocks, final layer norm."""

    causal = False

    def __init__(self, cfg: EncoderConfig, params: ParameterSet | None, rng, n_positions: int):
        self.cfg = cfg
        self.n_positions = n_positions
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params = ParameterSet()
            self._init_inputs(params, rng)
            if cfg.positional == "learned":
                params["pos"] = normal_init(rng, n_positions, cfg.d_model)
            for i in range(cfg.layers):
                init_block(params, f"block{i}.", cfg.d_model, cfg.d_ff, rng)
            params["ln_f.g"] = np.ones(cfg.d_model)
            params["ln_f.b"] = np.zeros(cfg.d_model)
        self.params = params
        self._sin = (sinusoidal_positions(n_positions, cfg.d_model)
                     if cfg.positional == "sinusoidal" else None)

    def _init_inputs(self, params, rng) -> None:
        raise NotImplementedError

    def _positions(self, t: int):
        if self._sin is not None:
            return Tensor(self._sin[:t])
        return self.params["pos"][:t]

    def _run(self, x: Tensor, key_mask) -> Tensor:
        bias = attention_bias(key_mask, x.shape[1], self.causal)
        for i in range(self.cfg.layers):
            x = block(x, self.params, f"block{i}.", self.cfg.heads, bias)
        return ops.layer_norm(x, self.params["ln_f.g"], self.params["ln_f.b"])


class TextEncoder(_Stack):
    """Bidirectional token encoder; hidden row 0 is the [CLS] summary."""

    def __init__(self, cfg: EncoderConfig, params: ParameterSet | None = None, rng=None):
        if cfg.vocab_size <= 0:
            raise ConfigError("text encoder needs vocab_size > 0")
        super().__init__(cfg, params, rng, cfg.max_len)

    def _init_inputs(self, params, rng) -> None:
        params["tok"] = normal_init(rng, self.cfg.vocab_size, self.cfg.d_model)

    def forward(self, ids: np.ndarray, key_mask: np.ndarray | None = None) -> Tensor:
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        if ids.shape[1] > self.cfg.max_len:
            raise LengthError(f"sequence length {ids.shape[1]} exceeds max_len {self.cfg.max_len}")
        x = ops.embedding(self.params["tok"], ids) + self._positions(ids.shape[1])
        return self._run(x, key_mask)

    def forward_seqs(self, seqs: list[TokenSequence], pad_id: int) -> Tensor:
        ids, mask = collate(seqs, pad_id)
        return self.forward(ids, mask)


class CausalDecoder(TextEncoder):
    """Left-to-right decoder: position k attends to positions <= k only."""

    causal = True


class ImageEncoder(_Stack):
    """Patch transformer: non-overlapping patches, linear embedding, a learned
    [CLS] patch in front."""

    def __init__(self, cfg: EncoderConfig, params: ParameterSet | None = None, rng=None):
        if any(n % cfg.patch_size for n in cfg.image_shape):
            raise ConfigError(f"image shape {cfg.image_shape} not a multiple of patch {cfg.patch_size}")
        super().__init__(cfg, params, rng, cfg.n_patches + 1)

    def _init_inputs(self, params, rng) -> None:
        p = self.cfg.patch_size
        params["patch.w"] = normal_init(rng, p * p * 3, self.cfg.d_model)
        params["patch.b"] = np.zeros(self.cfg.d_model)
        params["cls"] = normal_init(rng, 1, 1, self.cfg.d_model)

    def patchify(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[None]
        b, h, w, c = images.shape
        p = self.cfg.patch_size
        if h % p or w % p:
            raise ShapeError(f"image {h}x{w} not divisible by patch size {p}")
        if (h, w) != self.cfg.image_shape:
            raise ShapeError(f"image {h}x{w} does not match configured shape {self.cfg.image_shape}")
        grid = images.reshape(b, h // p, p, w // p, p, c).transpose(0, 1, 3, 2, 4, 5)
        return grid.reshape(b, (h // p) * (w // p), p * p * c)

    def forward(self, images: np.ndarray) -> Tensor:
        patches = self.patchify(images) * 2.0 - 1.0  # [0, 1] pixels -> [-1, 1]
        b = patches.shape[0]
        x = ops.linear(Tensor(patches), self.params["patch.w"], self.params["patch.b"])
        cls = ops.mul(self.params["cls"], np.ones((b, 1, 1)))
        x = ops.concat([cls, x], axis=1) + self._positions(x.shape[1] + 1)
        return self._run(x, None)


def encode_text(seq: TokenSequence, encoder: TextEncoder) -> EncodedContext:
    """Single-sequence convenience wrapper returning plain arrays."""
    h = encoder.forward(np.array([seq.ids]), seq.attention_mask[None]).data[0]
    return EncodedContext(hidden=h, cls=h[0].copy(),
                          system=[h[p].copy() for p in seq.system_positions],
                          system_turns=list(seq.system_turns))


def encode_image(img: RasterImage, encoder: ImageEncoder) -> EncodedImage:
    h = encoder.forward(img.pixels[None]).data[0]
    return EncodedImage(pooled=h[0].copy(), patches=h)


def lm_forward(seq: TokenSequence, decoder: CausalDecoder) -> np.ndarray:
    """Per-position decoder hidden vectors, shape ``(len, d)``."""
    return decoder.forward(np.array([seq.ids]), seq.attention_mask[None]).data[0]
