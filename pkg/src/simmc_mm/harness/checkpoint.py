"""Checkpoint files: magic, a length-prefixed JSON header, then every tensor
as little-endian float64 in header order.

The header carries the objective tag, the model config (with its hash), the
vocabulary table and the tensor names and shapes, so a file can be inspected
with ``head -c`` and reloaded without the code that trained it.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from simmc_mm.encoders import EncoderConfig, Vocabulary
from simmc_mm.errors import CompatError, IntegrityError, ParseError

MAGIC = b"SIMMCKPT"
FORMAT_VERSION = 1
OBJECTIVES = ("itm", "btm", "subtask1", "coref+M", "coref-M", "generator")
_LEN = struct.Struct("<Q")


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Checkpoint:
    objective: str
    config: dict
    arrays: dict[str, np.ndarray]
    vocab: Vocabulary | None = None

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    if ckpt.objective not in OBJECTIVES:
        raise CompatError(f"unknown objective tag {ckpt.objective!r}")
    names = list(ckpt.arrays)
    header = {
        "format_version": FORMAT_VERSION,
        "objective": ckpt.objective,
        "config": ckpt.config,
        "config_hash": ckpt.config_hash,
        "vocab": ckpt.vocab.to_table() if ckpt.vocab is not None else None,
        "tensors": [{"name": n, "shape": list(np.shape(ckpt.arrays[n]))} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_LEN.pack(len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(ckpt.arrays[n], dtype="<f8").tobytes())


def read_header(path) -> tuple[dict, int]:
    """Parsed header and the byte offset where the payload starts."""
    data = Path(path).read_bytes()
    return _parse_header(data, path)


def _parse_header(data: bytes, path) -> tuple[dict, int]:
    if len(data) < len(MAGIC) + _LEN.size or not data.startswith(MAGIC):
        raise IntegrityError(f"{path}: not a checkpoint (bad magic or truncated header)")
    (n,) = _LEN.unpack_from(data, len(MAGIC))
    start = len(MAGIC) + _LEN.size
    if start + n > len(data):
        raise IntegrityError(f"{path}: truncated header")
    try:
        header = json.loads(data[start:start + n])
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: unreadable header: {exc}") from exc
    return header, start + n


def load_checkpoint(path, expect: str | tuple[str, ...] | None = None) -> Checkpoint:
    """Read ``path``; ``expect`` restricts the accepted objective tags."""
    data = Path(path).read_bytes()
    header, offset = _parse_header(data, path)
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CompatError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    objective = header.get("objective")
    if expect is not None:
        allowed = (expect,) if isinstance(expect, str) else tuple(expect)
        if objective not in allowed:
            raise CompatError(f"{path}: holds a {objective!r} checkpoint, expected one of {list(allowed)}")
    config = header["config"]
    if config_hash(config) != header.get("config_hash"):
        raise IntegrityError(f"{path}: config hash mismatch")
    arrays = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(data):
            raise IntegrityError(f"{path}: payload truncated inside tensor {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset = end
    if offset != len(data):
        raise IntegrityError(f"{path}: {len(data) - offset} trailing bytes after the payload")
    vocab = Vocabulary.from_table(header["vocab"]) if header.get("vocab") is not None else None
    return Checkpoint(objective, config, arrays, vocab)


# -- model <-> checkpoint -----------------------------------------------------------

def _enc(cfg: EncoderConfig) -> dict:
    return cfg.to_dict()


def _dec(d: dict | None) -> EncoderConfig | None:
    return EncoderConfig(**d) if d is not None else None


def _check_shapes(params, arrays: dict, path_hint: str) -> None:
    expected = {k: v.shape for k, v in params.items()}
    got = {k: tuple(v.shape) for k, v in arrays.items()}
    if expected.keys() != got.keys():
        missing = sorted(expected.keys() - got.keys())
        extra = sorted(got.keys() - expected.keys())
        raise IntegrityError(f"{path_hint}: tensor names differ from the config (missing {missing[:3]}, extra {extra[:3]})")
    for k, shape in expected.items():
        if shape != got[k]:
            raise IntegrityError(f"{path_hint}: tensor {k!r} has shape {got[k]}, config implies {shape}")


def matching_checkpoint(model, vocab=None) -> Checkpoint:
    cfg = {"kind": "matching", "objective": model.objective, "text": _enc(model.text.cfg),
           "image": _enc(model.image.cfg), "scale": model.head.scale}
    return Checkpoint(model.objective, cfg, model.params.arrays(), vocab)


def matching_from_checkpoint(ckpt: Checkpoint):
    from simmc_mm.pretrain import MatchingModel
    c = ckpt.config
    model = MatchingModel(c["objective"], _dec(c["text"]), _dec(c["image"]), scale=c["scale"])
    _check_shapes(model.params, ckpt.arrays, ckpt.objective)
    model.params.load_arrays(ckpt.arrays)
    return model


def disambiguation_checkpoint(model, vocab=None) -> Checkpoint:
    cfg = {"kind": "disambiguation", "text": _enc(model.text_cfg), "image": _enc(model.image_cfg)}
    return Checkpoint("subtask1", cfg, model.params.arrays(), vocab)


def disambiguation_from_checkpoint(ckpt: Checkpoint):
    from simmc_mm.disambiguation import DisambiguationModel
    c = ckpt.config
    shell = DisambiguationModel(_dec(c["text"]), _dec(c["image"]))
    _check_shapes(shell.params, ckpt.arrays, ckpt.objective)
    shell.params.load_arrays(ckpt.arrays)
    return shell


def coref_checkpoint(model, flags: dict, vocab=None) -> Checkpoint:
    cfg = {"kind": "coref", "text": _enc(model.text_cfg), "image": _enc(model.image_cfg),
           "background": _enc(model.background_cfg) if model.background_cfg is not None else None,
           "variant": model.variant.value, "scale": model.head.scale, "flags": flags,
           "heads": sorted(k for k in ("w_u", "w_s") if k in model.params)}
    tag = "coref+M" if model.variant.value == "OursPlusM" else "coref-M"
    return Checkpoint(tag, cfg, model.params.arrays(), vocab)


def coref_from_checkpoint(ckpt: Checkpoint):
    from simmc_mm.coref import CorefModel
    from simmc_mm.numeric import ParameterSet
    c = ckpt.config
    ps = ParameterSet({k: v.copy() for k, v in ckpt.arrays.items()})
    model = CorefModel(_dec(c["text"]), _dec(c["image"]), _dec(c["background"]), c["variant"], ps, c["scale"])
    heads = sorted(k for k in ("w_u", "w_s") if k in ps)
    if heads != c["heads"]:
        raise IntegrityError(f"{ckpt.objective}: heads {heads} disagree with header {c['heads']}")
    return model


def generator_checkpoint(model, flags: dict, vocab=None) -> Checkpoint:
    cfg = {"kind": "generator", "decoder": _enc(model.decoder_cfg), "image": _enc(model.image_cfg),
           "flags": flags}
    return Checkpoint("generator", cfg, model.params.arrays(), vocab)


def generator_from_checkpoint(ckpt: Checkpoint):
    from simmc_mm.generation import GeneratorModel
    c = ckpt.config
    shell = GeneratorModel(_dec(c["decoder"]), _dec(c["image"]))
    _check_shapes(shell.params, ckpt.arrays, ckpt.objective)
    shell.params.load_arrays(ckpt.arrays)
    return shell
