"""JSON corpus files. Backgrounds are stored as base64 row-major 8-bit RGB."""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from simmc_mm.corpus.records import (
    NONVISUAL_KEYS,
    VISUAL_KEYS,
    Corpus,
    Dialog,
    DialogTurn,
    ObjectRecord,
    SceneRecord,
)
from simmc_mm.corpus.render import to_bytes
from simmc_mm.encoders.transformer import RasterImage
from simmc_mm.errors import ParseError


def _scene_json(scene: SceneRecord) -> dict:
    px = scene.background.pixels
    return {
        "scene_id": scene.scene_id,
        "background": {"h": px.shape[0], "w": px.shape[1],
                       "pixels": base64.b64encode(to_bytes(px).tobytes()).decode("ascii")},
        "objects": [{"object_id": o.object_id, "bbox": list(o.bbox),
                     "visual_meta": dict(o.visual_meta), "nonvisual_meta": dict(o.nonvisual_meta)}
                    for o in scene.objects],
    }


def _dialog_json(d: Dialog) -> dict:
    return {
        "dialog_id": d.dialog_id,
        "scene_id": d.scene_id,
        "mentioned_object_ids": list(d.mentioned_object_ids),
        "turns": [{"user_utterance": t.user_utterance, "system_utterance": t.system_utterance,
                   "user_object_ids": list(t.user_object_ids),
                   "system_object_ids": list(t.system_object_ids),
                   "disambiguation_label": t.disambiguation_label,
                   "slot_values": dict(t.slot_values), "request_slots": list(t.request_slots)}
                  for t in d.turns],
    }


def corpus_to_json(corpus: Corpus) -> str:
    doc = {"scenes": [_scene_json(s) for s in corpus.scenes.values()],
           "dialogs": [_dialog_json(d) for d in corpus.dialogs],
           "splits": {k: list(v) for k, v in corpus.splits.items()}}
    return json.dumps(doc, indent=1) + "\n"


def save_corpus(corpus: Corpus, path) -> None:
    Path(path).write_text(corpus_to_json(corpus), encoding="utf-8")


class _Reader:
    """Typed field access that reports the JSON path of whatever is wrong."""

    def __init__(self, obj, where: str):
        if not isinstance(obj, dict):
            raise ParseError(f"{where}: expected an object, got {type(obj).__name__}")
        self.obj = obj
        self.where = where

    def get(self, key: str, kind, optional: bool = False):
        if key not in self.obj:
            if optional:
                return None
            raise ParseError(f"{self.where}.{key}: missing field")
        value = self.obj[key]
        if value is None and optional:
            return None
        if kind is int and isinstance(value, bool) or not isinstance(value, kind):
            raise ParseError(f"{self.where}.{key}: expected {getattr(kind, '__name__', kind)}, "
                             f"got {type(value).__name__}")
        return value

    def ints(self, key: str) -> list[int]:
        values = self.get(key, list)
        for i, v in enumerate(values):
            if not isinstance(v, int) or isinstance(v, bool):
                raise ParseError(f"{self.where}.{key}[{i}]: expected int, got {type(v).__name__}")
        return list(values)

    def strmap(self, key: str, required: tuple[str, ...] | None = None) -> dict[str, str]:
        values = self.get(key, dict)
        for k, v in values.items():
            if not isinstance(v, str):
                raise ParseError(f"{self.where}.{key}.{k}: expected string value")
        if required is not None and set(values) != set(required):
            raise ParseError(f"{self.where}.{key}: keys {sorted(values)} != {sorted(required)}")
        return dict(values)


def _parse_background(r: _Reader) -> RasterImage:
    bg = _Reader(r.get("background", dict), r.where + ".background")
    h, w = bg.get("h", int), bg.get("w", int)
    try:
        raw = base64.b64decode(bg.get("pixels", str), validate=True)
    except ValueError as exc:
        raise ParseError(f"{bg.where}.pixels: invalid base64 ({exc})") from None
    if len(raw) != h * w * 3:
        raise ParseError(f"{bg.where}.pixels: {len(raw)} bytes, expected {h}*{w}*3 = {h * w * 3}")
    return RasterImage(np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3) / 255.0)


def _parse_scene(obj, where: str) -> SceneRecord:
    r = _Reader(obj, where)
    background = _parse_background(r)
    objects = []
    for i, o in enumerate(r.get("objects", list)):
        orr = _Reader(o, f"{where}.objects[{i}]")
        bbox = orr.ints("bbox")
        if len(bbox) != 4:
            raise ParseError(f"{orr.where}.bbox: expected [x, y, w, h]")
        x, y, w, h = bbox
        if x < 0 or y < 0 or w <= 0 or h <= 0 or x + w > background.width or y + h > background.height:
            raise ParseError(f"{orr.where}.bbox: {bbox} outside the background")
        objects.append(ObjectRecord(orr.get("object_id", int), tuple(bbox),
                                    orr.strmap("visual_meta", VISUAL_KEYS),
                                    orr.strmap("nonvisual_meta", NONVISUAL_KEYS)))
    ids = [o.object_id for o in objects]
    if len(set(ids)) != len(ids):
        raise ParseError(f"{where}.objects: duplicate object ids")
    return SceneRecord(r.get("scene_id", str), background, objects)


def _parse_dialog(obj, where: str) -> Dialog:
    r = _Reader(obj, where)
    turns = []
    for i, t in enumerate(r.get("turns", list)):
        tr = _Reader(t, f"{where}.turns[{i}]")
        request = tr.get("request_slots", list, optional=True) or []
        turns.append(DialogTurn(
            user_utterance=tr.get("user_utterance", str),
            system_utterance=tr.get("system_utterance", str),
            user_object_ids=tr.ints("user_object_ids"),
            system_object_ids=tr.ints("system_object_ids"),
            disambiguation_label=tr.get("disambiguation_label", bool, optional=True),
            slot_values=tr.strmap("slot_values"),
            request_slots=[str(s) for s in request],
        ))
    return Dialog(r.get("dialog_id", int), r.get("scene_id", str), turns,
                  r.ints("mentioned_object_ids"))


def corpus_from_json(text: str) -> Corpus:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    r = _Reader(doc, "$")
    scenes = {}
    for i, s in enumerate(r.get("scenes", list)):
        scene = _parse_scene(s, f"$.scenes[{i}]")
        scenes[scene.scene_id] = scene
    dialogs = [_parse_dialog(d, f"$.dialogs[{i}]") for i, d in enumerate(r.get("dialogs", list))]
    sr = _Reader(r.get("splits", dict), "$.splits")
    splits = {name: sr.ints(name) for name in sr.obj}
    corpus = Corpus(scenes=scenes, dialogs=dialogs, splits=splits)
    corpus.check_integrity()
    return corpus


def load_corpus(path) -> Corpus:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8 text ({exc})") from None
    return corpus_from_json(text)
