"""Data model mirroring SIMMC 2.0 scenes and dialogs."""

from __future__ import annotations

from dataclasses import dataclass, field

from simmc_mm.encoders.transformer import RasterImage
from simmc_mm.encoders.vocab import Vocabulary
from simmc_mm.errors import ConfigError, IntegrityError, ObjectLookupError

VISUAL_KEYS = ("assetType", "color", "pattern", "sleeveLength", "type")
NONVISUAL_KEYS = ("customerReview", "brand", "price", "size", "materials")

DEFAULT_POOLS: dict[str, tuple[str, ...]] = {
    "assetType": ("hanging", "folded", "shelved", "displayed"),
    "color": ("red", "blue", "green", "yellow", "black", "white", "purple", "orange"),
    "pattern": ("plain", "striped", "checkered", "dotted"),
    "sleeveLength": ("long", "short", "half", "sleeveless"),
    "type": ("top", "jacket", "dress", "shirt", "coat", "sweater"),
    "customerReview": ("2.5", "3.0", "3.5", "4.0", "4.5", "5.0"),
    "brand": ("ohana", "brickroad", "pinewood", "silverline", "cobalt", "meadow"),
    "price": ("19", "29", "39", "49", "59", "69", "79", "99"),
    "size": ("XS", "S", "M", "L", "XL"),
    "materials": ("cotton", "wool", "linen", "denim", "silk", "polyester"),
}


@dataclass
class ObjectRecord:
    object_id: int
    bbox: tuple[int, int, int, int]      # x, y, w, h in background pixels
    visual_meta: dict[str, str]
    nonvisual_meta: dict[str, str]

    def describe(self, keys=("color", "pattern", "type")) -> str:
        return " ".join(self.visual_meta[k] for k in keys)


@dataclass
class SceneRecord:
    scene_id: str
    background: RasterImage
    objects: list[ObjectRecord]

    def object(self, object_id: int) -> ObjectRecord:
        for obj in self.objects:
            if obj.object_id == object_id:
                return obj
        raise ObjectLookupError(f"object {object_id} not in scene {self.scene_id}")

    @property
    def object_ids(self) -> list[int]:
        return [o.object_id for o in self.objects]


@dataclass
class DialogTurn:
    user_utterance: str
    system_utterance: str
    user_object_ids: list[int] = field(default_factory=list)
    system_object_ids: list[int] = field(default_factory=list)
    disambiguation_label: bool | None = None
    slot_values: dict[str, str] = field(default_factory=dict)
    request_slots: list[str] = field(default_factory=list)


@dataclass
class Dialog:
    dialog_id: int
    scene_id: str
    turns: list[DialogTurn]
    mentioned_object_ids: list[int] = field(default_factory=list)

    def referenced_ids(self) -> list[int]:
        ids = set()
        for t in self.turns:
            ids.update(t.user_object_ids)
            ids.update(t.system_object_ids)
        return sorted(ids)


@dataclass
class CorpusConfig:
    seed: int = 7
    n_scenes: int = 200
    objects_per_scene: tuple[int, int] = (6, 6)
    turns_per_dialog: tuple[int, int] = (4, 6)
    dialogs_per_scene: int = 2
    pools: dict[str, tuple[str, ...]] = field(default_factory=lambda: dict(DEFAULT_POOLS))
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
    background_size: int = 64
    object_size: int = 16
    crop_size: int = 32

    def validate(self) -> None:
        lo, hi = self.objects_per_scene
        if lo < 2 or hi < lo:
            raise ConfigError(f"objects_per_scene {self.objects_per_scene}: need 2 <= min <= max")
        slots = (self.background_size // self.object_size) ** 2
        if hi > slots:
            raise ConfigError(f"{hi} objects do not fit {slots} background slots")
        tlo, thi = self.turns_per_dialog
        if tlo < 1 or thi < tlo:
            raise ConfigError(f"turns_per_dialog {self.turns_per_dialog} invalid")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9 or min(self.split_fractions) < 0:
            raise ConfigError(f"split fractions {self.split_fractions} must be >= 0 and sum to 1")
        if self.n_scenes < 1 or self.dialogs_per_scene < 1:
            raise ConfigError("need at least one scene and one dialog per scene")
        for key in VISUAL_KEYS + NONVISUAL_KEYS:
            if not self.pools.get(key):
                raise ConfigError(f"empty attribute pool for {key!r}")


@dataclass
class Corpus:
    scenes: dict[str, SceneRecord]
    dialogs: list[Dialog]
    splits: dict[str, list[int]]
    vocab: Vocabulary | None = None

    def __post_init__(self):
        self._by_id = {d.dialog_id: d for d in self.dialogs}
        if self.vocab is None:
            self.vocab = build_vocabulary(self)

    def dialog(self, dialog_id: int) -> Dialog:
        return self._by_id[dialog_id]

    def scene_of(self, dialog: Dialog) -> SceneRecord:
        return self.scenes[dialog.scene_id]

    def split(self, name: str) -> list[Dialog]:
        return [self._by_id[i] for i in self.splits.get(name, [])]

    def split_scene_ids(self, name: str) -> list[str]:
        seen: dict[str, None] = {}
        for d in self.split(name):
            seen.setdefault(d.scene_id)
        return list(seen)

    def check_integrity(self) -> None:
        """Referential integrity: every referenced id exists in its scene."""
        for d in self.dialogs:
            if d.scene_id not in self.scenes:
                raise IntegrityError(f"dialog {d.dialog_id}: unknown scene {d.scene_id!r}")
            valid = set(self.scenes[d.scene_id].object_ids)
            for k, t in enumerate(d.turns):
                for oid in list(t.user_object_ids) + list(t.system_object_ids):
                    if oid not in valid:
                        raise IntegrityError(
                            f"dialog {d.dialog_id} turn {k}: unknown object id {oid} "
                            f"in scene {d.scene_id}")
            for oid in d.mentioned_object_ids:
                if oid not in valid:
                    raise IntegrityError(
                        f"dialog {d.dialog_id}: mention_inform has unknown object id {oid}")
        for name, ids in self.splits.items():
            for i in ids:
                if i not in self._by_id:
                    raise IntegrityError(f"split {name!r} lists unknown dialog {i}")


def corpus_texts(corpus: Corpus):
    for d in corpus.dialogs:
        for t in d.turns:
            yield t.user_utterance
            yield t.system_utterance
            for k, v in t.slot_values.items():
                yield f"{k} : {v}"
    for scene in corpus.scenes.values():
        for obj in scene.objects:
            yield " ".join(obj.visual_meta.values())
            yield " ".join(obj.nonvisual_meta.values())


def build_vocabulary(corpus: Corpus) -> Vocabulary:
    return Vocabulary.from_texts(corpus_texts(corpus))
