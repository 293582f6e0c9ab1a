"""Deterministic synthetic corpus shaped like SIMMC 2.0.

Scenes are store shelves: each stocks two or three garment types drawn from a
four-color palette, so a background and the dialogs about it share
vocabulary. Dialogs are template-generated from a small act grammar and carry
gold labels for disambiguation, user/system object references and system
slot_values.
"""

from __future__ import annotations

import numpy as np

from simmc_mm.corpus.records import (
    NONVISUAL_KEYS,
    VISUAL_KEYS,
    Corpus,
    CorpusConfig,
    Dialog,
    DialogTurn,
    ObjectRecord,
    SceneRecord,
)
from simmc_mm.corpus.render import PALETTE, render_background
from simmc_mm.encoders.transformer import RasterImage

PALETTE_SIZE = 4
THEME_TYPES = (2, 3)   # garment types stocked per scene, inclusive range
MAX_SHOWN = 3
# one store interior for every scene: only the stocked objects tell scenes apart
WALL = np.array([0.80, 0.78, 0.72])
FLOOR = np.array([0.35, 0.30, 0.28])
MIN_DISTANCE = 3   # in-scene Hamming distance over visual attributes

# information questions: request slot -> (user template, system template, slot keys)
INFO_ACTS = {
    "price": ("how much is {ref} ?", "the {type} is {price} dollars .", ("type", "price")),
    "brand": ("who makes {ref} ?", "that {type} is from {brand} .", ("type", "brand")),
    "materials": ("what is {ref} made of ?", "it is made of {materials} .", ("materials",)),
    "size": ("what sizes do you have for {ref} ?", "it comes in size {size} .", ("size",)),
    "customerReview": ("what do other customers think of {ref} ?",
                       "it has a {customerReview} star rating .", ("customerReview",)),
}
BROWSE_USER = ("do you have any {types} ?", "show me some {types} please .",
               "i am looking for a {type} .")
BROWSE_SYSTEM = "here are some {types} you might like ."
PICK_USER = ("i like {ref} .", "can you tell me more about {ref} ?",
             "i would like to see {ref} up close .")
DISAMBIGUATE_SYSTEM = "which one do you mean ?"
PICK_SYSTEM = "great choice , the {color} {type} is {price} dollars ."
OVERVIEW_USER = ("what do you have here ?", "what kind of clothes do you sell ?",
                 "what is in this section ?")
OVERVIEW_SYSTEM = "we have {type} in {color} ."
OVERVIEW_RATE = 0.6
CHITCHAT_USER = ("thanks , that is helpful .", "ok , good to know .", "alright , thank you .")
CHITCHAT_SYSTEM = "you are welcome . anything else ?"


def plural(word: str) -> str:
    return word + "es" if word.endswith(("s", "sh", "ch", "x")) else word + "s"


def _join(words) -> str:
    words = list(words)
    return words[0] if len(words) == 1 else " , ".join(words[:-1]) + " and " + words[-1]


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, *stream])


def _hamming(a: dict, b: dict) -> int:
    return sum(a[k] != b[k] for k in VISUAL_KEYS)


def _make_objects(rng, cfg: CorpusConfig, n: int) -> list[ObjectRecord]:
    pools = cfg.pools
    n_types = max(1, min(int(rng.integers(THEME_TYPES[0], THEME_TYPES[1] + 1)), n // 2,
                         len(pools["type"])))
    types = list(rng.choice(pools["type"], size=n_types, replace=False))
    counts = [2] * n_types
    for _ in range(n - 2 * n_types):
        counts[int(rng.integers(n_types))] += 1
    colors = [c for c in pools["color"] if c in PALETTE]
    palette = list(rng.choice(colors, size=min(PALETTE_SIZE, len(colors)), replace=False))

    metas: list[dict[str, str]] = []
    for t, count in zip(types, counts):
        for _ in range(count):
            for attempt in range(100 * MIN_DISTANCE):
                meta = {
                    "assetType": str(rng.choice(pools["assetType"])),
                    "color": str(rng.choice(palette)),
                    "pattern": str(rng.choice(pools["pattern"])),
                    "sleeveLength": str(rng.choice(pools["sleeveLength"])),
                    "type": str(t),
                }
                triple = (meta["color"], meta["pattern"], meta["type"])
                clash = any((m["color"], m["pattern"], m["type"]) == triple for m in metas)
                # late attempts relax the distance constraint but never uniqueness
                min_dist = MIN_DISTANCE - attempt // 100
                if not clash and all(_hamming(meta, m) >= min_dist for m in metas):
                    break
            else:
                raise RuntimeError("could not place a distinct object; enlarge the pools")
            metas.append(meta)

    grid = cfg.background_size // cfg.object_size
    slots = rng.choice(grid * grid, size=n, replace=False)
    order = rng.permutation(n)
    objects = []
    for oid, (k, slot) in enumerate(zip(order, slots)):
        r, c = divmod(int(slot), grid)
        nonvisual = {key: str(rng.choice(pools[key])) for key in NONVISUAL_KEYS}
        objects.append(ObjectRecord(
            object_id=oid,
            bbox=(c * cfg.object_size, r * cfg.object_size, cfg.object_size, cfg.object_size),
            visual_meta=metas[k],
            nonvisual_meta=nonvisual,
        ))
    return objects


def make_scene(cfg: CorpusConfig, index: int) -> SceneRecord:
    rng = _rng(cfg.seed, 1, index)
    lo, hi = cfg.objects_per_scene
    n = int(rng.integers(lo, hi + 1))
    objects = _make_objects(rng, cfg, n)
    pixels = render_background(objects, cfg.pools, cfg.background_size, WALL, FLOOR)
    return SceneRecord(scene_id=f"scene_{index:04d}", background=RasterImage(pixels),
                       objects=objects)


class _DialogWriter:
    """Samples one dialog turn by turn from the act grammar."""

    def __init__(self, scene: SceneRecord, rng: np.random.Generator):
        self.scene = scene
        self.rng = rng
        self.turns: list[DialogTurn] = []
        self.system_mentioned: set[int] = set()
        self.pending_candidates: list[int] | None = None

    # -- helpers ----------------------------------------------------------
    def _choice(self, seq):
        return seq[int(self.rng.integers(len(seq)))]

    def _obj(self, oid: int) -> ObjectRecord:
        return self.scene.object(oid)

    def _full_ref(self, oid: int) -> str:
        return "the " + self._obj(oid).describe()

    def _types(self) -> list[str]:
        return sorted({o.visual_meta["type"] for o in self.scene.objects})

    def _of_type(self, t: str) -> list[int]:
        return [o.object_id for o in self.scene.objects if o.visual_meta["type"] == t]

    def _info(self, oid: int, ref: str, avoid: str | None = None):
        slots = [s for s in INFO_ACTS if s != avoid]
        slot = self._choice(slots)
        user_t, sys_t, keys = INFO_ACTS[slot]
        meta = {**self._obj(oid).visual_meta, **self._obj(oid).nonvisual_meta}
        values = {k: meta[k] for k in keys}
        return user_t.format(ref=ref), sys_t.format(**values), values, [slot]

    def _add(self, turn: DialogTurn) -> None:
        self.system_mentioned.update(turn.system_object_ids)
        self.turns.append(turn)

    # -- acts ---------------------------------------------------------------
    def browse(self) -> None:
        t = self._choice(self._types())
        pool = self._of_type(t)
        k = min(MAX_SHOWN, len(pool))
        shown = sorted(int(i) for i in self.rng.choice(pool, size=k, replace=False))
        user = self._choice(BROWSE_USER).format(types=plural(t), type=t)
        self._add(DialogTurn(user, BROWSE_SYSTEM.format(types=plural(t)), [], shown,
                             None, {"type": t}, []))
        self.pending_candidates = shown

    def pick(self) -> None:
        """User singles out among the objects just shown; labeled for disambiguation."""
        shown = self.pending_candidates
        self.pending_candidates = None
        ambiguous = len(shown) >= 2 and self.rng.random() < 0.5
        if ambiguous:
            by_color: dict[str, list[int]] = {}
            for oid in shown:
                by_color.setdefault(self._obj(oid).visual_meta["color"], []).append(oid)
            shared = [ids for ids in by_color.values() if len(ids) >= 2]
            if shared and self.rng.random() < 0.5:
                gold = shared[int(self.rng.integers(len(shared)))]
                ref = f"the {self._obj(gold[0]).visual_meta['color']} one"
            else:
                gold = list(shown)
                ref = "the " + self._obj(shown[0]).visual_meta["type"]
            user = self._choice(PICK_USER).format(ref=ref)
            self._add(DialogTurn(user, DISAMBIGUATE_SYSTEM, sorted(gold), [], True, {}, []))
            self.pending_resolution = sorted(gold)
            return
        oid = self._choice(shown)
        user = self._choice(PICK_USER).format(ref=self._full_ref(oid))
        o = self._obj(oid)
        values = {"color": o.visual_meta["color"], "type": o.visual_meta["type"],
                  "price": o.nonvisual_meta["price"]}
        self._add(DialogTurn(user, PICK_SYSTEM.format(**values), [oid], [oid], False,
                             values, []))

    def resolve(self) -> None:
        """Answer to the system's clarification question: full reference."""
        oid = self._choice(self.pending_resolution)
        self.pending_resolution = None
        user, system, values, req = self._info(oid, self._full_ref(oid))
        self._add(DialogTurn(user, system, [oid], [oid], None, values, req))

    def follow_up(self) -> None:
        (oid,) = self.turns[-1].system_object_ids
        last = (self.turns[-1].request_slots or [None])[0]
        user, system, values, req = self._info(oid, "it", avoid=last)
        self._add(DialogTurn(user, system, [oid], [oid], None, values, req))

    def new_object(self) -> None:
        fresh = [o.object_id for o in self.scene.objects if o.object_id not in self.system_mentioned]
        oid = self._choice(fresh)
        user, system, values, req = self._info(oid, self._full_ref(oid))
        self._add(DialogTurn(user, system, [oid], [oid], None, values, req))

    def overview(self) -> None:
        """Opening question about the section; the reply lists its stock."""
        objs = self.scene.objects
        values = {"type": _join(plural(t) for t in sorted({o.visual_meta["type"] for o in objs})),
                  "color": _join(sorted({o.visual_meta["color"] for o in objs}))}
        self._add(DialogTurn(self._choice(OVERVIEW_USER), OVERVIEW_SYSTEM.format(**values),
                             [], [], None, values, []))

    def chitchat(self) -> None:
        self._add(DialogTurn(self._choice(CHITCHAT_USER), CHITCHAT_SYSTEM, [], [], None, {}, []))

    # -- grammar --------------------------------------------------------------
    def write(self, n_turns: int) -> list[DialogTurn]:
        self.pending_resolution = None
        if n_turns > 1 and self.rng.random() < OVERVIEW_RATE:
            self.overview()
        if self.rng.random() < 0.7:
            self.browse()
        else:
            self.new_object()
        while len(self.turns) < n_turns:
            if self.pending_candidates is not None:
                self.pick()
                continue
            if self.pending_resolution is not None:
                self.resolve()
                continue
            options, weights = [], []
            if len(self.turns[-1].system_object_ids) == 1:
                options.append(self.follow_up)
                weights.append(0.3)
            if any(o.object_id not in self.system_mentioned for o in self.scene.objects):
                options.append(self.new_object)
                weights.append(0.3)
            options.append(self.browse)
            weights.append(0.25)
            options.append(self.chitchat)
            weights.append(0.15)
            w = np.array(weights) / sum(weights)
            options[int(self.rng.choice(len(options), p=w))]()
        return self.turns


def make_dialog(cfg: CorpusConfig, scene: SceneRecord, dialog_id: int) -> Dialog:
    rng = _rng(cfg.seed, 2, dialog_id)
    lo, hi = cfg.turns_per_dialog
    turns = _DialogWriter(scene, rng).write(int(rng.integers(lo, hi + 1)))
    dialog = Dialog(dialog_id=dialog_id, scene_id=scene.scene_id, turns=turns)
    dialog.mentioned_object_ids = dialog.referenced_ids()
    return dialog


def make_splits(cfg: CorpusConfig, scenes: list[SceneRecord],
                dialogs: list[Dialog]) -> dict[str, list[int]]:
    """Split at scene level so held-out dialogs never share a background with training."""
    rng = _rng(cfg.seed, 3)
    order = [scenes[i].scene_id for i in rng.permutation(len(scenes))]
    n = len(order)
    n_train = int(round(cfg.split_fractions[0] * n))
    n_dev = int(round(cfg.split_fractions[1] * n))
    which = {}
    for k, sid in enumerate(order):
        which[sid] = "train" if k < n_train else "dev" if k < n_train + n_dev else "test"
    splits = {"train": [], "dev": [], "test": []}
    for d in dialogs:
        splits[which[d.scene_id]].append(d.dialog_id)
    return splits


def generate_corpus(cfg: CorpusConfig | None = None) -> Corpus:
    """Build scenes, dialogs, splits and vocabulary for ``cfg`` (deterministic per seed)."""
    cfg = cfg or CorpusConfig()
    cfg.validate()
    scenes = [make_scene(cfg, i) for i in range(cfg.n_scenes)]
    dialogs = []
    for scene in scenes:
        for _ in range(cfg.dialogs_per_scene):
            dialogs.append(make_dialog(cfg, scene, len(dialogs)))
    corpus = Corpus(scenes={s.scene_id: s for s in scenes}, dialogs=dialogs,
                    splits=make_splits(cfg, scenes, dialogs))
    corpus.check_integrity()
    return corpus
