"""Scenes, dialogs, the synthetic generator and encoder input construction."""

from simmc_mm.corpus.generate import generate_corpus
from simmc_mm.corpus.inputs import (
    build_context,
    build_generation_input,
    build_itm_text,
    flatten_slot_values,
    generation_targets,
)
from simmc_mm.corpus.io import corpus_from_json, corpus_to_json, load_corpus, save_corpus
from simmc_mm.corpus.records import (
    DEFAULT_POOLS,
    NONVISUAL_KEYS,
    VISUAL_KEYS,
    Corpus,
    CorpusConfig,
    Dialog,
    DialogTurn,
    ObjectRecord,
    SceneRecord,
    build_vocabulary,
)
from simmc_mm.corpus.render import crop_object, hue_block_color, render_object

__all__ = [
    "DEFAULT_POOLS", "NONVISUAL_KEYS", "VISUAL_KEYS", "Corpus", "CorpusConfig", "Dialog",
    "DialogTurn", "ObjectRecord", "SceneRecord", "build_context", "build_generation_input",
    "build_itm_text", "build_vocabulary", "corpus_from_json", "corpus_to_json", "crop_object",
    "flatten_slot_values", "generate_corpus", "generation_targets", "hue_block_color",
    "load_corpus", "render_object", "save_corpus",
]
