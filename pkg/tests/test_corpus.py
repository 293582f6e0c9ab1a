import base64
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simmc_mm.corpus import (
    VISUAL_KEYS,
    CorpusConfig,
    Dialog,
    DialogTurn,
    ObjectRecord,
    SceneRecord,
    build_context,
    build_generation_input,
    build_itm_text,
    corpus_from_json,
    corpus_to_json,
    crop_object,
    generate_corpus,
    generation_targets,
    hue_block_color,
    load_corpus,
    save_corpus,
)
from simmc_mm.corpus.render import PALETTE, resize_nearest
from simmc_mm.encoders import RasterImage, Vocabulary
from simmc_mm.errors import ConfigError, IntegrityError, ObjectLookupError, ParseError


@pytest.fixture(scope="module")
def small():
    return generate_corpus(CorpusConfig(n_scenes=10, objects_per_scene=(4, 4)))


def _words(seq, vocab):
    return " ".join(vocab.decode(seq.ids))


# -- generator ---------------------------------------------------------------------
def test_counts(small):
    assert len(small.scenes) == 10
    assert sum(len(s.objects) for s in small.scenes.values()) == 40


def test_determinism_byte_identical():
    cfg = CorpusConfig(n_scenes=6, seed=11)
    assert corpus_to_json(generate_corpus(cfg)) == corpus_to_json(generate_corpus(cfg))
    assert corpus_to_json(generate_corpus(cfg)) != corpus_to_json(
        generate_corpus(CorpusConfig(n_scenes=6, seed=12)))


def test_too_few_objects_rejected():
    with pytest.raises(ConfigError):
        generate_corpus(CorpusConfig(objects_per_scene=(1, 3)))


def test_referential_integrity_and_mentions(small):
    for d in small.dialogs:
        ids = set(small.scene_of(d).object_ids)
        for t in d.turns:
            assert set(t.user_object_ids) <= ids and set(t.system_object_ids) <= ids
        assert d.mentioned_object_ids == d.referenced_ids()


def test_splits_partition_scenes(small):
    seen = {}
    for name in ("train", "dev", "test"):
        for sid in small.split_scene_ids(name):
            assert seen.setdefault(sid, name) == name
    assert sorted(i for v in small.splits.values() for i in v) == [d.dialog_id for d in small.dialogs]


def test_ambiguous_turns_match_several_objects():
    c = generate_corpus(CorpusConfig(n_scenes=40))
    labels = []
    for d in c.dialogs:
        for t in d.turns:
            if t.disambiguation_label is None:
                continue
            labels.append(t.disambiguation_label)
            assert (len(t.user_object_ids) > 1) == t.disambiguation_label
    assert 0.35 <= np.mean(labels) <= 0.65


def test_scene_triples_distinct(small):
    for s in small.scenes.values():
        triples = [o.describe() for o in s.objects]
        assert len(set(triples)) == len(triples)


# -- crops ------------------------------------------------------------------------------
def test_color_oracle_recovers_every_crop():
    c = generate_corpus(CorpusConfig(n_scenes=30))
    for s in c.scenes.values():
        for o in s.objects:
            assert hue_block_color(crop_object(s, o.object_id)) == o.visual_meta["color"]


def test_red_crop_has_dominant_red_hue_block(small):
    red = [(s, o) for s in small.scenes.values() for o in s.objects if o.visual_meta["color"] == "red"]
    assert red
    for s, o in red:
        block = crop_object(s, o.object_id).pixels[:8].reshape(-1, 3).mean(axis=0)
        assert block[0] > block[1] and block[0] > block[2]


def test_crop_whole_background_and_determinism():
    bg = np.random.default_rng(0).random((64, 64, 3))
    obj = ObjectRecord(0, (0, 0, 64, 64), {}, {})
    scene = SceneRecord("s", RasterImage(bg), [obj])
    crop = crop_object(scene, 0, size=32)
    np.testing.assert_array_equal(crop.pixels, resize_nearest(bg, 32, 32))
    assert crop_object(scene, 0, size=32) == crop
    with pytest.raises(ObjectLookupError):
        crop_object(scene, 5)


def test_hue_block_oracle_on_pure_colors():
    for name, rgb in PALETTE.items():
        assert hue_block_color(RasterImage(np.tile(rgb, (32, 32, 1)))) == name


# -- input construction ---------------------------------------------------------------------
META = {"assetType": "hanging", "color": "red", "pattern": "plain", "sleeveLength": "long", "type": "top"}
VOCAB = Vocabulary(["hanging", "red", "plain", "long", "top", "x", "hi", "hello", "price", ":", "49",
                    "color", "bye", "ok"])


def test_itm_text_example():
    seq = build_itm_text(ObjectRecord(0, (0, 0, 1, 1), META, {}), VOCAB)
    assert _words(seq, VOCAB) == "[CLS] hanging red plain long top"
    same = build_itm_text(ObjectRecord(0, (0, 0, 1, 1), {k: "x" for k in VISUAL_KEYS}, {}), VOCAB)
    assert _words(same, VOCAB) == "[CLS] x x x x x"
    short = build_itm_text(ObjectRecord(0, (0, 0, 1, 1), {**META, "pattern": ""}, {}), VOCAB)
    assert len(short) == len(seq) - 1


def _dialog(n=3):
    turns = [DialogTurn("hi", "hello", slot_values={"color": "red", "price": "49"}) for _ in range(n)]
    return Dialog(0, "s", turns)


def test_context_examples():
    d = _dialog(1)
    assert _words(build_context(d, 0, True, VOCAB), VOCAB) == "[CLS] [USER] hi"
    assert _words(build_context(d, 0, False, VOCAB), VOCAB) == "[CLS]"
    two = build_context(_dialog(3), 2, True, VOCAB)
    assert _words(two, VOCAB) == "[CLS] [USER] hi [SYSTEM] hello [USER] hi [SYSTEM] hello [USER] hi"
    assert two.system_positions == [3, 7] and two.system_turns == [0, 1]
    assert all(two.ids[p] == VOCAB.system_id for p in two.system_positions)


def test_context_truncation_drops_oldest_turns():
    d = _dialog(3)
    full = build_context(d, 2, True, VOCAB)
    cut = build_context(d, 2, True, VOCAB, max_len=len(full.ids) - 1)
    assert cut.ids[0] == VOCAB.cls_id
    assert _words(cut, VOCAB) == "[CLS] [USER] hi [SYSTEM] hello [USER] hi"
    assert cut.system_turns == [1]


def test_generation_input_examples():
    d = _dialog(1)
    seq = build_generation_input(d, 0, VOCAB)
    assert _words(seq, VOCAB).endswith("[META] color : red price : 49 [RES]")
    assert build_generation_input(d, 0, VOCAB) == seq
    d.turns[0].slot_values = {}
    assert _words(build_generation_input(d, 0, VOCAB), VOCAB) == "[CLS] [USER] hi [META] [RES]"
    assert generation_targets(d, 0, VOCAB) == [VOCAB.id("hello"), VOCAB.eos_id]


words = st.sampled_from(["hi", "hello", "ok", "bye", "red"])
utterances = st.lists(words, min_size=1, max_size=4).map(" ".join)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(utterances, utterances), min_size=2, max_size=6))
def test_context_prefix_extension(pairs):
    d = Dialog(0, "s", [DialogTurn(u, s) for u, s in pairs])
    for k in range(1, len(pairs)):
        prev = build_context(d, k - 1, True, VOCAB)
        cur = build_context(d, k, True, VOCAB)
        assert cur.ids[:len(prev.ids)] == prev.ids
        assert cur.system_positions[:len(prev.system_positions)] == prev.system_positions


# -- file format ------------------------------------------------------------------------------
def test_save_load_round_trip(small, tmp_path):
    path = tmp_path / "c.json"
    save_corpus(small, path)
    back = load_corpus(path)
    assert corpus_to_json(back) == corpus_to_json(small)
    assert back.scenes.keys() == small.scenes.keys()
    for sid, s in small.scenes.items():
        assert back.scenes[sid].background == s.background


def test_unknown_object_reference_names_id(small):
    doc = json.loads(corpus_to_json(small))
    doc["dialogs"][0]["turns"][0]["user_object_ids"] = [999]
    with pytest.raises(IntegrityError, match="999"):
        corpus_from_json(json.dumps(doc))


def test_parse_errors_have_diagnostics(small):
    text = corpus_to_json(small)
    with pytest.raises(ParseError, match="line"):
        corpus_from_json(text[: len(text) // 2])
    doc = json.loads(text)
    del doc["dialogs"][1]["turns"][0]["system_utterance"]
    with pytest.raises(ParseError, match=r"dialogs\[1\]\.turns\[0\]\.system_utterance"):
        corpus_from_json(json.dumps(doc))
    doc = json.loads(text)
    doc["scenes"][0]["background"]["pixels"] = base64.b64encode(b"abc").decode()
    with pytest.raises(ParseError, match="pixels"):
        corpus_from_json(json.dumps(doc))


def test_empty_dialogs_list_loads(small):
    doc = json.loads(corpus_to_json(small))
    doc["dialogs"] = []
    doc["splits"] = {"train": [], "dev": [], "test": []}
    c = corpus_from_json(json.dumps(doc))
    assert c.split("train") == [] and len(c.scenes) == 10
