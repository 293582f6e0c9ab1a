import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simmc_mm.corpus import CorpusConfig, generate_corpus
from simmc_mm.coref import (
    Category,
    CorefConfig,
    CorefExample,
    CorefModel,
    Variant,
    build_examples,
    categorize_objects,
    coref_score,
    decide_matches,
    joint_loss,
    match_decisions,
    system_match_label,
    system_matching,
    train_coref,
    utterance_classify,
)
from simmc_mm.encoders import EncoderConfig, RasterImage, TokenSequence
from simmc_mm.errors import CapabilityError, ConfigError
from simmc_mm.metrics import object_f1
from simmc_mm.numeric.gradcheck import check_gradients
from simmc_mm.pretrain import MatchingModel, PretrainConfig
from simmc_mm.training import OptimConfig

R, U, O = Category.RELATED, Category.UNRELATED, Category.OTHERS

# Matched? for (variant, category, score) when the utterance head says "refers to something".
TABLE = {
    ("OnlyS", R, 0.2): True, ("OnlyS", R, 0.8): True,
    ("OnlyS", U, 0.2): False, ("OnlyS", U, 0.8): False,
    ("OnlyS", O, 0.2): False, ("OnlyS", O, 0.8): False,
    ("OursPlusM", R, 0.2): False, ("OursPlusM", R, 0.8): True,
    ("OursPlusM", U, 0.2): False, ("OursPlusM", U, 0.8): False,
    ("OursPlusM", O, 0.2): False, ("OursPlusM", O, 0.8): False,
    ("OursMinusM", R, 0.2): True, ("OursMinusM", R, 0.8): True,
    ("OursMinusM", U, 0.2): False, ("OursMinusM", U, 0.8): False,
    ("OursMinusM", O, 0.2): False, ("OursMinusM", O, 0.8): True,
    ("Combined", R, 0.2): False, ("Combined", R, 0.8): True,
    ("Combined", U, 0.2): False, ("Combined", U, 0.8): False,
    ("Combined", O, 0.2): False, ("Combined", O, 0.8): True,
}


def _scores(variant, s):
    return (s, s) if variant == "Combined" else s


@pytest.mark.parametrize("variant,cat,score,positive",
                         list(itertools.product([v.value for v in Variant], [R, U, O], [0.2, 0.8], [True, False])))
def test_decision_table_48(variant, cat, score, positive):
    got = decide_matches(variant, {9: cat}, _scores(variant, {9: score}), positive)
    want = TABLE[(variant, cat, score)] and positive
    assert (9 in got) is want


@settings(max_examples=10_000, deadline=None)
@given(st.sampled_from(list(Variant)),
       st.dictionaries(st.integers(0, 20), st.sampled_from([R, U, O]), min_size=1, max_size=8),
       st.floats(0, 1), st.floats(0, 1), st.booleans(), st.booleans())
def test_unrelated_never_matched(variant, cats, s1, s2, positive, gate):
    rng = np.random.default_rng(int(s1 * 1e6))
    plus = {k: float(rng.random()) for k in cats}
    minus = {k: float(rng.random()) for k in cats}
    scores = (plus, minus) if variant is Variant.COMBINED else plus
    got = decide_matches(variant, cats, scores, positive, threshold=s2, use_utterance_head=gate)
    assert not {k for k in got if cats[k] is U}


def test_categorize_examples():
    assert categorize_objects([1, 2, 3, 4], {"A"}, {"A": {1, 2}, "B": {3}}) == {1: R, 2: R, 3: U, 4: O}
    assert categorize_objects([1, 2], None, {}) == {1: O, 2: O}
    # matching wins over non-matching
    assert categorize_objects([1], {0}, {0: [1], 1: [1]}) == {1: R}
    # with the system head off every prior turn counts as matching
    assert categorize_objects([1, 2, 3], None, {0: [1], 1: [2]}) == {1: R, 2: R, 3: O}


@settings(max_examples=300, deadline=None)
@given(st.lists(st.lists(st.integers(0, 7), max_size=4), max_size=4), st.data())
def test_categories_partition_scene(turns, data):
    prior = dict(enumerate(turns))
    chosen = data.draw(st.sets(st.sampled_from(list(prior))) if prior else st.just(set()))
    scene = list(range(8))
    cats = categorize_objects(scene, chosen, prior)
    assert sorted(cats) == scene
    for oid, c in cats.items():
        in_match = any(oid in prior[t] for t in chosen)
        in_any = any(oid in ids for ids in prior.values())
        assert c is (R if in_match else U if in_any else O)


def test_spec_examples():
    cats = {1: O, 3: R, 5: O, 7: R}
    assert decide_matches("OnlyS", cats, None, True) == {3, 7}
    assert decide_matches("OursPlusM", {1: O}, {1: 0.99}, True) == set()
    assert decide_matches("OursMinusM", {1: R}, {1: 0.01}, True) == {1}
    assert decide_matches("OursMinusM", cats, {k: 0.9 for k in cats}, False) == set()


def test_gate_ignored_without_utterance_head():
    cats = {1: R, 2: O}
    scores = {1: 0.9, 2: 0.9}
    a = decide_matches("OursMinusM", cats, scores, False, use_utterance_head=False)
    b = decide_matches("OursMinusM", cats, scores, True, use_utterance_head=False)
    assert a == b == {1, 2}


@settings(max_examples=200, deadline=None)
@given(st.dictionaries(st.integers(0, 9), st.sampled_from([R, U, O]), min_size=1), st.integers(0, 2 ** 31))
def test_only_s_ignores_scores(cats, seed):
    rng = np.random.default_rng(seed)
    a = decide_matches("OnlyS", cats, {k: float(rng.random()) for k in cats}, True)
    b = decide_matches("OnlyS", cats, {k: float(rng.random()) for k in cats}, True)
    assert a == b == decide_matches("OnlyS", cats, None, True)


@settings(max_examples=200, deadline=None)
@given(st.dictionaries(st.integers(0, 9), st.sampled_from([R, U, O]), min_size=1), st.integers(0, 2 ** 31))
def test_combined_per_category(cats, seed):
    rng = np.random.default_rng(seed)
    plus = {k: float(rng.random()) for k in cats}
    minus = {k: float(rng.random()) for k in cats}
    comb = decide_matches("Combined", cats, (plus, minus), True)
    p = decide_matches("OursPlusM", cats, plus, True)
    m = decide_matches("OursMinusM", cats, minus, True)
    for k, c in cats.items():
        if c is R:
            assert (k in comb) == (k in p)
        elif c is O:
            assert (k in comb) == (k in m)


def test_combined_needs_both_models():
    with pytest.raises(CapabilityError):
        decide_matches("Combined", {1: R}, {1: 0.9}, True)
    with pytest.raises(CapabilityError):
        decide_matches("Combined", {1: R}, ({1: 0.9}, None), True)


def test_match_decisions_report_scores():
    ds = match_decisions("Combined", {1: R, 2: O}, ({1: 0.7, 2: 0.1}, {1: 0.2, 2: 0.6}), True)
    assert [(d.object_id, d.score, d.matched) for d in ds] == [(1, 0.7, True), (2, 0.6, True)]
    assert match_decisions("OnlyS", {1: R}, None, True)[0].score is None


def test_system_label_oracle():
    corpus = generate_corpus(CorpusConfig(seed=4, n_scenes=8, dialogs_per_scene=2))
    assert system_match_label([1, 2], {2, 5}) == 1
    assert system_match_label([1, 2], {3}) == 0
    assert system_match_label([], set()) == 0
    for e in build_examples(corpus, corpus.dialogs):
        d = next(x for x in corpus.dialogs if x.dialog_id == e.dialog_id)
        assert len(e.system_labels) == len(e.context.system_positions)
        for j, y in zip(e.context.system_turns, e.system_labels):
            brute = any(o in e.gold for o in d.turns[j].system_object_ids)
            assert y == int(brute)
        assert e.utterance_label == int(len(d.turns[e.turn].user_object_ids) > 0)


def test_f1_examples():
    assert object_f1([{1, 2}], [{2, 3}]) == 0.5
    assert object_f1([set()], [{1}]) == 0.0
    assert object_f1([{1}, {4, 5}], [{1}, {4, 5}]) == 1.0


# -- model ------------------------------------------------------------------

def _tiny_corpus():
    return generate_corpus(CorpusConfig(seed=11, n_scenes=8, dialogs_per_scene=1))


def _tiny_pretrained(corpus):
    cfg = PretrainConfig(d_model=8, layers=1, max_len=48)
    text, crop = cfg.encoder_configs(len(corpus.vocab))
    crop = EncoderConfig(**{**crop.to_dict(), "heads": 2})
    text = EncoderConfig(**{**text.to_dict(), "heads": 2})
    itm = MatchingModel("itm", text, crop, rng=np.random.default_rng(1))
    back = EncoderConfig(**{**crop.to_dict(), "image_size": 64, "patch_size": 32})
    btm = MatchingModel("btm", text, back, rng=np.random.default_rng(2))
    return itm, btm


def test_match_and_head_gradcheck():
    corpus = _tiny_corpus()
    itm, btm = _tiny_pretrained(corpus)
    model = CorefModel.assemble(CorefConfig(max_len=48), itm, btm, len(corpus.vocab), np.random.default_rng(3))
    v = corpus.vocab
    d = corpus.dialogs[0]
    ctx = TokenSequence([v.cls_id, v.user_id, v.id("top"), v.system_id, v.id("red"), v.user_id, v.id("it")],
                        [3], [0])
    oids = corpus.scenes[d.scene_id].object_ids
    ex = [CorefExample(d.dialog_id, 1, d.scene_id, ctx, oids[:2], {oids[0]}, [1])]
    errs = check_gradients(lambda: joint_loss(model, corpus, ex), [model.params[k] for k in model.params],
                           max_entries=3, rng=np.random.default_rng(0))
    assert max(errs.values()) <= 1e-3, errs


def test_heads_and_capabilities():
    corpus = _tiny_corpus()
    itm, btm = _tiny_pretrained(corpus)
    cfg = CorefConfig(use_utterance_head=False, use_system_head=False, use_btm_encoder=False)
    model = CorefModel.assemble(cfg, itm, None, len(corpus.vocab), np.random.default_rng(0))
    ctx = TokenSequence([corpus.vocab.cls_id, corpus.vocab.user_id])
    with pytest.raises(CapabilityError):
        utterance_classify(ctx, model)
    with pytest.raises(CapabilityError):
        system_matching(ctx, model)
    full = CorefModel.assemble(CorefConfig(), itm, btm, len(corpus.vocab), np.random.default_rng(0))
    assert utterance_classify(ctx, full).shape == (2,)
    assert system_matching(ctx, full) == []
    with pytest.raises(ConfigError):
        CorefModel.assemble(CorefConfig(), itm, None, len(corpus.vocab), np.random.default_rng(0))


def test_score_range_and_sensitivity():
    corpus = _tiny_corpus()
    itm, btm = _tiny_pretrained(corpus)
    model = CorefModel.assemble(CorefConfig(), itm, btm, len(corpus.vocab), np.random.default_rng(0))
    scene = corpus.scenes[corpus.dialogs[0].scene_id]
    from simmc_mm.corpus import build_context, crop_object
    ctx = build_context(corpus.dialogs[0], 1, True, corpus.vocab, max_len=48)
    a = coref_score(ctx, crop_object(scene, scene.object_ids[0], 32), scene.background, model)
    b = coref_score(ctx, crop_object(scene, scene.object_ids[1], 32), scene.background, model)
    assert 0 < a < 1 and 0 < b < 1 and a != b


def test_zero_background_reduces_to_matching_score():
    corpus = _tiny_corpus()
    itm, btm = _tiny_pretrained(corpus)
    model = CorefModel.assemble(CorefConfig(), itm, btm, len(corpus.vocab), np.random.default_rng(0))
    for k in model.background.params:
        model.background.params[k].data[...] = 0.0
    scene = corpus.scenes[corpus.dialogs[0].scene_id]
    from simmc_mm.corpus import build_context, crop_object
    from simmc_mm.encoders import collate, PAD_ID
    from simmc_mm.pretrain import matching_score
    ctx = build_context(corpus.dialogs[0], 0, True, corpus.vocab)
    c = crop_object(scene, scene.object_ids[0], 32)
    got = coref_score(ctx, c, RasterImage(np.zeros((64, 64, 3))), model)
    ids, mask = collate([ctx], PAD_ID)
    t = model.text.forward(ids, mask)[:, 0, :]
    o = model.image.forward(c.pixels[None])[:, 0, :]
    # zero weights leave only the final layer-norm bias, which is zero at init too
    want = float(matching_score(t, o, model.head).data[0])
    assert abs(got - want) < 1e-12


def test_training_is_deterministic_and_learns():
    corpus = _tiny_corpus()
    itm, btm = _tiny_pretrained(corpus)
    cfg = CorefConfig(optim=OptimConfig(epochs=3, lr=3e-3), max_len=48)
    a = train_coref(corpus, itm, btm, cfg)
    b = train_coref(corpus, itm, btm, cfg)
    for k, v in a.model.params.arrays().items():
        assert np.array_equal(v, b.model.params[k].data)
    losses = [r["loss"] for r in a.log]
    assert losses[-1] < losses[0]


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2 ** 31))
def test_balanced_loss_is_plain_bce_when_classes_even(n, seed):
    from simmc_mm.coref import match_loss
    from simmc_mm.numeric import Tensor
    rng = np.random.default_rng(seed)
    z = Tensor(rng.normal(size=2 * n))
    y = np.array([1.0] * n + [0.0] * n)
    a = float(match_loss(z, y, balanced=True).data)
    b = float(match_loss(z, y, balanced=False).data)
    assert abs(a - b) <= 1e-12


def test_balanced_default_follows_variant():
    assert CorefConfig(use_mention_inform=True).balanced
    assert not CorefConfig(use_mention_inform=False).balanced
    assert CorefConfig(use_mention_inform=False, balanced_match_loss=True).balanced
