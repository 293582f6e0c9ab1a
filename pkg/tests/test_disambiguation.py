import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simmc_mm.corpus import CorpusConfig, generate_corpus
from simmc_mm.corpus.records import Corpus, Dialog, DialogTurn
from simmc_mm.disambiguation import (
    DisambiguationConfig,
    DisambiguationModel,
    collect_prior_system_ids,
    decide,
    disambiguation_forward,
    labeled_turns,
    predict_turns,
    train_subtask1,
)
from simmc_mm.encoders import EncoderConfig, RasterImage, TokenSequence
from simmc_mm.errors import DataError
from simmc_mm.numeric import Tensor, ops
from simmc_mm.numeric.gradcheck import check_gradients
from simmc_mm.pretrain import MatchingModel, PretrainConfig
from simmc_mm.training import OptimConfig


def turn(sys_ids=(), label=None):
    return DialogTurn("hi", "hello", [], list(sys_ids), label)


def tiny_model(seed=0, d=8):
    text = EncoderConfig(layers=1, heads=2, d_model=d, d_ff=16, max_len=16, vocab_size=12)
    image = EncoderConfig(layers=1, heads=2, d_model=d, d_ff=16, image_size=8, patch_size=4)
    return DisambiguationModel(text, image, np.random.default_rng(seed))


def crop(seed):
    return RasterImage(np.random.default_rng(seed).random((8, 8, 3)))


CTX = TokenSequence([1, 5, 6, 7])


@pytest.fixture(scope="module")
def small():
    return generate_corpus(CorpusConfig(seed=5, n_scenes=10, dialogs_per_scene=2))


def test_prior_ids_first_turn_empty():
    d = Dialog(0, "s", [turn([4]), turn()])
    assert collect_prior_system_ids(d, 0) == []


def test_prior_ids_order_and_dedup():
    d = Dialog(0, "s", [turn([1]), turn([3, 2]), turn([2, 1, 5]), turn()])
    assert collect_prior_system_ids(d, 2) == [1, 2, 3]
    assert collect_prior_system_ids(d, 3) == [1, 2, 3, 5]
    with pytest.raises(IndexError):
        collect_prior_system_ids(d, 4)


def test_no_objects_is_text_only_exactly():
    m = tiny_model()
    ids = np.array([CTX.ids])
    t_cls = m.text.forward(ids, CTX.attention_mask[None]).data[0, 0]
    expected = t_cls @ m.params["w_1"].data
    out = disambiguation_forward(CTX, [], m)
    assert out.shape == (2,)
    assert np.array_equal(out, expected)


def test_identical_objects_equal_single():
    m = tiny_model()
    one = disambiguation_forward(CTX, [crop(1)], m)
    many = disambiguation_forward(CTX, [crop(1)] * 4, m)
    np.testing.assert_allclose(many, one, rtol=0, atol=1e-12)


def test_image_term_matters():
    m = tiny_model()
    assert not np.allclose(disambiguation_forward(CTX, [crop(1)], m), disambiguation_forward(CTX, [], m))


@pytest.mark.parametrize("logits,want", [((2.0, -1.0), False), ((-1.0, 2.0), True), ((0.0, 0.0), False)])
def test_decide_examples(logits, want):
    assert decide(np.array(logits)) is want


@settings(max_examples=200, deadline=None)
@given(st.integers(-400, 400), st.integers(-400, 400), st.integers(-8000, 8000))
def test_decide_shift_invariant(a, b, c):
    # eighths keep every sum exact, so the shift cannot round a gap away
    z = np.array([a, b]) / 8.0
    assert decide(z) == decide(z + c / 8.0)


def test_fusion_head_gradcheck():
    m = tiny_model(seed=3)
    ctx = [TokenSequence([1, 5])]
    objs = [[crop(2), crop(3)]]
    y = np.array([1])
    from simmc_mm.numeric.losses import cross_entropy
    errs = check_gradients(lambda: cross_entropy(m.logits(ctx, objs), y), [m.params[k] for k in m.params],
                           max_entries=4, rng=np.random.default_rng(0))
    assert max(errs.values()) <= 1e-3, errs


def test_no_labels_is_data_error(small):
    for d in small.dialogs:
        for t in d.turns:
            t.disambiguation_label = None
    itm = MatchingModel("itm", *PretrainConfig(d_model=16, layers=1).encoder_configs(len(small.vocab)))
    with pytest.raises(DataError):
        train_subtask1(small, itm, DisambiguationConfig())


def test_training_deterministic_and_loss_drops():
    corpus = generate_corpus(CorpusConfig(seed=6, n_scenes=16, dialogs_per_scene=2))
    itm = MatchingModel("itm", *PretrainConfig(d_model=16, layers=1).encoder_configs(len(corpus.vocab)),
                        rng=np.random.default_rng(0))
    cfg = DisambiguationConfig(optim=OptimConfig(epochs=3, lr=3e-3), max_len=48)
    a = train_subtask1(corpus, itm, cfg, eval_split="")
    b = train_subtask1(corpus, itm, cfg, eval_split="")
    for k, v in a.model.params.arrays().items():
        assert np.array_equal(v, b.model.params[k].data)
    losses = [r["loss"] for r in a.log]
    assert losses[-1] < losses[0]
    items = labeled_turns(corpus, corpus.split("dev"), max_len=48)
    preds, probs = predict_turns(a.model, items)
    assert len(preds) == len(items) and np.all((probs >= 0) & (probs <= 1))


def test_zero_epochs_keeps_initialisation():
    corpus = generate_corpus(CorpusConfig(seed=6, n_scenes=8, dialogs_per_scene=2))
    itm = MatchingModel("itm", *PretrainConfig(d_model=16, layers=1).encoder_configs(len(corpus.vocab)),
                        rng=np.random.default_rng(0))
    run = train_subtask1(corpus, itm, DisambiguationConfig(optim=OptimConfig(epochs=0, lr=3e-3)), eval_split="")
    for k, v in itm.image.params.arrays().items():
        assert np.array_equal(v, run.model.params["image." + k].data)
    assert run.log == []


def test_softmax_prob_matches_decision():
    m = tiny_model()
    z = disambiguation_forward(CTX, [crop(4)], m)
    p = ops.softmax(Tensor(z[None]), axis=-1).data[0, 1]
    assert (p > 0.5) == decide(z)


def test_empty_corpus_split_guard():
    c = Corpus({}, [], {"train": [], "dev": [], "test": []})
    with pytest.raises(DataError):
        train_subtask1(c, None)
