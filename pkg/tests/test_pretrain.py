import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simmc_mm.corpus import CorpusConfig, generate_corpus
from simmc_mm.errors import DegenerateInputError, SamplingError
from simmc_mm.numeric import ParameterSet, Tensor, no_grad, ops
from simmc_mm.numeric.gradcheck import check_gradients
from simmc_mm.pretrain import (
    MatchingHead,
    MatchingModel,
    PretrainConfig,
    matching_logit,
    matching_loss,
    matching_score,
    sample_btm_batch,
    sample_itm_batch,
    train_matching,
    with_epochs,
)


@pytest.fixture(scope="module")
def small():
    return generate_corpus(CorpusConfig(seed=3, n_scenes=12, objects_per_scene=(4, 6), dialogs_per_scene=2))


def identity_head(d, scale=100.0):
    ps = ParameterSet()
    ps["wt"] = np.eye(d)
    ps["wv"] = np.eye(d)
    return MatchingHead(ps, scale)


def score(t, o, head):
    return float(matching_score(Tensor(np.asarray([t], float)), Tensor(np.asarray([o], float)), head).data[0])


def test_orthogonal_is_half_exactly():
    assert score([1.0, 0, 0], [0, 2.0, 0], identity_head(3)) == 0.5


def test_parallel_and_antiparallel_saturate():
    head = identity_head(3)
    up = score([1.0, 2.0, 3.0], [2.0, 4.0, 6.0], head)
    down = score([1.0, 2.0, 3.0], [-2.0, -4.0, -6.0], head)
    assert abs(up - 1.0) <= 1e-40
    assert abs(down - 0.0) <= 1e-40
    # the exact value sits below 1 by sigmoid(-100) ~ 3.7e-44, invisible in float64
    assert 0.0 < down < 1e-43


def test_monotone_over_cosine_sweep():
    head = identity_head(2)
    angles = np.linspace(np.pi, 0.0, 100)
    vals = [score([1.0, 0.0], [np.cos(a), np.sin(a)], head) for a in angles]
    # scale 100 saturates both ends in float64, so only non-decreasing holds there
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    mid = identity_head(2, scale=1.0)
    vals = [score([1.0, 0.0], [np.cos(a), np.sin(a)], mid) for a in angles]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_tiny_scale_pins_half():
    rng = np.random.default_rng(0)
    head = identity_head(5, scale=1e-9)
    for _ in range(50):
        assert abs(score(rng.normal(size=5), rng.normal(size=5), head) - 0.5) < 1e-8


def test_zero_projection_is_degenerate():
    with pytest.raises(DegenerateInputError):
        score([0.0, 0.0], [1.0, 0.0], identity_head(2))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_score_in_closed_unit_interval(t, o):
    if np.linalg.norm(t) < 1e-3 or np.linalg.norm(o) < 1e-3:
        return
    s = score(t, o, identity_head(3, scale=1.0))
    assert 0.0 < s < 1.0


def test_matching_graph_gradcheck():
    rng = np.random.default_rng(1)
    head = MatchingHead.create(8, 8, 8, rng, scale=2.0)
    t = Tensor(rng.normal(size=(3, 8)))
    o = Tensor(rng.normal(size=(3, 8)))
    labels = np.array([1.0, 0.0, 1.0])
    tensors = [t, o, head.params["wt"], head.params["wv"]]
    for kind in ("bce", "ce"):
        errs = check_gradients(lambda kind=kind: matching_loss(matching_logit(t, o, head), labels, kind), tensors)
        assert max(errs.values()) <= 1e-4, errs


def test_itm_sampler_counts_exclusion_determinism(small):
    scenes = small.split_scene_ids("train")[:3]
    b = sample_itm_batch(small, scenes, 1, np.random.default_rng(5))
    n_obj = sum(len(small.scenes[s].objects) for s in scenes)
    assert int(b.labels.sum()) == n_obj and len(b) == 2 * n_obj
    for (ti, ii), y in zip(b.pairs, b.labels):
        assert (ti == ii) == (y == 1)
        assert b.image_keys[ti][0] == b.image_keys[ii][0]  # negatives stay in-scene
    again = sample_itm_batch(small, scenes, 1, np.random.default_rng(5))
    assert np.array_equal(b.pairs, again.pairs)


def test_itm_sampler_rejects_small_scene(small):
    sid = small.split_scene_ids("train")[0]
    k = len(small.scenes[sid].objects)
    with pytest.raises(SamplingError):
        sample_itm_batch(small, [sid], k, np.random.default_rng(0))


def test_btm_sampler(small):
    dialogs = small.split("train")[:10]
    pool = small.split_scene_ids("train")
    b = sample_btm_batch(small, dialogs, 1, np.random.default_rng(2), scene_pool=pool)
    assert len(b) == 20 and int(b.labels.sum()) == 10
    for (ti, ii), y in zip(b.pairs, b.labels):
        same = pool[ii] == dialogs[ti].scene_id
        assert same == (y == 1)
    with pytest.raises(SamplingError):
        sample_btm_batch(small, dialogs, len(pool), np.random.default_rng(2), scene_pool=pool)


def test_zero_epochs_returns_initialisation(small):
    cfg = with_epochs(PretrainConfig(objective="itm", d_model=32, layers=1), 0)
    run = train_matching(small, cfg, eval_split="")
    text_cfg, image_cfg = cfg.encoder_configs(len(small.vocab))
    from simmc_mm.training import stream
    fresh = MatchingModel("itm", text_cfg, image_cfg, rng=stream(cfg.seed, "itm.init"))
    for k, v in fresh.params.arrays().items():
        assert np.array_equal(v, run.model.params[k].data)
    assert run.log == []


def test_training_lowers_loss(small):
    cfg = with_epochs(PretrainConfig(objective="itm", d_model=32, layers=1), 3)
    run = train_matching(small, cfg, eval_split="")
    losses = [r["loss"] for r in run.log]
    assert losses[-1] < losses[0]


def test_loss_kind_never_changes_scores(small):
    text_cfg, image_cfg = PretrainConfig(d_model=32, layers=1).encoder_configs(len(small.vocab))
    model = MatchingModel("itm", text_cfg, image_cfg, rng=np.random.default_rng(0))
    batch = sample_itm_batch(small, small.split_scene_ids("dev")[:2], 1, np.random.default_rng(0))
    with no_grad():
        z = model.pair_logits(batch)
        bce = float(matching_loss(z, batch.labels, "bce").data)
        ce = float(matching_loss(z, batch.labels, "CE").data)
    # two-class CE over (-z, z) is BCE at logit 2z: same score ordering, different loss value
    assert np.isfinite(bce) and np.isfinite(ce)
    assert np.array_equal(model.scores(batch), model.scores(batch))
