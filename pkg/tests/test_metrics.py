import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from simmc_mm.errors import EvaluationError
from simmc_mm.metrics import accuracy, bleu4, bleu_report, object_f1


# Naive oracle, written independently of the library: explicit index loops,
# no Counter, no shared helpers.
def oracle_bleu4(hyps, refs):
    num = [0, 0, 0, 0]
    den = [0, 0, 0, 0]
    c = r = 0
    for hyp, ref in zip(hyps, refs):
        c += len(hyp)
        r += len(ref)
        for n in range(1, 5):
            grams = [hyp[i:i + n] for i in range(len(hyp) - n + 1)]
            ref_grams = [ref[i:i + n] for i in range(len(ref) - n + 1)]
            done = []
            for g in grams:
                if g in done:
                    continue
                done.append(g)
                in_hyp = sum(1 for x in grams if x == g)
                in_ref = sum(1 for x in ref_grams if x == g)
                num[n - 1] += min(in_hyp, in_ref)
            den[n - 1] += len(grams)
    if any(d == 0 for d in den) or any(x == 0 for x in num):
        return 0.0
    logp = 0.0
    for n in range(4):
        logp += math.log(num[n] / den[n]) / 4
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * math.exp(logp)


def oracle_f1(preds, golds):
    tp = fp = fn = 0
    for p, g in zip(preds, golds):
        for x in p:
            if x in g:
                tp += 1
            else:
                fp += 1
        for x in g:
            if x not in p:
                fn += 1
    if tp == 0:
        return 0.0
    prec, rec = tp / (tp + fp), tp / (tp + fn)
    return 2 * prec * rec / (prec + rec)


def test_accuracy_examples():
    assert accuracy([True, False], [True, False]) == 1.0
    assert accuracy([True, False], [False, True]) == 0.0
    assert accuracy([1, 1, 0, 0], [1, 1, 0, 1]) == 0.75
    with pytest.raises(EvaluationError):
        accuracy([], [])
    with pytest.raises(EvaluationError):
        accuracy([True], [True, False])


def test_f1_examples():
    assert object_f1([{1, 2}, {3}], [{1, 2}, {3}]) == 1.0
    assert object_f1([{1, 2}], [{2, 3}]) == 0.5
    assert object_f1([set(), set()], [set(), set()]) == 0.0
    with pytest.raises(EvaluationError):
        object_f1([{1}], [])


def test_bleu_examples():
    s = "the red top is 49 dollars".split()
    assert bleu4([s], [s]) == pytest.approx(1.0, abs=1e-12)
    assert bleu4([["a", "b"]], [["a", "b", "c", "d"]]) == 0.0
    rep = bleu_report([["a", "b"]], [["a", "b", "c", "d"]])
    assert rep.support["brevity_penalty"] == pytest.approx(math.exp(-1), abs=1e-12)
    with pytest.raises(EvaluationError):
        bleu4([], [])


def test_bleu_brevity_penalty_alone():
    # every n-gram order matched, c=2*4, r=4*4 -> bp = e^(1-2)
    hyp = [["w", "x", "y", "z"]] * 2
    ref = [["w", "x", "y", "z", "w", "x", "y", "z"]] * 2
    assert bleu4(hyp, ref) == pytest.approx(math.exp(-1), abs=1e-12)


def _random_pairs(rng, n):
    words = ["a", "b", "c", "d", "e", "f"]
    hyps = [[rng.choice(words) for _ in range(rng.randint(1, 12))] for _ in range(n)]
    refs = [[rng.choice(words) for _ in range(rng.randint(1, 12))] for _ in range(n)]
    return hyps, refs


def test_bleu_matches_oracle_on_random_corpora():
    rng = random.Random(0)
    for _ in range(20):
        hyps, refs = _random_pairs(rng, 20)
        assert abs(bleu4(hyps, refs) - oracle_bleu4(hyps, refs)) <= 1e-9


def test_bleu_oracle_on_20_single_pairs():
    rng = random.Random(1)
    hyps, refs = _random_pairs(rng, 20)
    assert abs(bleu4(hyps, refs) - oracle_bleu4(hyps, refs)) <= 1e-9
    for h, r in zip(hyps, refs):
        assert abs(bleu4([h], [r]) - oracle_bleu4([h], [r])) <= 1e-9


def test_bleu_permutation_invariant():
    rng = random.Random(2)
    hyps, refs = _random_pairs(rng, 15)
    order = list(range(15))
    rng.shuffle(order)
    assert bleu4(hyps, refs) == pytest.approx(bleu4([hyps[i] for i in order], [refs[i] for i in order]),
                                              abs=1e-12)


def test_fuzz_f1_and_accuracy_against_naive():
    rng = random.Random(3)
    for _ in range(1000):
        n = rng.randint(1, 6)
        preds = [set(rng.sample(range(6), rng.randint(0, 4))) for _ in range(n)]
        golds = [set(rng.sample(range(6), rng.randint(0, 4))) for _ in range(n)]
        assert object_f1(preds, golds) == oracle_f1(preds, golds)
        assert object_f1(golds, preds) == object_f1(preds, golds)
        pb = [rng.random() < 0.5 for _ in range(n)]
        gb = [rng.random() < 0.5 for _ in range(n)]
        assert accuracy(pb, gb) == sum(1 for i in range(n) if pb[i] == gb[i]) / n


@given(st.lists(st.tuples(st.lists(st.sampled_from("abc"), min_size=1, max_size=8),
                          st.lists(st.sampled_from("abc"), min_size=1, max_size=8)),
                min_size=1, max_size=6))
def test_bleu_in_unit_interval(pairs):
    v = bleu4([h for h, _ in pairs], [r for _, r in pairs])
    assert 0.0 <= v <= 1.0 + 1e-12
