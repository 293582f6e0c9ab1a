"""Accuracy, micro object F1 and unsmoothed corpus BLEU-4."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

from simmc_mm.errors import EvaluationError


@dataclass
class MetricReport:
    name: str
    value: float
    split: str = ""
    support: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def accuracy(preds: Sequence[bool], golds: Sequence[bool]) -> float:
    if len(preds) != len(golds):
        raise EvaluationError(f"{len(preds)} predictions vs {len(golds)} gold labels")
    if not golds:
        raise EvaluationError("accuracy of an empty set is undefined")
    return sum(bool(p) == bool(g) for p, g in zip(preds, golds)) / len(golds)


def object_counts(pred_sets, gold_sets) -> tuple[int, int, int]:
    """Pooled (tp, fp, fn) over aligned turns."""
    if len(pred_sets) != len(gold_sets):
        raise EvaluationError(f"{len(pred_sets)} predicted turns vs {len(gold_sets)} gold turns")
    tp = fp = fn = 0
    for p, g in zip(pred_sets, gold_sets):
        p, g = set(p), set(g)
        tp += len(p & g)
        fp += len(p - g)
        fn += len(g - p)
    return tp, fp, fn


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def object_f1(pred_sets, gold_sets) -> float:
    return f1_from_counts(*object_counts(pred_sets, gold_sets))


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(hypotheses, references, max_n: int = 4) -> dict:
    if len(hypotheses) != len(references):
        raise EvaluationError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise EvaluationError("BLEU of an empty corpus is undefined")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    return {"matches": matches, "totals": totals, "hyp_len": hyp_len, "ref_len": ref_len}


def bleu_from_stats(stats: dict) -> tuple[float, list[float], float]:
    """(bleu, precisions, brevity penalty); no smoothing, so any zero precision gives 0."""
    precisions = [m / t if t else 0.0 for m, t in zip(stats["matches"], stats["totals"])]
    c, r = stats["hyp_len"], stats["ref_len"]
    bp = math.exp(min(0.0, 1.0 - r / c)) if c else 0.0
    if min(precisions) == 0.0:
        return 0.0, precisions, bp
    log_mean = sum(math.log(p) for p in precisions) / len(precisions)
    return bp * math.exp(log_mean), precisions, bp


def bleu4(hypotheses, references) -> float:
    return bleu_from_stats(bleu_stats(hypotheses, references))[0]


def bleu_report(hypotheses, references, split: str = "") -> MetricReport:
    stats = bleu_stats(hypotheses, references)
    value, precisions, bp = bleu_from_stats(stats)
    return MetricReport("bleu4", value, split, {"precisions": precisions, "brevity_penalty": bp,
                                                "hyp_len": stats["hyp_len"], "ref_len": stats["ref_len"]})


def f1_report(pred_sets, gold_sets, split: str = "") -> MetricReport:
    tp, fp, fn = object_counts(pred_sets, gold_sets)
    return MetricReport("object_f1", f1_from_counts(tp, fp, fn), split, {"tp": tp, "fp": fp, "fn": fn})


def accuracy_report(preds, golds, split: str = "") -> MetricReport:
    correct = sum(bool(p) == bool(g) for p, g in zip(preds, golds))
    return MetricReport("accuracy", accuracy(preds, golds), split, {"correct": correct, "n": len(golds)})
