"""Verification metrics over positive/negative score sets.

Scores are oriented so that larger means "more likely the target artist";
for the hypersphere verifier the score is the negated distance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import SpecError


@dataclass(frozen=True, eq=False)
class ScoreSet:
    positive_scores: np.ndarray
    negative_scores: np.ndarray

    def __post_init__(self) -> None:
        pos = np.array(self.positive_scores, dtype=np.float64).reshape(-1)
        neg = np.array(self.negative_scores, dtype=np.float64).reshape(-1)
        if pos.size == 0 or neg.size == 0:
            raise SpecError("ScoreSet needs at least one positive and one negative score")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
            raise SpecError("scores must be finite")
        pos.setflags(write=False)
        neg.setflags(write=False)
        object.__setattr__(self, "positive_scores", pos)
        object.__setattr__(self, "negative_scores", neg)

    @classmethod
    def from_distances(cls, positive_distances: Sequence[float], negative_distances: Sequence[float]) -> "ScoreSet":
        return cls(-np.asarray(positive_distances, dtype=np.float64), -np.asarray(negative_distances, dtype=np.float64))

    def swapped(self) -> "ScoreSet":
        return ScoreSet(self.negative_scores, self.positive_scores)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], sorted_vals.size]
    avg = (starts + ends + 1) / 2.0  # mean of 1-based ranks start+1 .. end
    ranks = np.empty(values.size, dtype=np.float64)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def roc_auc(scores: ScoreSet) -> float:
    """Mann-Whitney AUC: P(pos > neg) + 0.5 * P(pos == neg), exact over all pairs."""
    pos, neg = scores.positive_scores, scores.negative_scores
    ranks = _average_ranks(np.concatenate([pos, neg]))
    n_pos, n_neg = pos.size, neg.size
    u = ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores: ScoreSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds) for the rule ``score >= threshold``, from (0, 0) upward."""
    pos, neg = scores.positive_scores, scores.negative_scores
    thresholds = np.r_[np.inf, np.unique(np.concatenate([pos, neg]))[::-1]]
    pos_sorted, neg_sorted = np.sort(pos), np.sort(neg)
    tpr = (pos.size - np.searchsorted(pos_sorted, thresholds, side="left")) / pos.size
    fpr = (neg.size - np.searchsorted(neg_sorted, thresholds, side="left")) / neg.size
    return fpr, tpr, thresholds


def tpr_at_fpr(scores: ScoreSet, fpr_target: float = 1e-2, interpolate: bool = False) -> float:
    """TPR at the most permissive threshold whose empirical FPR stays <= ``fpr_target``.

    A sample is called positive when ``score >= threshold``. With fewer than
    ``ceil(1 / fpr_target)`` negatives no false positive fits in the budget,
    so the threshold sits above every negative. ``interpolate`` instead reads
    the linearly interpolated ROC curve at exactly ``fpr_target``.
    """
    if not 0.0 < fpr_target < 1.0:
        raise SpecError(f"fpr_target must be in (0, 1), got {fpr_target}")
    pos, neg = scores.positive_scores, scores.negative_scores
    if interpolate:
        fpr, tpr, _ = roc_curve(scores)
        return float(np.interp(fpr_target, fpr, tpr))
    neg_desc = np.sort(neg)[::-1]
    # largest number of false positives k with k / n_neg <= target
    k = int(np.floor(fpr_target * neg.size))
    while k + 1 <= neg.size and (k + 1) / neg.size <= fpr_target:
        k += 1
    while k > 0 and k / neg.size > fpr_target:
        k -= 1
    if k >= neg.size:
        return 1.0
    # any threshold above the (k+1)-th largest negative admits at most k negatives
    cutoff = neg_desc[k]
    return float(np.count_nonzero(pos > cutoff) / pos.size)
