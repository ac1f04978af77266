"""Independent reference implementations used to check the production code.

Everything here is written the slow, obvious way: per-sample Python math,
all-pairs counting, exhaustive threshold scans. None of it imports from the
package modules it checks.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


def direct_loss_pos(d: Sequence[float], m: float) -> float:
    return sum(math.sqrt(x * x + 1.0) - m for x in d) / len(d)


def direct_loss_neg(d: Sequence[float], m: float, beta: float, eps: float) -> float:
    total = 0.0
    for x in d:
        total += -math.log(1.0 - math.exp(-beta * (math.sqrt(x * x + 1.0) - m)) + eps)
    return total / len(d)


def brute_auc(pos: np.ndarray, neg: np.ndarray) -> float:
    """All-pairs Mann-Whitney count: wins plus half the ties, over n_pos * n_neg."""
    pos = np.asarray(pos, dtype=np.float64)[:, None]
    neg = np.asarray(neg, dtype=np.float64)[None, :]
    wins = int(np.count_nonzero(pos > neg))
    ties = int(np.count_nonzero(pos == neg))
    return (wins + 0.5 * ties) / (pos.size * neg.size)


def exhaustive_tpr_at_fpr(pos: np.ndarray, neg: np.ndarray, target: float) -> float:
    """Try every threshold (each observed score and +inf) for the rule score >= t."""
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    best = 0.0
    for t in np.r_[np.unique(np.concatenate([pos, neg])), np.inf]:
        fpr = np.count_nonzero(neg >= t) / neg.size
        if fpr <= target:
            best = max(best, np.count_nonzero(pos >= t) / pos.size)
    return best


def midpoint_scan(pos_d: np.ndarray, neg_d: np.ndarray, target: float) -> tuple[float, float, float] | None:
    """Best closed-ball operating point over all inter-distance midpoints.

    Candidates are radius 0 (the smallest ball), every midpoint between
    consecutive distinct distances, and the maximum. Returns (radius, tpr, fpr)
    for max TPR subject to FPR <= target, smallest radius on ties, or None when
    no candidate meets the target.
    """
    pos_d = np.asarray(pos_d, dtype=np.float64)
    neg_d = np.asarray(neg_d, dtype=np.float64)
    u = np.unique(np.concatenate([pos_d, neg_d]))
    candidates = [0.0] + [(a + b) / 2.0 for a, b in zip(u[:-1], u[1:])] + [u[-1]]
    best = None
    for r in candidates:
        tpr = np.count_nonzero(pos_d <= r) / pos_d.size
        fpr = np.count_nonzero(neg_d <= r) / neg_d.size
        if fpr <= target and (best is None or tpr > best[1]):
            best = (r, tpr, fpr)
    return best


def central_difference(f: Callable[[], float], set_value: Callable[[float], None], x0: float, h: float) -> float:
    set_value(x0 + h)
    up = f()
    set_value(x0 - h)
    down = f()
    set_value(x0)
    return (up - down) / (2.0 * h)


def relative_error(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)
