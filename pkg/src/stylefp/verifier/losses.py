"""Hypersphere losses on distances to the center.

Every sample enters through the soft distance ``s = sqrt(d^2 + 1) - m``.
Positives pay ``s`` directly; negatives pay ``-log(1 - exp(-beta * s) + eps)``,
which is large near the center and decays to ``-log(1 + eps)`` far away.

The functions accept torch tensors (autograd flows through them and a tensor
is returned) or plain sequences (evaluated in float64, a float is returned).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch

from ..errors import SpecError


def _prepare(distances) -> tuple[torch.Tensor, bool]:
    is_tensor = isinstance(distances, torch.Tensor)
    d = distances if is_tensor else torch.tensor(np.array(distances, dtype=np.float64))
    d = d.reshape(-1)
    if d.numel() == 0:
        raise SpecError("loss needs a non-empty batch")
    return d, is_tensor


def _out(value: torch.Tensor, is_tensor: bool):
    return value if is_tensor else float(value)


def pos_terms_from_sq(sq_distances: torch.Tensor, margin: float) -> torch.Tensor:
    return torch.sqrt(sq_distances + 1.0) - margin


def neg_terms_from_sq(sq_distances: torch.Tensor, margin: float, beta: float, epsilon: float) -> torch.Tensor:
    s = torch.sqrt(sq_distances + 1.0) - margin
    # for margin > 1 and small d, s < 0 and the log argument can go non-positive; left as-is (NaN aborts training)
    return -torch.log(1.0 - torch.exp(-beta * s) + epsilon)


def loss_pos(distances, margin: float = 1.0):
    """Mean of ``sqrt(d^2 + 1) - margin`` over the batch."""
    d, is_tensor = _prepare(distances)
    return _out(pos_terms_from_sq(d * d, margin).mean(), is_tensor)


def loss_neg(distances, margin: float = 1.0, beta: float = 0.3, epsilon: float = 1e-6):
    """Mean of ``-log(1 - exp(-beta * (sqrt(d^2 + 1) - margin)) + epsilon)`` over the batch."""
    if not epsilon > 0:
        raise SpecError(f"epsilon must be > 0, got {epsilon}")
    d, is_tensor = _prepare(distances)
    return _out(neg_terms_from_sq(d * d, margin, beta, epsilon).mean(), is_tensor)


def total_loss(
    pos_distances,
    neg_distances,
    lambda_pos: float = 1.0,
    lambda_neg: float = 1.0,
    margin: float = 1.0,
    beta: float = 0.3,
    epsilon: float = 1e-6,
):
    return lambda_pos * loss_pos(pos_distances, margin) + lambda_neg * loss_neg(neg_distances, margin, beta, epsilon)


def loss_pos_grad(distances: Sequence[float], margin: float = 1.0) -> np.ndarray:
    """Closed-form d L_pos / d d_i = d_i / (N * sqrt(d_i^2 + 1)). ``margin`` does not enter."""
    d = np.asarray(distances, dtype=np.float64).reshape(-1)
    return d / (d.size * np.sqrt(d * d + 1.0))


def loss_neg_grad(distances: Sequence[float], margin: float = 1.0, beta: float = 0.3, epsilon: float = 1e-6) -> np.ndarray:
    """Closed-form d L_neg / d d_i."""
    d = np.asarray(distances, dtype=np.float64).reshape(-1)
    root = np.sqrt(d * d + 1.0)
    e = np.exp(-beta * (root - margin))
    return -(beta * e / (1.0 - e + epsilon)) * (d / root) / d.size
