"""Class-balanced minibatch sampling."""

from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from ..datamodel import DatasetManifest, ManifestEntry, labels_array
from ..errors import SpecError


def train_entries(manifest: DatasetManifest) -> list[ManifestEntry]:
    return manifest.select(split="train")


def make_sampler(
    source: DatasetManifest | Sequence,
    batch_size: int = 32,
    seed: int | Sequence[int] = 0,
    num_samples: int | None = None,
    weighted: bool = True,
) -> Iterator[np.ndarray]:
    """Yield index batches over the training items.

    With ``weighted`` each draw picks an item with probability inversely
    proportional to its class frequency (with replacement), so batches are
    balanced in expectation. Without it, items are shuffled once. For a
    manifest, indices refer to ``train_entries(manifest)``.
    """
    if isinstance(source, DatasetManifest):
        labels = labels_array([e.label for e in train_entries(source)])
    else:
        labels = labels_array(source)
    n = labels.size
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == n:
        raise SpecError("sampler needs both positive and negative training items")
    if batch_size <= 0:
        raise SpecError("batch_size must be positive")
    num_samples = n if num_samples is None else int(num_samples)
    rng = np.random.default_rng(seed)

    if weighted:
        weights = np.where(labels, 1.0 / n_pos, 1.0 / (n - n_pos))
        order = rng.choice(n, size=num_samples, replace=True, p=weights / weights.sum())
    else:
        order = np.concatenate([rng.permutation(n) for _ in range(-(-num_samples // n))])[:num_samples]
    return (order[i : i + batch_size] for i in range(0, num_samples, batch_size))
