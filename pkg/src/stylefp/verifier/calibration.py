"""Radius selection by line search over validation distances, and single-image verification."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..datamodel import ImageTensor, StyleFingerprint, Verdict, VerifierParams, labels_array
from ..errors import CalibrationError, UncalibratedError
from ..extractor import StyleExtractor, extract_fingerprint
from .model import distances as embed_distances
from .model import project_embed

CRITERIA = ("tpr_at_fpr", "youden")
INFEASIBLE = -1.0


@dataclass(frozen=True)
class GridSpec:
    size: int = 512
    criterion: str = "tpr_at_fpr"
    fpr_target: float = 1e-2
    include_observed: bool = True

    def __post_init__(self) -> None:
        if self.size < 2:
            raise CalibrationError("grid size must be >= 2")
        if self.criterion not in CRITERIA:
            raise CalibrationError(f"unknown criterion {self.criterion!r}; choose from {CRITERIA}")
        if not 0.0 < self.fpr_target < 1.0:
            raise CalibrationError("fpr_target must be in (0, 1)")


@dataclass(frozen=True)
class CalibrationResult:
    radius: float
    grid: tuple[float, ...]
    objective_per_candidate: tuple[float, ...]
    criterion: str
    tpr: float
    fpr: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = list(self.grid)
        d["objective_per_candidate"] = list(self.objective_per_candidate)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationResult":
        return cls(
            radius=float(d["radius"]),
            grid=tuple(float(x) for x in d["grid"]),
            objective_per_candidate=tuple(float(x) for x in d["objective_per_candidate"]),
            criterion=str(d["criterion"]),
            tpr=float(d["tpr"]),
            fpr=float(d["fpr"]),
        )


def operating_point(pos_d: np.ndarray, neg_d: np.ndarray, radius: float) -> tuple[float, float]:
    """(TPR, FPR) of the closed-ball rule ``d <= radius``."""
    return float(np.count_nonzero(pos_d <= radius) / pos_d.size), float(np.count_nonzero(neg_d <= radius) / neg_d.size)


def calibrate_from_distances(distances: Sequence[float], labels, grid: GridSpec = GridSpec()) -> CalibrationResult:
    """Pick the radius on a uniform grid from 0 to the largest validation distance.

    The grid is augmented with the observed distances themselves: the closed-ball
    decision only changes at those points, so every achievable operating point
    is on the grid. Default criterion maximises TPR subject to FPR <= target;
    ties go to the smallest radius, i.e. the largest margin to the nearest
    negative outside the sphere.
    """
    d = np.asarray(distances, dtype=np.float64).reshape(-1)
    is_pos = labels_array(labels)
    if d.size != is_pos.size:
        raise CalibrationError(f"{d.size} distances but {is_pos.size} labels")
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise CalibrationError("distances must be finite and >= 0")
    pos_d, neg_d = d[is_pos], d[~is_pos]
    if pos_d.size == 0:
        raise CalibrationError("validation set has no positive samples")
    if neg_d.size == 0:
        raise CalibrationError("validation set has no negative samples")

    d_max = float(d.max())
    if d_max == float(d.min()):
        tpr, fpr = operating_point(pos_d, neg_d, d_max)
        return CalibrationResult(
            radius=d_max, grid=(d_max,), objective_per_candidate=(tpr - fpr,), criterion="degenerate", tpr=tpr, fpr=fpr
        )

    candidates = np.linspace(0.0, d_max, grid.size)
    if grid.include_observed:
        candidates = np.union1d(candidates, d)
    # counts of d <= r for every candidate r
    pos_sorted, neg_sorted = np.sort(pos_d), np.sort(neg_d)
    tpr = np.searchsorted(pos_sorted, candidates, side="right") / pos_d.size
    fpr = np.searchsorted(neg_sorted, candidates, side="right") / neg_d.size

    if grid.criterion == "tpr_at_fpr":
        objective = np.where(fpr <= grid.fpr_target, tpr, INFEASIBLE)
        tag = f"tpr_at_fpr<={grid.fpr_target:g}"
    else:
        objective = tpr - fpr
        tag = "youden"
    if objective.max() == INFEASIBLE:
        n_zero = int(np.count_nonzero(neg_d == 0.0))
        raise CalibrationError(
            f"no radius >= 0 keeps the validation FPR <= {grid.fpr_target:g}: {n_zero} of {neg_d.size} negatives "
            "sit exactly on the center"
        )
    best = int(np.flatnonzero(objective == objective.max())[0])  # smallest radius among ties
    return CalibrationResult(
        radius=float(candidates[best]),
        grid=tuple(candidates.tolist()),
        objective_per_candidate=tuple(objective.tolist()),
        criterion=tag,
        tpr=float(tpr[best]),
        fpr=float(fpr[best]),
    )


def calibrate_radius(
    fingerprints: Sequence[StyleFingerprint] | np.ndarray,
    labels,
    params: VerifierParams,
    grid: GridSpec = GridSpec(),
) -> CalibrationResult:
    vectors = np.stack([fp.vector for fp in fingerprints]) if not isinstance(fingerprints, np.ndarray) else fingerprints
    return calibrate_from_distances(embed_distances(vectors, params), labels, grid)


def verify_fingerprint(fingerprint: StyleFingerprint, params: VerifierParams) -> Verdict:
    if params.radius is None:
        raise UncalibratedError()
    z = project_embed(fingerprint, params)
    d = float(np.linalg.norm(z - params.center))
    return Verdict(image_id=fingerprint.image_id, distance=d, radius=params.radius)


def verify(image: ImageTensor, extractor: StyleExtractor, params: VerifierParams, image_id: str = "") -> Verdict:
    """Extract the style fingerprint of one suspect image and test it against the calibrated sphere."""
    if params.radius is None:
        raise UncalibratedError()
    return verify_fingerprint(extract_fingerprint(image, extractor, image_id), params)
