"""Projection module and learnable hypersphere center."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from ..datamodel import StyleFingerprint, VerifierParams
from ..errors import SpecError

DEFAULT_PROJECTION_DIM = 256


class HypersphereVerifier(nn.Module):
    """Bias-free linear projection followed by distance to a learnable center."""

    def __init__(self, in_dim: int, out_dim: int = DEFAULT_PROJECTION_DIM, init: str = "random(0)"):
        super().__init__()
        self.projection = nn.Linear(in_dim, out_dim, bias=False)
        self.center = nn.Parameter(torch.zeros(out_dim))
        self.center_initialized = False
        with torch.no_grad():
            if init == "identity":
                if in_dim != out_dim:
                    raise SpecError(f"identity init needs in_dim == out_dim, got {in_dim} -> {out_dim}")
                self.projection.weight.copy_(torch.eye(in_dim))
            elif init == "zero":
                self.projection.weight.zero_()
            elif init.startswith("random(") and init.endswith(")"):
                gen = torch.Generator().manual_seed(int(init[7:-1]))
                bound = 1.0 / in_dim**0.5
                self.projection.weight.copy_(torch.rand(out_dim, in_dim, generator=gen) * 2 * bound - bound)
            else:
                raise SpecError(f"unknown projection init {init!r}")

    @property
    def in_dim(self) -> int:
        return self.projection.in_features

    @property
    def out_dim(self) -> int:
        return self.projection.out_features

    def forward(self, v: torch.Tensor) -> torch.Tensor:
        if v.shape[-1] != self.in_dim:
            raise SpecError(f"fingerprint dim {v.shape[-1]} does not match projection input {self.in_dim}")
        return self.projection(v)

    def sq_distance(self, v: torch.Tensor) -> torch.Tensor:
        return (self(v) - self.center).pow(2).sum(dim=-1)

    @torch.no_grad()
    def init_center(self, positive_vectors: torch.Tensor) -> None:
        self.center.copy_(self(positive_vectors).mean(dim=0))
        self.center_initialized = True

    @classmethod
    def from_params(cls, params: VerifierParams) -> "HypersphereVerifier":
        m = cls(params.in_dim, params.out_dim, init="zero")
        with torch.no_grad():
            m.projection.weight.copy_(torch.tensor(np.array(params.projection), dtype=torch.float32))
            m.center.copy_(torch.tensor(np.array(params.center), dtype=torch.float32))
        m.center_initialized = True
        return m

    def to_params(
        self,
        margin: float = 1.0,
        beta: float = 0.3,
        epsilon: float = 1e-6,
        lambda_pos: float = 1.0,
        lambda_neg: float = 1.0,
        radius: float | None = None,
    ) -> VerifierParams:
        return VerifierParams(
            projection=self.projection.weight.detach().double().numpy(),
            center=self.center.detach().double().numpy(),
            margin=margin,
            beta=beta,
            epsilon=epsilon,
            lambda_pos=lambda_pos,
            lambda_neg=lambda_neg,
            radius=radius,
        )


def project_embed(fingerprint: StyleFingerprint | np.ndarray, params: VerifierParams) -> np.ndarray:
    v = fingerprint.vector if isinstance(fingerprint, StyleFingerprint) else np.asarray(fingerprint, dtype=np.float64)
    if v.shape[-1] != params.in_dim:
        raise SpecError(f"fingerprint dim {v.shape[-1]} does not match projection input {params.in_dim}")
    return v @ params.projection.T


def distance(z: np.ndarray, center: np.ndarray) -> float:
    z = np.asarray(z, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    if z.shape != center.shape:
        raise SpecError(f"embedding shape {z.shape} does not match center {center.shape}")
    return float(np.linalg.norm(z - center))


def distances(vectors: np.ndarray, params: VerifierParams) -> np.ndarray:
    """Distances to the center for a stack of fingerprint vectors (N, embed_dim)."""
    z = project_embed(np.atleast_2d(np.asarray(vectors, dtype=np.float64)), params)
    return np.linalg.norm(z - params.center, axis=1)
