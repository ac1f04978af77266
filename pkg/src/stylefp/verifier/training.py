"""Joint minibatch training of the extractor head and the hypersphere verifier."""

from __future__ import annotations

import contextlib
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

import numpy as np
import torch

from ..datamodel import VerifierParams, labels_array
from ..errors import CollapseError, NonFiniteLossError, SpecError
from ..extractor import StyleExtractor
from .losses import neg_terms_from_sq, pos_terms_from_sq
from .model import HypersphereVerifier
from .sampler import make_sampler

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    weight_decay: float = 0.01
    epochs: int = 50
    batch_size: int = 32
    lambda_pos: float = 1.0
    lambda_neg: float = 1.0
    beta: float = 0.3
    margin: float = 1.0
    epsilon: float = 1e-6
    seed: int = 0
    weighted_sampling: bool = True
    samples_per_epoch: int | None = None
    center_lr: float | None = None
    deterministic: bool = True
    collapse_guard: bool = True
    collapse_tol: float = 1e-6
    collapse_ratio: float = 0.5

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise SpecError("learning_rate must be > 0")
        if self.epochs < 0:
            raise SpecError("epochs must be >= 0")
        if self.batch_size <= 0:
            raise SpecError("batch_size must be > 0")
        if not self.beta > 0 or not self.epsilon > 0:
            raise SpecError("beta and epsilon must be > 0")
        if self.lambda_pos < 0 or self.lambda_neg < 0 or self.margin < 0:
            raise SpecError("lambda_pos, lambda_neg and margin must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def loss_kwargs(self) -> dict[str, float]:
        return {
            "margin": self.margin,
            "beta": self.beta,
            "epsilon": self.epsilon,
            "lambda_pos": self.lambda_pos,
            "lambda_neg": self.lambda_neg,
        }


@dataclass
class TrainResult:
    extractor: StyleExtractor | None
    verifier: HypersphereVerifier
    params: VerifierParams
    history: list[dict[str, float]] = field(default_factory=list)
    epochs_completed: int = 0
    optimizer_state: dict | None = None


@contextlib.contextmanager
def deterministic_mode(enabled: bool):
    if not enabled:
        yield
        return
    previous = torch.are_deterministic_algorithms_enabled()
    torch.use_deterministic_algorithms(True)
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(previous)


def _embed(extractor: StyleExtractor | None, x: torch.Tensor) -> torch.Tensor:
    if extractor is None:
        return x
    return extractor(x)[0]


def _build_optimizer(extractor, verifier, config: TrainConfig) -> torch.optim.Optimizer:
    params = [p for p in verifier.projection.parameters()]
    if extractor is not None:
        params += [p for p in extractor.parameters() if p.requires_grad]
    groups = [{"params": params}]
    if config.center_lr is None:
        groups[0]["params"].append(verifier.center)
    else:
        groups.append({"params": [verifier.center], "lr": config.center_lr})
    return torch.optim.AdamW(groups, lr=config.learning_rate, weight_decay=config.weight_decay)


def train(
    inputs: torch.Tensor,
    labels,
    extractor: StyleExtractor | None,
    verifier: HypersphereVerifier,
    config: TrainConfig,
    start_epoch: int = 0,
    history: list[dict[str, float]] | None = None,
    optimizer_state: dict | None = None,
    on_epoch: Callable[[dict[str, float]], None] | None = None,
) -> TrainResult:
    """Minimise ``lambda_pos * L_pos + lambda_neg * L_neg`` over class-balanced minibatches.

    ``inputs`` holds preprocessed images (B, 3, S, S) when an extractor is
    given, otherwise precomputed fingerprint vectors (B, embed_dim). The
    verifier center is set to the mean positive embedding unless it was
    already initialised (e.g. on resume). Epoch ``e`` draws its batches from
    seed ``(config.seed, e)``, so resumed runs replay the same stream.
    """
    history = list(history or [])
    is_pos = labels_array(labels)
    if is_pos.size != inputs.shape[0]:
        raise SpecError(f"{inputs.shape[0]} inputs but {is_pos.size} labels")
    pos_mask_all = torch.as_tensor(is_pos)
    if config.epochs == 0:
        # nothing to do; the initialization is returned untouched
        return TrainResult(
            extractor=extractor,
            verifier=verifier,
            params=verifier.to_params(**config.loss_kwargs()),
            history=history,
            epochs_completed=start_epoch,
            optimizer_state=optimizer_state,
        )

    with deterministic_mode(config.deterministic):
        torch.manual_seed(config.seed)
        if not verifier.center_initialized:
            if extractor is not None:
                extractor.eval()
            with torch.no_grad():
                pos_idx = np.flatnonzero(is_pos)
                embeds = torch.cat([_embed(extractor, inputs[pos_idx[i : i + 64]]) for i in range(0, pos_idx.size, 64)])
                verifier.init_center(embeds)

        optimizer = _build_optimizer(extractor, verifier, config)
        if optimizer_state is not None:
            optimizer.load_state_dict(optimizer_state)

        baseline: tuple[float, float] | None = None
        if history:
            baseline = (history[0]["mean_pos_distance"], history[0]["mean_neg_distance"])
        for epoch in range(start_epoch, start_epoch + config.epochs):
            if extractor is not None:
                extractor.train()
            verifier.train()
            sums = {"loss": 0.0, "loss_pos": 0.0, "loss_neg": 0.0}
            d_pos: list[float] = []
            d_neg: list[float] = []
            n_batches = 0
            batches = make_sampler(
                is_pos,
                batch_size=config.batch_size,
                seed=(config.seed, epoch),
                num_samples=config.samples_per_epoch,
                weighted=config.weighted_sampling,
            )
            for b, idx in enumerate(batches):
                idx_t = torch.as_tensor(idx)
                sq = verifier.sq_distance(_embed(extractor, inputs[idx_t]))
                pos = pos_mask_all[idx_t]
                loss = sq.new_zeros(())
                lp = ln = sq.new_zeros(())
                if pos.any():
                    lp = pos_terms_from_sq(sq[pos], config.margin).mean()
                    if not torch.isfinite(lp):
                        raise NonFiniteLossError(epoch, b, "pos", lp.item())
                    loss = loss + config.lambda_pos * lp
                if (~pos).any():
                    ln = neg_terms_from_sq(sq[~pos], config.margin, config.beta, config.epsilon).mean()
                    if not torch.isfinite(ln):
                        raise NonFiniteLossError(epoch, b, "neg", ln.item())
                    loss = loss + config.lambda_neg * ln
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
                sums["loss"] += loss.item()
                sums["loss_pos"] += lp.item()
                sums["loss_neg"] += ln.item()
                d = sq.detach().sqrt()
                d_pos.extend(d[pos].tolist())
                d_neg.extend(d[~pos].tolist())
                n_batches += 1

            record = {k: v / n_batches for k, v in sums.items()}
            record["epoch"] = epoch
            record["mean_pos_distance"] = float(np.mean(d_pos)) if d_pos else math.nan
            record["mean_neg_distance"] = float(np.mean(d_neg)) if d_neg else math.nan
            history.append(record)
            if on_epoch is not None:
                on_epoch(record)
            log.info(
                "epoch %d loss %.6f (pos %.6f, neg %.6f)", epoch, record["loss"], record["loss_pos"], record["loss_neg"]
            )
            if baseline is None:
                baseline = (record["mean_pos_distance"], record["mean_neg_distance"])
            if config.collapse_guard:
                _check_collapse(record, baseline, config)

    params = verifier.to_params(**config.loss_kwargs())
    return TrainResult(
        extractor=extractor,
        verifier=verifier,
        params=params,
        history=history,
        epochs_completed=start_epoch + config.epochs,
        optimizer_state=optimizer.state_dict(),
    )


def _check_collapse(record: dict[str, float], baseline: tuple[float, float], config: TrainConfig) -> None:
    """Abort when every embedding has been pulled onto the center.

    Collapse means the mean positive distance fell below ``collapse_tol``, or
    both class means shrank below ``collapse_ratio`` of their first-epoch
    values: negatives are being drawn in together with the positives.
    """
    mean_pos, mean_neg = record["mean_pos_distance"], record["mean_neg_distance"]
    base_pos, base_neg = baseline
    if math.isnan(mean_pos) or math.isnan(mean_neg):
        return
    absolute = mean_pos < config.collapse_tol
    relative = mean_pos < config.collapse_ratio * base_pos and mean_neg < config.collapse_ratio * base_neg
    if absolute or relative:
        raise CollapseError(
            epoch=int(record["epoch"]),
            mean_pos=mean_pos,
            mean_neg=mean_neg,
            message=(
                f"degenerate hypersphere at epoch {int(record['epoch'])}: mean positive distance {mean_pos:.3g} "
                f"(first epoch {base_pos:.3g}), mean negative distance {mean_neg:.3g} (first epoch {base_neg:.3g}); "
                f"negatives are not held outside (lambda_neg={config.lambda_neg})"
            ),
        )
