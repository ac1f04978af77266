"""Hypersphere verifier: projection, losses, balanced sampling, training, calibration, verification."""

from .calibration import (
    CalibrationResult,
    GridSpec,
    calibrate_from_distances,
    calibrate_radius,
    operating_point,
    verify,
    verify_fingerprint,
)
from .losses import loss_neg, loss_neg_grad, loss_pos, loss_pos_grad, total_loss
from .model import HypersphereVerifier, distance, distances, project_embed
from .sampler import make_sampler, train_entries
from .training import TrainConfig, TrainResult, train
