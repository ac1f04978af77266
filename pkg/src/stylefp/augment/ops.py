"""Self-reconstruction and conventional augmentation operations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torchvision.transforms.functional as TF

from ..datamodel import ImageTensor
from ..errors import ProviderError, SpecError
from ..pipeline.imageio import jpeg_roundtrip
from .providers import CaptionProvider, ReconstructionProvider

MAX_RECONSTRUCTIONS = 8


@dataclass(frozen=True)
class AugmentationRecord:
    parent_id: str
    index: int
    seed: int
    caption: str
    caption_provider: str
    reconstruction_provider: str


@dataclass(frozen=True)
class TraditionalAugConfig:
    flip_prob: float = 0.5
    jpeg_quality: int = 90
    gaussian_noise_sigma: float = 0.01
    color_jitter_hue: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.flip_prob <= 1.0:
            raise SpecError(f"flip_prob must be in [0, 1], got {self.flip_prob}")
        if isinstance(self.jpeg_quality, bool) or not isinstance(self.jpeg_quality, int) or not 1 <= self.jpeg_quality <= 100:
            raise SpecError(f"jpeg_quality must be an integer in [1, 100], got {self.jpeg_quality}")
        if not self.gaussian_noise_sigma >= 0.0:
            raise SpecError(f"gaussian_noise_sigma must be >= 0, got {self.gaussian_noise_sigma}")
        if not 0.0 <= self.color_jitter_hue <= 0.5:
            raise SpecError(f"color_jitter_hue must be in [0, 0.5], got {self.color_jitter_hue}")


def caption(image: ImageTensor, provider: CaptionProvider) -> str:
    try:
        text = provider.describe(image)
    except ProviderError:
        raise
    except Exception as exc:
        raise ProviderError(provider.name, str(exc)) from exc
    if not isinstance(text, str) or not text.strip():
        raise ProviderError(provider.name, "empty caption")
    return text


def self_reconstruct(
    image: ImageTensor,
    caption_provider: CaptionProvider,
    reconstruction_provider: ReconstructionProvider,
    k: int,
    base_seed: int,
    parent_id: str = "",
) -> list[tuple[ImageTensor, AugmentationRecord]]:
    """Caption ``image`` once, then re-render that caption in the image's own style ``k`` times.

    Variant ``i`` uses seed ``base_seed + i``. Any provider failure aborts the
    whole call; partial results are never returned.
    """
    if isinstance(k, bool) or not isinstance(k, int) or not 1 <= k <= MAX_RECONSTRUCTIONS:
        raise SpecError(f"k must be an integer in [1, {MAX_RECONSTRUCTIONS}], got {k!r}")
    text = caption(image, caption_provider)
    out = []
    for i in range(k):
        seed = base_seed + i
        try:
            recon = reconstruction_provider.reconstruct(image, text, seed)
        except Exception as exc:
            raise ProviderError(reconstruction_provider.name, str(exc), index=i) from exc
        if not isinstance(recon, ImageTensor):
            raise ProviderError(reconstruction_provider.name, f"returned {type(recon).__name__}, not ImageTensor", index=i)
        record = AugmentationRecord(
            parent_id=parent_id,
            index=i,
            seed=seed,
            caption=text,
            caption_provider=caption_provider.name,
            reconstruction_provider=reconstruction_provider.name,
        )
        out.append((recon, record))
    return out


def hflip(image: ImageTensor) -> ImageTensor:
    return ImageTensor(image.pixels[:, ::-1, :])


def shift_hue(image: ImageTensor, hue_factor: float) -> ImageTensor:
    x = torch.tensor(image.pixels).permute(2, 0, 1)
    y = TF.adjust_hue(x, float(hue_factor))
    return ImageTensor(y.permute(1, 2, 0).clamp(0.0, 1.0).numpy())


def traditional_augment(image: ImageTensor, config: TraditionalAugConfig) -> ImageTensor:
    """Flip, hue jitter, additive Gaussian noise, then a real JPEG round trip, in that order."""
    rng = np.random.default_rng(config.seed)
    # draw every random quantity up front so the stream does not depend on gating
    do_flip = rng.random() < config.flip_prob
    hue = rng.uniform(-config.color_jitter_hue, config.color_jitter_hue) if config.color_jitter_hue > 0 else 0.0
    noise = rng.standard_normal(image.pixels.shape) * config.gaussian_noise_sigma

    out = hflip(image) if do_flip else image
    if hue != 0.0:
        out = shift_hue(out, hue)
    if config.gaussian_noise_sigma > 0:
        out = ImageTensor(np.clip(out.pixels.astype(np.float64) + noise, 0.0, 1.0).astype(np.float32))
    # 4:4:4 so high quality settings stay close to lossless
    return jpeg_roundtrip(out, config.jpeg_quality, subsampling=0)
