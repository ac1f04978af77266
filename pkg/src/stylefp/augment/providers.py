"""Caption and reconstruction provider interfaces, reference stubs, and the name registry.

Real captioners and style-transfer generators plug in as adapters that
implement the two abstract classes below. The stubs are deterministic and
dependency-free so the whole pipeline runs offline.
"""

from __future__ import annotations

import zlib
from abc import ABC, abstractmethod
from typing import Any, Callable

import numpy as np

from ..datamodel import ImageTensor
from ..errors import ProviderError, SpecError


class CaptionProvider(ABC):
    name: str = "caption"
    thread_safe: bool = False

    @abstractmethod
    def describe(self, image: ImageTensor) -> str:
        """Return a natural-language description of ``image``."""


class ReconstructionProvider(ABC):
    name: str = "reconstruction"
    thread_safe: bool = False

    @abstractmethod
    def reconstruct(self, style_ref: ImageTensor, caption: str, seed: int) -> ImageTensor:
        """Render ``caption`` in the style of ``style_ref``; identical inputs give identical output."""


class HashCaptionStub(CaptionProvider):
    """Caption derived from the image content hash, e.g. ``"synthetic scene 0x3fa2"``."""

    name = "hash_caption_stub"
    thread_safe = True

    def describe(self, image: ImageTensor) -> str:
        return f"synthetic scene 0x{image.content_hash()[:4]}"


class IdentityReconstructionStub(ReconstructionProvider):
    name = "identity_stub"
    thread_safe = True

    def reconstruct(self, style_ref: ImageTensor, caption: str, seed: int) -> ImageTensor:
        return style_ref


class NoiseReconstructionStub(ReconstructionProvider):
    """Adds seeded Gaussian noise to the style reference, then clamps to [0, 1]."""

    name = "noise_stub"
    thread_safe = True

    def __init__(self, sigma: float = 0.03):
        if sigma < 0:
            raise SpecError("sigma must be >= 0")
        self.sigma = float(sigma)

    def reconstruct(self, style_ref: ImageTensor, caption: str, seed: int) -> ImageTensor:
        # the caption participates in the seed so different descriptions give different variants
        rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(caption.encode("utf-8"))])
        noisy = style_ref.pixels.astype(np.float64) + rng.normal(0.0, self.sigma, style_ref.pixels.shape)
        return ImageTensor(np.clip(noisy, 0.0, 1.0).astype(np.float32))


class TransformersCaptionProvider(CaptionProvider):
    """Adapter for a pretrained image-to-text model loaded through ``transformers``.

    The model is loaded lazily from ``model_name`` (a local path or hub id
    already present in the local cache). Generation is greedy, so output is
    deterministic for a fixed model.
    """

    name = "transformers_caption"

    def __init__(self, model_name: str = "Salesforce/blip-image-captioning-base", max_new_tokens: int = 30):
        self.model_name = model_name
        self.max_new_tokens = max_new_tokens
        self._pipe = None

    def _load(self):
        if self._pipe is None:
            try:
                from transformers import pipeline
            except ImportError as exc:  # pragma: no cover - optional dependency
                raise ProviderError(self.name, f"transformers is not installed: {exc}") from exc
            try:
                self._pipe = pipeline("image-to-text", model=self.model_name)
            except Exception as exc:
                raise ProviderError(self.name, f"cannot load model {self.model_name!r}: {exc}") from exc
        return self._pipe

    def describe(self, image: ImageTensor) -> str:
        from ..pipeline.imageio import tensor_to_pil

        pipe = self._load()
        try:
            out = pipe(tensor_to_pil(image), generate_kwargs={"max_new_tokens": self.max_new_tokens, "do_sample": False})
        except Exception as exc:
            raise ProviderError(self.name, str(exc)) from exc
        text = out[0].get("generated_text", "").strip() if out else ""
        if not text:
            raise ProviderError(self.name, "model returned an empty caption")
        return text


CAPTION_PROVIDERS: dict[str, Callable[..., CaptionProvider]] = {
    HashCaptionStub.name: HashCaptionStub,
    TransformersCaptionProvider.name: TransformersCaptionProvider,
}
RECONSTRUCTION_PROVIDERS: dict[str, Callable[..., ReconstructionProvider]] = {
    IdentityReconstructionStub.name: IdentityReconstructionStub,
    NoiseReconstructionStub.name: NoiseReconstructionStub,
}


def register_caption_provider(name: str, factory: Callable[..., CaptionProvider]) -> None:
    CAPTION_PROVIDERS[name] = factory


def register_reconstruction_provider(name: str, factory: Callable[..., ReconstructionProvider]) -> None:
    RECONSTRUCTION_PROVIDERS[name] = factory


def make_caption_provider(name: str, options: dict[str, Any] | None = None) -> CaptionProvider:
    try:
        factory = CAPTION_PROVIDERS[name]
    except KeyError:
        raise SpecError(f"unknown caption provider {name!r}; registered: {sorted(CAPTION_PROVIDERS)}") from None
    return factory(**(options or {}))


def make_reconstruction_provider(name: str, options: dict[str, Any] | None = None) -> ReconstructionProvider:
    try:
        factory = RECONSTRUCTION_PROVIDERS[name]
    except KeyError:
        raise SpecError(
            f"unknown reconstruction provider {name!r}; registered: {sorted(RECONSTRUCTION_PROVIDERS)}"
        ) from None
    return factory(**(options or {}))

