"""Raster ingestion: files on disk to canonical ImageTensor values and back."""

from __future__ import annotations

import io
import logging
from pathlib import Path

import numpy as np
from PIL import Image

from ..datamodel import ImageTensor

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp", ".gif"}


def pil_to_tensor(img: Image.Image, name: str = "") -> ImageTensor:
    if img.mode != "RGB":
        # grayscale is replicated to 3 channels, alpha is dropped
        log.warning("converting %s from mode %s to RGB", name or "image", img.mode)
        if img.mode in ("I;16", "I", "F"):
            arr = np.asarray(img, dtype=np.float64)
            scale = 65535.0 if img.mode == "I;16" else max(float(arr.max()), 1.0)
            arr = np.clip(arr / scale, 0.0, 1.0)
            return ImageTensor(np.repeat(arr[..., None], 3, axis=2).astype(np.float32))
        img = img.convert("RGB")
    return ImageTensor.from_uint8(np.asarray(img, dtype=np.uint8))


def load_image(path: str | Path) -> ImageTensor:
    path = Path(path)
    with Image.open(path) as img:
        img.load()
        return pil_to_tensor(img, name=str(path))


def tensor_to_pil(image: ImageTensor) -> Image.Image:
    return Image.fromarray(image.to_uint8(), mode="RGB")


def save_image(image: ImageTensor, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # PNG without timestamps or other ancillary chunks so files are byte-stable
    tensor_to_pil(image).save(path, format="PNG", optimize=False)


def jpeg_roundtrip(image: ImageTensor, quality: int, subsampling: int | None = None) -> ImageTensor:
    """Encode to JPEG in memory at ``quality`` and decode back."""
    buf = io.BytesIO()
    kwargs = {"quality": int(quality)}
    if subsampling is not None:
        kwargs["subsampling"] = subsampling
    tensor_to_pil(image).save(buf, format="JPEG", **kwargs)
    buf.seek(0)
    with Image.open(buf) as img:
        return ImageTensor.from_uint8(np.asarray(img.convert("RGB"), dtype=np.uint8))


def list_images(path: str | Path) -> list[Path]:
    path = Path(path)
    if path.is_dir():
        return sorted(p for p in path.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    return [path]
