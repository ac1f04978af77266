"""Procedural texture families that stand in for artists in tests and demos.

Each family has its own colour palette and a dominant brushstroke orientation.
Images are white noise smeared along the stroke direction by an anisotropic
Gaussian, mapped through the palette, and finished with fine grain.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import DatasetManifest, ImageTensor, ManifestEntry, save_manifest


@dataclass(frozen=True)
class TextureFamily:
    name: str
    palette: tuple  # colours as RGB triples in [0, 1]
    angle_deg: float
    stroke_length: float = 6.0
    stroke_width: float = 1.0
    angle_jitter_deg: float = 12.0
    palette_jitter: float = 0.04
    grain: float = 0.02


FAMILIES = {
    "ember": TextureFamily(
        name="ember",
        palette=((0.55, 0.12, 0.08), (0.85, 0.38, 0.12), (0.95, 0.72, 0.30), (0.35, 0.18, 0.12)),
        angle_deg=30.0,
        stroke_length=7.0,
        stroke_width=1.0,
    ),
    "tide": TextureFamily(
        name="tide",
        palette=((0.10, 0.25, 0.45), (0.20, 0.50, 0.62), (0.62, 0.78, 0.80), (0.12, 0.35, 0.28)),
        angle_deg=120.0,
        stroke_length=4.0,
        stroke_width=1.6,
    ),
}


def _stroke_kernel_fft(shape: tuple[int, int], angle_deg: float, length: float, width: float) -> np.ndarray:
    h, w = shape
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    t = np.deg2rad(angle_deg)
    along = fx * np.cos(t) + fy * np.sin(t)
    across = -fx * np.sin(t) + fy * np.cos(t)
    # Fourier transform of an anisotropic Gaussian with sigmas (length, width)
    return np.exp(-2.0 * np.pi**2 * ((along * length) ** 2 + (across * width) ** 2))


def render_texture(family: TextureFamily, size: int, rng: np.random.Generator) -> ImageTensor:
    angle = family.angle_deg + rng.uniform(-family.angle_jitter_deg, family.angle_jitter_deg)
    length = family.stroke_length * rng.uniform(0.8, 1.25)
    noise = rng.standard_normal((size, size))
    field = np.real(np.fft.ifft2(np.fft.fft2(noise) * _stroke_kernel_fft((size, size), angle, length, family.stroke_width)))
    # rank-normalise so every image uses the full palette
    ranks = field.ravel().argsort().argsort().reshape(size, size) / (size * size - 1)

    palette = np.asarray(family.palette, dtype=np.float64)
    palette = np.clip(palette + rng.normal(0.0, family.palette_jitter, palette.shape), 0.0, 1.0)
    pos = ranks * (len(palette) - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, len(palette) - 1)
    frac = (pos - lo)[..., None]
    img = palette[lo] * (1.0 - frac) + palette[hi] * frac
    img = img + rng.normal(0.0, family.grain, img.shape)
    return ImageTensor(np.clip(img, 0.0, 1.0).astype(np.float32))


def generate_family(family: TextureFamily | str, count: int, size: int = 64, seed: int = 0) -> list[ImageTensor]:
    fam = FAMILIES[family] if isinstance(family, str) else family
    rng = np.random.default_rng(seed)
    return [render_texture(fam, size, rng) for _ in range(count)]


def write_fixture(
    out_dir: str | Path,
    target: str = "ember",
    other: str = "tide",
    per_family: int = 100,
    size: int = 64,
    seed: int = 0,
    split_counts: tuple[int, int, int] = (60, 20, 20),
) -> Path:
    """Write PNGs for two families plus a manifest with train/val/test splits.

    Returns the manifest path. ``target`` images are the positives.
    """
    from .pipeline.imageio import save_image

    if sum(split_counts) != per_family:
        raise ValueError(f"split_counts {split_counts} must sum to per_family={per_family}")
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    splits = ["train"] * split_counts[0] + ["val"] * split_counts[1] + ["test"] * split_counts[2]
    for fam_idx, (name, label) in enumerate(((target, "positive"), (other, "negative"))):
        images = generate_family(name, per_family, size=size, seed=seed * 1000 + fam_idx)
        for i, (img, split) in enumerate(zip(images, splits)):
            image_id = f"{name}_{i:03d}"
            rel = Path("images") / f"{image_id}.png"
            save_image(img, out_dir / rel)
            entries.append(ManifestEntry(id=image_id, path=rel.as_posix(), label=label, artist_id=name, split=split))
    manifest = DatasetManifest(entries=tuple(entries), target_artist_id=target)
    path = out_dir / "manifest.json"
    save_manifest(manifest, path)
    return path


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Write the two-family synthetic texture fixture.")
    parser.add_argument("out_dir")
    parser.add_argument("--per-family", type=int, default=100)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    n = args.per_family
    n_val = n_test = n // 5
    path = write_fixture(args.out_dir, per_family=n, size=args.size, seed=args.seed, split_counts=(n - 2 * n_val, n_val, n_test))
    print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
