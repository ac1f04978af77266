"""Shared domain types, the dataset manifest format, and manifest validation.

All types are immutable after construction. Array fields are copied and
marked read-only so values can be shared across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import ManifestParseError, SpecError

MANIFEST_VERSION = 1
FINGERPRINT_RECORD_VERSION = 1

LABELS = ("positive", "negative")
SPLITS = ("train", "val", "test")
ORIGINS = ("original", "self_reconstructed", "traditional_aug")
LEVELS = ("low", "mid", "high")


def _frozen_array(values: Any, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ImageTensor:
    """RGB raster, float pixels in [0, 1], laid out (H, W, C)."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.pixels, dtype=np.float32, copy=True)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise SpecError(f"ImageTensor expects shape (H, W, 3), got {arr.shape}")
        if arr.shape[0] <= 0 or arr.shape[1] <= 0:
            raise SpecError(f"ImageTensor needs positive height and width, got {arr.shape[:2]}")
        if not np.all(np.isfinite(arr)):
            raise SpecError("ImageTensor pixels must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise SpecError(f"ImageTensor pixels must lie in [0, 1], got [{arr.min()}, {arr.max()}]")
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @classmethod
    def from_uint8(cls, data: np.ndarray) -> "ImageTensor":
        data = np.asarray(data)
        if data.dtype != np.uint8:
            raise SpecError(f"expected uint8 pixels, got {data.dtype}")
        return cls(data.astype(np.float32) / 255.0)

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def channels(self) -> int:
        return 3

    def to_uint8(self) -> np.ndarray:
        return np.clip(np.rint(self.pixels * 255.0), 0, 255).astype(np.uint8)

    def content_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(np.asarray(self.pixels.shape, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(self.pixels).tobytes())
        return h.hexdigest()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImageTensor):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))

    def __hash__(self) -> int:
        return hash(self.content_hash())


# --------------------------------------------------------------------------
# Manifest
# --------------------------------------------------------------------------

_ENTRY_KEYS = ("id", "path", "label", "artist_id", "split", "origin", "parent_id", "seed")
_REQUIRED_ENTRY_KEYS = ("id", "path", "label", "artist_id", "split", "origin")
_MANIFEST_KEYS = ("version", "target_artist_id", "entries")


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: str
    label: str
    artist_id: str
    split: str
    origin: str = "original"
    parent_id: str | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise SpecError("manifest entry id must be a non-empty string")
        if self.label not in LABELS:
            raise SpecError(f"entry {self.id!r}: label must be one of {LABELS}, got {self.label!r}")
        if self.split not in SPLITS:
            raise SpecError(f"entry {self.id!r}: split must be one of {SPLITS}, got {self.split!r}")
        if self.origin not in ORIGINS:
            raise SpecError(f"entry {self.id!r}: origin must be one of {ORIGINS}, got {self.origin!r}")
        if self.seed is not None and (isinstance(self.seed, bool) or not isinstance(self.seed, int)):
            raise SpecError(f"entry {self.id!r}: seed must be an integer")

    def to_dict(self) -> dict[str, Any]:
        return {key: getattr(self, key) for key in _ENTRY_KEYS}


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    target_artist_id: str
    version: int = MANIFEST_VERSION

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))

    def by_id(self) -> dict[str, ManifestEntry]:
        return {e.id: e for e in self.entries}

    def select(self, split: str | None = None, label: str | None = None, origin: str | None = None) -> list[ManifestEntry]:
        return [
            e
            for e in self.entries
            if (split is None or e.split == split)
            and (label is None or e.label == label)
            and (origin is None or e.origin == origin)
        ]

    def with_entries(self, entries: Iterable[ManifestEntry]) -> "DatasetManifest":
        return replace(self, entries=tuple(entries))

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": self.version,
            "target_artist_id": self.target_artist_id,
            "entries": [e.to_dict() for e in self.entries],
        }

    @classmethod
    def from_dict(cls, data: Any, source: str | None = None) -> "DatasetManifest":
        if not isinstance(data, dict):
            raise ManifestParseError("top level must be an object", path=source)
        unknown = set(data) - set(_MANIFEST_KEYS)
        if unknown:
            raise ManifestParseError(f"unknown top-level keys: {sorted(unknown)}", path=source)
        missing = [k for k in _MANIFEST_KEYS if k not in data]
        if missing:
            raise ManifestParseError(f"missing top-level keys: {missing}", path=source)
        if data["version"] != MANIFEST_VERSION:
            raise ManifestParseError(
                f"unsupported manifest version {data['version']!r} (expected {MANIFEST_VERSION})", path=source
            )
        if not isinstance(data["entries"], list):
            raise ManifestParseError("entries must be a list", path=source)
        entries = []
        for i, raw in enumerate(data["entries"]):
            if not isinstance(raw, dict):
                raise ManifestParseError(f"entries[{i}] must be an object", path=source)
            unknown = set(raw) - set(_ENTRY_KEYS)
            if unknown:
                raise ManifestParseError(f"entries[{i}]: unknown keys {sorted(unknown)}", path=source)
            missing = [k for k in _REQUIRED_ENTRY_KEYS if k not in raw]
            if missing:
                raise ManifestParseError(f"entries[{i}]: missing keys {missing}", path=source)
            try:
                entries.append(ManifestEntry(**raw))
            except SpecError as exc:
                raise ManifestParseError(f"entries[{i}]: {exc}", path=source) from exc
        return cls(entries=tuple(entries), target_artist_id=str(data["target_artist_id"]), version=data["version"])


def dumps_manifest(manifest: DatasetManifest) -> str:
    return json.dumps(manifest.to_dict(), indent=2) + "\n"


def loads_manifest(text: str, source: str | None = None) -> DatasetManifest:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestParseError(exc.msg, path=source, line=exc.lineno, column=exc.colno) from exc
    return DatasetManifest.from_dict(data, source=source)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    Path(path).write_text(dumps_manifest(manifest), encoding="utf-8")


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestParseError(f"cannot read manifest: {exc}", path=str(path)) from exc
    return loads_manifest(text, source=str(path))


@dataclass(frozen=True)
class Violation:
    rule: str
    message: str
    entry_id: str | None = None

    def __str__(self) -> str:
        who = f"[{self.entry_id}] " if self.entry_id else ""
        return f"{self.rule}: {who}{self.message}"


def _root_of(entry: ManifestEntry, by_id: dict[str, ManifestEntry]) -> ManifestEntry | None:
    seen = {entry.id}
    cur = entry
    while cur.origin != "original":
        parent = by_id.get(cur.parent_id) if cur.parent_id else None
        if parent is None or parent.id in seen:
            return None
        seen.add(parent.id)
        cur = parent
    return cur


def validate_manifest(manifest: DatasetManifest) -> list[Violation]:
    """Check every manifest invariant and return the violations found.

    Never raises on a structurally valid manifest; an empty list means the
    manifest is usable for training.
    """
    out: list[Violation] = []
    by_id: dict[str, ManifestEntry] = {}
    for e in manifest.entries:
        if e.id in by_id:
            out.append(Violation("duplicate_id", "id appears more than once", e.id))
        else:
            by_id[e.id] = e

    train = [e for e in manifest.entries if e.split == "train"]
    if not any(e.label == "positive" for e in train):
        out.append(Violation("train_missing_positive", "train split has no positive entry"))
    if not any(e.label == "negative" for e in train):
        out.append(Violation("train_missing_negative", "train split has no negative entry"))

    for e in manifest.entries:
        if e.label == "negative" and e.artist_id == manifest.target_artist_id:
            out.append(
                Violation(
                    "negative_from_target_artist",
                    f"negative entry belongs to target artist {manifest.target_artist_id!r}",
                    e.id,
                )
            )
        if e.label == "positive" and e.artist_id != manifest.target_artist_id:
            out.append(
                Violation("positive_not_target_artist", f"positive entry has artist_id {e.artist_id!r}", e.id)
            )
        if e.origin == "original":
            continue
        parent = by_id.get(e.parent_id) if e.parent_id else None
        if parent is None:
            out.append(Violation("missing_parent", f"{e.origin} entry has no existing parent ({e.parent_id!r})", e.id))
            continue
        if parent.label != e.label:
            out.append(Violation("label_mismatch", f"label {e.label!r} differs from parent {parent.label!r}", e.id))
        if parent.artist_id != e.artist_id:
            out.append(Violation("artist_mismatch", f"artist {e.artist_id!r} differs from parent {parent.artist_id!r}", e.id))
        root = _root_of(e, by_id)
        if root is None:
            out.append(Violation("missing_parent", "parent chain is broken or cyclic", e.id))
        elif parent.split != e.split or root.split != e.split:
            out.append(
                Violation(
                    "split_lineage",
                    f"entry in split {e.split!r} but its lineage sits in {parent.split!r}/{root.split!r}",
                    e.id,
                )
            )
    return out


# --------------------------------------------------------------------------
# Extractor / verifier values
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LevelEncoding:
    level: str
    vector: np.ndarray
    source_layer: str

    def __post_init__(self) -> None:
        if self.level not in LEVELS:
            raise SpecError(f"level must be one of {LEVELS}, got {self.level!r}")
        vec = _frozen_array(self.vector).reshape(-1)
        if not np.all(np.isfinite(vec)):
            raise SpecError(f"{self.level} encoding has non-finite values")
        object.__setattr__(self, "vector", vec)


@dataclass(frozen=True, eq=False)
class StyleFingerprint:
    vector: np.ndarray
    attention: np.ndarray
    extractor_version: str
    image_id: str = ""

    def __post_init__(self) -> None:
        vec = _frozen_array(self.vector).reshape(-1)
        att = _frozen_array(self.attention).reshape(-1)
        if att.size == 0 or np.any(att < 0) or abs(float(att.sum()) - 1.0) > 1e-6:
            raise SpecError(f"attention must be a probability vector, got {att.tolist()}")
        object.__setattr__(self, "vector", vec)
        object.__setattr__(self, "attention", att)

    @property
    def embed_dim(self) -> int:
        return int(self.vector.shape[0])

    def to_dict(self) -> dict[str, Any]:
        return {
            "record_version": FINGERPRINT_RECORD_VERSION,
            "extractor_version": self.extractor_version,
            "image_id": self.image_id,
            "embed_dim": self.embed_dim,
            "vector": self.vector.tolist(),
            "attention": self.attention.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "StyleFingerprint":
        if data.get("record_version") != FINGERPRINT_RECORD_VERSION:
            raise SpecError(f"unsupported fingerprint record version {data.get('record_version')!r}")
        fp = cls(
            vector=data["vector"],
            attention=data["attention"],
            extractor_version=data["extractor_version"],
            image_id=data["image_id"],
        )
        if fp.embed_dim != data["embed_dim"]:
            raise SpecError(f"fingerprint declares embed_dim {data['embed_dim']} but vector has {fp.embed_dim}")
        return fp


@dataclass(frozen=True, eq=False)
class VerifierParams:
    """Snapshot of a trained verifier: bias-free projection, center, loss hyperparameters, radius."""

    projection: np.ndarray  # (out_dim, in_dim)
    center: np.ndarray
    margin: float = 1.0
    beta: float = 0.3
    epsilon: float = 1e-6
    lambda_pos: float = 1.0
    lambda_neg: float = 1.0
    radius: float | None = None
    version: str = "hypersphere-v1"

    def __post_init__(self) -> None:
        proj = _frozen_array(self.projection)
        if proj.ndim != 2:
            raise SpecError(f"projection must be a matrix, got shape {proj.shape}")
        center = _frozen_array(self.center).reshape(-1)
        if center.shape[0] != proj.shape[0]:
            raise SpecError(f"center dim {center.shape[0]} != projection output dim {proj.shape[0]}")
        for name in ("margin", "beta", "epsilon", "lambda_pos", "lambda_neg"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise SpecError(f"{name} must be finite")
            object.__setattr__(self, name, value)
        if self.margin < 0 or self.lambda_pos < 0 or self.lambda_neg < 0:
            raise SpecError("margin, lambda_pos and lambda_neg must be >= 0")
        if self.beta <= 0 or self.epsilon <= 0:
            raise SpecError("beta and epsilon must be > 0")
        if self.radius is not None:
            r = float(self.radius)
            if not math.isfinite(r) or r < 0:
                raise SpecError(f"radius must be a finite value >= 0, got {self.radius}")
            object.__setattr__(self, "radius", r)
        if not (np.all(np.isfinite(proj)) and np.all(np.isfinite(center))):
            raise SpecError("projection and center must be finite")
        object.__setattr__(self, "projection", proj)
        object.__setattr__(self, "center", center)

    @property
    def in_dim(self) -> int:
        return int(self.projection.shape[1])

    @property
    def out_dim(self) -> int:
        return int(self.projection.shape[0])

    @property
    def calibrated(self) -> bool:
        return self.radius is not None

    def with_radius(self, radius: float | None) -> "VerifierParams":
        return replace(self, radius=radius)

    def projection_spec(self) -> dict[str, Any]:
        return {"type": "linear", "bias": False, "in_dim": self.in_dim, "out_dim": self.out_dim}


@dataclass(frozen=True)
class Verdict:
    image_id: str
    distance: float
    radius: float
    inside: bool = field(init=False)
    boundary_margin: float = field(init=False)

    def __post_init__(self) -> None:
        d = float(self.distance)
        r = float(self.radius)
        if not (math.isfinite(d) and d >= 0):
            raise SpecError(f"distance must be finite and >= 0, got {self.distance}")
        if not (math.isfinite(r) and r >= 0):
            raise SpecError(f"radius must be finite and >= 0, got {self.radius}")
        object.__setattr__(self, "distance", d)
        object.__setattr__(self, "radius", r)
        # closed ball: the boundary counts as inside
        object.__setattr__(self, "inside", d <= r)
        object.__setattr__(self, "boundary_margin", r - d)

    def line(self) -> str:
        status = "INSIDE" if self.inside else "OUTSIDE"
        return f"{self.image_id}\t{self.distance:.6f}\t{self.radius:.6f}\t{status}\t{self.boundary_margin:+.6f}"


def labels_array(labels: Sequence[str] | Sequence[int] | np.ndarray) -> np.ndarray:
    """Normalize 'positive'/'negative' strings or 0/1 ints to a boolean positive mask."""
    arr = np.asarray(labels)
    if arr.dtype.kind in "US":
        bad = set(arr.tolist()) - set(LABELS)
        if bad:
            raise SpecError(f"unknown labels {sorted(bad)}")
        return arr == "positive"
    return arr.astype(bool)
