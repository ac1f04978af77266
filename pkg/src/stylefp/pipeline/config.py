"""Pipeline configuration: one YAML file drives every command."""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..augment.ops import TraditionalAugConfig
from ..errors import SpecError
from ..evalkit.robustness import RobustnessSpec
from ..extractor import DEFAULT_TAPS, DEFAULT_TRAINABLE, BackboneSpec, ExtractorConfig
from ..verifier.calibration import GridSpec
from ..verifier.training import TrainConfig

DEFAULTS: dict[str, Any] = {
    "seed": None,
    "manifest": None,
    "output_dir": "runs",
    "providers": {
        "caption": {"name": "hash_caption_stub", "options": {}},
        "reconstruction": {"name": "noise_stub", "options": {"sigma": 0.03}},
    },
    "augment": {
        "k": "1-3",
        "traditional_per_image": 1,
        "traditional": {"flip_prob": 0.5, "jpeg_quality": 90, "gaussian_noise_sigma": 0.01, "color_jitter_hue": 0.05},
        "traditional_on_reconstructed": False,
    },
    "extractor": {
        "architecture": "vgg19",
        "weights": "random(0)",
        "taps": dict(DEFAULT_TAPS),
        "input_size": 224,
        "width_divisor": 1,
        "embed_dim": 512,
        "attn_hidden": 256,
        "trainable": {},
    },
    "verifier": {"projection_dim": 256},
    "train": {},
    "calibration": {"grid_size": 512, "criterion": "tpr_at_fpr", "fpr_target": 0.01},
    "evaluation": {"fpr_target": 0.01, "robustness": {}},
}

_FREE_FORM = {("providers", "caption", "options"), ("providers", "reconstruction", "options"), ("extractor", "trainable")}


def _merge(base: dict, override: dict, path: tuple = ()) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        here = path + (key,)
        if key not in base:
            raise SpecError(f"unknown config key {'.'.join(here)!r}")
        if isinstance(base[key], dict) and here not in _FREE_FORM and base[key] is not None:
            if not isinstance(value, dict):
                raise SpecError(f"config key {'.'.join(here)!r} must be a mapping")
            if here in {("train",), ("evaluation", "robustness")}:
                out[key] = {**base[key], **value}
            else:
                out[key] = _merge(base[key], value, here)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _dataclass_from(cls, data: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise SpecError(f"unknown keys under {where}: {sorted(unknown)}")
    return cls(**data)


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    manifest_path: Path
    output_dir: Path
    caption_provider: dict
    reconstruction_provider: dict
    augment_k: int | str
    traditional_per_image: int
    traditional: dict
    traditional_on_reconstructed: bool
    extractor: ExtractorConfig
    projection_dim: int
    train: TrainConfig
    calibration: GridSpec
    fpr_target: float
    robustness: RobustnessSpec
    base_dir: Path = field(default_factory=Path.cwd)
    raw: dict = field(default_factory=dict, compare=False)

    def artist_dir(self, artist_id: str) -> Path:
        return self.output_dir / artist_id

    def traditional_config(self, seed: int) -> TraditionalAugConfig:
        return TraditionalAugConfig(seed=seed, **self.traditional)

    def k_for(self, rng_seed: tuple[int, ...]) -> int:
        import numpy as np

        if isinstance(self.augment_k, int):
            return self.augment_k
        lo, hi = (int(x) for x in str(self.augment_k).split("-"))
        return int(np.random.default_rng(list(rng_seed)).integers(lo, hi + 1))


def _parse_k(value) -> int | str:
    if isinstance(value, bool):
        raise SpecError("augment.k must be an integer or a range like '1-3'")
    if isinstance(value, int):
        if value < 0:
            raise SpecError("augment.k must be >= 0")
        return value
    parts = str(value).split("-")
    if len(parts) != 2 or not all(p.strip().isdigit() for p in parts) or int(parts[0]) > int(parts[1]) or int(parts[0]) < 1:
        raise SpecError(f"augment.k must be an integer or a range like '1-3', got {value!r}")
    return f"{int(parts[0])}-{int(parts[1])}"


def build_config(data: dict, base_dir: Path, check_paths: bool = True) -> PipelineConfig:
    merged = _merge(DEFAULTS, data)
    seed = merged["seed"]
    if seed is None or isinstance(seed, bool) or not isinstance(seed, int):
        raise SpecError("config must set an integer 'seed' (unseeded runs are not allowed)")
    if merged["manifest"] is None:
        raise SpecError("config must set 'manifest'")
    manifest_path = (base_dir / merged["manifest"]).resolve()
    if check_paths and not manifest_path.is_file():
        raise SpecError(f"manifest file not found: {manifest_path}")
    output_dir = (base_dir / merged["output_dir"]).resolve()

    ex = merged["extractor"]
    weights = str(ex["weights"])
    if not weights.startswith("random("):
        weights_path = base_dir / weights
        if weights_path.is_file():
            weights = str(weights_path.resolve())
    backbone = BackboneSpec(
        architecture=ex["architecture"],
        tap_layers=dict(ex["taps"]),
        weights_source=weights,
        input_size=int(ex["input_size"]),
        width_divisor=int(ex["width_divisor"]),
    )
    unknown_groups = set(ex["trainable"]) - set(DEFAULT_TRAINABLE)
    if unknown_groups:
        raise SpecError(f"unknown extractor.trainable groups {sorted(unknown_groups)}; choose from {sorted(DEFAULT_TRAINABLE)}")
    extractor = ExtractorConfig(
        backbone=backbone,
        embed_dim=int(ex["embed_dim"]),
        attn_hidden=int(ex["attn_hidden"]),
        head_seed=seed,
        trainable={**DEFAULT_TRAINABLE, **{k: bool(v) for k, v in ex["trainable"].items()}},
    )
    train_data = {"seed": seed, **merged["train"]}
    train = _dataclass_from(TrainConfig, train_data, "train")
    cal = merged["calibration"]
    grid = GridSpec(size=int(cal["grid_size"]), criterion=cal["criterion"], fpr_target=float(cal["fpr_target"]))
    robustness = _dataclass_from(RobustnessSpec, {"seed": seed, **merged["evaluation"]["robustness"]}, "evaluation.robustness")
    aug = merged["augment"]
    _dataclass_from(TraditionalAugConfig, {**aug["traditional"], "seed": 0}, "augment.traditional")
    return PipelineConfig(
        seed=seed,
        manifest_path=manifest_path,
        output_dir=output_dir,
        caption_provider=dict(merged["providers"]["caption"]),
        reconstruction_provider=dict(merged["providers"]["reconstruction"]),
        augment_k=_parse_k(aug["k"]),
        traditional_per_image=int(aug["traditional_per_image"]),
        traditional=dict(aug["traditional"]),
        traditional_on_reconstructed=bool(aug["traditional_on_reconstructed"]),
        extractor=extractor,
        projection_dim=int(merged["verifier"]["projection_dim"]),
        train=train,
        calibration=grid,
        fpr_target=float(merged["evaluation"]["fpr_target"]),
        robustness=robustness,
        base_dir=base_dir,
        raw=merged,
    )


def set_dotted(data: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    cur = data
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
        if not isinstance(cur, dict):
            raise SpecError(f"cannot set {dotted!r}: {k!r} is not a mapping")
    cur[keys[-1]] = value


def load_config(path: str | Path, overrides: dict[str, Any] | None = None, check_paths: bool = True) -> PipelineConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except OSError as exc:
        raise SpecError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise SpecError(f"invalid YAML in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise SpecError(f"config {path} must be a mapping at the top level")
    for dotted, value in (overrides or {}).items():
        set_dotted(data, dotted, value)
    return build_config(data, path.resolve().parent, check_paths=check_paths)
