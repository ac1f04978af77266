"""Multi-layer attention style extractor.

A VGG-19 backbone is tapped at three depths (low / mid / high). Each tapped
map is summarised by global average and max pooling, the two pooled vectors
are concatenated and passed through a per-level 1x1 convolution, projected to
a common ``embed_dim`` space, and fused with softmax attention weights into a
single style vector.
"""

from __future__ import annotations

import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn
import torchvision.transforms.functional as TF

from .datamodel import LEVELS, ImageTensor, LevelEncoding, StyleFingerprint
from .errors import NumericError, SpecError, WeightsLoadError

VGG19_CFG: tuple = (64, 64, "M", 128, 128, "M", 256, 256, 256, 256, "M", 512, 512, 512, 512, "M", 512, 512, 512, 512, "M")
ARCHITECTURES = {"vgg19": VGG19_CFG}

DEFAULT_TAPS = {"low": "relu2_2", "mid": "relu4_4", "high": "relu5_4"}
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

TRAINABLE_GROUPS = ("backbone_lower", "backbone_upper", "level_conv", "projection", "attention")
DEFAULT_TRAINABLE = {
    "backbone_lower": False,
    "backbone_upper": True,
    "level_conv": True,
    "projection": True,
    "attention": True,
}

_RANDOM_RE = re.compile(r"^random\((-?\d+)\)$")


def vgg_layer_names(cfg: Sequence) -> list[str]:
    """Names for every module of a VGG ``features`` stack, in torchvision index order."""
    names = []
    block, conv = 1, 0
    for item in cfg:
        if item == "M":
            names.append(f"pool{block}")
            block += 1
            conv = 0
        else:
            conv += 1
            names.append(f"conv{block}_{conv}")
            names.append(f"relu{block}_{conv}")
    return names


@dataclass(frozen=True)
class BackboneSpec:
    architecture: str = "vgg19"
    tap_layers: dict = field(default_factory=lambda: dict(DEFAULT_TAPS))
    weights_source: str = "random(0)"
    input_size: int = 224
    width_divisor: int = 1
    mean: tuple = IMAGENET_MEAN
    std: tuple = IMAGENET_STD

    def __post_init__(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise SpecError(f"unknown architecture {self.architecture!r}; known: {sorted(ARCHITECTURES)}")
        if set(self.tap_layers) != set(LEVELS):
            raise SpecError(f"tap_layers needs exactly one layer per level {LEVELS}, got {sorted(self.tap_layers)}")
        names = vgg_layer_names(ARCHITECTURES[self.architecture])
        for level in LEVELS:
            if self.tap_layers[level] not in names:
                raise SpecError(f"tap layer {self.tap_layers[level]!r} ({level}) does not exist in {self.architecture}")
        depth = [names.index(self.tap_layers[lv]) for lv in LEVELS]
        if not depth[0] < depth[1] < depth[2]:
            raise SpecError(f"tap layers must be strictly ordered low < mid < high, got {self.tap_layers}")
        if self.input_size <= 0 or self.width_divisor <= 0:
            raise SpecError("input_size and width_divisor must be positive")
        object.__setattr__(self, "tap_layers", {lv: self.tap_layers[lv] for lv in LEVELS})
        object.__setattr__(self, "mean", tuple(float(x) for x in self.mean))
        object.__setattr__(self, "std", tuple(float(x) for x in self.std))

    @property
    def cfg(self) -> tuple:
        return tuple(c if c == "M" else max(1, c // self.width_divisor) for c in ARCHITECTURES[self.architecture])

    @property
    def layer_names(self) -> list[str]:
        return vgg_layer_names(self.cfg)

    def tap_index(self, level: str) -> int:
        return self.layer_names.index(self.tap_layers[level])

    def tap_channels(self, level: str) -> int:
        name = self.tap_layers[level]
        if name.startswith("pool"):
            idx = self.layer_names.index(name)
            name = next(n for n in reversed(self.layer_names[:idx]) if n.startswith("relu"))
        block, conv = (int(x) for x in name[4:].split("_"))
        convs = [c for c in self.cfg]
        seen_block, seen_conv = 1, 0
        for c in convs:
            if c == "M":
                seen_block += 1
                seen_conv = 0
                continue
            seen_conv += 1
            if (seen_block, seen_conv) == (block, conv):
                return int(c)
        raise SpecError(f"cannot resolve channels for {name}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mean"] = list(self.mean)
        d["std"] = list(self.std)
        return d


@dataclass(frozen=True)
class ExtractorConfig:
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    embed_dim: int = 512
    attn_hidden: int = 256
    head_seed: int = 0
    trainable: dict = field(default_factory=lambda: dict(DEFAULT_TRAINABLE))

    def __post_init__(self) -> None:
        if self.embed_dim <= 0 or self.attn_hidden <= 0:
            raise SpecError("embed_dim and attn_hidden must be positive")
        unknown = set(self.trainable) - set(TRAINABLE_GROUPS)
        if unknown:
            raise SpecError(f"unknown trainable groups {sorted(unknown)}")
        object.__setattr__(self, "trainable", {**DEFAULT_TRAINABLE, **self.trainable})

    def to_dict(self) -> dict:
        return {
            "backbone": self.backbone.to_dict(),
            "embed_dim": self.embed_dim,
            "attn_hidden": self.attn_hidden,
            "head_seed": self.head_seed,
            "trainable": dict(self.trainable),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractorConfig":
        bb = dict(d["backbone"])
        bb["mean"] = tuple(bb["mean"])
        bb["std"] = tuple(bb["std"])
        return cls(
            backbone=BackboneSpec(**bb),
            embed_dim=d["embed_dim"],
            attn_hidden=d["attn_hidden"],
            head_seed=d["head_seed"],
            trainable=d["trainable"],
        )

    @property
    def version(self) -> str:
        bb = self.backbone
        taps = ",".join(bb.tap_layers[lv] for lv in LEVELS)
        return f"{bb.architecture}/w{bb.width_divisor}/in{bb.input_size}/taps[{taps}]/postrelu/avgmax/e{self.embed_dim}/v1"


class VGGBackbone(nn.Module):
    """VGG ``features`` stack whose module indices match torchvision's layout."""

    def __init__(self, spec: BackboneSpec, search_dirs: Sequence[Path] = ()):
        super().__init__()
        self.spec = spec
        layers: list[nn.Module] = []
        in_ch = 3
        for item in spec.cfg:
            if item == "M":
                layers.append(nn.MaxPool2d(kernel_size=2, stride=2))
            else:
                layers.append(nn.Conv2d(in_ch, item, kernel_size=3, padding=1))
                layers.append(nn.ReLU(inplace=False))
                in_ch = item
        self.features = nn.Sequential(*layers)
        self.register_buffer("mean", torch.tensor(spec.mean).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(spec.std).view(1, 3, 1, 1))
        self._tap_index = {lv: spec.tap_index(lv) for lv in LEVELS}
        self.load_weights(spec.weights_source, search_dirs)

    def load_weights(self, source: str, search_dirs: Sequence[Path] = ()) -> None:
        m = _RANDOM_RE.match(source.strip())
        if m:
            gen = torch.Generator().manual_seed(int(m.group(1)))
            for layer in self.features:
                if isinstance(layer, nn.Conv2d):
                    fan_out = layer.out_channels * layer.kernel_size[0] * layer.kernel_size[1]
                    std = (2.0 / fan_out) ** 0.5
                    with torch.no_grad():
                        layer.weight.copy_(torch.randn(layer.weight.shape, generator=gen) * std)
                        layer.bias.zero_()
            return
        path = resolve_weights_path(source, search_dirs)
        try:
            state = torch.load(path, map_location="cpu", weights_only=True)
        except Exception as exc:  # torch raises a variety of types for corrupt files
            raise WeightsLoadError(f"cannot load backbone weights from {path}: {exc}") from exc
        if isinstance(state, dict) and "state_dict" in state:
            state = state["state_dict"]
        if not isinstance(state, dict):
            raise WeightsLoadError(f"backbone weights file {path} does not hold a state dict")
        feats = {k[len("features."):]: v for k, v in state.items() if k.startswith("features.")}
        try:
            self.features.load_state_dict(feats, strict=True)
        except RuntimeError as exc:
            raise WeightsLoadError(f"backbone weights in {path} do not match {self.spec.architecture}: {exc}") from exc

    def normalize(self, x: torch.Tensor) -> torch.Tensor:
        return (x - self.mean) / self.std

    def forward(self, x: torch.Tensor) -> dict[str, torch.Tensor]:
        """Run the stack up to the deepest tap and return the tapped maps keyed by level."""
        x = self.normalize(x)
        by_index = {idx: lv for lv, idx in self._tap_index.items()}
        last = max(by_index)
        out: dict[str, torch.Tensor] = {}
        for i, layer in enumerate(self.features):
            x = layer(x)
            if i in by_index:
                out[by_index[i]] = x
            if i == last:
                break
        return out


def resolve_weights_path(source: str, search_dirs: Sequence[Path] = ()) -> Path:
    candidate = Path(source).expanduser()
    tried = [candidate]
    if candidate.is_file():
        return candidate
    if not candidate.is_absolute():
        dirs = list(search_dirs)
        cache = os.environ.get("STYLEFP_CACHE_DIR")
        if cache:
            dirs.append(Path(cache))
        for d in dirs:
            p = Path(d) / candidate
            tried.append(p)
            if p.is_file():
                return p
    raise WeightsLoadError(f"backbone weights file not found: {source} (tried {', '.join(map(str, tried))})")


class LevelEncoder(nn.Module):
    """Global avg+max pooling, channel concat (avg first), then a 1x1 conv that halves channels."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(2 * channels, channels, kernel_size=1)

    def forward(self, fmap: torch.Tensor) -> torch.Tensor:
        avg = fmap.mean(dim=(2, 3), keepdim=True)
        mx = fmap.amax(dim=(2, 3), keepdim=True)
        return self.conv(torch.cat([avg, mx], dim=1)).flatten(1)


class AttentionFusion(nn.Module):
    """Projects each level encoding to ``embed_dim`` and fuses them with softmax weights."""

    def __init__(self, level_dims: Sequence[int], embed_dim: int, hidden: int):
        super().__init__()
        self.embed_dim = embed_dim
        self.projections = nn.ModuleList(nn.Linear(d, embed_dim) for d in level_dims)
        n = len(level_dims)
        self.attn: nn.Module | Callable = nn.Sequential(
            nn.Linear(n * embed_dim, hidden), nn.ReLU(), nn.Linear(hidden, n)
        )

    def forward(self, encodings: Sequence[torch.Tensor]):
        if len(encodings) != len(self.projections):
            raise SpecError(f"expected {len(self.projections)} level encodings, got {len(encodings)}")
        projected = []
        for i, (c, proj) in enumerate(zip(encodings, self.projections)):
            if c.shape[-1] != proj.in_features:
                raise SpecError(f"level {i} encoding has dim {c.shape[-1]}, projection expects {proj.in_features}")
            projected.append(proj(c))
        p = torch.stack(projected, dim=1)  # (B, N, E)
        scores = self.attn(p.flatten(1))
        if scores.shape[-1] != p.shape[1]:
            raise SpecError(f"attention MLP must emit {p.shape[1]} scores, got {scores.shape[-1]}")
        alpha = torch.softmax(scores, dim=-1)
        v = (alpha.unsqueeze(-1) * p).sum(dim=1)
        return v, alpha, p


class StyleExtractor(nn.Module):
    """Trainable extractor: backbone taps, per-level encoders, attention fusion."""

    def __init__(self, config: ExtractorConfig | None = None, search_dirs: Sequence[Path] = ()):
        super().__init__()
        config = config or ExtractorConfig()
        self.config = config
        spec = config.backbone
        dims = [spec.tap_channels(lv) for lv in LEVELS]
        # layer constructors draw from the global generator; keep callers' streams intact
        torch_state = torch.random.get_rng_state()
        try:
            self.backbone = VGGBackbone(spec, search_dirs)
            torch.manual_seed(config.head_seed)
            self.encoders = nn.ModuleDict({lv: LevelEncoder(d) for lv, d in zip(LEVELS, dims)})
            self.fusion = AttentionFusion(dims, config.embed_dim, config.attn_hidden)
        finally:
            torch.random.set_rng_state(torch_state)
        self.apply_trainable(config.trainable)

    @property
    def embed_dim(self) -> int:
        return self.config.embed_dim

    @property
    def version(self) -> str:
        return self.config.version

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        mid = self.config.backbone.tap_index("mid")
        lower, upper = [], []
        for i, layer in enumerate(self.backbone.features):
            (lower if i <= mid else upper).extend(layer.parameters())
        return {
            "backbone_lower": lower,
            "backbone_upper": upper,
            "level_conv": list(self.encoders.parameters()),
            "projection": list(self.fusion.projections.parameters()),
            "attention": list(self.fusion.attn.parameters()) if isinstance(self.fusion.attn, nn.Module) else [],
        }

    def apply_trainable(self, mask: dict[str, bool]) -> None:
        for group, params in self.parameter_groups().items():
            for p in params:
                p.requires_grad_(bool(mask.get(group, False)))

    def preprocess(self, images: Sequence[ImageTensor] | torch.Tensor) -> torch.Tensor:
        """Shorter side to ``input_size``, center crop, as a float batch (B, 3, S, S) in [0, 1]."""
        size = self.config.backbone.input_size
        dtype = next(self.parameters()).dtype
        if isinstance(images, torch.Tensor):
            batch = [images[i] for i in range(images.shape[0])]
        else:
            batch = [torch.tensor(img.pixels).permute(2, 0, 1) for img in images]
        out = []
        for x in batch:
            x = x.to(dtype)
            if min(x.shape[-2:]) != size:
                x = TF.resize(x, size, antialias=True)
            if tuple(x.shape[-2:]) != (size, size):
                x = TF.center_crop(x, [size, size])
            out.append(x.clamp(0.0, 1.0))
        return torch.stack(out)

    def tap(self, x: torch.Tensor) -> dict[str, torch.Tensor]:
        return self.backbone(x)

    def encode(self, fmaps: dict[str, torch.Tensor], check_finite: bool = True) -> list[torch.Tensor]:
        out = []
        for lv in LEVELS:
            fmap = fmaps[lv]
            if check_finite and not torch.isfinite(fmap).all():
                raise NumericError(f"non-finite activations in {lv} level ({self.config.backbone.tap_layers[lv]})")
            out.append(self.encoders[lv](fmap))
        return out

    def forward(self, x: torch.Tensor):
        """Preprocessed batch -> (v, alpha)."""
        v, alpha, _ = self.fusion(self.encode(self.tap(x)))
        return v, alpha


# --------------------------------------------------------------------------
# Functional surface
# --------------------------------------------------------------------------


def tap_features(image: ImageTensor, extractor: StyleExtractor) -> dict[str, torch.Tensor]:
    """Low/mid/high feature maps for one image, shape (C, H, W) each, inference mode."""
    extractor.eval()
    with torch.no_grad():
        maps = extractor.tap(extractor.preprocess([image]))
    return {lv: maps[lv][0] for lv in LEVELS}


def pool_encode(feature_map: torch.Tensor, encoder: LevelEncoder, level: str = "low", source_layer: str = "") -> LevelEncoding:
    fmap = feature_map if feature_map.ndim == 4 else feature_map.unsqueeze(0)
    if not torch.isfinite(fmap).all():
        raise NumericError(f"non-finite activations in {level} level")
    with torch.no_grad():
        vec = encoder(fmap.to(encoder.conv.weight.dtype))[0]
    return LevelEncoding(level=level, vector=vec.double().numpy(), source_layer=source_layer)


def attention_fuse(
    encodings: Sequence[LevelEncoding], fusion: AttentionFusion, extractor_version: str = "", image_id: str = ""
) -> StyleFingerprint:
    levels = [e.level for e in encodings]
    if len(set(levels)) != len(levels):
        raise SpecError(f"duplicate levels in encodings: {levels}")
    dtype = fusion.projections[0].weight.dtype
    with torch.no_grad():
        cs = [torch.tensor(np.array(e.vector), dtype=dtype).unsqueeze(0) for e in encodings]
        v, alpha, _ = fusion(cs)
    return StyleFingerprint(
        vector=v[0].double().numpy(),
        attention=alpha[0].double().numpy(),
        extractor_version=extractor_version,
        image_id=image_id,
    )


def extract_fingerprints(
    images: Sequence[ImageTensor], extractor: StyleExtractor, image_ids: Sequence[str] | None = None, batch_size: int = 32
) -> list[StyleFingerprint]:
    ids = list(image_ids) if image_ids is not None else [""] * len(images)
    if len(ids) != len(images):
        raise SpecError("image_ids must match images")
    extractor.eval()
    out: list[StyleFingerprint] = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            x = extractor.preprocess(images[start : start + batch_size])
            v, alpha = extractor(x)
            for j in range(v.shape[0]):
                out.append(
                    StyleFingerprint(
                        vector=v[j].double().numpy(),
                        attention=alpha[j].double().numpy(),
                        extractor_version=extractor.version,
                        image_id=ids[start + j],
                    )
                )
    return out


def extract_fingerprint(image: ImageTensor, extractor: StyleExtractor, image_id: str = "") -> StyleFingerprint:
    return extract_fingerprints([image], extractor, [image_id])[0]
