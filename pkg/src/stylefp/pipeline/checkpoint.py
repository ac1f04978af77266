"""Versioned, byte-stable checkpoint files.

Layout::

    b"STYLEFP-CKPT\\n"  | uint64 LE header length | UTF-8 JSON header | raw tensor bytes

The header lists every tensor with dtype, shape and byte offset into the
blob. Nothing time-dependent is stored, so identical training runs write
identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from ..datamodel import VerifierParams
from ..errors import CheckpointError, CheckpointVersionError, UncalibratedError
from ..extractor import ExtractorConfig, StyleExtractor
from ..verifier.calibration import CalibrationResult
from ..verifier.model import HypersphereVerifier
from ..verifier.training import TrainConfig

MAGIC = b"STYLEFP-CKPT\n"
FORMAT_VERSION = 1

_DTYPES = {
    torch.float32: "float32",
    torch.float64: "float64",
    torch.int64: "int64",
    torch.int32: "int32",
}
_NP = {"float32": np.float32, "float64": np.float64, "int64": np.int64, "int32": np.int32}


@dataclass
class Checkpoint:
    artist_id: str
    extractor_config: ExtractorConfig
    extractor_state: dict[str, torch.Tensor]
    verifier: VerifierParams
    train_config: TrainConfig
    history: list[dict[str, float]] = field(default_factory=list)
    epochs_completed: int = 0
    calibration: CalibrationResult | None = None
    optimizer_state: dict | None = None

    @property
    def status(self) -> str:
        return "calibrated" if self.verifier.radius is not None else "uncalibrated"

    def build_extractor(self, search_dirs=()) -> StyleExtractor:
        ex = StyleExtractor(self.extractor_config, search_dirs=search_dirs)
        ex.load_state_dict(self.extractor_state)
        ex.eval()
        return ex

    def build_verifier(self) -> HypersphereVerifier:
        return HypersphereVerifier.from_params(self.verifier)

    def require_calibrated(self) -> VerifierParams:
        if self.verifier.radius is None:
            raise UncalibratedError("checkpoint is uncalibrated; run `stylefp calibrate` before verifying")
        return self.verifier


def _flatten_optimizer(state: dict) -> tuple[dict, dict[str, torch.Tensor]]:
    tensors: dict[str, torch.Tensor] = {}
    meta_state: dict[str, dict[str, Any]] = {}
    for pid, pstate in state["state"].items():
        entry = {}
        for key, value in pstate.items():
            if isinstance(value, torch.Tensor):
                name = f"optimizer.{pid}.{key}"
                tensors[name] = value
                entry[key] = {"tensor": name}
            else:
                entry[key] = value
        meta_state[str(pid)] = entry
    groups = []
    for g in state["param_groups"]:
        groups.append({k: (list(v) if isinstance(v, tuple) else v) for k, v in g.items()})
    return {"state": meta_state, "param_groups": groups}, tensors


def _unflatten_optimizer(meta: dict, tensors: dict[str, torch.Tensor]) -> dict:
    state = {}
    for pid, entry in meta["state"].items():
        state[int(pid)] = {
            k: (tensors[v["tensor"]] if isinstance(v, dict) and "tensor" in v else v) for k, v in entry.items()
        }
    groups = []
    for g in meta["param_groups"]:
        g = dict(g)
        if "betas" in g:
            g["betas"] = tuple(g["betas"])
        groups.append(g)
    return {"state": state, "param_groups": groups}


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    tensors: dict[str, torch.Tensor] = {f"extractor.{k}": v for k, v in ckpt.extractor_state.items()}
    tensors["verifier.projection"] = torch.tensor(np.array(ckpt.verifier.projection))
    tensors["verifier.center"] = torch.tensor(np.array(ckpt.verifier.center))
    optimizer_meta = None
    if ckpt.optimizer_state is not None:
        optimizer_meta, opt_tensors = _flatten_optimizer(ckpt.optimizer_state)
        tensors.update(opt_tensors)

    index = []
    blobs = []
    offset = 0
    for name, t in tensors.items():
        t = t.detach().cpu().contiguous()
        if t.dtype not in _DTYPES:
            raise CheckpointError(f"unsupported tensor dtype {t.dtype} for {name}")
        arr = t.numpy()
        raw = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
        index.append({"name": name, "dtype": _DTYPES[t.dtype], "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)

    v = ckpt.verifier
    header = {
        "format_version": FORMAT_VERSION,
        "status": ckpt.status,
        "artist_id": ckpt.artist_id,
        "extractor_config": ckpt.extractor_config.to_dict(),
        "extractor_version": ckpt.extractor_config.version,
        "verifier": {
            "version": v.version,
            "projection_spec": v.projection_spec(),
            "margin": v.margin,
            "beta": v.beta,
            "epsilon": v.epsilon,
            "lambda_pos": v.lambda_pos,
            "lambda_neg": v.lambda_neg,
            "radius": v.radius,
        },
        "train_config": ckpt.train_config.to_dict(),
        "epochs_completed": ckpt.epochs_completed,
        "history": ckpt.history,
        "calibration": ckpt.calibration.to_dict() if ckpt.calibration else None,
        "optimizer": optimizer_meta,
        "tensors": index,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for raw in blobs:
            fh.write(raw)
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path} is not a stylefp checkpoint")
    pos = len(MAGIC)
    (n,) = struct.unpack("<Q", data[pos : pos + 8])
    pos += 8
    try:
        header = json.loads(data[pos : pos + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header in {path}: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path} has checkpoint format {header.get('format_version')!r}; this build reads only {FORMAT_VERSION}"
        )
    blob = memoryview(data)[pos + n :]
    tensors: dict[str, torch.Tensor] = {}
    for item in header["tensors"]:
        raw = blob[item["offset"] : item["offset"] + item["nbytes"]]
        if len(raw) != item["nbytes"]:
            raise CheckpointError(f"truncated tensor {item['name']} in {path}")
        arr = np.frombuffer(raw, dtype=np.dtype(_NP[item["dtype"]]).newbyteorder("<")).astype(_NP[item["dtype"]])
        tensors[item["name"]] = torch.from_numpy(arr.reshape(item["shape"]))

    extractor_config = ExtractorConfig.from_dict(header["extractor_config"])
    if extractor_config.version != header["extractor_version"]:
        raise CheckpointVersionError(
            f"{path} was written by extractor {header['extractor_version']!r}, this build describes it as "
            f"{extractor_config.version!r}"
        )
    vh = header["verifier"]
    if vh["version"] != VerifierParams.__dataclass_fields__["version"].default:
        raise CheckpointVersionError(f"{path} has verifier version {vh['version']!r}")
    verifier = VerifierParams(
        projection=tensors["verifier.projection"].numpy(),
        center=tensors["verifier.center"].numpy(),
        margin=vh["margin"],
        beta=vh["beta"],
        epsilon=vh["epsilon"],
        lambda_pos=vh["lambda_pos"],
        lambda_neg=vh["lambda_neg"],
        radius=vh["radius"],
        version=vh["version"],
    )
    extractor_state = {k[len("extractor."):]: v for k, v in tensors.items() if k.startswith("extractor.")}
    optimizer_state = None
    if header.get("optimizer") is not None:
        optimizer_state = _unflatten_optimizer(header["optimizer"], tensors)
    calibration = CalibrationResult.from_dict(header["calibration"]) if header.get("calibration") else None
    return Checkpoint(
        artist_id=header["artist_id"],
        extractor_config=extractor_config,
        extractor_state=extractor_state,
        verifier=verifier,
        train_config=TrainConfig(**header["train_config"]),
        history=header["history"],
        epochs_completed=header["epochs_completed"],
        calibration=calibration,
        optimizer_state=optimizer_state,
    )
