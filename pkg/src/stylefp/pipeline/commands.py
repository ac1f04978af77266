"""The augment -> train -> calibrate -> verify -> evaluate workflow."""

from __future__ import annotations

import dataclasses
import datetime as _dt
import json
import logging
import os
import sys
from pathlib import Path
from typing import IO, Sequence

from ..augment.ops import MAX_RECONSTRUCTIONS, self_reconstruct, traditional_augment
from ..augment.providers import make_caption_provider, make_reconstruction_provider
from ..datamodel import (
    DatasetManifest,
    ImageTensor,
    ManifestEntry,
    dumps_manifest,
    load_manifest,
    validate_manifest,
)
from ..errors import CalibrationError, ProviderError, SpecError, StyleFPError, UncalibratedError
from ..evalkit.metrics import roc_auc, tpr_at_fpr
from ..evalkit.report import ResultRow, emit_report
from ..evalkit.robustness import robustness_battery, score_images
from ..extractor import StyleExtractor, extract_fingerprints
from ..verifier.calibration import CalibrationResult, calibrate_radius, verify
from ..verifier.model import HypersphereVerifier
from ..verifier.training import train
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import PipelineConfig
from .imageio import list_images, load_image, save_image

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.sfp"
AUGMENTED_MANIFEST_NAME = "manifest.augmented.json"
PROVENANCE_NAME = "augment_provenance.json"
RUN_LOG_NAME = "run_log.jsonl"


class ManifestInvalid(StyleFPError, ValueError):
    def __init__(self, path: Path, violations):
        self.violations = violations
        lines = "\n".join(f"  - {v}" for v in violations)
        super().__init__(f"manifest {path} failed validation:\n{lines}")


def _sidecar(cfg: PipelineConfig, artist_id: str, command: str, **detail) -> None:
    # timestamps live only here so every other output stays byte-stable
    path = cfg.artist_dir(artist_id) / RUN_LOG_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    record = {"time": _dt.datetime.now(_dt.timezone.utc).isoformat(), "command": command, **detail}
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True, default=str) + "\n")


def _load_valid_manifest(path: Path) -> DatasetManifest:
    manifest = load_manifest(path)
    violations = validate_manifest(manifest)
    if violations:
        raise ManifestInvalid(path, violations)
    return manifest


def _load_images(entries: Sequence[ManifestEntry], root: Path) -> list[ImageTensor]:
    images = []
    for e in entries:
        path = root / e.path
        try:
            images.append(load_image(path))
        except (OSError, ValueError) as exc:
            raise StyleFPError(f"cannot read image for entry {e.id!r} at {path}: {exc}") from exc
    return images


def checkpoint_path(cfg: PipelineConfig, artist_id: str) -> Path:
    return cfg.artist_dir(artist_id) / CHECKPOINT_NAME


def training_manifest_path(cfg: PipelineConfig) -> Path:
    """The augmented manifest when ``augment`` has run, else the configured one."""
    target = load_manifest(cfg.manifest_path).target_artist_id
    aug = cfg.artist_dir(target) / AUGMENTED_MANIFEST_NAME
    if aug.is_file():
        return aug
    log.warning("no augmented manifest at %s; using %s", aug, cfg.manifest_path)
    return cfg.manifest_path


# --------------------------------------------------------------------------
# augment
# --------------------------------------------------------------------------


def cmd_augment(cfg: PipelineConfig, keep_going: bool = False, out: IO[str] | None = None) -> Path:
    """Self-reconstruct (and optionally conventionally augment) every positive original in the train split.

    All inputs are validated and every variant is produced in memory before
    anything is written. Returns the path of the augmented manifest.
    """
    out = out or sys.stdout
    manifest = _load_valid_manifest(cfg.manifest_path)
    root = cfg.manifest_path.parent
    sources = [e for e in manifest.entries if e.split == "train" and e.label == "positive" and e.origin == "original"]
    if not sources:
        raise SpecError(f"manifest {cfg.manifest_path} has no positive original entries in the train split")
    caption_provider = make_caption_provider(cfg.caption_provider["name"], cfg.caption_provider.get("options"))
    recon_provider = make_reconstruction_provider(
        cfg.reconstruction_provider["name"], cfg.reconstruction_provider.get("options")
    )
    images = _load_images(sources, root)

    artist_dir = cfg.artist_dir(manifest.target_artist_id)
    aug_dir = artist_dir / "augmented"
    manifest_out = artist_dir / AUGMENTED_MANIFEST_NAME
    existing = {e.id for e in manifest.entries}
    new_entries: list[ManifestEntry] = []
    files: list[tuple[Path, ImageTensor]] = []
    provenance: list[dict] = []
    failures = 0

    def add(entry_id: str, img: ImageTensor, parent: ManifestEntry, origin: str, seed: int, parent_id: str | None = None):
        if entry_id in existing:
            raise SpecError(f"augmented id {entry_id!r} collides with an existing manifest entry")
        existing.add(entry_id)
        path = aug_dir / f"{entry_id}.png"
        rel = os.path.relpath(path, manifest_out.parent)
        files.append((path, img))
        new_entries.append(
            ManifestEntry(
                id=entry_id,
                path=Path(rel).as_posix(),
                label=parent.label,
                artist_id=parent.artist_id,
                split=parent.split,
                origin=origin,
                parent_id=parent_id or parent.id,
                seed=seed,
            )
        )

    for idx, (entry, image) in enumerate(zip(sources, images)):
        k = cfg.k_for((cfg.seed, idx))
        base_seed = cfg.seed * 1_000_000 + idx * 2 * MAX_RECONSTRUCTIONS
        try:
            variants = self_reconstruct(image, caption_provider, recon_provider, k, base_seed, parent_id=entry.id) if k else []
        except ProviderError as exc:
            if not keep_going:
                raise ProviderError(exc.provider, f"{exc} (source entry {entry.id!r})", index=exc.index) from exc
            failures += 1
            print(f"error\t{entry.id}\t{exc}", file=out)
            continue
        for recon, record in variants:
            aug_id = f"{entry.id}.aug{record.index}"
            add(aug_id, recon, entry, "self_reconstructed", record.seed)
            provenance.append({"id": aug_id, **dataclasses.asdict(record)})
            if cfg.traditional_on_reconstructed:
                t_seed = record.seed + MAX_RECONSTRUCTIONS
                add(f"{aug_id}.trad0", traditional_augment(recon, cfg.traditional_config(t_seed)), entry,
                    "traditional_aug", t_seed, parent_id=aug_id)
        for t in range(cfg.traditional_per_image):
            t_seed = base_seed + MAX_RECONSTRUCTIONS + t
            add(f"{entry.id}.trad{t}", traditional_augment(image, cfg.traditional_config(t_seed)), entry, "traditional_aug", t_seed)

    # entry paths in the new manifest are relative to its own directory
    rebased = [
        dataclasses.replace(e, path=Path(os.path.relpath(root / e.path, manifest_out.parent)).as_posix())
        for e in manifest.entries
    ]
    augmented = manifest.with_entries(rebased + new_entries)
    violations = validate_manifest(augmented)
    if violations:
        raise ManifestInvalid(manifest_out, violations)

    for path, img in files:
        save_image(img, path)
    manifest_out.parent.mkdir(parents=True, exist_ok=True)
    manifest_out.write_text(dumps_manifest(augmented), encoding="utf-8")
    (artist_dir / PROVENANCE_NAME).write_text(json.dumps(provenance, indent=2) + "\n", encoding="utf-8")
    counts = {o: sum(e.origin == o for e in new_entries) for o in ("self_reconstructed", "traditional_aug")}
    print(
        f"augmented {len(sources) - failures} positives: {counts['self_reconstructed']} self-reconstructed, "
        f"{counts['traditional_aug']} traditional -> {manifest_out}",
        file=out,
    )
    _sidecar(cfg, manifest.target_artist_id, "augment", failures=failures, new_entries=len(new_entries))
    return manifest_out


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------


def _extractor_for_checkpoint(ckpt: Checkpoint, cfg: PipelineConfig) -> StyleExtractor:
    # the checkpoint carries the full extractor state, so the original weights file is not needed
    bb = dataclasses.replace(ckpt.extractor_config.backbone, weights_source="random(0)")
    ex = StyleExtractor(dataclasses.replace(ckpt.extractor_config, backbone=bb))
    ex.config = ckpt.extractor_config
    ex.load_state_dict(ckpt.extractor_state)
    ex.eval()
    return ex


def cmd_train(cfg: PipelineConfig, resume: bool = False, out: IO[str] | None = None) -> Path:
    out = out or sys.stdout
    manifest_path = training_manifest_path(cfg)
    manifest = _load_valid_manifest(manifest_path)
    ckpt_path = checkpoint_path(cfg, manifest.target_artist_id)

    previous: Checkpoint | None = None
    if resume:
        if not ckpt_path.is_file():
            raise StyleFPError(f"--resume given but no checkpoint at {ckpt_path}")
        previous = load_checkpoint(ckpt_path)
        if previous.extractor_config.version != cfg.extractor.version:
            raise SpecError(
                f"checkpoint extractor {previous.extractor_config.version!r} does not match config {cfg.extractor.version!r}"
            )

    extractor = StyleExtractor(cfg.extractor, search_dirs=[cfg.base_dir])
    entries = manifest.select(split="train")
    images = _load_images(entries, manifest_path.parent)
    labels = [e.label for e in entries]

    if previous is not None:
        extractor.load_state_dict(previous.extractor_state)
        verifier = HypersphereVerifier.from_params(previous.verifier)
        start, history, opt_state = previous.epochs_completed, previous.history, previous.optimizer_state
    else:
        verifier = HypersphereVerifier(cfg.extractor.embed_dim, cfg.projection_dim, init=f"random({cfg.seed})")
        start, history, opt_state = 0, [], None
    remaining = max(0, cfg.train.epochs - start)
    if previous is not None:
        print(f"resuming at epoch {start}; {remaining} epochs to go", file=out)

    x = extractor.preprocess(images)

    def report(rec: dict) -> None:
        print(
            f"epoch {int(rec['epoch']):4d}  loss {rec['loss']:.6f}  pos {rec['loss_pos']:.6f}  neg {rec['loss_neg']:.6f}  "
            f"d+ {rec['mean_pos_distance']:.4f}  d- {rec['mean_neg_distance']:.4f}",
            file=out,
        )

    result = train(
        x,
        labels,
        extractor,
        verifier,
        dataclasses.replace(cfg.train, epochs=remaining),
        start_epoch=start,
        history=history,
        optimizer_state=opt_state,
        on_epoch=report,
    )
    ckpt = Checkpoint(
        artist_id=manifest.target_artist_id,
        extractor_config=cfg.extractor,
        extractor_state={k: v.detach().clone() for k, v in extractor.state_dict().items()},
        verifier=result.params,
        train_config=cfg.train,
        history=result.history,
        epochs_completed=result.epochs_completed,
        calibration=None,
        optimizer_state=result.optimizer_state,
    )
    save_checkpoint(ckpt, ckpt_path)
    print(f"wrote uncalibrated checkpoint {ckpt_path} ({result.epochs_completed} epochs)", file=out)
    _sidecar(cfg, manifest.target_artist_id, "train", epochs=result.epochs_completed, resume=resume)
    return ckpt_path


# --------------------------------------------------------------------------
# calibrate / verify / evaluate
# --------------------------------------------------------------------------


def _resolve_checkpoint(cfg: PipelineConfig, checkpoint: str | Path | None) -> Path:
    if checkpoint is not None:
        return Path(checkpoint)
    target = load_manifest(cfg.manifest_path).target_artist_id
    return checkpoint_path(cfg, target)


def cmd_calibrate(cfg: PipelineConfig, checkpoint: str | Path | None = None, out: IO[str] | None = None) -> CalibrationResult:
    out = out or sys.stdout
    path = _resolve_checkpoint(cfg, checkpoint)
    ckpt = load_checkpoint(path)
    manifest_path = training_manifest_path(cfg)
    manifest = _load_valid_manifest(manifest_path)
    entries = manifest.select(split="val")
    labels = [e.label for e in entries]
    for cls in ("positive", "negative"):
        if cls not in labels:
            raise CalibrationError(f"the 'val' split of {manifest_path} has no {cls} entries; cannot calibrate")
    extractor = _extractor_for_checkpoint(ckpt, cfg)
    fps = extract_fingerprints(_load_images(entries, manifest_path.parent), extractor)
    result = calibrate_radius(fps, labels, ckpt.verifier, cfg.calibration)
    ckpt.verifier = ckpt.verifier.with_radius(result.radius)
    ckpt.calibration = result
    save_checkpoint(ckpt, path)
    print(
        f"radius {result.radius:.6f}  criterion {result.criterion}  val TPR {result.tpr:.4f}  val FPR {result.fpr:.4f}",
        file=out,
    )
    _sidecar(cfg, ckpt.artist_id, "calibrate", radius=result.radius)
    return result


def cmd_verify(
    cfg: PipelineConfig,
    input_path: str | Path,
    checkpoint: str | Path | None = None,
    out: IO[str] | None = None,
    err: IO[str] | None = None,
) -> int:
    """Print one verdict line per image. Exit code 0 all inside, 2 any outside, 1 on any error."""
    out, err = out or sys.stdout, err or sys.stderr
    try:
        ckpt = load_checkpoint(_resolve_checkpoint(cfg, checkpoint))
        params = ckpt.require_calibrated()
    except UncalibratedError as exc:
        print(f"error: {exc}", file=err)
        return 1
    extractor = _extractor_for_checkpoint(ckpt, cfg)
    paths = list_images(input_path)
    if not paths:
        print(f"error: no images found at {input_path}", file=err)
        return 1
    any_error = any_outside = False
    for p in paths:
        try:
            image = load_image(p)
        except (OSError, ValueError) as exc:
            any_error = True
            print(f"{p.name}\tERROR\t{exc}", file=out)
            continue
        verdict = verify(image, extractor, params, image_id=p.name)
        any_outside |= not verdict.inside
        print(verdict.line(), file=out)
    if any_error:
        return 1
    return 2 if any_outside else 0


def cmd_evaluate(
    cfg: PipelineConfig,
    checkpoint: str | Path | None = None,
    robustness: bool = False,
    test_manifest: str | Path | None = None,
    out: IO[str] | None = None,
) -> tuple[Path, Path]:
    out = out or sys.stdout
    ckpt = load_checkpoint(_resolve_checkpoint(cfg, checkpoint))
    params = ckpt.require_calibrated()
    manifest_path = Path(test_manifest) if test_manifest is not None else cfg.manifest_path
    manifest = _load_valid_manifest(manifest_path)
    entries = manifest.select(split="test", origin="original")
    labels = [e.label for e in entries]
    for cls in ("positive", "negative"):
        if cls not in labels:
            raise SpecError(f"the 'test' split of {manifest_path} has no {cls} entries")
    extractor = _extractor_for_checkpoint(ckpt, cfg)
    images = _load_images(entries, manifest_path.parent)

    scores = score_images(images, labels, extractor, params)
    rows = [
        ResultRow(
            setting="clean",
            auc=roc_auc(scores),
            tpr_at_fpr=tpr_at_fpr(scores, cfg.fpr_target),
            n_pos=int(scores.positive_scores.size),
            n_neg=int(scores.negative_scores.size),
        )
    ]
    header = {
        "artist_id": ckpt.artist_id,
        "extractor_version": ckpt.extractor_config.version,
        "radius": params.radius,
        "score": "negative distance to center",
    }
    if robustness:
        header["robustness"] = cfg.robustness.to_dict()
        battery = robustness_battery(images, labels, extractor, params, cfg.robustness, cfg.fpr_target)
        # the identity row repeats the clean row
        rows += [ResultRow.from_battery(r) for r in battery if r.setting != "identity"]
    paths = emit_report(
        rows,
        cfg.artist_dir(ckpt.artist_id) / "report",
        header=header,
        calibration=ckpt.calibration.to_dict() if ckpt.calibration else None,
        fpr_target=cfg.fpr_target,
    )
    out.write(paths[1].read_text(encoding="utf-8"))
    _sidecar(cfg, ckpt.artist_id, "evaluate", robustness=robustness)
    return paths
