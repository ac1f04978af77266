"""Shared fixtures: a small seeded backbone and the two-family texture fixture."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
import torch
import yaml

from stylefp.extractor import BackboneSpec, ExtractorConfig, StyleExtractor
from stylefp.synthetic import write_fixture

# acceptance results collected here and echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def small_extractor_config(seed: int = 13, **kw) -> ExtractorConfig:
    backbone = BackboneSpec(weights_source=f"random({seed})", input_size=64, width_divisor=8)
    return ExtractorConfig(backbone=backbone, head_seed=seed, **kw)


def write_config(path: Path, manifest: Path, output_dir: Path, seed: int = 13, **sections) -> Path:
    data = {
        "seed": seed,
        "manifest": str(manifest),
        "output_dir": str(output_dir),
        "extractor": {"weights": f"random({seed})", "input_size": 64, "width_divisor": 8},
    }
    for key, value in sections.items():
        if isinstance(value, dict) and isinstance(data.get(key), dict):
            data[key] = {**data[key], **value}
        else:
            data[key] = value
    path.write_text(yaml.safe_dump(data, sort_keys=True), encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def small_extractor() -> StyleExtractor:
    ex = StyleExtractor(small_extractor_config())
    ex.eval()
    return ex


@pytest.fixture(scope="session")
def fixture_manifest(tmp_path_factory) -> Path:
    return write_fixture(tmp_path_factory.mktemp("fixture"), seed=3)


@pytest.fixture(scope="session")
def small_fixture_manifest(tmp_path_factory) -> Path:
    """Twenty images per family; enough for CLI plumbing tests."""
    return write_fixture(tmp_path_factory.mktemp("small_fixture"), per_family=20, seed=5, split_counts=(10, 5, 5))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture(autouse=True)
def _restore_torch_rng():
    state = torch.random.get_rng_state()
    yield
    torch.random.set_rng_state(state)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

