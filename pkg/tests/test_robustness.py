import numpy as np
import pytest
import torch

from stylefp.errors import SpecError
from stylefp.evalkit import RobustnessSpec, build_transforms, robustness_battery, roc_auc, score_images
from stylefp.evalkit.robustness import SKIPPED_NO_PROVIDER
from stylefp.extractor import extract_fingerprints
from stylefp.synthetic import generate_family
from stylefp.verifier import HypersphereVerifier


@pytest.fixture(scope="module")
def scored(small_extractor):
    pos = generate_family("ember", 6, seed=1)
    neg = generate_family("tide", 6, seed=2)
    ver = HypersphereVerifier(small_extractor.embed_dim, 64, init="random(0)")
    vecs = np.stack([fp.vector for fp in extract_fingerprints(pos, small_extractor)])
    ver.init_center(torch.tensor(vecs, dtype=torch.float32))
    return pos + neg, ["positive"] * 6 + ["negative"] * 6, ver.to_params()


def test_identity_row_equals_clean(scored, small_extractor):
    images, labels, params = scored
    rows = robustness_battery(images, labels, small_extractor, params)
    clean = score_images(images, labels, small_extractor, params)
    identity = rows[0]
    assert identity.setting == "identity"
    np.testing.assert_array_equal(identity.scores.positive_scores, clean.positive_scores)
    np.testing.assert_array_equal(identity.scores.negative_scores, clean.negative_scores)
    assert identity.auc == roc_auc(clean)
    assert [r.setting for r in rows] == list(build_transforms(RobustnessSpec()))
    assert all(r.status == "ok" and 0.0 <= r.auc <= 1.0 and r.n_pos == 6 and r.n_neg == 6 for r in rows)


def test_provider_rows_skipped(scored, small_extractor):
    images, labels, params = scored
    spec = RobustnessSpec(finetune_second_stage=True, prompt_attack=True)
    rows = robustness_battery(images[:2] + images[-2:], labels[:2] + labels[-2:], small_extractor, params, spec)
    skipped = {r.setting: r for r in rows if r.status != "ok"}
    assert set(skipped) == {"finetune_second_stage", "prompt_attack"}
    assert all(r.status == SKIPPED_NO_PROVIDER and r.auc is None and r.n_pos == 0 for r in skipped.values())


def test_transforms_preserve_shape_and_range(scored):
    img = scored[0][0]
    for name, fn in build_transforms(RobustnessSpec()).items():
        out = fn(img, 0)
        assert out.pixels.shape == img.pixels.shape, name
        assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0, name


def test_transforms_deterministic(scored):
    img = scored[0][0]
    a = build_transforms(RobustnessSpec(seed=4))
    b = build_transforms(RobustnessSpec(seed=4))
    for name in a:
        np.testing.assert_array_equal(a[name](img, 3).pixels, b[name](img, 3).pixels)


def test_jpeg_changes_pixels(scored):
    img = scored[0][0]
    out = build_transforms(RobustnessSpec())["jpeg_50"](img, 0)
    assert 0 < np.abs(out.pixels - img.pixels).mean() < 0.1


def test_default_names_echo_parameters():
    assert list(build_transforms(RobustnessSpec())) == [
        "identity",
        "rotation_15",
        "jpeg_50",
        "gaussian_blur_3x3",
        "color_jitter_hue_0.2",
        "contrast_2",
    ]


@pytest.mark.parametrize(
    "kw", [{"gaussian_blur_kernel": 4}, {"jpeg_quality": 0}, {"color_jitter_hue": 0.6}, {"contrast_factor": -1.0}]
)
def test_invalid_parameters_rejected(kw):
    with pytest.raises(SpecError):
        RobustnessSpec(**kw)
