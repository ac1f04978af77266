import math

import numpy as np
import pytest
import torch
import torch.nn as nn
from conftest import small_extractor_config
from hypothesis import given, settings
from hypothesis import strategies as st

from stylefp.datamodel import ImageTensor, LevelEncoding
from stylefp.errors import NumericError, SpecError, WeightsLoadError
from stylefp.extractor import (
    AttentionFusion,
    BackboneSpec,
    ExtractorConfig,
    LevelEncoder,
    StyleExtractor,
    VGGBackbone,
    attention_fuse,
    extract_fingerprint,
    extract_fingerprints,
    pool_encode,
    tap_features,
    vgg_layer_names,
)
from stylefp.synthetic import generate_family


def _images(n, size=64, seed=0):
    return generate_family("ember", n, size=size, seed=seed)


class TestBackboneSpec:
    def test_layer_names_match_torchvision_indices(self):
        names = vgg_layer_names(BackboneSpec().cfg)
        assert len(names) == 37
        assert names[:5] == ["conv1_1", "relu1_1", "conv1_2", "relu1_2", "pool1"]
        assert names.index("relu2_2") == 8 and names.index("relu4_4") == 26 and names.index("relu5_4") == 35

    def test_unknown_tap(self):
        with pytest.raises(SpecError):
            BackboneSpec(tap_layers={"low": "relu2_2", "mid": "relu9_9", "high": "relu5_4"})

    def test_taps_must_be_ordered(self):
        with pytest.raises(SpecError):
            BackboneSpec(tap_layers={"low": "relu4_4", "mid": "relu2_2", "high": "relu5_4"})

    def test_exactly_three_levels(self):
        with pytest.raises(SpecError):
            BackboneSpec(tap_layers={"low": "relu2_2", "high": "relu5_4"})

    def test_version_records_pooling_choices(self):
        v = small_extractor_config().version
        assert "postrelu" in v and "avgmax" in v and "relu2_2" in v

    def test_config_roundtrip(self):
        cfg = small_extractor_config(embed_dim=64)
        assert ExtractorConfig.from_dict(cfg.to_dict()) == cfg


class TestTapFeatures:
    def test_architecture_shapes_at_224(self):
        spec = BackboneSpec(weights_source="random(1)", width_divisor=8)
        ex = StyleExtractor(ExtractorConfig(backbone=spec, embed_dim=16, attn_hidden=8))
        img = ImageTensor(np.random.default_rng(0).random((224, 224, 3)))
        maps = tap_features(img, ex)
        sizes = [maps[lv].shape[-1] for lv in ("low", "mid", "high")]
        chans = [maps[lv].shape[0] for lv in ("low", "mid", "high")]
        assert sizes == [112, 28, 14]
        assert sizes[0] > sizes[1] > sizes[2]
        assert chans[0] <= chans[1] <= chans[2]

    def test_identical_images_identical_maps(self, small_extractor):
        img = _images(1)[0]
        a = tap_features(img, small_extractor)
        b = tap_features(ImageTensor(img.pixels.copy()), small_extractor)
        for lv in a:
            assert torch.equal(a[lv], b[lv])

    def test_seeded_random_weights_reproducible(self):
        zeros = ImageTensor(np.zeros((64, 64, 3)))
        a = tap_features(zeros, StyleExtractor(small_extractor_config(seed=13)))
        b = tap_features(zeros, StyleExtractor(small_extractor_config(seed=13)))
        c = tap_features(zeros, StyleExtractor(small_extractor_config(seed=14)))
        assert all(torch.equal(a[lv], b[lv]) for lv in a)
        assert not torch.equal(a["high"], c["high"])

    def test_weights_file_roundtrip(self, tmp_path):
        spec = BackboneSpec(weights_source="random(5)", input_size=64, width_divisor=8)
        src = VGGBackbone(spec)
        path = tmp_path / "vgg_small.pth"
        torch.save({f"features.{k}": v for k, v in src.features.state_dict().items()}, path)
        loaded = VGGBackbone(BackboneSpec(weights_source=str(path), input_size=64, width_divisor=8))
        for a, b in zip(src.features.parameters(), loaded.features.parameters()):
            assert torch.equal(a, b)

    def test_cache_dir_env(self, tmp_path, monkeypatch):
        spec = BackboneSpec(weights_source="random(5)", input_size=64, width_divisor=8)
        torch.save({f"features.{k}": v for k, v in VGGBackbone(spec).features.state_dict().items()}, tmp_path / "w.pth")
        monkeypatch.setenv("STYLEFP_CACHE_DIR", str(tmp_path))
        VGGBackbone(BackboneSpec(weights_source="w.pth", input_size=64, width_divisor=8))

    def test_missing_weights_names_file(self, tmp_path):
        with pytest.raises(WeightsLoadError, match="nowhere.pth"):
            VGGBackbone(BackboneSpec(weights_source=str(tmp_path / "nowhere.pth"), width_divisor=8))

    def test_corrupt_weights(self, tmp_path):
        bad = tmp_path / "bad.pth"
        bad.write_bytes(b"not a checkpoint")
        with pytest.raises(WeightsLoadError, match="bad.pth"):
            VGGBackbone(BackboneSpec(weights_source=str(bad), width_divisor=8))

    def test_mismatched_weights(self, tmp_path):
        small = VGGBackbone(BackboneSpec(weights_source="random(0)", width_divisor=8))
        path = tmp_path / "small.pth"
        torch.save({f"features.{k}": v for k, v in small.features.state_dict().items()}, path)
        with pytest.raises(WeightsLoadError):
            VGGBackbone(BackboneSpec(weights_source=str(path), width_divisor=4))


def _selector(channels: int, which: str) -> LevelEncoder:
    """Level encoder whose 1x1 conv copies out the avg or the max half."""
    enc = LevelEncoder(channels)
    with torch.no_grad():
        w = torch.zeros(channels, 2 * channels, 1, 1)
        offset = 0 if which == "avg" else channels
        for c in range(channels):
            w[c, offset + c] = 1.0
        enc.conv.weight.copy_(w)
        enc.conv.bias.zero_()
    return enc


class TestPoolEncode:
    def test_constant_map(self):
        fmap = torch.full((3, 4, 5), 5.0)
        for which in ("avg", "max"):
            enc = pool_encode(fmap, _selector(3, which), level="mid")
            np.testing.assert_allclose(enc.vector, [5.0, 5.0, 5.0])
            assert enc.level == "mid"

    def test_spike_fixture(self):
        fmap = torch.zeros(2, 2, 2)
        fmap[0, 0, 1] = 4.0
        fmap[1, 1, 0] = 8.0
        np.testing.assert_allclose(pool_encode(fmap, _selector(2, "max")).vector, [4.0, 8.0])
        np.testing.assert_allclose(pool_encode(fmap, _selector(2, "avg")).vector, [1.0, 2.0])

    def test_zero_map_zero_bias(self):
        enc = LevelEncoder(4)
        with torch.no_grad():
            enc.conv.bias.zero_()
        np.testing.assert_array_equal(pool_encode(torch.zeros(4, 3, 3), enc).vector, np.zeros(4))

    def test_output_halves_channels(self):
        assert pool_encode(torch.rand(6, 3, 3), LevelEncoder(6)).vector.shape == (6,)
        assert LevelEncoder(6).conv.in_channels == 12

    def test_non_finite_names_level(self):
        fmap = torch.zeros(2, 2, 2)
        fmap[0, 0, 0] = math.inf
        with pytest.raises(NumericError, match="high"):
            pool_encode(fmap, LevelEncoder(2), level="high")

    def test_extractor_non_finite(self, small_extractor):
        maps = small_extractor.tap(small_extractor.preprocess(_images(1)))
        maps["mid"] = maps["mid"] * math.nan
        with pytest.raises(NumericError, match="mid"):
            small_extractor.encode(maps)


class _Scores(nn.Module):
    """Stand-in for the attention MLP that emits fixed scores."""

    def __init__(self, fn):
        super().__init__()
        self.fn = fn

    def forward(self, flat):
        return self.fn(flat)


def _fusion(dims, embed=8, seed=0, dtype=torch.float64):
    torch.manual_seed(seed)
    return AttentionFusion(dims, embed, 16).to(dtype)


def _encodings(dims, rng):
    return [LevelEncoding(lv, rng.normal(size=d), "x") for lv, d in zip(("low", "mid", "high"), dims)]


class TestAttentionFuse:
    def test_single_level(self, rng):
        fusion = _fusion([5])
        enc = [LevelEncoding("low", rng.normal(size=5), "x")]
        fp = attention_fuse(enc, fusion)
        np.testing.assert_array_equal(fp.attention, [1.0])
        with torch.no_grad():
            p1 = fusion.projections[0](torch.tensor(enc[0].vector)).numpy()
        np.testing.assert_allclose(fp.vector, p1, rtol=0, atol=1e-12)

    def test_equal_scores_give_mean(self, rng):
        fusion = _fusion([4, 6, 8])
        fusion.attn = _Scores(lambda flat: torch.zeros(flat.shape[0], 3, dtype=flat.dtype))
        enc = _encodings([4, 6, 8], rng)
        fp = attention_fuse(enc, fusion)
        np.testing.assert_allclose(fp.attention, [1 / 3] * 3, atol=1e-12)
        with torch.no_grad():
            ps = [proj(torch.tensor(e.vector)).numpy() for proj, e in zip(fusion.projections, enc)]
        np.testing.assert_allclose(fp.vector, np.mean(ps, axis=0), atol=1e-12)

    def test_log_scores(self, rng):
        fusion = _fusion([4, 6, 8])
        fusion.attn = _Scores(lambda flat: torch.log(torch.tensor([[1.0, 2.0, 3.0]], dtype=flat.dtype)).expand(flat.shape[0], 3))
        enc = _encodings([4, 6, 8], rng)
        fp = attention_fuse(enc, fusion)
        np.testing.assert_allclose(fp.attention, [1 / 6, 2 / 6, 3 / 6], rtol=0, atol=1e-9)
        with torch.no_grad():
            ps = [proj(torch.tensor(e.vector)).numpy() for proj, e in zip(fusion.projections, enc)]
        expected = ps[0] / 6 + 2 * ps[1] / 6 + 3 * ps[2] / 6
        np.testing.assert_allclose(fp.vector, expected, rtol=0, atol=1e-9)

    def test_dimension_mismatch(self, rng):
        fusion = _fusion([4, 6, 8])
        with pytest.raises(SpecError):
            attention_fuse(_encodings([4, 6, 9], rng), fusion)
        with pytest.raises(SpecError):
            attention_fuse(_encodings([4, 6], rng), fusion)

    def test_wrong_score_count(self, rng):
        fusion = _fusion([4, 6, 8])
        fusion.attn = _Scores(lambda flat: torch.zeros(flat.shape[0], 2, dtype=flat.dtype))
        with pytest.raises(SpecError):
            attention_fuse(_encodings([4, 6, 8], rng), fusion)

    def test_permutation_equivariance(self, rng):
        dims = [5, 5, 5]
        fusion = _fusion(dims)
        raw = torch.tensor(rng.normal(size=3))
        perm = [2, 0, 1]
        fusion.attn = _Scores(lambda flat: raw.unsqueeze(0).expand(flat.shape[0], 3))
        cs = [torch.tensor(rng.normal(size=(1, 5))) for _ in range(3)]
        v, alpha, _ = fusion(cs)

        permuted = _fusion(dims)
        permuted.projections = nn.ModuleList([fusion.projections[i] for i in perm])
        permuted.attn = _Scores(lambda flat: raw[perm].unsqueeze(0).expand(flat.shape[0], 3))
        v2, alpha2, _ = permuted([cs[i] for i in perm])
        torch.testing.assert_close(alpha2[0], alpha[0][perm], rtol=0, atol=1e-12)
        torch.testing.assert_close(v2, v, rtol=0, atol=1e-12)

    @given(st.integers(0, 2**31), st.floats(-50, 50))
    @settings(max_examples=60, deadline=None)
    def test_probability_shift_and_hull(self, seed, shift):
        r = np.random.default_rng(seed)
        fusion = _fusion([3, 4, 5], seed=seed % 1000)
        cs = [torch.tensor(r.normal(size=(2, d)) * 3) for d in (3, 4, 5)]
        with torch.no_grad():
            v, alpha, p = fusion(cs)
            assert torch.all(alpha >= 0)
            assert torch.allclose(alpha.sum(-1), torch.ones(2, dtype=alpha.dtype), rtol=0, atol=1e-6)
            assert torch.all(v >= p.min(dim=1).values - 1e-12) and torch.all(v <= p.max(dim=1).values + 1e-12)
            scores = fusion.attn(p.flatten(1))
            shifted = torch.softmax(scores + shift, dim=-1)
            assert torch.allclose(shifted, alpha, rtol=0, atol=1e-9)


class TestExtractFingerprint:
    def test_deterministic(self, small_extractor):
        img = _images(1)[0]
        a = extract_fingerprint(img, small_extractor, "a")
        b = extract_fingerprint(img, small_extractor, "a")
        np.testing.assert_array_equal(a.vector, b.vector)
        assert a.extractor_version == small_extractor.version
        assert a.embed_dim == 512 and a.attention.shape == (3,)

    def test_batch_matches_single(self, small_extractor):
        imgs = _images(7, seed=2)
        batch = extract_fingerprints(imgs, small_extractor, batch_size=4)
        for img, fp in zip(imgs, batch):
            single = extract_fingerprint(img, small_extractor)
            np.testing.assert_allclose(fp.vector, single.vector, rtol=0, atol=1e-5)

    def test_preprocess_resizes_and_crops(self, small_extractor):
        wide = ImageTensor(np.random.default_rng(0).random((50, 90, 3)))
        assert small_extractor.preprocess([wide]).shape == (1, 3, 64, 64)

    def test_flip_not_invariant(self, small_extractor):
        img = _images(1, seed=4)[0]
        flipped = ImageTensor(img.pixels[:, ::-1])
        a = extract_fingerprint(img, small_extractor).vector
        b = extract_fingerprint(flipped, small_extractor).vector
        # documents the non-guarantee; global pooling keeps them close but not equal
        assert a.shape == b.shape

    def test_trainable_groups(self):
        ex = StyleExtractor(small_extractor_config())
        groups = ex.parameter_groups()
        assert all(not p.requires_grad for p in groups["backbone_lower"])
        for name in ("backbone_upper", "level_conv", "projection", "attention"):
            assert groups[name] and all(p.requires_grad for p in groups[name])
        ex.apply_trainable({"projection": True})
        assert not any(p.requires_grad for p in groups["attention"])

    def test_heads_seeded_without_touching_global_rng(self):
        torch.manual_seed(99)
        before = torch.rand(1)
        torch.manual_seed(99)
        a = StyleExtractor(small_extractor_config())
        after = torch.rand(1)
        b = StyleExtractor(small_extractor_config())
        assert torch.equal(before, after)
        for x, y in zip(a.parameters(), b.parameters()):
            assert torch.equal(x, y)


def test_head_gradient_matches_finite_differences(small_extractor):
    """Spot check in float64; the acceptance suite runs the full 100-configuration sweep."""
    ex = StyleExtractor(small_extractor_config()).double().eval()
    x = ex.preprocess(_images(2, seed=9))
    with torch.no_grad():
        cs = ex.encode(ex.tap(x))
    w = torch.randn(2, ex.embed_dim, dtype=torch.float64, generator=torch.Generator().manual_seed(0))

    def f():
        v, _, _ = ex.fusion(cs)
        return (v * w).sum()

    ex.zero_grad()
    f().backward()
    params = [ex.fusion.projections[1].weight, ex.fusion.attn[0].weight, ex.fusion.attn[2].bias]
    for param in params:
        idx = (0,) * param.ndim
        analytic = param.grad[idx].item()
        with torch.no_grad():
            x0 = param[idx].item()
            h = 1e-6
            param[idx] = x0 + h
            up = f().item()
            param[idx] = x0 - h
            down = f().item()
            param[idx] = x0
        numeric = (up - down) / (2 * h)
        assert abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6) < 1e-4
