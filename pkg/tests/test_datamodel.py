import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stylefp.datamodel import (
    DatasetManifest,
    ImageTensor,
    ManifestEntry,
    StyleFingerprint,
    Verdict,
    VerifierParams,
    dumps_manifest,
    load_manifest,
    loads_manifest,
    save_manifest,
    validate_manifest,
)
from stylefp.errors import ManifestParseError, SpecError


def _entry(id, label="positive", artist="ember", split="train", **kw):
    return ManifestEntry(id=id, path=f"images/{id}.png", label=label, artist_id=artist, split=split, **kw)


def _basic():
    return DatasetManifest(
        entries=(_entry("p0"), _entry("n0", label="negative", artist="tide")),
        target_artist_id="ember",
    )


class TestImageTensor:
    def test_shape_and_range(self):
        img = ImageTensor(np.full((4, 5, 3), 0.5))
        assert (img.height, img.width, img.channels) == (4, 5, 3)
        assert img.pixels.dtype == np.float32
        assert not img.pixels.flags.writeable

    @pytest.mark.parametrize(
        "bad",
        [np.zeros((4, 4)), np.zeros((4, 4, 4)), np.zeros((0, 4, 3)), np.full((2, 2, 3), 1.5), np.full((2, 2, 3), np.nan)],
    )
    def test_rejects_invalid(self, bad):
        with pytest.raises(SpecError):
            ImageTensor(bad)

    def test_uint8_roundtrip(self, rng):
        raw = rng.integers(0, 256, size=(6, 7, 3), dtype=np.uint8)
        np.testing.assert_array_equal(ImageTensor.from_uint8(raw).to_uint8(), raw)

    def test_content_hash_tracks_pixels(self):
        a = ImageTensor(np.zeros((2, 2, 3)))
        b = ImageTensor(np.zeros((2, 2, 3)))
        c = ImageTensor(np.full((2, 2, 3), 0.1))
        assert a == b and a.content_hash() == b.content_hash()
        assert a.content_hash() != c.content_hash()


class TestManifest:
    def test_valid_manifest_has_no_violations(self):
        assert validate_manifest(_basic()) == []

    def test_negative_from_target_artist(self):
        m = _basic().with_entries(list(_basic().entries) + [_entry("n1", label="negative", artist="ember")])
        violations = validate_manifest(m)
        assert [(v.rule, v.entry_id) for v in violations] == [("negative_from_target_artist", "n1")]

    def test_split_lineage(self):
        child = _entry("p0.aug0", split="val", origin="self_reconstructed", parent_id="p0")
        m = _basic().with_entries(list(_basic().entries) + [child])
        violations = validate_manifest(m)
        assert [(v.rule, v.entry_id) for v in violations] == [("split_lineage", "p0.aug0")]

    def test_other_rules(self):
        entries = [
            _entry("p0"),
            _entry("p0"),
            _entry("x", origin="self_reconstructed", parent_id="ghost"),
            _entry("y", label="negative", artist="tide", origin="traditional_aug", parent_id="p0"),
            _entry("n0", label="negative", artist="tide", split="val"),
        ]
        rules = {v.rule for v in validate_manifest(DatasetManifest(tuple(entries), "ember"))}
        assert {"duplicate_id", "missing_parent", "label_mismatch", "artist_mismatch"} <= rules

    def test_violation_names_entry_and_rule(self):
        m = _basic().with_entries([_entry("p0")])
        (v,) = validate_manifest(m)
        assert v.rule == "train_missing_negative"
        assert "train_missing_negative" in str(v)

    def test_roundtrip_file(self, tmp_path):
        m = _basic()
        path = tmp_path / "m.json"
        save_manifest(m, path)
        assert load_manifest(path) == m

    def test_unknown_key_rejected(self):
        data = json.loads(dumps_manifest(_basic()))
        data["entries"][0]["lable"] = "positive"
        with pytest.raises(ManifestParseError):
            loads_manifest(json.dumps(data))

    def test_parse_error_has_position(self):
        with pytest.raises(ManifestParseError) as info:
            loads_manifest('{\n  "version": 1,\n  "entries": [,]\n}')
        assert info.value.line == 3
        assert info.value.column is not None

    def test_missing_file(self, tmp_path):
        with pytest.raises(ManifestParseError):
            load_manifest(tmp_path / "nope.json")


_ids = st.text(alphabet="abcdefghij0123456789_", min_size=1, max_size=8)


@st.composite
def manifests(draw):
    n = draw(st.integers(1, 12))
    ids = draw(st.lists(_ids, min_size=n, max_size=n))
    entries = []
    for i, id_ in enumerate(ids):
        label = draw(st.sampled_from(["positive", "negative"]))
        origin = draw(st.sampled_from(["original", "self_reconstructed", "traditional_aug"]))
        parent = draw(st.sampled_from(ids + [None]))
        entries.append(
            ManifestEntry(
                id=id_,
                path=f"p/{i}.png",
                label=label,
                artist_id=draw(st.sampled_from(["ember", "tide"])),
                split=draw(st.sampled_from(["train", "val", "test"])),
                origin=origin,
                parent_id=parent,
                seed=draw(st.none() | st.integers(0, 2**31)),
            )
        )
    return DatasetManifest(tuple(entries), "ember")


class TestManifestProperties:
    @given(manifests())
    @settings(max_examples=150, deadline=None)
    def test_roundtrip(self, m):
        assert loads_manifest(dumps_manifest(m)) == m

    @given(manifests())
    @settings(max_examples=150, deadline=None)
    def test_validate_is_total(self, m):
        violations = validate_manifest(m)
        assert all(v.rule and v.message for v in violations)


class TestFingerprint:
    def test_attention_must_sum_to_one(self):
        with pytest.raises(SpecError):
            StyleFingerprint(vector=np.zeros(4), attention=[0.5, 0.6], extractor_version="x")

    def test_record_roundtrip(self, rng):
        fp = StyleFingerprint(vector=rng.normal(size=8), attention=[0.2, 0.3, 0.5], extractor_version="v", image_id="a")
        back = StyleFingerprint.from_dict(json.loads(json.dumps(fp.to_dict())))
        np.testing.assert_array_equal(back.vector, fp.vector)
        assert back.embed_dim == 8 and back.image_id == "a"

    def test_record_embed_dim_mismatch(self, rng):
        d = StyleFingerprint(vector=rng.normal(size=8), attention=[1.0], extractor_version="v").to_dict()
        d["embed_dim"] = 9
        with pytest.raises(SpecError):
            StyleFingerprint.from_dict(d)


class TestVerifierParams:
    def test_center_dim_must_match(self):
        with pytest.raises(SpecError):
            VerifierParams(projection=np.zeros((3, 4)), center=np.zeros(2))

    @pytest.mark.parametrize("kw", [{"radius": -1.0}, {"beta": 0.0}, {"epsilon": 0.0}, {"margin": math.inf}])
    def test_rejects_bad_hyperparameters(self, kw):
        with pytest.raises(SpecError):
            VerifierParams(projection=np.zeros((2, 2)), center=np.zeros(2), **kw)

    def test_with_radius(self):
        p = VerifierParams(projection=np.eye(2), center=np.zeros(2))
        assert not p.calibrated and p.with_radius(1.5).radius == 1.5


class TestVerdict:
    def test_boundary_is_inside(self):
        v = Verdict("a", 2.0, 2.0)
        assert v.inside and v.boundary_margin == 0.0

    @given(st.floats(0, 1e6, allow_nan=False), st.floats(0, 1e6, allow_nan=False))
    def test_inside_iff_distance_le_radius(self, d, r):
        v = Verdict("a", d, r)
        assert v.inside == (d <= r)
        assert v.boundary_margin == r - d

    def test_line_format(self):
        assert Verdict("img.png", 0.5, 1.0).line() == "img.png\t0.500000\t1.000000\tINSIDE\t+0.500000"
        assert "OUTSIDE" in Verdict("img.png", 1.5, 1.0).line()
