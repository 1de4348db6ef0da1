import json

import numpy as np
import pytest
from PIL import Image as PILImage

from lfdeblur.errors import (
    DimensionMismatchError,
    LightFieldError,
    ManifestError,
    MissingViewError,
    PfmFormatError,
)
from lfdeblur.geometry import Intrinsics
from lfdeblur.lightfield import (
    DepthMap,
    LightField,
    load_depth,
    load_image,
    load_lightfield,
    load_pfm,
    save_depth,
    save_image,
    save_lightfield,
    save_pfm,
)


def grid_lightfield(U=3, V=3, H=12, W=16, channels=1, baseline=0.05, seed=0):
    rng = np.random.default_rng(seed)
    shape = (U, V, H, W) if channels == 1 else (U, V, H, W, 3)
    views = rng.random(shape)
    K = Intrinsics(fx=20.0, fy=20.0, cx=(W - 1) / 2, cy=(H - 1) / 2, width=W, height=H)
    rel = np.zeros((U, V, 6))
    cu, cv = (U + 1) // 2 - 1, (V + 1) // 2 - 1
    for u in range(U):
        for v in range(V):
            rel[u, v, :3] = [-(u - cu) * baseline, -(v - cv) * baseline, 0]
    return LightField(views, K, rel)


class TestContainer:
    def test_center_index_7x7(self):
        lf = grid_lightfield(U=7, V=7, H=6, W=8)
        assert lf.angular_dims == (7, 7)
        assert lf.center_index == (3, 3)

    def test_degenerate_single_view(self):
        lf = grid_lightfield(U=1, V=1)
        assert lf.center_index == (0, 0)
        assert np.allclose(lf.rel_pose(0, 0).matrix(), np.eye(4))

    def test_center_pose_must_be_identity(self):
        rng = np.random.default_rng(0)
        views = rng.random((3, 3, 4, 4))
        K = Intrinsics(fx=5, fy=5, cx=1.5, cy=1.5, width=4, height=4)
        rel = np.zeros((3, 3, 6))
        rel[1, 1, 0] = 0.1  # center view must stay at the identity
        with pytest.raises(LightFieldError):
            LightField(views, K, rel)

    def test_range_validation(self):
        views = np.full((1, 1, 4, 4), 1.5)
        K = Intrinsics(fx=5, fy=5, cx=1.5, cy=1.5, width=4, height=4)
        with pytest.raises(LightFieldError):
            LightField(views, K, np.zeros((1, 1, 6)))

    def test_audit_passes(self):
        grid_lightfield().audit()


class TestManifestIO:
    def test_roundtrip(self, tmp_path):
        lf = grid_lightfield(U=3, V=3, H=10, W=14)
        save_lightfield(lf, tmp_path)
        loaded = load_lightfield(tmp_path / "manifest.json")
        assert loaded.angular_dims == (3, 3)
        # 16-bit PNG quantization
        assert np.max(np.abs(loaded.views - lf.views)) <= 0.5 / 65535 + 1e-12
        assert np.allclose(loaded.rel_twists, lf.rel_twists)

    def test_manifest_schema_keys(self, tmp_path):
        lf = grid_lightfield()
        save_lightfield(lf, tmp_path)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert set(manifest) == {"angular", "intrinsics", "views"}
        assert set(manifest["intrinsics"]) == {"fx", "fy", "cx", "cy", "width", "height"}
        assert set(manifest["views"][0]) == {"u", "v", "file", "rel_twist"}

    def test_missing_view_file(self, tmp_path):
        lf = grid_lightfield()
        save_lightfield(lf, tmp_path)
        (tmp_path / "view_0_0.png").unlink()
        with pytest.raises(MissingViewError):
            load_lightfield(tmp_path)

    def test_dimension_mismatch(self, tmp_path):
        lf = grid_lightfield(H=10, W=14)
        save_lightfield(lf, tmp_path)
        save_image(np.zeros((4, 4)), tmp_path / "view_0_0.png")
        with pytest.raises(DimensionMismatchError):
            load_lightfield(tmp_path)

    def test_malformed_manifest(self, tmp_path):
        (tmp_path / "manifest.json").write_text("{not json")
        with pytest.raises(ManifestError):
            load_lightfield(tmp_path)

    def test_manifest_missing_key(self, tmp_path):
        (tmp_path / "manifest.json").write_text(json.dumps({"angular": [1, 1]}))
        with pytest.raises(ManifestError):
            load_lightfield(tmp_path)

    def test_integer_normalization(self, tmp_path):
        # 8-bit and 16-bit PNGs divide by their type maximum
        PILImage.fromarray(np.full((4, 4), 51, dtype=np.uint8), mode="L").save(tmp_path / "a.png")
        img8 = load_image(tmp_path / "a.png")
        assert np.allclose(img8, 51 / 255)
        PILImage.fromarray(np.full((4, 4), 13107, dtype=np.uint16), mode="I;16").save(
            tmp_path / "b.png"
        )
        img16 = load_image(tmp_path / "b.png")
        assert np.allclose(img16, 13107 / 65535)


class TestPfm:
    def test_depth_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(1)
        data = rng.uniform(0.5, 5.0, (9, 7)).astype(np.float32).astype(float)
        mask = rng.random((9, 7)) > 0.2
        d = DepthMap(data, mask)
        save_depth(d, tmp_path / "d.pfm")
        loaded = load_depth(tmp_path / "d.pfm")
        assert np.array_equal(loaded.mask, mask)
        assert np.array_equal(loaded.data[mask], data[mask])

    def test_constant_payload_little_endian(self, tmp_path):
        d = DepthMap(np.full((3, 5), 2.0))
        save_depth(d, tmp_path / "c.pfm")
        raw = (tmp_path / "c.pfm").read_bytes()
        header, payload = raw.split(b"-1.0\n", 1)
        assert header.startswith(b"Pf")
        vals = np.frombuffer(payload, dtype="<f4")
        assert np.all(vals == np.float32(2.0))

    def test_bad_magic(self, tmp_path):
        (tmp_path / "bad.pfm").write_bytes(b"P5\n3 3\n-1.0\n" + b"\x00" * 36)
        with pytest.raises(PfmFormatError):
            load_pfm(tmp_path / "bad.pfm")

    def test_truncated_payload(self, tmp_path):
        (tmp_path / "t.pfm").write_bytes(b"Pf\n4 4\n-1.0\n" + b"\x00" * 10)
        with pytest.raises(PfmFormatError):
            load_pfm(tmp_path / "t.pfm")

    def test_color_pfm_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        img = rng.random((5, 6, 3)).astype(np.float32)
        save_pfm(img, tmp_path / "c.pfm")
        out = load_pfm(tmp_path / "c.pfm")
        assert np.array_equal(out, img)


class TestDepthMap:
    def test_invalid_entries_rejected(self):
        with pytest.raises(LightFieldError):
            DepthMap(np.array([[1.0, -2.0]]))

    def test_invalid_masked_entries_allowed(self):
        d = DepthMap(np.array([[1.0, -2.0]]), np.array([[True, False]]))
        assert d.mask.sum() == 1
