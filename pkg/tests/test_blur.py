import numpy as np
import pytest

from lfdeblur import synth
from lfdeblur.blur import (
    apply_blur,
    assemble_blur_matrix,
    bilinear_sample,
    compute_warp_jacobians,
    transport_depth,
    view_pose,
    warp_field,
    warp_jacobian_terms,
)
from lfdeblur.geometry import (
    CameraPath,
    Intrinsics,
    Pose,
    backproject,
    normalized_rays,
    project,
    se3_exp,
    warp_pixel,
)
from lfdeblur.lightfield import DepthMap, LightField

SMALL_TWIST = np.array([0.02, -0.01, 0.015, 0.004, -0.003, 0.006])


def tiny_lf(H=8, W=8, U=3, V=3, baseline=0.05, seed=0):
    rng = np.random.default_rng(seed)
    K = Intrinsics(fx=10.0, fy=10.0, cx=(W - 1) / 2, cy=(H - 1) / 2, width=W, height=H)
    views = rng.random((U, V, H, W))
    rel = np.zeros((U, V, 6))
    cu, cv = (U + 1) // 2 - 1, (V + 1) // 2 - 1
    for u in range(U):
        for v in range(V):
            rel[u, v, :3] = [-(u - cu) * baseline, -(v - cv) * baseline, 0]
    return LightField(views, K, rel)


class TestTransportDepth:
    def test_identity_transport_bitwise(self):
        lf = tiny_lf()
        d = DepthMap(2.0 + 0.3 * np.random.default_rng(1).random((8, 8)))
        path = CameraPath(np.zeros(6), 3)
        out = transport_depth(d, path, lf, 1, 1, 1)
        assert np.array_equal(out.data[out.mask], d.data[out.mask])
        assert out.mask.all()

    def test_constant_plane_translation_invariant(self):
        lf = tiny_lf()
        d = DepthMap(np.full((8, 8), 4.0))
        path = CameraPath(np.array([0.3, 0, 0, 0, 0, 0]), 5)
        out = transport_depth(d, path, lf, 0, 1, 0)
        assert np.all(out.data[out.mask] == 4.0)

    def test_raycast_oracle_two_plane(self):
        # splatted transport must match per-pixel ray casting of the truth
        scene = synth.make_scene("twoplane", "translation", 0, width=64, height=48,
                                 views=3, blur_px=4.0)
        gt_depth = synth.render_depth(scene, Pose.identity())
        rel = scene.rel_twists()
        lf = LightField(np.full((3, 3, 48, 64), 0.5), scene.intrinsics, rel)
        path = CameraPath(scene.eps_gt, 5)
        u, v, m = 2, 1, 0
        out = transport_depth(gt_depth, path, lf, u, v, m)
        oracle = synth.render_depth(scene, view_pose(lf, path, u, v, m))
        both = out.mask & oracle.mask
        # exclude the splat-quantization band around depth discontinuities
        gy, gx = np.gradient(oracle.data)
        flat = (np.abs(gy) + np.abs(gx)) < 1e-6
        sel = both & flat
        sel[:1] = sel[-1:] = False
        sel[:, :1] = sel[:, -1:] = False
        assert sel.mean() > 0.8
        assert np.max(np.abs(out.data[sel] - oracle.data[sel])) < 1e-6


class TestApplyBlur:
    def test_identity_path_center_equals_latent(self):
        lf = tiny_lf()
        d = DepthMap(np.full((8, 8), 2.0))
        latent = np.random.default_rng(2).random((8, 8))
        out, counts = apply_blur(latent, d, CameraPath(np.zeros(6), 3), lf)
        assert np.max(np.abs(out[1, 1] - latent)) < 1e-6
        assert counts[1, 1].min() == 3

    def test_identity_path_noncenter_is_static_warp(self):
        lf = tiny_lf()
        d = DepthMap(np.full((8, 8), 2.0))
        latent = np.random.default_rng(3).random((8, 8))
        out, counts = apply_blur(latent, d, CameraPath(np.zeros(6), 3), lf)
        # static disparity warp of the latent image
        pos, valid, _ = warp_field(d, CameraPath(np.zeros(6), 3), lf, 0, 1, 1)
        vals, _ = bilinear_sample(latent, pos)
        assert np.max(np.abs(out[0, 1][valid] - vals[valid])) < 1e-12

    def test_brute_force_oracle(self):
        # scalar reimplementation over all (x, u, m), no matrix structure
        lf = tiny_lf()
        d = DepthMap(2.0 + 0.2 * np.random.default_rng(4).random((8, 8)))
        latent = np.random.default_rng(5).random((8, 8))
        path = CameraPath(SMALL_TWIST, 3)
        out, counts = apply_blur(latent, d, path, lf)
        K = lf.intrinsics
        for u in range(3):
            for v in range(3):
                d_views = [transport_depth(d, path, lf, u, v, m) for m in range(path.M)]
                for y in range(8):
                    for x in range(8):
                        acc = 0.0
                        cnt = 0
                        for m in range(path.M):
                            if not d_views[m].mask[y, x]:
                                continue
                            P = view_pose(lf, path, u, v, m)
                            try:
                                pos, _ = warp_pixel(K, [x, y], d_views[m].data[y, x],
                                                    P, Pose.identity())
                            except Exception:
                                continue
                            if not (0 <= pos[0] <= 7 and 0 <= pos[1] <= 7):
                                continue
                            x0 = min(int(np.floor(pos[0])), 6)
                            y0 = min(int(np.floor(pos[1])), 6)
                            fx = pos[0] - x0
                            fy = pos[1] - y0
                            val = ((1 - fx) * (1 - fy) * latent[y0, x0]
                                   + fx * (1 - fy) * latent[y0, x0 + 1]
                                   + (1 - fx) * fy * latent[y0 + 1, x0]
                                   + fx * fy * latent[y0 + 1, x0 + 1])
                            acc += val
                            cnt += 1
                        assert cnt == counts[u, v, y, x]
                        if cnt:
                            assert abs(acc / cnt - out[u, v, y, x]) < 1e-10

    def test_linearity(self):
        lf = tiny_lf()
        d = DepthMap(np.full((8, 8), 2.0))
        path = CameraPath(SMALL_TWIST, 3)
        rng = np.random.default_rng(6)
        a, b = rng.random((8, 8)), rng.random((8, 8))
        oa, _ = apply_blur(a, d, path, lf)
        ob, _ = apply_blur(b, d, path, lf)
        oab, _ = apply_blur(0.3 * a + 0.6 * b, d, path, lf)
        assert np.max(np.abs(oab - 0.3 * oa - 0.6 * ob)) < 1e-10

    def test_brightness_conservation(self):
        lf = tiny_lf()
        d = DepthMap(np.full((8, 8), 2.0))
        path = CameraPath(SMALL_TWIST, 5)
        out, counts = apply_blur(np.full((8, 8), 0.6), d, path, lf)
        assert np.max(np.abs(out[counts > 0] - 0.6)) < 1e-8

    def test_shape_mismatch_rejected(self):
        lf = tiny_lf()
        d = DepthMap(np.full((8, 8), 2.0))
        with pytest.raises(ValueError):
            apply_blur(np.zeros((4, 4)), d, CameraPath(np.zeros(6), 3), lf)


class TestBlurMatrix:
    def test_identity_center_matrix(self):
        lf = tiny_lf()
        d = DepthMap(np.full((8, 8), 2.0))
        bs = assemble_blur_matrix(d, CameraPath(np.zeros(6), 3), lf)
        eye = bs.matrix(1, 1).toarray()
        assert np.max(np.abs(eye - np.eye(64))) < 1e-12

    def test_row_sums(self):
        lf = tiny_lf()
        d = DepthMap(2.0 + 0.2 * np.random.default_rng(7).random((8, 8)))
        bs = assemble_blur_matrix(d, CameraPath(SMALL_TWIST, 3), lf)
        for u in range(3):
            for v in range(3):
                sums = np.asarray(bs.matrix(u, v).sum(axis=1)).ravel()
                valid = bs.valid[u, v].ravel()
                assert np.max(np.abs(sums[valid] - 1.0)) <= 1e-6

    def test_matrix_matches_operator(self):
        lf = tiny_lf()
        d = DepthMap(2.0 + 0.2 * np.random.default_rng(8).random((8, 8)))
        path = CameraPath(SMALL_TWIST, 3)
        bs = assemble_blur_matrix(d, path, lf)
        rng = np.random.default_rng(9)
        for _ in range(10):
            x = rng.random((8, 8))
            out, _ = apply_blur(x, d, path, lf)
            for u in range(3):
                for v in range(3):
                    mv = (bs.matrix(u, v) @ x.ravel()).reshape(8, 8)
                    assert np.max(np.abs(mv - out[u, v])[bs.valid[u, v]]) < 1e-10

    def test_jsonl_dump(self, tmp_path):
        lf = tiny_lf(U=1, V=1)
        d = DepthMap(np.full((8, 8), 2.0))
        bs = assemble_blur_matrix(d, CameraPath(np.zeros(6), 3), lf)
        bs.dump_jsonl(tmp_path / "bs.jsonl")
        lines = (tmp_path / "bs.jsonl").read_text().strip().splitlines()
        assert len(lines) == 1
        import json

        rec = json.loads(lines[0])
        assert set(rec) == {"u", "v", "indptr", "indices", "data"}


class TestWarpJacobians:
    def setup_method(self):
        self.lf = tiny_lf(H=12, W=16, baseline=0.05, seed=10)
        self.d = DepthMap(2.0 + 0.5 * np.random.default_rng(11).random((12, 16)))
        self.path = CameraPath(SMALL_TWIST, 5)

    def test_identity_center_depth_derivative_zero(self):
        lf = tiny_lf(H=12, W=16)
        d = DepthMap(2.0 + 0.5 * np.random.default_rng(12).random((12, 16)))
        path = CameraPath(np.zeros(6), 3)
        _, dd, _, ok = warp_jacobian_terms(d, path, lf, 1, 1, 1)
        assert np.max(np.abs(dd[ok])) < 1e-12

    def test_depth_jacobian_finite_differences(self):
        u, v, m = 2, 0, 1
        flow, dd, de, ok = warp_jacobian_terms(self.d, self.path, self.lf, u, v, m)
        d_view = transport_depth(self.d, self.path, self.lf, u, v, m)
        K = self.lf.intrinsics
        P = view_pose(self.lf, self.path, u, v, m)
        Pinv = P.inverse()
        rays = normalized_rays(K)

        def flow_at(dv):
            X = rays * dv[..., None]
            Xr = X @ Pinv.R.T + Pinv.t
            return np.stack([K.fx * Xr[..., 0] / Xr[..., 2] + K.cx,
                             K.fy * Xr[..., 1] / Xr[..., 2] + K.cy], -1)

        h = 1e-4 * d_view.data
        fd = (flow_at(d_view.data + h) - flow_at(d_view.data - h)) / (2 * h[..., None])
        rel = np.abs(fd - dd)[ok] / np.maximum(np.abs(fd[ok]), 1e-6)
        assert rel.max() < 1e-4

    def test_eps_jacobian_finite_differences(self):
        u, v, m = 0, 2, 3
        flow, dd, de, ok = warp_jacobian_terms(self.d, self.path, self.lf, u, v, m)
        d_view = transport_depth(self.d, self.path, self.lf, u, v, m)
        K = self.lf.intrinsics
        rays = normalized_rays(K)

        def flow_eps(delta):
            P = view_pose(self.lf, self.path, u, v, m, pose_delta=delta)
            Pinv = P.inverse()
            X = rays * d_view.data[..., None]
            Xr = X @ Pinv.R.T + Pinv.t
            return np.stack([K.fx * Xr[..., 0] / Xr[..., 2] + K.cx,
                             K.fy * Xr[..., 1] / Xr[..., 2] + K.cy], -1)

        h = 1e-5
        for j in range(6):
            dlt = np.zeros(6)
            dlt[j] = h
            fd = (flow_eps(dlt) - flow_eps(-dlt)) / (2 * h)
            rel = np.abs(fd - de[..., j])[ok] / np.maximum(np.abs(fd[ok]), 1e-6)
            assert rel.max() < 1e-4

    def test_materialized_jacobians_finite(self):
        jac = compute_warp_jacobians(self.d, self.path, self.lf)
        assert jac.flow.shape == (3, 3, 5, 12, 16, 2)
        assert np.all(np.isfinite(jac.flow[jac.valid]))
        assert np.all(np.isfinite(jac.d_eps[jac.valid]))

    def test_first_order_fidelity(self):
        # halving the perturbation shrinks the mean linearization error ~4x;
        # the exact chain needs the latent interpolant's gradient at each
        # warped sample, not the blurred-image gradient the solver uses
        lf = tiny_lf(H=12, W=16, seed=13)
        d = DepthMap(np.full((12, 16), 2.0))
        path = CameraPath(SMALL_TWIST, 5)
        xs = np.arange(16)[None, :] * np.ones((12, 1))
        ys = np.arange(12)[:, None] * np.ones((1, 16))
        latent = 0.5 + 0.3 * np.sin(0.5 * xs + 0.3 * ys) * np.cos(0.4 * ys)
        base, counts = apply_blur(latent, d, path, lf)
        full = counts == path.M

        def interp_gradient(pos):
            x0 = np.minimum(np.floor(np.clip(pos[..., 0], 0, 15)), 14).astype(int)
            y0 = np.minimum(np.floor(np.clip(pos[..., 1], 0, 11)), 10).astype(int)
            fx = pos[..., 0] - x0
            fy = pos[..., 1] - y0
            i00 = latent[y0, x0]
            i10 = latent[y0, x0 + 1]
            i01 = latent[y0 + 1, x0]
            i11 = latent[y0 + 1, x0 + 1]
            gx = (i10 - i00) * (1 - fy) + (i11 - i01) * fy
            gy = (i01 - i00) * (1 - fx) + (i11 - i10) * fx
            return gx, gy

        def lin_error(h):
            delta = h * np.array([0.5, -0.3, 0.4, 0.2, -0.6, 0.3])
            pert, counts_p = apply_blur(latent, d, path, lf, pose_delta=delta)
            total = 0.0
            count = 0
            for u in range(3):
                for v in range(3):
                    dpsi = np.zeros((12, 16))
                    for m in range(path.M):
                        flow, _, de, _ = warp_jacobian_terms(d, path, lf, u, v, m)
                        gx, gy = interp_gradient(flow)
                        dpsi += gx * (de[..., 0, :] @ delta) + gy * (de[..., 1, :] @ delta)
                    pred = base[u, v] + dpsi / path.M
                    sel = full[u, v] & (counts_p[u, v] == path.M)
                    total += np.abs(pred - pert[u, v])[sel].sum()
                    count += sel.sum()
            return total / count

        e1 = lin_error(2e-3)
        e2 = lin_error(1e-3)
        assert e1 / e2 >= 3.5
