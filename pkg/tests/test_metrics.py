import numpy as np
import pytest

from lfdeblur.geometry import Intrinsics
from lfdeblur.lightfield import DepthMap
from lfdeblur.metrics import EvalReport, epe, kernel_endpoints, l1_rel, psnr, psnr_ssim_best, ssim


class TestPsnr:
    def test_identical_capped(self):
        img = np.random.default_rng(0).random((16, 16))
        assert psnr(img, img) == 99.0

    def test_uniform_offset_closed_form(self):
        rng = np.random.default_rng(1)
        a = rng.uniform(0.2, 0.8, (20, 20))
        b = a + 0.1
        assert abs(psnr(a, b) - 20.0) < 1e-9

    def test_channel_average(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(0.3, 0.7, (10, 10, 3))
        b = a.copy()
        b[..., 0] += 0.1
        expected = (20.0 + 99.0 + 99.0) / 3
        assert abs(psnr(a, b) - expected) < 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4)), np.zeros((5, 4)))


class TestSsim:
    def test_identical(self):
        img = np.random.default_rng(3).random((32, 32))
        assert abs(ssim(img, img) - 1.0) < 1e-12

    def test_constant_equal_images(self):
        a = np.full((16, 16), 0.5)
        assert abs(ssim(a, a.copy()) - 1.0) < 1e-12

    def test_degrades_with_noise(self):
        rng = np.random.default_rng(4)
        a = rng.random((32, 32))
        b = np.clip(a + 0.2 * rng.standard_normal((32, 32)), 0, 1)
        assert ssim(a, b) < 0.9


class TestBestFrame:
    def test_max_dominance(self):
        rng = np.random.default_rng(5)
        est = rng.random((12, 12))
        frames = [rng.random((12, 12)), est.copy(), rng.random((12, 12))]
        best_psnr, best_ssim, trace = psnr_ssim_best(est, frames)
        assert best_psnr == 99.0
        assert abs(best_ssim - 1.0) < 1e-12
        assert len(trace) == 3

    def test_independent_maximization(self):
        # psnr and ssim maxima may come from different frames
        est = np.zeros((8, 8))
        frames = [np.full((8, 8), 0.1), np.full((8, 8), 0.2)]
        best_psnr, best_ssim, _ = psnr_ssim_best(est, frames)
        assert abs(best_psnr - 20.0) < 1e-9

    def test_empty_frames(self):
        with pytest.raises(ValueError):
            psnr_ssim_best(np.zeros((4, 4)), [])


class TestL1Rel:
    def test_identity(self):
        d = DepthMap(np.full((6, 6), 3.0))
        assert l1_rel(d, d) == 0.0

    def test_forced_arithmetic(self):
        est = DepthMap(np.full((4, 4), 2.0))
        gt = DepthMap(np.full((4, 4), 1.0))
        assert abs(l1_rel(est, gt) - 1.0) < 1e-12

    def test_mask_intersection(self):
        est = DepthMap(np.array([[1.0, 5.0]]), np.array([[True, False]]))
        gt = DepthMap(np.array([[2.0, 2.0]]))
        assert abs(l1_rel(est, gt) - 0.5) < 1e-12

    def test_empty_intersection(self):
        est = DepthMap(np.array([[1.0]]), np.array([[False]]))
        gt = DepthMap(np.array([[1.0]]))
        with pytest.raises(ValueError):
            l1_rel(est, gt)


class TestEpe:
    K = Intrinsics(fx=100.0, fy=100.0, cx=31.5, cy=23.5, width=64, height=48)

    def test_identical_twists(self):
        d = DepthMap(np.full((48, 64), 2.0))
        eps = np.array([0.05, -0.02, 0.01, 0.004, 0.006, -0.003])
        assert epe(eps, d, eps, self.K) == 0.0

    def test_translation_closed_form(self):
        # endpoints under pure x-translation shift by -fx*v/d, so twists
        # differing by dv give EPE = fx*|dv|/d
        d_val = 2.5
        d = DepthMap(np.full((48, 64), d_val))
        rng = np.random.default_rng(6)
        for _ in range(10):
            v1 = rng.uniform(-0.1, 0.1)
            v2 = rng.uniform(-0.1, 0.1)
            e1 = np.array([v1, 0, 0, 0, 0, 0])
            e2 = np.array([v2, 0, 0, 0, 0, 0])
            expected = self.K.fx * abs(v1 - v2) / d_val
            assert abs(epe(e1, d, e2, self.K) - expected) < 1e-9

    def test_endpoint_direction(self):
        # positive x camera velocity at exposure start moves endpoints -x
        d = DepthMap(np.full((48, 64), 2.0))
        pts, ok = kernel_endpoints(np.array([0.1, 0, 0, 0, 0, 0]), d, self.K)
        xs = np.arange(64)[None, :] * np.ones((48, 1))
        assert np.all(pts[ok][:, 0] < xs[ok])


class TestEvalReport:
    def test_round_trip_keys(self):
        rep = EvalReport(psnr_best=30.0, ssim_best=0.9, l1_rel=0.01, epe=0.5,
                         frames=[{"frame": 0, "psnr": 30.0, "ssim": 0.9}])
        payload = rep.to_dict()
        assert set(payload) == {"psnr_best", "ssim_best", "l1_rel", "epe", "frames"}

    def test_ssim_bound(self):
        with pytest.raises(ValueError):
            EvalReport(psnr_best=30.0, ssim_best=1.5, l1_rel=0.0, epe=0.0, frames=[])

    def test_finite_required(self):
        with pytest.raises(ValueError):
            EvalReport(psnr_best=np.inf, ssim_best=1.0, l1_rel=0.0, epe=0.0, frames=[])
