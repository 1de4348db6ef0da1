"""Evaluation metrics: best-frame PSNR/SSIM, relative depth error, and
kernel-endpoint error of an estimated camera motion."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
import scipy.ndimage as ndi

from .geometry import Intrinsics, normalized_rays, se3_exp
from .lightfield import DepthMap

PSNR_CAP = 99.0
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio with peak 1.0, per channel then averaged,
    capped at 99 dB."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    vals = []
    for c in range(a.shape[2]):
        mse = float(np.mean((a[..., c] - b[..., c]) ** 2))
        if mse <= 10.0 ** (-PSNR_CAP / 10.0):
            vals.append(PSNR_CAP)
        else:
            vals.append(min(-10.0 * np.log10(mse), PSNR_CAP))
    return float(np.mean(vals))


def _gaussian_window() -> np.ndarray:
    half = SSIM_WINDOW // 2
    x = np.arange(-half, half + 1, dtype=float)
    g = np.exp(-(x**2) / (2.0 * SSIM_SIGMA**2))
    g /= g.sum()
    return g


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity with an 11x11 Gaussian window (sigma 1.5) and
    the standard stabilizing constants, averaged over pixels and channels."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    g = _gaussian_window()

    def smooth(img):
        out = ndi.correlate1d(img, g, axis=0, mode="reflect")
        return ndi.correlate1d(out, g, axis=1, mode="reflect")

    C1 = SSIM_K1**2
    C2 = SSIM_K2**2
    vals = []
    for c in range(a.shape[2]):
        x = a[..., c]
        y = b[..., c]
        mx = smooth(x)
        my = smooth(y)
        sxx = smooth(x * x) - mx * mx
        syy = smooth(y * y) - my * my
        sxy = smooth(x * y) - mx * my
        num = (2 * mx * my + C1) * (2 * sxy + C2)
        den = (mx * mx + my * my + C1) * (sxx + syy + C2)
        vals.append(float(np.mean(num / den)))
    return float(np.mean(vals))


def psnr_ssim_best(estimate: np.ndarray, gt_frames):
    """Maximum PSNR and maximum SSIM over the ground-truth frames along the
    motion path, maximized independently.  Also returns the per-frame trace."""
    if not gt_frames:
        raise ValueError("need at least one ground-truth frame")
    trace = []
    for i, frame in enumerate(gt_frames):
        trace.append({"frame": i, "psnr": psnr(estimate, frame), "ssim": ssim(estimate, frame)})
    best_psnr = max(rec["psnr"] for rec in trace)
    best_ssim = max(rec["ssim"] for rec in trace)
    return best_psnr, best_ssim, trace


def l1_rel(d_est: DepthMap, d_gt: DepthMap) -> float:
    """Mean relative absolute depth error on the intersection of the valid
    masks, normalized by the ground truth."""
    if d_est.shape != d_gt.shape:
        raise ValueError(f"shape mismatch {d_est.shape} vs {d_gt.shape}")
    mask = d_est.mask & d_gt.mask
    if not np.any(mask):
        raise ValueError("no jointly valid pixels")
    return float(np.mean(np.abs(d_est.data[mask] - d_gt.data[mask]) / d_gt.data[mask]))


def kernel_endpoints(eps: np.ndarray, d: DepthMap, K: Intrinsics):
    """Blur-kernel endpoints at the start of the exposure: every center
    pixel warped by the pose ``exp(eps)`` with the given depth.

    Returns ``(endpoints (H, W, 2), valid)``.
    """
    P = se3_exp(np.asarray(eps, dtype=float).reshape(6))
    Pinv = P.inverse()
    rays = normalized_rays(K)
    X = rays * d.data[..., None]
    Xr = X @ Pinv.R.T + Pinv.t
    z = Xr[..., 2]
    ok = d.mask & (z > 0)
    zs = np.where(ok, z, 1.0)
    pts = np.empty((K.height, K.width, 2))
    pts[..., 0] = K.fx * Xr[..., 0] / zs + K.cx
    pts[..., 1] = K.fy * Xr[..., 1] / zs + K.cy
    return pts, ok


def epe(eps_est: np.ndarray, d_gt: DepthMap, eps_gt: np.ndarray, K: Intrinsics) -> float:
    """Mean endpoint error between the blur-kernel endpoints induced by the
    estimated and ground-truth camera motions, using ground-truth depth."""
    pts_est, ok_est = kernel_endpoints(eps_est, d_gt, K)
    pts_gt, ok_gt = kernel_endpoints(eps_gt, d_gt, K)
    mask = ok_est & ok_gt
    if not np.any(mask):
        raise ValueError("no jointly valid pixels for endpoint error")
    diff = pts_est[mask] - pts_gt[mask]
    return float(np.mean(np.sqrt(np.sum(diff**2, axis=-1))))


@dataclass
class EvalReport:
    """Metric bundle produced by the ``eval`` pipeline stage."""

    psnr_best: float
    ssim_best: float
    l1_rel: float
    epe: float
    frames: list

    def __post_init__(self):
        for name in ("psnr_best", "ssim_best", "l1_rel", "epe"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.ssim_best > 1.0 + 1e-12:
            raise ValueError("ssim_best cannot exceed 1")

    def to_dict(self) -> dict:
        return asdict(self)
