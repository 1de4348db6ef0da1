"""Initial depth, local linear blur kernels, and RANSAC camera-motion fit.

Depth starts from static plane-sweep stereo over the sub-aperture views
(the camera is assumed stationary for this stage).  The camera motion is
then fit to per-patch linear blur kernels of the blurred center view: each
kernel endpoint is matched against the warp of its patch center at the
start of the exposure, with depth frozen to the initial depth map, using
RANSAC over 4-sample Gauss-Newton fits.

Kernels can come from the built-in gradient/autocorrelation estimator or be
injected from a JSON file (``[{"x","y","dx","dy","conf"}, ...]``); injected
kernels are trusted as signed endpoints, while estimator kernels only define
a line segment, so their per-patch sign is resolved inside RANSAC and the
global time-reversal gauge by the canonical twist sign.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage as ndi

from .blur import bilinear_sample
from .errors import (
    DegenerateConfigurationError,
    GeometryError,
    InsufficientDataError,
    InsufficientParallaxError,
)
from .geometry import Intrinsics, canonical_twist_sign, normalized_rays, se3_exp, se3_log
from .lightfield import DepthMap, LightField, to_gray


def inverse_depth_candidates(near: float, far: float, count: int = 32) -> np.ndarray:
    """Depth hypotheses uniform in inverse depth between near and far."""
    if not (0 < near < far):
        raise ValueError("need 0 < near < far")
    return np.sort(1.0 / np.linspace(1.0 / near, 1.0 / far, count))


# ---------------------------------------------------------------------------
# Plane-sweep depth
# ---------------------------------------------------------------------------


def init_depth(lf: LightField, depth_candidates, p=None, return_confidence: bool = False):
    """Static multi-view stereo: sweep depth hypotheses, warp every view to
    the center, accumulate L1 photo-consistency, take the per-pixel winner,
    median filter, then refine between candidates with a parabola fit in
    inverse depth."""
    candidates = np.asarray(depth_candidates, dtype=float)
    if candidates.ndim != 1 or candidates.size < 2:
        raise ValueError("need at least two depth candidates")
    if np.any(np.diff(candidates) <= 0) or candidates[0] <= 0:
        raise ValueError("candidates must be positive and ascending")
    U, V = lf.angular_dims
    if U * V < 2:
        raise InsufficientParallaxError("plane sweep needs at least two views")
    K = lf.intrinsics
    H, W = K.height, K.width
    cu, cv = lf.center_index
    center = to_gray(lf.views[cu, cv])
    rays = normalized_rays(K)
    n_cand = candidates.size
    cost = np.zeros((n_cand, H, W))
    for ci, d in enumerate(candidates):
        acc = np.zeros((H, W))
        cnt = np.zeros((H, W))
        X = rays * d
        for u in range(U):
            for v in range(V):
                if (u, v) == (cu, cv):
                    continue
                P = lf.rel_pose(u, v)
                Xv = X @ P.R.T + P.t
                z = Xv[..., 2]
                ok = z > 0
                zs = np.where(ok, z, 1.0)
                pos = np.stack(
                    [K.fx * Xv[..., 0] / zs + K.cx, K.fy * Xv[..., 1] / zs + K.cy], axis=-1
                )
                vals, inside = bilinear_sample(to_gray(lf.views[u, v]), pos)
                ok &= inside
                acc += np.where(ok, np.abs(vals - center), 0.0)
                cnt += ok
        cost[ci] = np.where(cnt > 0, acc / np.maximum(cnt, 1), np.inf)

    winner = np.argmin(cost, axis=0)
    winner = ndi.median_filter(winner, size=5, mode="reflect")

    inv_c = 1.0 / candidates
    yy, xx = np.mgrid[0:H, 0:W]
    c0 = cost[np.clip(winner - 1, 0, n_cand - 1), yy, xx]
    c1 = cost[winner, yy, xx]
    c2 = cost[np.clip(winner + 1, 0, n_cand - 1), yy, xx]
    denom = c0 - 2 * c1 + c2
    interior = (winner > 0) & (winner < n_cand - 1) & (denom > 1e-12)
    shift = np.zeros((H, W))
    shift[interior] = np.clip(0.5 * (c0 - c2)[interior] / denom[interior], -0.5, 0.5)
    step = np.gradient(inv_c)[winner]
    inv_depth = inv_c[winner] + shift * step
    depth = 1.0 / np.clip(inv_depth, 1.0 / (2 * candidates[-1]), 1.0 / (0.5 * candidates[0]))
    result = DepthMap(depth, np.isfinite(c1))
    if return_confidence:
        spread = np.where(np.isfinite(c0 + c2), np.abs(c0 + c2 - 2 * c1), 0.0)
        conf = spread / (spread.max() + 1e-12)
        return result, conf
    return result


def plane_sweep_winners(lf: LightField, depth_candidates) -> np.ndarray:
    """Winner-take-all candidate indices before filtering and refinement
    (regression hook for the exhaustive-search oracle)."""
    candidates = np.asarray(depth_candidates, dtype=float)
    U, V = lf.angular_dims
    K = lf.intrinsics
    cu, cv = lf.center_index
    center = to_gray(lf.views[cu, cv])
    rays = normalized_rays(K)
    cost = np.zeros((candidates.size, K.height, K.width))
    for ci, d in enumerate(candidates):
        acc = np.zeros((K.height, K.width))
        cnt = np.zeros((K.height, K.width))
        X = rays * d
        for u in range(U):
            for v in range(V):
                if (u, v) == (cu, cv):
                    continue
                P = lf.rel_pose(u, v)
                Xv = X @ P.R.T + P.t
                z = Xv[..., 2]
                ok = z > 0
                zs = np.where(ok, z, 1.0)
                pos = np.stack(
                    [K.fx * Xv[..., 0] / zs + K.cx, K.fy * Xv[..., 1] / zs + K.cy], axis=-1
                )
                vals, inside = bilinear_sample(to_gray(lf.views[u, v]), pos)
                ok &= inside
                acc += np.where(ok, np.abs(vals - center), 0.0)
                cnt += ok
        cost[ci] = np.where(cnt > 0, acc / np.maximum(cnt, 1), np.inf)
    return np.argmin(cost, axis=0)


# ---------------------------------------------------------------------------
# Local linear blur kernels
# ---------------------------------------------------------------------------


@dataclass
class LinearKernelField:
    """Per-patch linear kernel endpoints: offsets from the patch center plus
    a confidence in [0, 1].  ``sign_ambiguous`` marks estimator output whose
    per-patch offset sign carries no information."""

    x: np.ndarray
    y: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    conf: np.ndarray
    sign_ambiguous: bool = False

    def __post_init__(self):
        for name in ("x", "y", "dx", "dy", "conf"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        if not np.all(np.isfinite(self.dx)) or not np.all(np.isfinite(self.dy)):
            raise ValueError("kernel offsets must be finite")
        if np.any((self.conf < 0) | (self.conf > 1)):
            raise ValueError("confidence must lie in [0, 1]")

    def __len__(self):
        return self.x.size


def save_kernel_field(field_: LinearKernelField, path):
    records = [
        {"x": float(x), "y": float(y), "dx": float(dx), "dy": float(dy), "conf": float(c)}
        for x, y, dx, dy, c in zip(field_.x, field_.y, field_.dx, field_.dy, field_.conf)
    ]
    with open(path, "w") as f:
        json.dump(records, f)


def load_kernel_field(path) -> LinearKernelField:
    records = json.loads(open(path).read())
    return LinearKernelField(
        [r["x"] for r in records],
        [r["y"] for r in records],
        [r["dx"] for r in records],
        [r["dy"] for r in records],
        [r["conf"] for r in records],
        sign_ambiguous=False,
    )


KERNEL_ANGLES_DEG = np.arange(0, 180, 5)


def estimate_linear_kernels(b_center: np.ndarray, patch: int = 21, stride: int = 8) -> LinearKernelField:
    """Deterministic local linear-kernel estimate on the blurred center view.

    Per patch: the kernel angle minimizes directional gradient energy over a
    5-degree grid, the length comes from the first zero crossing of the
    autocorrelation of the directional derivative along that angle (capped
    at patch/2), and the confidence reflects the gradient-energy anisotropy.
    """
    if patch < 17:
        raise ValueError("patch must be at least 17 pixels")
    gray = to_gray(np.asarray(b_center, dtype=float))
    H, W = gray.shape
    gy, gx = np.gradient(gray)
    half = patch // 2
    centers_x = np.arange(half, W - half, stride)
    centers_y = np.arange(half, H - half, stride)
    angles = np.deg2rad(KERNEL_ANGLES_DEG)
    ca, sa = np.cos(angles), np.sin(angles)
    max_lag = patch // 2

    xs, ys, dxs, dys, confs = [], [], [], [], []
    for cy in centers_y:
        for cx in centers_x:
            px = gx[cy - half : cy + half + 1, cx - half : cx + half + 1]
            py = gy[cy - half : cy + half + 1, cx - half : cx + half + 1]
            jxx = float(np.sum(px * px))
            jyy = float(np.sum(py * py))
            jxy = float(np.sum(px * py))
            if (jxx + jyy) / px.size < 1e-6:
                xs.append(cx); ys.append(cy); dxs.append(0.0); dys.append(0.0); confs.append(0.0)
                continue
            energies = ca**2 * jxx + 2 * ca * sa * jxy + sa**2 * jyy
            k = int(np.argmin(energies))
            e_min, e_max = float(energies[k]), float(energies.max())
            conf = 0.0 if e_max <= 0 else 1.0 - e_min / e_max
            direction = np.array([ca[k], sa[k]])
            dvals = ca[k] * px + sa[k] * py
            # the first zero crossing of the derivative autocorrelation
            # tracks the kernel extent once texture correlation is of the
            # same order as the blur (the operating regime here)
            crossing = _autocorr_length(dvals, direction, max_lag)
            length = min(crossing, patch / 2.0)
            xs.append(cx); ys.append(cy)
            dxs.append(0.5 * length * direction[0])
            dys.append(0.5 * length * direction[1])
            confs.append(conf)
    return LinearKernelField(xs, ys, dxs, dys, confs, sign_ambiguous=True)


def _autocorr_length(dvals: np.ndarray, direction: np.ndarray, max_lag: int) -> float:
    """First zero crossing (linearly interpolated) of the autocorrelation of
    the directional-derivative patch along ``direction``."""
    h, w = dvals.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    base = np.stack([xx, yy], axis=-1)
    r_prev = float(np.mean(dvals * dvals))
    if r_prev <= 0:
        return 0.0
    for lag in range(1, max_lag + 1):
        pos = base + lag * direction
        shifted, inside = bilinear_sample(dvals, pos)
        if not np.any(inside):
            return float(max_lag)
        r = float(np.mean(dvals[inside] * shifted[inside]))
        if r <= 0.0:
            frac = r_prev / (r_prev - r) if r_prev > r else 0.0
            return min(lag - 1 + frac, float(max_lag))
        r_prev = r
    return float(max_lag)


# ---------------------------------------------------------------------------
# RANSAC camera-motion initialization
# ---------------------------------------------------------------------------


@dataclass
class RansacParams:
    trials: int = 500
    tau: float = 1.0
    conf_gate: float = 0.3
    seed: int = 0
    gn_iters: int = 10


def _endpoints_and_jacobian(eps: np.ndarray, pts: np.ndarray, depths: np.ndarray,
                            K: Intrinsics, with_jac: bool = True):
    """Warp of the given pixels at the exposure start under twist ``eps``.

    Returns ``(endpoints (N,2), valid, J (N,2,6))``; the Jacobian is taken
    with respect to a left-multiplied increment of ``exp(eps)``.
    """
    P = se3_exp(eps)
    Pinv = P.inverse()
    rays = np.stack(
        [(pts[:, 0] - K.cx) / K.fx, (pts[:, 1] - K.cy) / K.fy, np.ones(len(pts))], axis=-1
    )
    X = rays * depths[:, None]
    Xr = X @ Pinv.R.T + Pinv.t
    z = Xr[:, 2]
    ok = z > 0
    zs = np.where(ok, z, 1.0)
    end = np.stack([K.fx * Xr[:, 0] / zs + K.cx, K.fy * Xr[:, 1] / zs + K.cy], axis=-1)
    if not with_jac:
        return end, ok, None
    inv_z = 1.0 / zs
    jx = np.stack([K.fx * inv_z, np.zeros_like(zs), -K.fx * Xr[:, 0] * inv_z**2], axis=-1)
    jy = np.stack([np.zeros_like(zs), K.fy * inv_z, -K.fy * Xr[:, 1] * inv_z**2], axis=-1)
    gen = np.zeros((len(pts), 3, 6))
    gen[:, 0, 0] = gen[:, 1, 1] = gen[:, 2, 2] = 1.0
    gen[:, 0, 4] = X[:, 2]
    gen[:, 0, 5] = -X[:, 1]
    gen[:, 1, 3] = -X[:, 2]
    gen[:, 1, 5] = X[:, 0]
    gen[:, 2, 3] = X[:, 1]
    gen[:, 2, 4] = -X[:, 0]
    dX = -np.einsum("ab,nbk->nak", Pinv.R, gen)
    J = np.stack([np.einsum("na,nak->nk", jx, dX), np.einsum("na,nak->nk", jy, dX)], axis=1)
    return end, ok, J


def _gauss_newton_fit(pts, depths, targets, K, eps0=None, iters=10,
                      sign_free_offsets=None):
    """Least-squares twist fit of warped points to targets.

    With ``sign_free_offsets`` given, each target is re-chosen every
    iteration as ``x +- offset``, whichever matches the current prediction.
    """
    eps = np.zeros(6) if eps0 is None else np.asarray(eps0, float).copy()
    for _ in range(iters):
        end, ok, J = _endpoints_and_jacobian(eps, pts, depths, K)
        if not np.all(ok):
            return None
        tgt = targets
        if sign_free_offsets is not None:
            plus = pts + sign_free_offsets
            minus = pts - sign_free_offsets
            d_plus = np.sum((end - plus) ** 2, axis=-1)
            d_minus = np.sum((end - minus) ** 2, axis=-1)
            tgt = np.where((d_plus <= d_minus)[:, None], plus, minus)
        r = (end - tgt).reshape(-1)
        Jf = J.reshape(-1, 6)
        JtJ = Jf.T @ Jf + 1e-9 * np.eye(6)
        try:
            delta = np.linalg.solve(JtJ, -Jf.T @ r)
            if np.linalg.norm(delta[3:]) >= np.pi or np.linalg.norm(eps[3:]) >= np.pi:
                return None
            eps = se3_log(se3_exp(delta).compose(se3_exp(eps)))
        except (np.linalg.LinAlgError, GeometryError):
            return None
        if np.linalg.norm(delta) < 1e-12:
            break
    return eps


def ransac_pose_init(kernels: LinearKernelField, d_init: DepthMap, K: Intrinsics,
                     path_M: int = 9, params: RansacParams | None = None) -> np.ndarray:
    """Fit the exposure-start camera twist to the kernel endpoints.

    Depth is frozen to ``d_init``.  Four entries seed each trial; inliers
    are endpoints within ``tau`` pixels of the warp prediction; the best
    model is refit on its inliers.  Estimator kernels (sign-ambiguous) get
    per-entry sign resolution and a canonical global sign.
    """
    params = params or RansacParams()
    gate = kernels.conf >= params.conf_gate
    if int(gate.sum()) < 4:
        raise InsufficientDataError(
            f"need >= 4 confident kernel entries, have {int(gate.sum())}"
        )
    pts = np.stack([kernels.x[gate], kernels.y[gate]], axis=-1)
    offs = np.stack([kernels.dx[gate], kernels.dy[gate]], axis=-1)
    # canonical entry order makes the result invariant to input ordering
    order = np.lexsort((pts[:, 0], pts[:, 1]))
    pts, offs = pts[order], offs[order]
    iy = np.clip(np.round(pts[:, 1]).astype(int), 0, d_init.shape[0] - 1)
    ix = np.clip(np.round(pts[:, 0]).astype(int), 0, d_init.shape[1] - 1)
    depths = d_init.data[iy, ix]
    usable = d_init.mask[iy, ix] & (depths > 0)
    pts, offs, depths = pts[usable], offs[usable], depths[usable]
    N = len(pts)
    if N < 4:
        raise InsufficientDataError("fewer than 4 kernel entries with valid depth")

    if np.max(np.abs(offs)) < 1e-12:
        return np.zeros(6)

    ambiguous = kernels.sign_ambiguous
    root = np.random.SeedSequence(params.seed)
    children = root.spawn(params.trials)

    # entries whose offset cannot discriminate the sign hypotheses carry no
    # vote: under best-of-sign residuals every |offset| < tau entry is an
    # inlier of the zero-motion model, which would collapse the consensus
    informative = np.linalg.norm(offs, axis=-1) >= 2 * params.tau if ambiguous else np.ones(N, bool)
    if ambiguous and int(informative.sum()) >= 4:
        sample_pool = np.where(informative)[0]
    else:
        informative = np.ones(N, bool)
        sample_pool = np.arange(N)

    def count_inliers(eps):
        end, ok, _ = _endpoints_and_jacobian(eps, pts, depths, K, with_jac=False)
        if ambiguous:
            d_plus = np.linalg.norm(end - (pts + offs), axis=-1)
            d_minus = np.linalg.norm(end - (pts - offs), axis=-1)
            resid = np.minimum(d_plus, d_minus)
        else:
            resid = np.linalg.norm(end - (pts + offs), axis=-1)
        resid = np.where(ok & informative, resid, np.inf)
        return resid < params.tau, resid

    best = None
    best_count = -1
    best_resid = np.inf
    sign_patterns = [np.ones(4)]
    if ambiguous:
        sign_patterns = []
        for bits in range(8):  # first sign fixed: global flip is the gauge
            s = np.array([1.0] + [1.0 if bits & (1 << i) else -1.0 for i in range(3)])
            sign_patterns.append(s)
    for child in children:
        rng = np.random.default_rng(child)
        idx = sample_pool[rng.choice(len(sample_pool), size=4, replace=False)]
        for signs in sign_patterns:
            targets = pts[idx] + signs[:, None] * offs[idx]
            eps = _gauss_newton_fit(pts[idx], depths[idx], targets, K, iters=6)
            if eps is None or not np.all(np.isfinite(eps)):
                continue
            if np.linalg.norm(eps[3:]) >= np.pi * 0.99:
                continue
            inl, resid = count_inliers(eps)
            cnt = int(inl.sum())
            mean_r = float(np.mean(resid[inl])) if cnt else np.inf
            if cnt > best_count or (cnt == best_count and mean_r < best_resid):
                best = (eps, inl)
                best_count = cnt
                best_resid = mean_r
    if best is None or best_count < 4:
        raise DegenerateConfigurationError("no RANSAC trial produced a usable motion")

    eps, inl = best
    refit = _gauss_newton_fit(
        pts[inl], depths[inl],
        None if ambiguous else pts[inl] + offs[inl],
        K, eps0=eps, iters=params.gn_iters,
        sign_free_offsets=offs[inl] if ambiguous else None,
    )
    if refit is not None and np.all(np.isfinite(refit)):
        inl2, _ = count_inliers(refit)
        if int(inl2.sum()) >= best_count:
            eps = refit
    if ambiguous:
        eps = canonical_twist_sign(eps)
    return eps


def oracle_kernel_field(eps: np.ndarray, d: DepthMap, K: Intrinsics,
                        stride: int = 8, margin: int = 8) -> LinearKernelField:
    """Signed ground-truth kernel endpoints on a patch grid (test oracle and
    injection payload for the estimator bypass)."""
    xs = np.arange(margin, K.width - margin, stride)
    ys = np.arange(margin, K.height - margin, stride)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=-1).astype(float)
    depths = d.data[gy.ravel(), gx.ravel()]
    end, ok, _ = _endpoints_and_jacobian(np.asarray(eps, float), pts, depths, K, with_jac=False)
    off = end - pts
    return LinearKernelField(
        pts[ok, 0], pts[ok, 1], off[ok, 0], off[ok, 1], np.ones(int(ok.sum())),
        sign_ambiguous=False,
    )
