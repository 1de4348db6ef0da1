"""Center-view-parameterized blur operator and its linearizations.

A blurred view is the average of the sharp center-view image sampled at
time-warped coordinates: pixel ``x`` of view ``u`` at path sample ``m``
back-projects with the transported depth, moves through the rigid pose of
that view and time, and lands in the latent image where it is read with
bilinear interpolation.  Samples whose taps leave the latent image are
dropped and the average renormalizes over the remaining ones.

The same warp fields drive three things: the direct operator
(:func:`apply_blur`), its sparse matrix form (:func:`assemble_blur_matrix`),
and the analytic derivatives of the warped coordinates with respect to the
center depth and the camera-motion twist (:func:`compute_warp_jacobians`).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
import json

import numpy as np
import scipy.ndimage as ndi
import scipy.sparse as sp

from .geometry import CameraPath, Pose, interpolate_pose, normalized_rays, se3_exp
from .lightfield import DepthMap, LightField


# ---------------------------------------------------------------------------
# Bilinear interpolation helpers (4-tap, partition of unity on valid samples)
# ---------------------------------------------------------------------------


def bilinear_taps(pos: np.ndarray, width: int, height: int):
    """Tap indices and weights for positions of shape (..., 2).

    Returns ``(cols, weights, inside)`` where ``cols`` has shape (..., 4) of
    flat pixel indices, ``weights`` the matching bilinear weights, and
    ``inside`` marks positions whose four taps all lie in the image
    (``0 <= x <= width-1`` and likewise for y).
    """
    if width < 2 or height < 2:
        raise ValueError("bilinear interpolation needs at least a 2x2 image")
    x = pos[..., 0]
    y = pos[..., 1]
    inside = (x >= 0) & (x <= width - 1) & (y >= 0) & (y <= height - 1)
    xs = np.clip(x, 0, width - 1)
    ys = np.clip(y, 0, height - 1)
    x0 = np.minimum(np.floor(xs), width - 2).astype(np.int64)
    y0 = np.minimum(np.floor(ys), height - 2).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    base = y0 * width + x0
    cols = np.stack([base, base + 1, base + width, base + width + 1], axis=-1)
    weights = np.stack(
        [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=-1
    )
    return cols, weights, inside


def bilinear_sample(img: np.ndarray, pos: np.ndarray):
    """Sample ``img`` (H, W) or (H, W, C) at positions (..., 2).

    Returns ``(values, inside)``; values outside the image are zero.
    """
    H, W = img.shape[:2]
    cols, weights, inside = bilinear_taps(pos, W, H)
    flat = img.reshape(H * W, -1)
    vals = np.einsum("...t,...tc->...c", weights, flat[cols])
    if img.ndim == 2:
        vals = vals[..., 0]
    return np.where(inside[..., None] if img.ndim == 3 else inside, vals, 0.0), inside


def bilinear_gradient(img: np.ndarray, pos: np.ndarray):
    """Exact spatial gradient of the bilinear interpolant of ``img`` at
    positions (..., 2).  Returns ``(gx, gy)`` shaped like ``pos[..., 0]``
    (plus a channel axis for (H, W, C) images)."""
    H, W = img.shape[:2]
    x0 = np.minimum(np.floor(np.clip(pos[..., 0], 0, W - 1)), W - 2).astype(np.int64)
    y0 = np.minimum(np.floor(np.clip(pos[..., 1], 0, H - 1)), H - 2).astype(np.int64)
    fx = np.clip(pos[..., 0], 0, W - 1) - x0
    fy = np.clip(pos[..., 1], 0, H - 1) - y0
    i00 = img[y0, x0]
    i10 = img[y0, x0 + 1]
    i01 = img[y0 + 1, x0]
    i11 = img[y0 + 1, x0 + 1]
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    gx = (i10 - i00) * (1 - fy) + (i11 - i01) * fy
    gy = (i01 - i00) * (1 - fx) + (i11 - i10) * fx
    return gx, gy


# ---------------------------------------------------------------------------
# Depth transport
# ---------------------------------------------------------------------------


def view_pose(lf: LightField, path: CameraPath, u: int, v: int, m: int,
              pose_delta: np.ndarray | None = None) -> Pose:
    """World-to-camera pose of view (u, v) at path sample ``m``.

    ``pose_delta`` applies the solver's per-sample left increment
    ``exp(scale * delta)`` to the time pose; used by linearization checks.
    """
    P_time = interpolate_pose(path, m)
    if pose_delta is not None:
        P_time = se3_exp(path.scale_at(m) * np.asarray(pose_delta)).compose(P_time)
    return lf.rel_pose(u, v).compose(P_time)


def transport_depth(d_center: DepthMap, path: CameraPath, lf: LightField,
                    u: int, v: int, m: int,
                    pose_delta: np.ndarray | None = None) -> DepthMap:
    """Forward-splat the center depth into view (u, v) at path sample ``m``.

    Nearest depth wins the z-buffer; holes take the maximum depth of their
    8-neighborhood of valid splats (disocclusions expose background).
    Unresolvable holes stay masked.
    """
    K = lf.intrinsics
    H, W = d_center.shape
    P = view_pose(lf, path, u, v, m, pose_delta)
    rays = normalized_rays(K)
    X = rays * d_center.data[..., None]
    Xd = X @ P.R.T + P.t
    z = Xd[..., 2]
    ok = d_center.mask & (z > 0)
    zs = np.where(ok, z, 1.0)
    px = K.fx * Xd[..., 0] / zs + K.cx
    py = K.fy * Xd[..., 1] / zs + K.cy
    ix = np.round(px).astype(np.int64)
    iy = np.round(py).astype(np.int64)
    ok &= (ix >= 0) & (ix <= W - 1) & (iy >= 0) & (iy <= H - 1)

    zbuf = np.full(H * W, np.inf)
    flat = (iy * W + ix)[ok]
    np.minimum.at(zbuf, flat, z[ok])
    zbuf = zbuf.reshape(H, W)
    valid = np.isfinite(zbuf)

    # one-pass background-favoring hole fill from the original splats
    neigh_max = ndi.maximum_filter(np.where(valid, zbuf, -np.inf), size=3, mode="constant", cval=-np.inf)
    fill = ~valid & np.isfinite(neigh_max)
    out = np.where(valid, zbuf, 1.0)
    out[fill] = neigh_max[fill]
    return DepthMap(out, valid | fill)


# ---------------------------------------------------------------------------
# Warp fields
# ---------------------------------------------------------------------------


def warp_field(d_center: DepthMap, path: CameraPath, lf: LightField,
               u: int, v: int, m: int,
               pose_delta: np.ndarray | None = None,
               d_view: DepthMap | None = None):
    """Warped latent coordinates for every pixel of view (u, v) at sample m.

    Returns ``(pos, valid, d_view)`` where ``pos`` is (H, W, 2) latent-image
    coordinates, ``valid`` marks pixels whose transported depth exists, whose
    transferred point lies in front of the reference camera, and whose four
    bilinear taps are inside the latent image.
    """
    K = lf.intrinsics
    if d_view is None:
        d_view = transport_depth(d_center, path, lf, u, v, m, pose_delta)
    P = view_pose(lf, path, u, v, m, pose_delta)
    Pinv = P.inverse()
    rays = normalized_rays(K)
    X_view = rays * d_view.data[..., None]
    X_ref = X_view @ Pinv.R.T + Pinv.t
    z = X_ref[..., 2]
    ok = d_view.mask & (z > 0)
    zs = np.where(ok, z, 1.0)
    pos = np.empty((K.height, K.width, 2))
    pos[..., 0] = K.fx * X_ref[..., 0] / zs + K.cx
    pos[..., 1] = K.fy * X_ref[..., 1] / zs + K.cy
    inside = (
        (pos[..., 0] >= 0)
        & (pos[..., 0] <= K.width - 1)
        & (pos[..., 1] >= 0)
        & (pos[..., 1] <= K.height - 1)
    )
    return pos, ok & inside, d_view


# ---------------------------------------------------------------------------
# Blur operator
# ---------------------------------------------------------------------------


def apply_blur(latent: np.ndarray, d_center: DepthMap, path: CameraPath,
               lf: LightField, pose_delta: np.ndarray | None = None):
    """Synthesize all blurred views from the latent center image.

    Returns ``(views, counts)``: ``views`` shaped like ``lf.views`` and
    ``counts`` (U, V, H, W) giving the number of valid warp samples per
    pixel.  Pixels with ``0 < count < M`` are renormalized by their count;
    pixels with ``count == 0`` are zero and must be excluded by callers.

    ``pose_delta`` probes the linearization: it perturbs the warp by the
    per-sample left increment while keeping the depth transport at the base
    poses, the same convention the warp Jacobians are taken in.
    """
    if latent.shape[:2] != (lf.intrinsics.height, lf.intrinsics.width):
        raise ValueError("latent image does not match the light-field geometry")
    U, V = lf.angular_dims
    M = path.M
    out = np.zeros((U, V) + latent.shape)
    counts = np.zeros((U, V) + latent.shape[:2], dtype=np.int32)
    for u in range(U):
        for v in range(V):
            acc = np.zeros(latent.shape)
            cnt = np.zeros(latent.shape[:2], dtype=np.int32)
            for m in range(M):
                d_view = None
                if pose_delta is not None:
                    d_view = transport_depth(d_center, path, lf, u, v, m)
                pos, valid, _ = warp_field(d_center, path, lf, u, v, m, pose_delta,
                                           d_view=d_view)
                vals, _ = bilinear_sample(latent, pos)
                if latent.ndim == 3:
                    acc += np.where(valid[..., None], vals, 0.0)
                else:
                    acc += np.where(valid, vals, 0.0)
                cnt += valid
            safe = np.maximum(cnt, 1)
            out[u, v] = acc / (safe[..., None] if latent.ndim == 3 else safe)
            counts[u, v] = cnt
    return out, counts


@dataclass
class BlurSystem:
    """Per-view sparse blur operators with row-stochastic weights on valid
    rows, plus the masks that say which pixels those rows cover."""

    matrices: list  # [U][V] -> csr_matrix (n, n)
    valid: np.ndarray  # (U, V, H, W) count >= 1
    full: np.ndarray  # (U, V, H, W) count == M
    counts: np.ndarray  # (U, V, H, W) valid warp samples per pixel
    shape: tuple  # (H, W)

    def matrix(self, u: int, v: int) -> sp.csr_matrix:
        return self.matrices[u][v]

    def dump_jsonl(self, path):
        """Debug export: one CSR record per view as JSON lines."""
        with open(path, "w") as f:
            for u in range(len(self.matrices)):
                for v in range(len(self.matrices[u])):
                    Kuv = self.matrices[u][v].tocsr()
                    rec = {
                        "u": u,
                        "v": v,
                        "indptr": Kuv.indptr.tolist(),
                        "indices": Kuv.indices.tolist(),
                        "data": Kuv.data.tolist(),
                    }
                    f.write(json.dumps(rec) + "\n")


def assemble_blur_matrix(d_center: DepthMap, path: CameraPath, lf: LightField) -> BlurSystem:
    """Sparse matrix form of :func:`apply_blur`: ``K[u,v] @ latent.ravel()``
    equals the view (u, v) output for any latent image."""
    K = lf.intrinsics
    H, W = K.height, K.width
    n = H * W
    U, V = lf.angular_dims
    M = path.M
    matrices = [[None] * V for _ in range(U)]
    valid = np.zeros((U, V, H, W), dtype=bool)
    full = np.zeros((U, V, H, W), dtype=bool)
    counts = np.zeros((U, V, H, W), dtype=np.int64)
    rows_idx = np.arange(n, dtype=np.int64)
    for u in range(U):
        for v in range(V):
            cnt = np.zeros(n, dtype=np.int64)
            rows_acc = []
            cols_acc = []
            vals_acc = []
            for m in range(M):
                pos, ok, _ = warp_field(d_center, path, lf, u, v, m)
                cols, weights, _ = bilinear_taps(pos.reshape(-1, 2), W, H)
                okf = ok.reshape(-1)
                cnt += okf
                sel = np.where(okf)[0]
                rows_acc.append(np.repeat(rows_idx[sel], cols.shape[-1]))
                cols_acc.append(cols[sel].reshape(-1))
                vals_acc.append(weights[sel].reshape(-1))
            rows = np.concatenate(rows_acc) if rows_acc else np.zeros(0, dtype=np.int64)
            cols = np.concatenate(cols_acc) if cols_acc else np.zeros(0, dtype=np.int64)
            vals = np.concatenate(vals_acc) if vals_acc else np.zeros(0)
            scale = np.zeros(n)
            nz = cnt > 0
            scale[nz] = 1.0 / cnt[nz]
            vals = vals * scale[rows]
            mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
            mat.sum_duplicates()
            matrices[u][v] = mat
            valid[u, v] = nz.reshape(H, W)
            full[u, v] = (cnt == M).reshape(H, W)
            counts[u, v] = cnt.reshape(H, W)
    return BlurSystem(matrices, valid, full, counts, (H, W))


# ---------------------------------------------------------------------------
# Analytic Jacobians of the warped coordinates
# ---------------------------------------------------------------------------


@dataclass
class WarpJacobians:
    """Warped coordinates and their derivatives, per view and path sample.

    ``flow``: (U, V, M, H, W, 2) warped latent coordinates.
    ``d_depth``: (U, V, M, H, W, 2) derivative w.r.t. the depth value used.
    ``d_eps``: (U, V, M, H, W, 2, 6) derivative w.r.t. the per-sample
    left-multiplied twist increment of the camera path.
    ``valid``: (U, V, M, H, W).
    """

    flow: np.ndarray
    d_depth: np.ndarray
    d_eps: np.ndarray
    valid: np.ndarray


def warp_jacobian_terms(d_center: DepthMap, path: CameraPath, lf: LightField,
                        u: int, v: int, m: int,
                        d_view: DepthMap | None = None):
    """Flow and analytic derivatives for one (view, sample) pair.

    Returns ``(flow, d_depth, d_eps, valid)`` with per-pixel shapes
    (H, W, 2), (H, W, 2), (H, W, 2, 6), (H, W).
    """
    K = lf.intrinsics
    if d_view is None:
        d_view = transport_depth(d_center, path, lf, u, v, m)
    P_time = interpolate_pose(path, m)
    P_rel = lf.rel_pose(u, v)
    P = P_rel.compose(P_time)
    Pinv = P.inverse()
    a = path.scale_at(m)

    rays = normalized_rays(K)
    X_view = rays * d_view.data[..., None]
    # point in the center camera at sample time, before undoing the motion
    rel_inv = P_rel.inverse()
    Y = X_view @ rel_inv.R.T + rel_inv.t
    X_ref = X_view @ Pinv.R.T + Pinv.t
    z = X_ref[..., 2]
    ok = d_view.mask & (z > 0)
    zs = np.where(ok, z, 1.0)

    flow = np.empty((K.height, K.width, 2))
    flow[..., 0] = K.fx * X_ref[..., 0] / zs + K.cx
    flow[..., 1] = K.fy * X_ref[..., 1] / zs + K.cy
    inside = (
        (flow[..., 0] >= 0)
        & (flow[..., 0] <= K.width - 1)
        & (flow[..., 1] >= 0)
        & (flow[..., 1] <= K.height - 1)
    )
    ok &= inside

    # projection Jacobian rows evaluated at X_ref
    inv_z = 1.0 / zs
    jx = np.stack([K.fx * inv_z, np.zeros_like(zs), -K.fx * X_ref[..., 0] * inv_z**2], axis=-1)
    jy = np.stack([np.zeros_like(zs), K.fy * inv_z, -K.fy * X_ref[..., 1] * inv_z**2], axis=-1)

    # depth direction: X_ref moves along R_total^T r per unit depth
    dir_d = rays @ P.R
    d_depth = np.stack([np.sum(jx * dir_d, axis=-1), np.sum(jy * dir_d, axis=-1)], axis=-1)

    # twist increment: dX_ref/d(delta) = -a * R_time^T [I | -[Y]x]
    R_time_T = P_time.R.T
    H, W = K.height, K.width
    gen = np.zeros((H, W, 3, 6))
    gen[..., 0, 0] = 1.0
    gen[..., 1, 1] = 1.0
    gen[..., 2, 2] = 1.0
    # -[Y]x columns for the rotational part
    Yx, Yy, Yz = Y[..., 0], Y[..., 1], Y[..., 2]
    gen[..., 0, 4] = Yz
    gen[..., 0, 5] = -Yy
    gen[..., 1, 3] = -Yz
    gen[..., 1, 5] = Yx
    gen[..., 2, 3] = Yy
    gen[..., 2, 4] = -Yx
    dX = -a * np.einsum("ab,hwbk->hwak", R_time_T, gen)
    d_eps = np.stack(
        [np.einsum("hwa,hwak->hwk", jx, dX), np.einsum("hwa,hwak->hwk", jy, dX)], axis=-2
    )
    return flow, d_depth, d_eps, ok


def compute_warp_jacobians(d_center: DepthMap, path: CameraPath, lf: LightField) -> WarpJacobians:
    """Materialize flows and derivatives for every view and path sample."""
    K = lf.intrinsics
    U, V = lf.angular_dims
    M = path.M
    H, W = K.height, K.width
    flow = np.zeros((U, V, M, H, W, 2))
    d_depth = np.zeros((U, V, M, H, W, 2))
    d_eps = np.zeros((U, V, M, H, W, 2, 6))
    valid = np.zeros((U, V, M, H, W), dtype=bool)
    for u in range(U):
        for v in range(V):
            for m in range(M):
                f, dd, de, ok = warp_jacobian_terms(d_center, path, lf, u, v, m)
                flow[u, v, m] = f
                d_depth[u, v, m] = dd
                d_eps[u, v, m] = de
                valid[u, v, m] = ok
    return WarpJacobians(flow, d_depth, d_eps, valid)
