"""Joint energy and alternating minimization.

The energy couples an L1 brightness-consistency term over all views with
isotropic total-variation priors on the latent image and the depth map::

    E = lam_u * sum_u sum_x |Psi(I) - B|_1
      + lam_L * sum_x tv(I) + lam_D * sum_x tv(D)

with ``tv(.) = sqrt(dx^2 + dy^2 + tv_eps^2)``.  The latent update is an
IRLS scheme whose reweighted quadratics are solved by preconditioned
conjugate gradients on the normal equations; the depth and pose update
linearizes the warped coordinates, eliminates the per-pixel depth increments
through a Schur complement, and accepts steps only if the energy does not
increase (halving the step up to five times otherwise).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .blur import (
    apply_blur,
    assemble_blur_matrix,
    bilinear_gradient,
    bilinear_sample,
    warp_jacobian_terms,
)
from .geometry import CameraPath, se3_exp, se3_log
from .lightfield import DepthMap, LightField

ENERGY_SLACK = 1e-9  # relative slack for "non-increasing"


@dataclass
class EnergyParams:
    """Weights and solver controls; defaults follow the fixed parameter set
    of the reference experiments where one exists."""

    lambda_u: float = 15.0
    lambda_L: float = 5.0
    lambda_D: float = 20.0
    M: int = 13
    outer_iters: int = 10
    irls_inner_iters: int = 3
    irls_delta: float = 1e-3
    tv_eps: float = 1e-3
    cg_tol: float = 1e-6
    cg_max_iters: int = 120
    step_damping: float = 1e-4
    include_center: bool = True
    # fraction of the M warp samples a pixel needs for its renormalized blur
    # row to join the latent data term (the energy itself always uses full
    # rows only); 1.0 restricts to fully covered pixels
    latent_row_min_frac: float = 1.0

    def __post_init__(self):
        if self.lambda_u <= 0:
            raise ValueError("lambda_u must be positive")
        if min(self.lambda_L, self.lambda_D) < 0:
            raise ValueError("TV weights must be non-negative")
        if self.M < 3 or self.M % 2 == 0:
            raise ValueError("M must be odd and at least 3")
        if self.irls_delta <= 0 or self.tv_eps <= 0:
            raise ValueError("irls_delta and tv_eps must be positive")


@dataclass
class EstimationState:
    """Latent image, center depth, camera-motion twist, and bookkeeping."""

    latent: np.ndarray
    depth: DepthMap
    eps0: np.ndarray
    energy_trace: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    depth_floor: float = 1e-6

    def __post_init__(self):
        self.eps0 = np.asarray(self.eps0, dtype=float).reshape(6)

    def copy(self) -> "EstimationState":
        return EstimationState(
            self.latent.copy(),
            self.depth.copy(),
            self.eps0.copy(),
            list(self.energy_trace),
            list(self.warnings),
            self.depth_floor,
        )

    def check_trace(self):
        trace = np.asarray(self.energy_trace, dtype=float)
        if trace.size > 1:
            bound = trace[:-1] * (1 + ENERGY_SLACK)
            if np.any(trace[1:] > bound):
                raise AssertionError("energy trace increased beyond slack")


def make_initial_state(lf: LightField, depth: DepthMap, eps0) -> EstimationState:
    """Standard starting point: latent is the blurred center view."""
    floor = 1e-3 * float(np.median(depth.data[depth.mask]))
    return EstimationState(lf.center_view().copy(), depth.copy(), np.asarray(eps0, float),
                           depth_floor=floor)


# ---------------------------------------------------------------------------
# Gradients, TV, robust weights
# ---------------------------------------------------------------------------


def forward_diff(img: np.ndarray):
    """Forward differences with an implicit zero row/column at the far edge."""
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, :-1] = img[:, 1:] - img[:, :-1]
    gy[:-1, :] = img[1:, :] - img[:-1, :]
    return gx, gy


def tv_norm(img: np.ndarray, tv_eps: float) -> np.ndarray:
    """Smoothed isotropic TV magnitude per pixel (channels summed)."""
    if img.ndim == 3:
        return sum(tv_norm(img[..., c], tv_eps) for c in range(img.shape[2]))
    gx, gy = forward_diff(img)
    return np.sqrt(gx**2 + gy**2 + tv_eps**2)


def huber(r: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(r)
    return np.where(a <= delta, r**2 / (2 * delta), a - delta / 2)


def _tv_weight(img: np.ndarray, tv_eps: float) -> np.ndarray:
    gx, gy = forward_diff(img)
    return 1.0 / np.sqrt(gx**2 + gy**2 + tv_eps**2)


def _tv_matvec(x: np.ndarray, wt: np.ndarray) -> np.ndarray:
    """Apply Gx^T diag(wt) Gx + Gy^T diag(wt) Gy for one channel image."""
    x = np.asarray(x, dtype=float)
    gx, gy = forward_diff(x)
    out = np.zeros(x.shape)
    px = wt * gx
    py = wt * gy
    out[:, :-1] -= px[:, :-1]
    out[:, 1:] += px[:, :-1]
    out[:-1, :] -= py[:-1, :]
    out[1:, :] += py[:-1, :]
    return out


def _tv_diag(wt: np.ndarray) -> np.ndarray:
    d = np.zeros_like(wt)
    d[:, :-1] += wt[:, :-1]
    d[:, 1:] += wt[:, :-1]
    d[:-1, :] += wt[:-1, :]
    d[1:, :] += wt[:-1, :]
    return d


def _tv_sparse(wt: np.ndarray) -> sp.csr_matrix:
    """Explicit sparse G^T diag(wt) G for the depth increment system."""
    H, W = wt.shape
    n = H * W
    idx = np.arange(n).reshape(H, W)
    rows, cols, vals = [], [], []
    # x-direction edges anchored at (y, x), x < W-1
    a = idx[:, :-1].ravel()
    b = idx[:, 1:].ravel()
    w = wt[:, :-1].ravel()
    rows.extend([a, b, a, b])
    cols.extend([a, b, b, a])
    vals.extend([w, w, -w, -w])
    # y-direction edges
    a = idx[:-1, :].ravel()
    b = idx[1:, :].ravel()
    w = wt[:-1, :].ravel()
    rows.extend([a, b, a, b])
    cols.extend([a, b, b, a])
    vals.extend([w, w, -w, -w])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


# ---------------------------------------------------------------------------
# Energy
# ---------------------------------------------------------------------------


def energy_terms(state: EstimationState, lf: LightField, p: EnergyParams,
                 blur_views=None, counts=None) -> dict:
    """Energy and its components.  Invalid blur pixels (fewer than M valid
    warp samples) are excluded from the data term."""
    path = CameraPath(state.eps0, p.M)
    if blur_views is None or counts is None:
        blur_views, counts = apply_blur(state.latent, state.depth, path, lf)
    U, V = lf.angular_dims
    cu, cv = lf.center_index
    data = 0.0
    for u in range(U):
        for v in range(V):
            if not p.include_center and (u, v) == (cu, cv):
                continue
            full = counts[u, v] == path.M
            diff = np.abs(blur_views[u, v] - lf.views[u, v])
            if diff.ndim == 3:
                diff = diff.sum(axis=2)
            data += float(diff[full].sum())
    tv_i = float(tv_norm(state.latent, p.tv_eps).sum())
    tv_d = float(tv_norm(state.depth.data, p.tv_eps).sum())
    total = p.lambda_u * data + p.lambda_L * tv_i + p.lambda_D * tv_d
    return {"energy": total, "data": data, "tv_latent": tv_i, "tv_depth": tv_d}


def energy(state: EstimationState, lf: LightField, p: EnergyParams) -> float:
    return energy_terms(state, lf, p)["energy"]


# ---------------------------------------------------------------------------
# Latent-image update (IRLS over L1 data + TV prior)
# ---------------------------------------------------------------------------


def solve_latent_irls(mats, b_list, latent0: np.ndarray, p: EnergyParams,
                      lam_u: float | None = None, lam_L: float | None = None):
    """IRLS minimization of ``lam_u * sum_k |K_k x - b_k|_1 + lam_L * tv(x)``.

    ``mats`` are sparse operators whose rows already cover exactly the
    pixels participating in the data term; ``b_list`` the matching targets
    shaped like ``latent0``'s spatial grid (flattened per matrix row count).
    Returns ``(latent, diagnostics)``.
    """
    lam_u = p.lambda_u if lam_u is None else lam_u
    lam_L = p.lambda_L if lam_L is None else lam_L
    shape = latent0.shape
    H, W = shape[:2]
    n = H * W
    channels = 1 if latent0.ndim == 2 else shape[2]
    K = sp.vstack(mats).tocsr() if len(mats) > 1 else mats[0].tocsr()
    Kt = K.T.tocsr()
    Ksq = K.multiply(K).tocsr()
    if channels > 1:
        b = np.vstack([np.asarray(bi, dtype=float).reshape(-1, channels) for bi in b_list])
        x = np.array(latent0.reshape(n, channels), dtype=float)
    else:
        b = np.concatenate([np.asarray(bi, dtype=float).reshape(-1) for bi in b_list])
        x = np.array(latent0.reshape(n), dtype=float)
    diag_note = {"cg_converged": True, "surrogate_ok": True, "surrogate_gaps": []}

    def smoothed_objective(xc, ch):
        img = xc.reshape(H, W)
        r = K @ xc - (b[:, ch] if channels > 1 else b)
        return lam_u * huber(r, p.irls_delta).sum() + lam_L * tv_norm(img, p.tv_eps).sum()

    for ch in range(channels):
        xc = x[:, ch].copy() if channels > 1 else x
        bc = b[:, ch] if channels > 1 else b
        for _ in range(p.irls_inner_iters):
            obj_before = smoothed_objective(xc, ch)
            r = K @ xc - bc
            w_data = lam_u / np.maximum(np.abs(r), p.irls_delta)
            wt = _tv_weight(xc.reshape(H, W), p.tv_eps) * lam_L

            diag = Ksq.T @ w_data + _tv_diag(wt).reshape(-1)
            diag = np.maximum(diag, 1e-12)

            def matvec(z, _w=w_data, _wt=wt):
                data_part = Kt @ (_w * (K @ z))
                tv_part = _tv_matvec(z.reshape(H, W), _wt).reshape(-1)
                return data_part + tv_part

            A = spla.LinearOperator((n, n), matvec=matvec)
            Mpre = spla.LinearOperator((n, n), matvec=lambda z, _d=diag: z / _d)
            rhs = Kt @ (w_data * bc)
            sol, info = spla.cg(A, rhs, x0=xc, rtol=p.cg_tol, atol=0.0,
                                maxiter=p.cg_max_iters, M=Mpre)
            if info != 0:
                diag_note["cg_converged"] = False
            obj_after = smoothed_objective(sol, ch)
            gap = obj_after - obj_before
            diag_note["surrogate_gaps"].append(float(gap))
            if gap > 1e-6 * max(abs(obj_before), 1.0):
                # CG inexactness can break the majorization; keep the old iterate
                diag_note["surrogate_ok"] = False
                break
            xc = sol
        if channels > 1:
            x[:, ch] = xc
        else:
            x = xc
    latent = x.reshape(shape)
    return latent, diag_note


def update_latent(state: EstimationState, lf: LightField, p: EnergyParams,
                  blur_system=None):
    """Minimize the energy over the latent image at fixed depth and motion.

    Returns ``(latent, diagnostics)``; falls back to the previous latent if
    the full energy did not decrease.
    """
    path = CameraPath(state.eps0, p.M)
    if blur_system is None:
        blur_system = assemble_blur_matrix(state.depth, path, lf)
    U, V = lf.angular_dims
    cu, cv = lf.center_index
    mats = []
    b_list = []
    need = max(1, int(np.ceil(p.latent_row_min_frac * path.M)))
    for u in range(U):
        for v in range(V):
            if not p.include_center and (u, v) == (cu, cv):
                continue
            rows = (blur_system.counts[u, v] >= need).reshape(-1)
            if not np.any(rows):
                continue
            mats.append(blur_system.matrix(u, v)[rows])
            view = lf.views[u, v]
            b_list.append(view.reshape(-1, view.shape[2])[rows] if view.ndim == 3 else view.reshape(-1)[rows])
    if not mats:
        return state.latent.copy(), {"skipped": "no valid data rows"}
    latent, diag = solve_latent_irls(mats, b_list, state.latent, p)
    np.clip(latent, 0.0, 1.0, out=latent)

    e_old = energy(state, lf, p)
    trial = state.copy()
    trial.latent = latent
    e_new = energy(trial, lf, p)
    diag["energy_before"] = e_old
    diag["energy_after"] = e_new
    if e_new > e_old * (1 + ENERGY_SLACK):
        diag["accepted"] = False
        return state.latent.copy(), diag
    diag["accepted"] = True
    return latent, diag


# ---------------------------------------------------------------------------
# Depth and pose update (joint linearized IRLS with Schur elimination)
# ---------------------------------------------------------------------------


def _row_jacobians(state: EstimationState, lf: LightField, p: EnergyParams,
                   blur_views, counts):
    """Stacked linearization rows over views, pixels, and channels.

    The derivative of a blurred pixel chains the latent interpolant's exact
    gradient at every warped sample with that sample's flow derivatives.
    Factoring one blurred-image gradient out of the time sum instead would
    cancel the odd-in-time components exactly (the path samples are
    symmetric), leaving the system blind to in-plane motion.

    Returns ``(r, J_eps, j_d, col, n)`` restricted to pixels with all M warp
    samples valid and a well-defined center-pixel column for the depth
    increment.
    """
    path = CameraPath(state.eps0, p.M)
    K = lf.intrinsics
    H, W = K.height, K.width
    n = H * W
    U, V = lf.angular_dims
    cu, cv = lf.center_index
    m_mid = (path.M - 1) // 2
    latent = state.latent if state.latent.ndim == 3 else state.latent[..., None]
    C = latent.shape[2]
    rs, Js, jds, cols = [], [], [], []
    for u in range(U):
        for v in range(V):
            if not p.include_center and (u, v) == (cu, cv):
                continue
            full = counts[u, v] == path.M
            acc_eps = np.zeros((H, W, C, 6))
            acc_d = np.zeros((H, W, C))
            flow_mid = None
            ok_all = full.copy()
            for m in range(path.M):
                flow, dd, de, ok = warp_jacobian_terms(state.depth, path, lf, u, v, m)
                gx, gy = bilinear_gradient(latent, flow)
                acc_eps += gx[..., None] * de[..., None, 0, :] + gy[..., None] * de[..., None, 1, :]
                acc_d += gx * dd[..., None, 0] + gy * dd[..., None, 1]
                ok_all &= ok
                if m == m_mid:
                    flow_mid = flow
            acc_eps /= path.M
            acc_d /= path.M
            ci = np.round(flow_mid[..., 0]).astype(np.int64)
            cj = np.round(flow_mid[..., 1]).astype(np.int64)
            ok_all &= (ci >= 0) & (ci <= W - 1) & (cj >= 0) & (cj <= H - 1)
            if not np.any(ok_all):
                continue
            col = (cj * W + ci)[ok_all]
            B0 = blur_views[u, v]
            Bobs = lf.views[u, v]
            if B0.ndim == 2:
                B0 = B0[..., None]
                Bobs = Bobs[..., None]
            for c in range(C):
                rs.append((B0[..., c] - Bobs[..., c])[ok_all])
                Js.append(acc_eps[..., c, :][ok_all])
                jds.append(acc_d[..., c][ok_all])
                cols.append(col)
    if not rs:
        return None
    return (
        np.concatenate(rs),
        np.concatenate(Js, axis=0),
        np.concatenate(jds),
        np.concatenate(cols),
        n,
    )


def update_depth_pose(state: EstimationState, lf: LightField, p: EnergyParams,
                      update_depth: bool = True):
    """One linearized joint depth-and-pose step with energy backtracking.

    Returns ``(depth, eps0, diagnostics)``.  The per-pixel depth increments
    are eliminated with a Schur complement (the depth block is sparse:
    diagonal data coupling plus the weighted TV Laplacian), leaving a 6x6
    system for the motion increment.  ``update_depth=False`` solves the
    pose-only system; coarse pyramid levels use it because sub-pixel view
    baselines leave depth practically unobservable there.
    """
    path = CameraPath(state.eps0, p.M)
    blur_views, counts = apply_blur(state.latent, state.depth, path, lf)
    rows = _row_jacobians(state, lf, p, blur_views, counts)
    diag_note: dict = {"accepted": False, "backtracks": 0}
    if rows is None:
        diag_note["skipped"] = "no usable rows"
        return state.depth.copy(), state.eps0.copy(), diag_note
    r, J_eps, j_d, col, n = rows
    H, W = state.depth.shape
    D0 = state.depth.data.reshape(-1)

    wt_d = _tv_weight(state.depth.data, p.tv_eps) * p.lambda_D
    H_tv = _tv_sparse(wt_d)
    b_tv = -H_tv @ D0

    delta_d = np.zeros(n)
    eps_inc = np.zeros(6)
    for _ in range(p.irls_inner_iters):
        r_lin = r + J_eps @ eps_inc + j_d * delta_d[col]
        w = p.lambda_u / np.maximum(np.abs(r_lin), p.irls_delta)
        wJ = J_eps * w[:, None]
        H_ee = J_eps.T @ wJ
        b_e = -(J_eps.T @ (w * r))
        mu = p.step_damping
        if not update_depth:
            try:
                eps_inc = np.linalg.solve(H_ee * (1 + mu) + np.eye(6) * 1e-12, b_e)
            except np.linalg.LinAlgError:
                diag_note["skipped"] = "singular pose system"
                return state.depth.copy(), state.eps0.copy(), diag_note
            continue
        wjd = w * j_d
        H_dd_data = np.bincount(col, weights=wjd * j_d, minlength=n)
        b_d = -np.bincount(col, weights=wjd * r, minlength=n) + b_tv
        H_de = np.zeros((n, 6))
        for k in range(6):
            H_de[:, k] = np.bincount(col, weights=wjd * J_eps[:, k], minlength=n)

        for attempt in range(3):
            ridge = 1e-9 * max(H_dd_data.max(), 1.0)
            H_DD = H_tv + sp.diags(H_dd_data * (1 + mu) + ridge)
            try:
                lu = spla.splu(H_DD.tocsc())
                rhs = np.column_stack([H_de, b_d])
                X = lu.solve(rhs)
                S = H_ee * (1 + mu) + np.eye(6) * 1e-12 - H_de.T @ X[:, :6]
                rhs_e = b_e - H_de.T @ X[:, 6]
                eps_inc = np.linalg.solve(S, rhs_e)
                delta_d = X[:, 6] - X[:, :6] @ eps_inc
                break
            except (RuntimeError, np.linalg.LinAlgError):
                mu = max(mu * 100, 1e-2)
                diag_note["damping_raised"] = mu
        else:
            diag_note["skipped"] = "singular normal system"
            return state.depth.copy(), state.eps0.copy(), diag_note

    e_old = energy(state, lf, p)
    diag_note["energy_before"] = e_old
    scale = 1.0
    for bt in range(6):
        d_new = np.maximum(D0 + scale * delta_d, state.depth_floor).reshape(H, W)
        eps_new = se3_log(se3_exp(scale * eps_inc).compose(se3_exp(state.eps0)))
        trial = state.copy()
        trial.depth = DepthMap(d_new, state.depth.mask.copy())
        trial.eps0 = eps_new
        e_new = energy(trial, lf, p)
        if e_new <= e_old * (1 + ENERGY_SLACK):
            diag_note.update(accepted=True, backtracks=bt, energy_after=e_new,
                             eps_step=scale * eps_inc, max_delta_d=float(np.max(np.abs(scale * delta_d))))
            return trial.depth, eps_new, diag_note
        if bt == 5:
            break
        scale *= 0.5
    diag_note.update(accepted=False, backtracks=5, energy_after=e_old,
                     eps_step=np.zeros(6), max_delta_d=0.0)
    return state.depth.copy(), state.eps0.copy(), diag_note


# ---------------------------------------------------------------------------
# Outer loop
# ---------------------------------------------------------------------------


def joint_estimate(lf: LightField, p: EnergyParams, init: EstimationState,
                   log_path=None, depth_updates: bool = True) -> EstimationState:
    """Alternate latent and depth/pose updates until the energy stalls.

    Records the accepted energy after every outer iteration; the trace is
    non-increasing by construction and the best-energy state is returned.
    """
    state = init.copy()
    if state.depth_floor <= 0:
        state.depth_floor = 1e-3 * float(np.median(state.depth.data[state.depth.mask]))
    log_records = []
    e = energy(state, lf, p)
    state.energy_trace = [e]
    best = state.copy()
    best_e = e
    for it in range(p.outer_iters):
        t0 = time.perf_counter()
        path = CameraPath(state.eps0, p.M)
        bsys = assemble_blur_matrix(state.depth, path, lf)
        latent, diag_lat = update_latent(state, lf, p, blur_system=bsys)
        state.latent = latent
        if not diag_lat.get("cg_converged", True):
            state.warnings.append(f"iter {it}: CG did not converge")
        depth, eps0, diag_dp = update_depth_pose(state, lf, p, update_depth=depth_updates)
        state.depth = depth
        state.eps0 = eps0
        terms = energy_terms(state, lf, p)
        e_new = terms["energy"]
        state.energy_trace.append(e_new)
        if e_new < best_e:
            best_e = e_new
            best = state.copy()
        log_records.append(
            {
                "iter": it,
                "energy": e_new,
                "data_term": terms["data"],
                "tv_I": terms["tv_latent"],
                "tv_D": terms["tv_depth"],
                "eps": [float(x) for x in state.eps0],
                "runtime_ms": (time.perf_counter() - t0) * 1000.0,
            }
        )
        rel_drop = (e - e_new) / max(abs(e), 1e-12)
        e = e_new
        if rel_drop < 1e-4:
            break
    if log_path is not None:
        with open(log_path, "w") as f:
            for rec in log_records:
                f.write(json.dumps(rec) + "\n")
    best.energy_trace = list(state.energy_trace)
    best.warnings = list(state.warnings)
    best.check_trace()
    return best


# ---------------------------------------------------------------------------
# Coarse-to-fine wrapper
# ---------------------------------------------------------------------------


def _box_down2(img: np.ndarray) -> np.ndarray:
    H, W = img.shape[:2]
    H2, W2 = H // 2 * 2, W // 2 * 2
    img = img[:H2, :W2]
    if img.ndim == 3:
        return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def _resize_bilinear(img: np.ndarray, out_hw) -> np.ndarray:
    """Resize with pixel centers at integers (half-pixel alignment rule)."""
    H_out, W_out = out_hw
    H_in, W_in = img.shape[:2]
    xs = (np.arange(W_out) + 0.5) * (W_in / W_out) - 0.5
    ys = (np.arange(H_out) + 0.5) * (H_in / H_out) - 0.5
    gx, gy = np.meshgrid(np.clip(xs, 0, W_in - 1), np.clip(ys, 0, H_in - 1))
    pos = np.stack([gx, gy], axis=-1)
    vals, _ = bilinear_sample(img, pos)
    return vals


def _downsample_lightfield(lf: LightField) -> LightField:
    U, V = lf.angular_dims
    views = np.stack(
        [np.stack([_box_down2(lf.views[u, v]) for v in range(V)]) for u in range(U)]
    )
    K2 = lf.intrinsics.scaled(0.5)
    # box downsampling halves exactly, so pin the size it produced
    H2, W2 = views.shape[2], views.shape[3]
    K2 = replace(K2, width=W2, height=H2)
    return LightField(views, K2, lf.rel_twists)


def _downsample_state(state: EstimationState) -> EstimationState:
    latent = _box_down2(state.latent)
    depth_data = _box_down2(state.depth.data)
    mask = _box_down2(state.depth.mask.astype(float)) > 0.5
    depth = DepthMap(np.maximum(depth_data, state.depth_floor), mask)
    return EstimationState(latent, depth, state.eps0.copy(), depth_floor=state.depth_floor)


def joint_estimate_pyramid(lf: LightField, p: EnergyParams, init: EstimationState,
                           levels: int = 3, log_path=None) -> EstimationState:
    """Coarse-to-fine wrapper around :func:`joint_estimate`.

    ``levels=1`` reproduces the strict single-scale solver.  Each level
    halves the image; depth clamping floors and the motion twist carry over
    unchanged (twists are metric, not pixel, quantities).
    """
    if levels < 1:
        raise ValueError("need at least one pyramid level")
    if init.depth_floor <= 0:
        init = init.copy()
        init.depth_floor = 1e-3 * float(np.median(init.depth.data[init.depth.mask]))
    lfs = [lf]
    for _ in range(levels - 1):
        nxt = lfs[-1]
        if min(nxt.intrinsics.width, nxt.intrinsics.height) < 24:
            break
        lfs.append(_downsample_lightfield(nxt))

    state = init
    for _ in range(len(lfs) - 1):
        state = _downsample_state(state)
    result = None
    for li in range(len(lfs) - 1, -1, -1):
        level_lf = lfs[li]
        if result is not None:
            H, W = level_lf.intrinsics.height, level_lf.intrinsics.width
            latent = _resize_bilinear(result.latent, (H, W))
            depth_data = np.maximum(_resize_bilinear(result.depth.data, (H, W)), result.depth_floor)
            mask = _resize_bilinear(result.depth.mask.astype(float), (H, W)) > 0.5
            state = EstimationState(latent, DepthMap(depth_data, mask), result.eps0.copy(),
                                    depth_floor=result.depth_floor)
        result = joint_estimate(level_lf, p, state,
                                log_path=log_path if li == 0 else None,
                                depth_updates=(li == 0))
    return result
