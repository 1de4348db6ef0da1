"""SE(3) pose algebra, pinhole projection, and time-interpolated camera paths.

Conventions used everywhere in this package:

* A twist is a 6-vector ``(vx, vy, vz, wx, wy, wz)``: translational part
  first, rotational part second.
* A pose ``(R, t)`` maps world coordinates into camera coordinates,
  ``X_cam = R @ X_world + t`` (extrinsics convention).
* Pixel centers sit at integer coordinates, origin at the top-left pixel.

The camera path over the exposure is parameterized by the twist of the pose
at the start of the exposure, with the symmetric endpoint rule
``P(t1) = P(t0)^-1`` so the pose at the middle of the exposure is exactly
the identity.  Since both endpoints are powers of one twist, the geodesic
between them is ``P(s) = exp((1 - 2 s) * eps0)`` for ``s in [0, 1]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError, BranchAmbiguityError, GeometryError, InvalidDepthError

# Below this rotation angle the Rodrigues coefficients switch to their
# second-order Taylor expansions to avoid catastrophic cancellation.
SMALL_ANGLE = 1e-6


def _skew(w: np.ndarray) -> np.ndarray:
    """Cross-product (hat) matrix of a 3-vector."""
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


@dataclass(frozen=True)
class Pose:
    """Rigid transform in SE(3), stored as rotation matrix and translation."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        t = np.asarray(self.t, dtype=float).reshape(3)
        if R.shape != (3, 3):
            raise GeometryError(f"rotation must be 3x3, got {R.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise GeometryError("pose contains non-finite entries")
        if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-9:
            raise GeometryError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise GeometryError("rotation determinant differs from +1")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.t)

    def compose(self, other: "Pose") -> "Pose":
        """Return ``self @ other`` (apply ``other`` first)."""
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Transform points of shape (3,) or (N, 3)."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            return self.R @ X + self.t
        return X @ self.R.T + self.t

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def to_flat(self) -> list:
        """Row-major 12-element [R|t] serialization."""
        return np.hstack([self.R, self.t[:, None]]).reshape(-1).tolist()

    @staticmethod
    def from_flat(values) -> "Pose":
        M = np.asarray(values, dtype=float).reshape(3, 4)
        return Pose(M[:, :3], M[:, 3])


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera intrinsics shared by all sub-aperture views."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point must lie inside the image")

    def scaled(self, s: float) -> "Intrinsics":
        """Intrinsics of the same camera at image scale ``s`` (pixel centers
        at integers, so the principal point shifts by the half-pixel rule)."""
        return Intrinsics(
            fx=self.fx * s,
            fy=self.fy * s,
            cx=(self.cx + 0.5) * s - 0.5,
            cy=(self.cy + 0.5) * s - 0.5,
            width=max(1, int(round(self.width * s))),
            height=max(1, int(round(self.height * s))),
        )


def validate_twist(eps: np.ndarray) -> np.ndarray:
    eps = np.asarray(eps, dtype=float).reshape(6)
    if not np.all(np.isfinite(eps)):
        raise GeometryError("twist contains non-finite entries")
    if np.linalg.norm(eps[3:]) >= math.pi:
        raise GeometryError("rotation part of twist must have norm < pi")
    return eps


def canonical_twist_sign(eps: np.ndarray) -> np.ndarray:
    """Fix the time-reversal gauge of a symmetric-path twist.

    The symmetric endpoint rule makes ``eps`` and ``-eps`` describe the same
    exposure (the sample poses are the same set), so blur observations can
    never distinguish them.  Estimators and ground-truth generators both
    canonicalize: the component of largest magnitude is made positive.
    """
    eps = np.asarray(eps, dtype=float).reshape(6)
    idx = int(np.argmax(np.abs(eps)))
    if eps[idx] < 0:
        return -eps
    return eps.copy()


def se3_exp(eps: np.ndarray) -> Pose:
    """Exponential map se(3) -> SE(3) via the closed-form Rodrigues formula."""
    eps = validate_twist(eps)
    v, w = eps[:3], eps[3:]
    theta = np.linalg.norm(w)
    W = _skew(w)
    WW = W @ W
    if theta < SMALL_ANGLE:
        # second-order Taylor of sin(t)/t, (1-cos t)/t^2, (t-sin t)/t^3
        A = 1.0 - theta**2 / 6.0
        B = 0.5 - theta**2 / 24.0
        C = 1.0 / 6.0 - theta**2 / 120.0
    else:
        A = math.sin(theta) / theta
        B = (1.0 - math.cos(theta)) / theta**2
        C = (theta - math.sin(theta)) / theta**3
    R = np.eye(3) + A * W + B * WW
    V = np.eye(3) + B * W + C * WW
    return Pose(R, V @ v)


def se3_log(p: Pose) -> np.ndarray:
    """Logarithm map SE(3) -> se(3) on the principal branch (angle < pi)."""
    trace = np.clip((np.trace(p.R) - 1.0) / 2.0, -1.0, 1.0)
    theta = math.acos(trace)
    if theta >= math.pi - 1e-6:
        raise BranchAmbiguityError("rotation angle too close to pi for log")
    if theta < SMALL_ANGLE:
        w = np.array([p.R[2, 1] - p.R[1, 2], p.R[0, 2] - p.R[2, 0], p.R[1, 0] - p.R[0, 1]]) / 2.0
        W = _skew(w)
        V_inv = np.eye(3) - 0.5 * W + (1.0 / 12.0) * (W @ W)
    else:
        w = (
            theta
            / (2.0 * math.sin(theta))
            * np.array([p.R[2, 1] - p.R[1, 2], p.R[0, 2] - p.R[2, 0], p.R[1, 0] - p.R[0, 1]])
        )
        W = _skew(w)
        coeff = (1.0 - theta * math.cos(theta / 2.0) / (2.0 * math.sin(theta / 2.0))) / theta**2
        V_inv = np.eye(3) - 0.5 * W + coeff * (W @ W)
    return np.hstack([V_inv @ p.t, w])


@dataclass(frozen=True)
class CameraPath:
    """Exposure-time camera path parameterized by the start-of-exposure twist.

    ``M`` samples are placed at fractions ``s_m = m / (M - 1)`` so the first
    and last samples land exactly on ``exp(eps0)`` and its inverse.  With odd
    ``M`` the middle sample is exactly the identity (the reference time).
    """

    eps0: np.ndarray
    M: int

    def __post_init__(self):
        eps0 = validate_twist(self.eps0)
        if self.M < 2:
            raise GeometryError("camera path needs at least two samples")
        object.__setattr__(self, "eps0", eps0)

    def fraction(self, m: int) -> float:
        if not 0 <= m <= self.M - 1:
            raise GeometryError(f"sample index {m} outside [0, {self.M - 1}]")
        return m / (self.M - 1)

    def pose_at_fraction(self, s: float) -> Pose:
        """Pose at continuous exposure fraction ``s`` in [0, 1]."""
        return se3_exp((1.0 - 2.0 * s) * self.eps0)

    def scale_at(self, m: int) -> float:
        """Twist scale factor ``1 - 2 s_m`` of sample ``m``."""
        return 1.0 - 2.0 * self.fraction(m)


def interpolate_pose(path: CameraPath, m: int) -> Pose:
    """Geodesic pose at sample ``m`` of the exposure path."""
    return path.pose_at_fraction(path.fraction(m))


def project(K: Intrinsics, X: np.ndarray) -> np.ndarray:
    """Project one camera-frame point to pixel coordinates."""
    X = np.asarray(X, dtype=float).reshape(3)
    if X[2] <= 0:
        raise BehindCameraError(f"point depth {X[2]} is not positive")
    return np.array([K.fx * X[0] / X[2] + K.cx, K.fy * X[1] / X[2] + K.cy])


def backproject(K: Intrinsics, x: np.ndarray, d: float) -> np.ndarray:
    """Back-project pixel ``x`` to the camera-frame point at depth ``d``."""
    if not (d > 0 and np.isfinite(d)):
        raise InvalidDepthError(f"depth must be positive and finite, got {d}")
    x = np.asarray(x, dtype=float).reshape(2)
    return np.array([(x[0] - K.cx) / K.fx * d, (x[1] - K.cy) / K.fy * d, d])


def warp_pixel(K: Intrinsics, x: np.ndarray, d: float, P_src: Pose, P_dst: Pose):
    """Transfer pixel ``x`` at depth ``d`` from the source camera to the
    destination camera: back-project, move through world, re-project.

    Returns ``(x_dst, z_dst)`` where ``z_dst`` is the transferred depth.
    """
    X_src = backproject(K, x, d)
    X_dst = P_dst.apply(P_src.inverse().apply(X_src))
    if X_dst[2] <= 0:
        raise BehindCameraError("warped point fell behind the destination camera")
    return project(K, X_dst), float(X_dst[2])


# ---------------------------------------------------------------------------
# Vectorized kernels used by the blur operator and the solvers.  These mirror
# the scalar operations above but work on flat arrays and report validity
# through masks instead of raising.
# ---------------------------------------------------------------------------


def backproject_grid(K: Intrinsics, depth: np.ndarray) -> np.ndarray:
    """Back-project every pixel of a (H, W) depth map; returns (H, W, 3)."""
    H, W = depth.shape
    xs = np.arange(W, dtype=float)
    ys = np.arange(H, dtype=float)
    gx, gy = np.meshgrid(xs, ys)
    X = np.empty((H, W, 3))
    X[..., 0] = (gx - K.cx) / K.fx * depth
    X[..., 1] = (gy - K.cy) / K.fy * depth
    X[..., 2] = depth
    return X


def normalized_rays(K: Intrinsics) -> np.ndarray:
    """Unit-depth rays ((x-cx)/fx, (y-cy)/fy, 1) for every pixel; (H, W, 3)."""
    xs = np.arange(K.width, dtype=float)
    ys = np.arange(K.height, dtype=float)
    gx, gy = np.meshgrid(xs, ys)
    rays = np.empty((K.height, K.width, 3))
    rays[..., 0] = (gx - K.cx) / K.fx
    rays[..., 1] = (gy - K.cy) / K.fy
    rays[..., 2] = 1.0
    return rays


def project_points(K: Intrinsics, X: np.ndarray):
    """Project (N, 3) camera-frame points; returns ((N, 2) pixels, valid mask)."""
    z = X[..., 2]
    valid = z > 0
    zsafe = np.where(valid, z, 1.0)
    out = np.empty(X.shape[:-1] + (2,))
    out[..., 0] = K.fx * X[..., 0] / zsafe + K.cx
    out[..., 1] = K.fy * X[..., 1] / zsafe + K.cy
    return out, valid


@dataclass(frozen=True)
class _Affine:
    """Precomposed rigid map X -> A @ X + b."""

    A: np.ndarray
    b: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        return X @ self.A.T + self.b

    @staticmethod
    def from_poses(P_src: Pose, P_dst: Pose) -> "_Affine":
        rel = P_dst.compose(P_src.inverse())
        return _Affine(rel.R, rel.t)
