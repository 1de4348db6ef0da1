"""Ground-truth scene construction and physically consistent blur rendering.

Scenes are stacks of fronto-parallel textured layers (a full-coverage
background plus masked foreground layers).  Rendering casts rays per pixel
against the layer planes, shades with procedural textures defined on world
coordinates, supersamples within each pixel, and averages many frames along
the camera path.  None of this shares code with the blur operator in
:mod:`lfdeblur.blur`: that one bilinearly resamples a discrete latent image
over few path samples, this one ray-casts a continuous scene over >= 40
frames, which keeps solver validation free of inverse crimes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
import json

import numpy as np

from .geometry import Intrinsics, Pose, canonical_twist_sign, se3_exp
from .lightfield import DepthMap, LightField, save_depth, save_image, save_lightfield

_FAMILY_SEED = {"plane": 11, "twoplane": 23, "steps": 37}


# ---------------------------------------------------------------------------
# Procedural textures (continuous functions of world-plane coordinates)
# ---------------------------------------------------------------------------


class ValueNoiseTexture:
    """Band-limited value noise: octaves of smoothstep-interpolated random
    grids covering ``[-extent, extent]^2`` in world units.  ``fine_cell``
    sets the cell size of the finest octave; coarser octaves double it."""

    def __init__(self, seed: int, extent: float, fine_cell: float,
                 octaves: int = 3, lo: float = 0.05, hi: float = 0.95,
                 octave_gain: float = 1.0, contrast: float = 1.0):
        rng = np.random.default_rng(seed)
        self.extent = float(extent)
        self.lo = lo
        self.hi = hi
        self.contrast = float(contrast)
        self.grids = []
        amp = 1.0
        cell = float(fine_cell) * 2 ** (octaves - 1)
        for _ in range(octaves):
            cells = max(2, int(np.ceil(2 * self.extent / cell)))
            self.grids.append((amp, rng.random((cells + 1, cells + 1))))
            amp *= octave_gain
            cell *= 0.5

    def sample(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        total = np.zeros_like(X)
        norm = 0.0
        for amp, grid in self.grids:
            cells = grid.shape[0] - 1
            gx = np.clip((X + self.extent) / (2 * self.extent), 0.0, 1.0) * cells
            gy = np.clip((Y + self.extent) / (2 * self.extent), 0.0, 1.0) * cells
            ix = np.minimum(gx.astype(np.int64), cells - 1)
            iy = np.minimum(gy.astype(np.int64), cells - 1)
            fx = gx - ix
            fy = gy - iy
            sx = fx * fx * (3 - 2 * fx)
            sy = fy * fy * (3 - 2 * fy)
            g00 = grid[iy, ix]
            g10 = grid[iy, ix + 1]
            g01 = grid[iy + 1, ix]
            g11 = grid[iy + 1, ix + 1]
            total += amp * ((1 - sx) * (1 - sy) * g00 + sx * (1 - sy) * g10
                            + (1 - sx) * sy * g01 + sx * sy * g11)
            norm += amp
        t = total / norm
        if self.contrast != 1.0:
            # saturating stretch: flat plateaus with sharp-but-finite edges
            t = np.clip(0.5 + self.contrast * (t - 0.5), 0.0, 1.0)
        return self.lo + (self.hi - self.lo) * t


class MixedTexture:
    """Plateau-and-edge base with low-amplitude fine detail on top.

    The saturated base gives total-variation-friendly structure (what blur
    visibly destroys); the detail octave keeps photo-consistency gradients
    alive everywhere for stereo matching."""

    def __init__(self, base: ValueNoiseTexture, detail: ValueNoiseTexture,
                 detail_amp: float = 0.1):
        self.base = base
        self.detail = detail
        self.detail_amp = float(detail_amp)

    def sample(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        base = self.base.sample(X, Y)
        detail = self.detail.sample(X, Y) - 0.5
        return np.clip(base + self.detail_amp * detail, 0.0, 1.0)


class SinusoidTexture:
    """Sum of plane waves; its straight-line box average has a closed form,
    which makes it the texture of choice for blur-kernel oracles."""

    def __init__(self, components, offset: float = 0.5):
        # components: list of (amplitude, ax, ay, phase)
        self.components = [tuple(float(c) for c in comp) for comp in components]
        self.offset = float(offset)
        total = sum(abs(a) for a, _, _, _ in self.components)
        if self.offset - total < 0.0 or self.offset + total > 1.0:
            raise ValueError("sinusoid texture leaves [0, 1]")

    def sample(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        out = np.full_like(X, self.offset)
        for amp, ax, ay, phase in self.components:
            out = out + amp * np.sin(ax * X + ay * Y + phase)
        return out

    def box_average_x(self, X: np.ndarray, Y: np.ndarray, length: float) -> np.ndarray:
        """Average of the texture over a segment of ``length`` along +x
        centered at (X, Y): the closed-form uniform-blur oracle."""
        out = np.full_like(X, self.offset)
        for amp, ax, ay, phase in self.components:
            if abs(ax * length) < 1e-12:
                out = out + amp * np.sin(ax * X + ay * Y + phase)
            else:
                # (1/L) int_{-L/2}^{L/2} sin(ax (X+s) + ay Y + ph) ds
                att = np.sin(ax * length / 2.0) / (ax * length / 2.0)
                out = out + amp * att * np.sin(ax * X + ay * Y + phase)
        return out


# ---------------------------------------------------------------------------
# Regions and layers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RectRegion:
    """Axis-aligned rectangle in world-plane coordinates."""

    x0: float
    y0: float
    x1: float
    y1: float

    def contains(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        return (X >= self.x0) & (X <= self.x1) & (Y >= self.y0) & (Y <= self.y1)


@dataclass(frozen=True)
class DiskRegion:
    cx: float
    cy: float
    r: float

    def contains(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        return (X - self.cx) ** 2 + (Y - self.cy) ** 2 <= self.r**2


@dataclass(frozen=True)
class Layer:
    """Fronto-parallel textured plane at ``z = depth`` in the reference
    frame.  ``region`` limits where the layer is opaque; ``None`` means the
    layer covers everything (the background)."""

    depth: float
    texture: object
    region: object = None

    def coverage(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        if self.region is None:
            return np.ones_like(X, dtype=bool)
        return self.region.contains(X, Y)


@dataclass
class SceneSpec:
    """Everything needed to render one blurred light field with ground truth."""

    name: str
    layers: list  # nearest-wins compositing; exactly one background layer
    intrinsics: Intrinsics
    angular: tuple  # (U, V)
    baseline: float  # camera grid spacing in scene units
    eps_gt: np.ndarray  # motion twist of the pose at the exposure start
    M_gen: int = 41
    supersample: int = 2

    def __post_init__(self):
        self.eps_gt = np.asarray(self.eps_gt, dtype=float).reshape(6)
        if not all(layer.depth > 0 for layer in self.layers):
            raise ValueError("layer depths must be positive")
        if sum(1 for layer in self.layers if layer.region is None) != 1:
            raise ValueError("scene needs exactly one background layer")

    def rel_twists(self) -> np.ndarray:
        U, V = self.angular
        cu, cv = (U + 1) // 2 - 1, (V + 1) // 2 - 1
        out = np.zeros((U, V, 6))
        for u in range(U):
            for v in range(V):
                offset = np.array([(u - cu) * self.baseline, (v - cv) * self.baseline, 0.0])
                out[u, v, :3] = -offset
        return out

    def path_pose(self, s: float) -> Pose:
        return se3_exp((1.0 - 2.0 * s) * self.eps_gt)


# ---------------------------------------------------------------------------
# Ray casting
# ---------------------------------------------------------------------------


def _pixel_rays(K: Intrinsics, offset=(0.0, 0.0)) -> np.ndarray:
    xs = np.arange(K.width, dtype=float) + offset[0]
    ys = np.arange(K.height, dtype=float) + offset[1]
    gx, gy = np.meshgrid(xs, ys)
    rays = np.empty((K.height, K.width, 3))
    rays[..., 0] = (gx - K.cx) / K.fx
    rays[..., 1] = (gy - K.cy) / K.fy
    rays[..., 2] = 1.0
    return rays


def raycast(scene: SceneSpec, pose: Pose, offset=(0.0, 0.0)):
    """Cast one ray per pixel from the camera at ``pose`` (world-to-camera).

    Returns ``(shade, depth, hit)``: texture values, ray depth in the camera
    frame, and a hit mask (a ray can only miss if every layer is behind the
    camera).
    """
    K = scene.intrinsics
    rays = _pixel_rays(K, offset)
    origin = -pose.R.T @ pose.t
    dirs = rays @ pose.R  # R^T applied to each ray
    shade = np.zeros((K.height, K.width))
    depth = np.full((K.height, K.width), np.inf)
    hit = np.zeros((K.height, K.width), dtype=bool)
    for layer in scene.layers:
        dz = dirs[..., 2]
        ok = np.abs(dz) > 1e-12
        s = np.where(ok, (layer.depth - origin[2]) / np.where(ok, dz, 1.0), np.inf)
        ok &= s > 1e-9
        X = origin[0] + s * dirs[..., 0]
        Y = origin[1] + s * dirs[..., 1]
        covered = ok & layer.coverage(X, Y) & (s < depth)
        if np.any(covered):
            shade = np.where(covered, layer.texture.sample(X, Y), shade)
            depth = np.where(covered, s, depth)
            hit |= covered
    return shade, depth, hit


def render_view(scene: SceneSpec, pose: Pose) -> np.ndarray:
    """Supersampled shading of one camera; returns (H, W) in [0, 1]."""
    ss = scene.supersample
    acc = np.zeros((scene.intrinsics.height, scene.intrinsics.width))
    for i in range(ss):
        for j in range(ss):
            off = ((i + 0.5) / ss - 0.5, (j + 0.5) / ss - 0.5)
            shade, _, hit = raycast(scene, pose, off)
            if not np.all(hit):
                raise ValueError("scene leaves uncovered pixels (layer behind camera?)")
            acc += shade
    return np.clip(acc / (ss * ss), 0.0, 1.0)


def render_depth(scene: SceneSpec, pose: Pose) -> DepthMap:
    _, depth, hit = raycast(scene, pose)
    if not np.all(hit):
        raise ValueError("scene leaves uncovered pixels (layer behind camera?)")
    return DepthMap(depth, hit)


def render_center_frames(scene: SceneSpec, fractions) -> list:
    """Sharp center-view frames at the given exposure fractions."""
    return [render_view(scene, scene.path_pose(s)) for s in fractions]


def render_blurred_lf(scene: SceneSpec):
    """Render the blurred and sharp light fields plus ground-truth depth.

    Returns ``(blurred, sharp, gt_depth, eps_gt)``.  Each view is the
    average of ``M_gen`` frames along the camera path; the sharp light field
    is the frame at the middle of the exposure.
    """
    if scene.M_gen < 40:
        raise ValueError("blur simulation needs at least 40 frames")
    M_gen = scene.M_gen if scene.M_gen % 2 == 1 else scene.M_gen + 1
    U, V = scene.angular
    K = scene.intrinsics
    rel = scene.rel_twists()
    static = not np.any(scene.eps_gt)
    blurred = np.zeros((U, V, K.height, K.width))
    sharp = np.zeros_like(blurred)
    mid = (M_gen - 1) // 2
    for u in range(U):
        for v in range(V):
            P_rel = se3_exp(rel[u, v])
            if static:
                frame = render_view(scene, P_rel)
                blurred[u, v] = frame
                sharp[u, v] = frame
                continue
            acc = np.zeros((K.height, K.width))
            for k in range(M_gen):
                s = k / (M_gen - 1)
                frame = render_view(scene, P_rel.compose(scene.path_pose(s)))
                acc += frame
                if k == mid:
                    sharp[u, v] = frame
            blurred[u, v] = acc / M_gen
    gt_depth = render_depth(scene, Pose.identity())
    lf_blur = LightField(blurred, K, rel)
    lf_sharp = LightField(sharp, K, rel)
    return lf_blur, lf_sharp, gt_depth, scene.eps_gt.copy()


# ---------------------------------------------------------------------------
# Bundled desk-scale scenes
# ---------------------------------------------------------------------------

MOTION_TYPES = (
    "forward",
    "rotation",
    "translation",
    "forward+rotation",
    "forward+translation",
    "rotation+translation",
)


def _motion_twist(kind: str, fx: float, d0: float, r_char: float, blur_px: float) -> np.ndarray:
    """Twist whose center-view blur streaks span roughly ``blur_px`` pixels."""
    v_trans = blur_px * d0 / (2.0 * fx)
    v_fwd = blur_px * d0 / (2.0 * r_char)
    w_pan = blur_px / (2.0 * fx)
    w_roll = blur_px / (2.0 * r_char)
    eps = np.zeros(6)
    if kind == "forward":
        eps[2] = v_fwd
    elif kind == "rotation":
        eps[4] = 0.9 * w_pan
        eps[5] = 0.7 * w_roll
    elif kind == "translation":
        eps[0] = 0.9 * v_trans
        eps[1] = -0.4 * v_trans
    elif kind == "forward+rotation":
        eps[2] = 0.6 * v_fwd
        eps[4] = 0.7 * w_pan
    elif kind == "forward+translation":
        eps[2] = 0.6 * v_fwd
        eps[0] = 0.65 * v_trans
    elif kind == "rotation+translation":
        eps[5] = 0.7 * w_roll
        eps[0] = 0.75 * v_trans
    else:
        raise ValueError(f"unknown motion type {kind!r}")
    return canonical_twist_sign(eps)


def _scene_intrinsics(width: int, height: int) -> Intrinsics:
    return Intrinsics(
        fx=0.9 * width,
        fy=0.9 * width,
        cx=(width - 1) / 2.0,
        cy=(height - 1) / 2.0,
        width=width,
        height=height,
    )


def _world_extent(K: Intrinsics, far: float) -> float:
    half_fov = max(K.width, K.height) / (2.0 * K.fx)
    return far * half_fov * 1.6 + 1.0


def make_scene(family: str, motion: str, seed: int, width: int = 128, height: int = 96,
               views: int = 3, blur_px: float = 6.0, texture_px: float = 10.0,
               octaves: int = 2) -> SceneSpec:
    """One bundled scene; ``family`` in {plane, twoplane, steps, smooth}.

    ``texture_px`` is the finest texture feature size in pixels at each
    layer's depth; ``smooth`` is a gently textured single plane used by
    self-consistency and stationarity checks.
    """
    K = _scene_intrinsics(width, height)
    r_char = 0.35 * min(width, height)
    base_seed = seed * 1000 + _FAMILY_SEED.get(family, 53)

    def cell(depth, px):
        return px * depth / K.fx

    def mixed(seed_, ext, depth, lo=0.05, hi=0.95):
        base = ValueNoiseTexture(seed_, ext, cell(depth, texture_px), octaves,
                                 lo=lo, hi=hi, contrast=5.0)
        detail = ValueNoiseTexture(seed_ + 500, ext, cell(depth, 3.0), 2)
        return MixedTexture(base, detail, detail_amp=0.12)

    if family == "plane":
        far = 3.0
        ext = _world_extent(K, far)
        layers = [Layer(3.0, mixed(base_seed, ext, 3.0))]
        d0 = 3.0
        baseline = 0.045
    elif family == "smooth":
        far = 3.0
        ext = _world_extent(K, far)
        layers = [
            Layer(3.0, ValueNoiseTexture(base_seed, ext, cell(3.0, 24.0), 2,
                                         lo=0.25, hi=0.75, octave_gain=0.6))
        ]
        d0 = 3.0
        baseline = 0.045
    elif family == "twoplane":
        far = 5.0
        ext = _world_extent(K, far)
        layers = [
            Layer(5.0, mixed(base_seed, ext, 5.0)),
            Layer(2.5, mixed(base_seed + 1, ext, 2.5, lo=0.1, hi=0.98),
                  RectRegion(-0.55, -0.45, 0.35, 0.4)),
        ]
        d0 = np.sqrt(2.5 * 5.0)  # balance blur between the layers
        baseline = 0.035
    elif family == "steps":
        far = 5.4
        ext = _world_extent(K, far)
        layers = [
            Layer(5.4, mixed(base_seed, ext, 5.4)),
            Layer(4.4, mixed(base_seed + 1, ext, 4.4, lo=0.1, hi=0.9),
                  RectRegion(-2.6, -0.8, -0.35, 2.6)),
            Layer(3.6, mixed(base_seed + 2, ext, 3.6, lo=0.1, hi=0.98),
                  RectRegion(0.35, -1.8, 1.4, 0.55)),
        ]
        d0 = 4.4
        baseline = 0.035
    else:
        raise ValueError(f"unknown scene family {family!r}")
    eps = _motion_twist(motion, K.fx, d0, r_char, blur_px)
    return SceneSpec(
        name=f"{family}/{motion}",
        layers=layers,
        intrinsics=K,
        angular=(views, views),
        baseline=baseline,
        eps_gt=eps,
    )


def make_default_scenes(seed: int) -> list:
    """Deterministic bundle: three scene families times six motion types."""
    scenes = []
    for family, width, height, views, blur in (
        ("plane", 96, 72, 3, 9.0),
        ("twoplane", 128, 96, 3, 7.0),
        ("steps", 96, 72, 5, 6.0),
    ):
        for motion in MOTION_TYPES:
            scenes.append(
                make_scene(family, motion, seed, width=width, height=height,
                           views=views, blur_px=blur)
            )
    return scenes


# ---------------------------------------------------------------------------
# On-disk outputs
# ---------------------------------------------------------------------------


def save_scene_outputs(scene: SceneSpec, out_dir, n_frames: int = 5) -> dict:
    """Render a scene and write the full ground-truth bundle.

    Layout: blurred manifest at ``out_dir/manifest.json``, sharp light field
    under ``sharp/``, depth as ``gt_depth.pfm``, sharp center frames along
    the path under ``frames/``, and ``gt.json`` tying them together.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    blurred, sharp, gt_depth, eps_gt = render_blurred_lf(scene)
    save_lightfield(blurred, out_dir)
    save_lightfield(sharp, out_dir / "sharp")
    save_depth(gt_depth, out_dir / "gt_depth.pfm")
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(exist_ok=True)
    fractions = np.linspace(0.0, 1.0, n_frames)
    for i, frame in enumerate(render_center_frames(scene, fractions)):
        save_image(frame, frames_dir / f"frame_{i}.png")
    gt = {
        "eps_gt": [float(x) for x in eps_gt],
        "depth_file": "gt_depth.pfm",
        "sharp_manifest": "sharp/manifest.json",
    }
    (out_dir / "gt.json").write_text(json.dumps(gt, indent=1))
    return gt
