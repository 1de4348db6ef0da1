"""4D light-field container, sub-aperture geometry, and file I/O.

On disk a light field is a ``manifest.json`` next to one PNG per view::

    {"angular": [U, V],
     "intrinsics": {"fx", "fy", "cx", "cy", "width", "height"},
     "views": [{"u", "v", "file", "rel_twist": [6]}, ...]}

Depth maps are stored as little-endian portable float maps (PFM, scale
-1.0) with invalid pixels encoded as 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import (
    DimensionMismatchError,
    LightFieldError,
    ManifestError,
    MissingViewError,
    PfmFormatError,
)
from .geometry import Intrinsics, Pose, se3_exp

MANIFEST_NAME = "manifest.json"
VIEW_PATTERN = "view_{u}_{v}.png"


def validate_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] != 3):
        raise LightFieldError(f"image must be (H, W) or (H, W, 3), got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise LightFieldError("image contains non-finite samples")
    if img.min() < 0.0 or img.max() > 1.0:
        raise LightFieldError("image samples must lie in [0, 1]")
    return img


@dataclass
class DepthMap:
    """Per-pixel depth at the center view plus a validity mask."""

    data: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2:
            raise LightFieldError(f"depth map must be 2-D, got {self.data.shape}")
        if self.mask is None:
            self.mask = np.ones(self.data.shape, dtype=bool)
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.data.shape:
                raise LightFieldError("depth mask shape differs from data shape")
        valid = self.data[self.mask]
        if valid.size and not (np.all(np.isfinite(valid)) and np.all(valid > 0)):
            raise LightFieldError("valid depth entries must be positive and finite")

    @property
    def shape(self):
        return self.data.shape

    def copy(self) -> "DepthMap":
        return DepthMap(self.data.copy(), self.mask.copy())


@dataclass
class LightField:
    """Grid of sub-aperture views with shared intrinsics and fixed relative
    poses.  ``views[u][v]`` is a float image in [0, 1]; the relative pose
    maps center-camera coordinates into the camera of view (u, v)."""

    views: np.ndarray  # (U, V, H, W) or (U, V, H, W, 3)
    intrinsics: Intrinsics
    rel_twists: np.ndarray  # (U, V, 6)
    rel_poses: list = field(init=False, repr=False)

    def __post_init__(self):
        self.views = np.asarray(self.views, dtype=float)
        if self.views.ndim not in (4, 5):
            raise LightFieldError(f"views must be (U,V,H,W[,3]), got {self.views.shape}")
        U, V = self.views.shape[:2]
        H, W = self.views.shape[2:4]
        if (W, H) != (self.intrinsics.width, self.intrinsics.height):
            raise DimensionMismatchError(
                f"views are {W}x{H} but intrinsics say "
                f"{self.intrinsics.width}x{self.intrinsics.height}"
            )
        self.rel_twists = np.asarray(self.rel_twists, dtype=float)
        if self.rel_twists.shape != (U, V, 6):
            raise LightFieldError("rel_twists must have shape (U, V, 6)")
        self.rel_poses = [[se3_exp(self.rel_twists[u, v]) for v in range(V)] for u in range(U)]
        cu, cv = self.center_index
        center = self.rel_poses[cu][cv].matrix()
        if np.max(np.abs(center - np.eye(4))) > 1e-12:
            raise LightFieldError("relative pose at the center view must be the identity")
        if not np.all(np.isfinite(self.views)):
            raise LightFieldError("views contain non-finite samples")
        if self.views.min() < 0.0 or self.views.max() > 1.0:
            raise LightFieldError("view samples must lie in [0, 1]")

    @property
    def angular_dims(self):
        return self.views.shape[0], self.views.shape[1]

    @property
    def center_index(self):
        U, V = self.views.shape[:2]
        return (U + 1) // 2 - 1, (V + 1) // 2 - 1

    @property
    def channels(self) -> int:
        return 1 if self.views.ndim == 4 else 3

    def view(self, u: int, v: int) -> np.ndarray:
        return self.views[u, v]

    def center_view(self) -> np.ndarray:
        cu, cv = self.center_index
        return self.views[cu, cv]

    def rel_pose(self, u: int, v: int) -> Pose:
        return self.rel_poses[u][v]

    def view_indices(self):
        U, V = self.angular_dims
        return [(u, v) for u in range(U) for v in range(V)]

    def audit(self):
        """Re-run the construction invariants; raises on violation."""
        LightField(self.views, self.intrinsics, self.rel_twists)


# ---------------------------------------------------------------------------
# PNG helpers
# ---------------------------------------------------------------------------


def load_image(path) -> np.ndarray:
    """Load a PNG as float in [0, 1]; integer images are divided by their
    type maximum."""
    with PILImage.open(path) as im:
        if im.mode in ("I", "I;16", "I;16B"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif im.mode in ("L", "RGB"):
            arr = np.asarray(im, dtype=np.float64) / 255.0
        elif im.mode in ("LA", "RGBA"):
            arr = np.asarray(im.convert(im.mode[:-1]), dtype=np.float64) / 255.0
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return np.clip(arr, 0.0, 1.0)


def save_image(img: np.ndarray, path, bit_depth: int = 16):
    """Save a float image in [0, 1] as PNG.  Grayscale supports 8 or 16 bit;
    RGB is written as 8 bit."""
    img = np.clip(np.asarray(img, dtype=float), 0.0, 1.0)
    path = Path(path)
    if img.ndim == 2:
        if bit_depth == 16:
            data = np.round(img * 65535.0).astype(np.uint16)
            PILImage.fromarray(data).save(path)
        else:
            data = np.round(img * 255.0).astype(np.uint8)
            PILImage.fromarray(data, mode="L").save(path)
    else:
        data = np.round(img * 255.0).astype(np.uint8)
        PILImage.fromarray(data, mode="RGB").save(path)


# ---------------------------------------------------------------------------
# Manifest I/O
# ---------------------------------------------------------------------------


def save_lightfield(lf: LightField, out_dir) -> Path:
    """Write views and manifest to ``out_dir``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    U, V = lf.angular_dims
    views = []
    for u in range(U):
        for v in range(V):
            name = VIEW_PATTERN.format(u=u, v=v)
            save_image(lf.views[u, v], out_dir / name)
            views.append(
                {
                    "u": u,
                    "v": v,
                    "file": name,
                    "rel_twist": [float(x) for x in lf.rel_twists[u, v]],
                }
            )
    K = lf.intrinsics
    manifest = {
        "angular": [U, V],
        "intrinsics": {
            "fx": K.fx,
            "fy": K.fy,
            "cx": K.cx,
            "cy": K.cy,
            "width": K.width,
            "height": K.height,
        },
        "views": views,
    }
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=1))
    return path


def load_lightfield(manifest_path) -> LightField:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    if not manifest_path.exists():
        raise MissingViewError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    try:
        U, V = (int(x) for x in manifest["angular"])
        K = manifest["intrinsics"]
        intr = Intrinsics(
            fx=float(K["fx"]),
            fy=float(K["fy"]),
            cx=float(K["cx"]),
            cy=float(K["cy"]),
            width=int(K["width"]),
            height=int(K["height"]),
        )
        entries = manifest["views"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"manifest missing or malformed field: {exc}") from exc
    if len(entries) != U * V:
        raise ManifestError(f"expected {U * V} views, manifest lists {len(entries)}")

    views = None
    rel = np.zeros((U, V, 6))
    seen = set()
    for entry in entries:
        try:
            u, v = int(entry["u"]), int(entry["v"])
            name = entry["file"]
            twist = np.asarray(entry["rel_twist"], dtype=float).reshape(6)
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"malformed view entry: {exc}") from exc
        if not (0 <= u < U and 0 <= v < V) or (u, v) in seen:
            raise ManifestError(f"view index ({u}, {v}) out of range or duplicated")
        seen.add((u, v))
        rel[u, v] = twist
        view_path = manifest_path.parent / name
        if not view_path.exists():
            raise MissingViewError(f"view file missing: {view_path}")
        img = load_image(view_path)
        H, W = img.shape[:2]
        if (W, H) != (intr.width, intr.height):
            raise DimensionMismatchError(
                f"view ({u}, {v}) is {W}x{H}, expected {intr.width}x{intr.height}"
            )
        if views is None:
            views = np.zeros((U, V) + img.shape)
        elif img.shape != views.shape[2:]:
            raise DimensionMismatchError(
                f"view ({u}, {v}) channel/shape {img.shape} differs from {views.shape[2:]}"
            )
        views[u, v] = img
    return LightField(views, intr, rel)


# ---------------------------------------------------------------------------
# PFM I/O
# ---------------------------------------------------------------------------


def save_pfm(data: np.ndarray, path):
    """Write a float32 PFM (little-endian, bottom-to-top rows)."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        magic = b"Pf"
        H, W = data.shape
    elif data.ndim == 3 and data.shape[2] == 3:
        magic = b"PF"
        H, W = data.shape[:2]
    else:
        raise PfmFormatError(f"PFM supports (H,W) or (H,W,3), got {data.shape}")
    with open(path, "wb") as f:
        f.write(magic + b"\n")
        f.write(f"{W} {H}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.flipud(data).tobytes())


def load_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic not in (b"Pf", b"PF"):
            raise PfmFormatError(f"bad PFM magic {magic!r}")
        dims = f.readline().split()
        if len(dims) != 2:
            raise PfmFormatError("bad PFM dimension line")
        W, H = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        channels = 3 if magic == b"PF" else 1
        count = W * H * channels
        raw = f.read(count * 4)
        if len(raw) != count * 4:
            raise PfmFormatError("truncated PFM payload")
    endian = "<" if scale < 0 else ">"
    data = np.frombuffer(raw, dtype=endian + "f4").reshape(
        (H, W) if channels == 1 else (H, W, 3)
    )
    return np.flipud(data).copy()


def save_depth(d: DepthMap, path):
    """Write a depth map as PFM; invalid pixels are stored as 0."""
    data = np.where(d.mask, d.data, 0.0).astype(np.float32)
    save_pfm(data, path)


def load_depth(path) -> DepthMap:
    data = load_pfm(path)
    if data.ndim != 2:
        raise PfmFormatError("depth PFM must be single channel")
    mask = data > 0
    safe = np.where(mask, data, 1.0)
    return DepthMap(safe.astype(float), mask)


def to_gray(img: np.ndarray) -> np.ndarray:
    """Rec.601 luma; used only for initialization cost volumes."""
    if img.ndim == 2:
        return img
    return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]
