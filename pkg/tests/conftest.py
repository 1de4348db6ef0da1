"""Shared fixtures: small rendered scenes are expensive, so they are built
once per session."""

import numpy as np
import pytest

from lfdeblur import synth
from lfdeblur.geometry import Intrinsics
from lfdeblur.lightfield import DepthMap, LightField


@pytest.fixture(scope="session")
def tiny_lightfield():
    """3x3 views of random texture with a constant-depth plane; no blur."""
    rng = np.random.default_rng(0)
    H, W = 12, 16
    K = Intrinsics(fx=24.0, fy=24.0, cx=(W - 1) / 2, cy=(H - 1) / 2, width=W, height=H)
    views = rng.random((3, 3, H, W))
    rel = np.zeros((3, 3, 6))
    for u in range(3):
        for v in range(3):
            rel[u, v, :3] = [-(u - 1) * 0.05, -(v - 1) * 0.05, 0]
    return LightField(views, K, rel), DepthMap(np.full((H, W), 2.0))


@pytest.fixture(scope="session")
def small_blurred_scene():
    """96x72 two-plane scene with translation blur, rendered once."""
    scene = synth.make_scene("twoplane", "translation", 0, width=96, height=72,
                             views=3, blur_px=6.0)
    blurred, sharp, gt_depth, eps_gt = synth.render_blurred_lf(scene)
    return {
        "scene": scene,
        "blurred": blurred,
        "sharp": sharp,
        "gt_depth": gt_depth,
        "eps_gt": eps_gt,
    }


@pytest.fixture(scope="session")
def smooth_scene():
    """Gently textured plane for self-consistency and stationarity checks."""
    scene = synth.make_scene("smooth", "translation", 0, width=96, height=72,
                             views=3, blur_px=2.5)
    blurred, sharp, gt_depth, eps_gt = synth.render_blurred_lf(scene)
    return {
        "scene": scene,
        "blurred": blurred,
        "sharp": sharp,
        "gt_depth": gt_depth,
        "eps_gt": eps_gt,
    }
