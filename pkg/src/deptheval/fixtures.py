"""Analytic test scenes and published reference values.

Analytic scenes have closed-form depth and normals so geometric
operations can be checked against exact oracles. Reference values
(`reference_value`, `sensitivity_reference`) ship as data files; every
entry must carry a `source` note describing where the number comes
from, and the loader rejects entries without one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .depthcore import CameraIntrinsics, DepthMap, pixel_rays

SCENE_KINDS = ("plane", "slanted_plane", "sphere_cap", "step", "ramp")


@dataclass
class AnalyticScene:
    kind: str
    depth: DepthMap
    intr: CameraIntrinsics
    normals: np.ndarray | None  # (H, W, 3) camera-oriented, None if piecewise
    normals_valid: np.ndarray | None


def default_intrinsics(h: int, w: int, fov_scale: float = 1.0) -> CameraIntrinsics:
    f = fov_scale * max(h, w)
    return CameraIntrinsics(f, f, (w - 1) / 2.0, (h - 1) / 2.0)


def _plane_depth(h, w, intr, normal, distance):
    """Depth of the plane n.p = distance; n oriented toward the camera
    convention is handled by the caller."""
    rays = pixel_rays(h, w, intr)
    denom = rays @ np.asarray(normal, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = distance / denom
    valid = np.isfinite(z) & (z > 0)
    return np.where(valid, z, 1.0), valid


def generate(kind: str, resolution: int = 64, intr: CameraIntrinsics | None = None) -> AnalyticScene:
    h = w = resolution
    intr = intr or default_intrinsics(h, w)
    if kind == "plane":
        depth = np.full((h, w), 2.0)
        valid = np.ones((h, w), bool)
        normals = np.tile(np.array([0.0, 0.0, -1.0]), (h, w, 1))
        return AnalyticScene(kind, DepthMap(depth, valid), intr, normals, valid.copy())
    if kind == "slanted_plane":
        # plane with unit normal tilted about the y-axis, 2 m along its normal
        n = np.array([np.sin(0.3), 0.0, np.cos(0.3)])
        depth, valid = _plane_depth(h, w, intr, n, 2.0)
        normals = np.tile(-n, (h, w, 1))  # oriented toward the camera
        return AnalyticScene(kind, DepthMap(depth, valid), intr, normals, valid.copy())
    if kind == "sphere_cap":
        center = np.array([0.0, 0.0, 4.0])
        radius = 2.5
        rays = pixel_rays(h, w, intr)
        rr = np.einsum("ijk,ijk->ij", rays, rays)
        rc = rays @ center
        disc = rc ** 2 - rr * (center @ center - radius ** 2)
        valid = disc > 1e-9
        z = np.where(valid, (rc - np.sqrt(np.maximum(disc, 0.0))) / rr, 1.0)
        valid &= z > 0
        points = rays * z[..., None]
        normals = (points - center) / radius
        return AnalyticScene(kind, DepthMap(np.where(valid, z, 1.0), valid), intr, normals, valid.copy())
    if kind == "step":
        depth = np.full((h, w), 2.0)
        depth[:, w // 2:] = 1.0  # near layer on the right
        valid = np.ones((h, w), bool)
        normals = np.tile(np.array([0.0, 0.0, -1.0]), (h, w, 1))
        return AnalyticScene(kind, DepthMap(depth, valid), intr, normals, valid.copy())
    if kind == "ramp":
        # depth increasing smoothly left to right, no occlusions
        u = np.linspace(0.0, 1.0, w)
        depth = np.tile(1.0 + 1.5 * u, (h, 1))
        valid = np.ones((h, w), bool)
        return AnalyticScene(kind, DepthMap(depth, valid), intr, None, None)
    raise ValueError(f"unknown analytic scene kind {kind!r}")


def all_scenes(resolution: int = 64) -> list[AnalyticScene]:
    return [generate(kind, resolution) for kind in SCENE_KINDS]


def synthetic_scene(seed: int, resolution: int = 64) -> AnalyticScene:
    """A randomized desk-scale scene: slanted background with a gentle
    large-scale undulation plus a nearer rectangular foreground block
    (occlusion boundary and two-region structure)."""
    rng = np.random.default_rng(seed)
    h = w = resolution
    intr = default_intrinsics(h, w)
    tilt = rng.uniform(-0.25, 0.25)
    n = np.array([np.sin(tilt), 0.0, np.cos(tilt)])
    back, valid = _plane_depth(h, w, intr, n, rng.uniform(2.5, 4.0))
    v, u = np.mgrid[0:h, 0:w] / resolution
    wave = 1.0 + 0.05 * np.sin(2 * np.pi * (rng.uniform(0.5, 1.5) * u + rng.uniform(0, 1)))
    depth = back * wave
    # foreground block at roughly half the background depth
    bh = int(rng.uniform(0.2, 0.35) * h)
    bw = int(rng.uniform(0.2, 0.35) * w)
    top = rng.integers(h // 8, h - bh - h // 8)
    left = rng.integers(w // 8, w - bw - w // 8)
    fg = np.zeros((h, w), bool)
    fg[top:top + bh, left:left + bw] = True
    depth = np.where(fg, rng.uniform(0.9, 1.3), depth)
    return AnalyticScene("synthetic", DepthMap(depth, valid), intr, None, None)


def _load_data(name: str) -> dict:
    with resources.files("deptheval.data").joinpath(name).open() as f:
        return json.load(f)


def reference_value(name: str) -> float:
    """A single published scalar, e.g. reference_value("cosine_with_relnormal")."""
    entries = _load_data("reference_values.json")
    if name not in entries:
        raise KeyError(f"no reference value named {name!r}")
    entry = entries[name]
    if not entry.get("source"):
        raise ValueError(f"reference value {name!r} has no source note")
    return float(entry["value"])


def sensitivity_reference() -> dict:
    """The published sensitivity table used by the composite-metric checks.

    Returns {"columns": [...], "rows": {metric_name: {"values": [8
    floats], "source": str, "exact": bool}}, "target": same structure,
    "relnormal_row": name}. Row values are reconstructions read off a
    published heat table at limited precision; each row carries a
    `source` note and an `exact` flag (False = digitized, use loose
    tolerances).
    """
    data = _load_data("sensitivity_reference.json")
    for name, row in list(data["rows"].items()) + [("target", data["target"])]:
        if not row.get("source"):
            raise ValueError(f"sensitivity row {name!r} has no source note")
    return data
