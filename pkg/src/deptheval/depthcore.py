"""Core geometric types and operations on depth maps.

Depth maps live on a regular pixel grid with a validity mask. All
reductions elsewhere in the package run over valid pixels only; the
types here enforce the basic invariants (positive finite depth,
unit normals, constraints never crossing into invalid pixels).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DepthError(ValueError):
    """Raised when a depth map or intrinsics violate their invariants."""


@dataclass
class CameraIntrinsics:
    """Pinhole parameters, in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DepthError("focal lengths must be positive")

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics for an image resized by `factor` (< 1 shrinks)."""
        return CameraIntrinsics(
            self.fx * factor, self.fy * factor, self.cx * factor, self.cy * factor
        )

    def with_focal_scaled(self, s: float) -> "CameraIntrinsics":
        """Scale focal lengths only; principal point unchanged."""
        return CameraIntrinsics(self.fx * s, self.fy * s, self.cx, self.cy)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]))


@dataclass
class DepthMap:
    """H x W depth field in meters with validity mask."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.valid is None:
            self.valid = np.isfinite(self.values) & (self.values > 0)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.valid.shape:
            raise DepthError("values and valid must be 2-D arrays of equal shape")
        h, w = self.values.shape
        if h < 2 or w < 2:
            raise DepthError("depth maps must be at least 2x2")
        vv = self.values[self.valid]
        if vv.size and not (np.all(np.isfinite(vv)) and np.all(vv > 0)):
            raise DepthError("valid depth values must be finite and positive")

    @classmethod
    def from_array(cls, values: np.ndarray, valid: np.ndarray | None = None) -> "DepthMap":
        return cls(np.asarray(values, dtype=np.float64), valid)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def copy(self) -> "DepthMap":
        return DepthMap(self.values.copy(), self.valid.copy())


@dataclass
class PointMap:
    """H x W x 3 camera-frame points; z equals the source depth exactly."""

    points: np.ndarray
    valid: np.ndarray


@dataclass
class NormalMap:
    """H x W x 3 unit normals oriented toward the camera."""

    normals: np.ndarray
    valid: np.ndarray


@dataclass
class BoundaryMask:
    """Per-pair occlusion flags between 4-adjacent pixels.

    `horizontal[i, j]` flags the pair (i, j)-(i, j+1); `vertical[i, j]`
    flags (i, j)-(i+1, j).
    """

    horizontal: np.ndarray  # (H, W-1) bool
    vertical: np.ndarray  # (H-1, W) bool

    @classmethod
    def empty(cls, h: int, w: int) -> "BoundaryMask":
        return cls(np.zeros((h, w - 1), bool), np.zeros((h - 1, w), bool))

    def any(self) -> bool:
        return bool(self.horizontal.any() or self.vertical.any())


@dataclass
class GradientField:
    """Forward differences of log depth over valid, non-crossing pairs.

    `du[i, j]` is log d(i, j+1) - log d(i, j); `dv` the vertical
    counterpart. The masks select pairs that connect two valid pixels
    and do not straddle an occlusion boundary.
    """

    du: np.ndarray  # (H, W-1)
    dv: np.ndarray  # (H-1, W)
    du_mask: np.ndarray
    dv_mask: np.ndarray


@dataclass
class TriangleMesh:
    """Grid-triangulated depth surface.

    `pixels` stores the (row, col) of each vertex in the source grid so
    renders can look up texture or shading per vertex.
    """

    vertices: np.ndarray  # (N, 3)
    faces: np.ndarray  # (F, 3) int indices
    pixels: np.ndarray  # (N, 2) int (row, col)


def pixel_rays(h: int, w: int, intr: CameraIntrinsics) -> np.ndarray:
    """Unit-depth ray directions ((u-cx)/fx, (v-cy)/fy, 1) per pixel."""
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    x = (u - intr.cx) / intr.fx
    y = (v - intr.cy) / intr.fy
    return np.stack([x, y, np.ones_like(x)], axis=-1)


def unproject(depth: DepthMap, intr: CameraIntrinsics) -> PointMap:
    """Lift a depth map to 3-D camera-frame points."""
    rays = pixel_rays(depth.height, depth.width, intr)
    points = rays * depth.values[..., None]
    return PointMap(points, depth.valid.copy())


def compute_normals(points: PointMap) -> NormalMap:
    """Cross-product normals from the 4-neighborhood of each pixel.

    n = normalize((p_right - p_left) x (p_bottom - p_top)), flipped so
    that n . p < 0 (facing the camera). Border pixels and pixels with
    any invalid neighbor are invalid; degenerate cross products too.
    """
    p = points.points
    v = points.valid
    h, w = v.shape
    normals = np.zeros((h, w, 3))
    ok = np.zeros((h, w), bool)
    inner = v[1:-1, 1:-1] & v[1:-1, :-2] & v[1:-1, 2:] & v[:-2, 1:-1] & v[2:, 1:-1]
    tu = p[1:-1, 2:] - p[1:-1, :-2]
    tv = p[2:, 1:-1] - p[:-2, 1:-1]
    n = np.cross(tu, tv)
    norm = np.linalg.norm(n, axis=-1)
    nondeg = norm > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        n = np.where(nondeg[..., None], n / np.maximum(norm, 1e-300)[..., None], 0.0)
    # orient toward the camera: n . p < 0
    flip = np.einsum("ijk,ijk->ij", n, p[1:-1, 1:-1]) > 0
    n = np.where(flip[..., None], -n, n)
    normals[1:-1, 1:-1] = n
    ok[1:-1, 1:-1] = inner & nondeg
    return NormalMap(normals, ok)


def normals_from_depth(depth: DepthMap, intr: CameraIntrinsics) -> NormalMap:
    return compute_normals(unproject(depth, intr))


def detect_occlusion_boundaries(
    depth: DepthMap,
    ratio_threshold: float = 1.25,
    mode: str = "ratio",
    abs_threshold: float | None = None,
) -> BoundaryMask:
    """Flag adjacent-pixel pairs whose depth jump exceeds a threshold.

    `mode="ratio"` (default) flags pairs with max(a/b, b/a) above
    `ratio_threshold`; `mode="absdiff"` flags |a - b| above
    `abs_threshold`. Pairs with an invalid endpoint are never flagged.
    """
    d = depth.values
    v = depth.valid

    def pair_flags(a, b, va, vb):
        both = va & vb
        if mode == "ratio":
            with np.errstate(invalid="ignore", divide="ignore"):
                r = np.maximum(a / b, b / a)
            return both & (r > ratio_threshold)
        if mode == "absdiff":
            if abs_threshold is None:
                raise ValueError("absdiff mode needs abs_threshold")
            return both & (np.abs(a - b) > abs_threshold)
        raise ValueError(f"unknown boundary mode {mode!r}")

    horiz = pair_flags(d[:, :-1], d[:, 1:], v[:, :-1], v[:, 1:])
    vert = pair_flags(d[:-1, :], d[1:, :], v[:-1, :], v[1:, :])
    return BoundaryMask(horiz, vert)


def log_depth_gradient(depth: DepthMap, boundary: BoundaryMask | None = None) -> GradientField:
    """Forward differences of log depth, excluding boundary-crossing pairs."""
    v = depth.valid
    with np.errstate(invalid="ignore", divide="ignore"):
        logd = np.where(v, np.log(np.maximum(depth.values, 1e-300)), 0.0)
    du = logd[:, 1:] - logd[:, :-1]
    dv = logd[1:, :] - logd[:-1, :]
    du_mask = v[:, 1:] & v[:, :-1]
    dv_mask = v[1:, :] & v[:-1, :]
    if boundary is not None:
        du_mask &= ~boundary.horizontal
        dv_mask &= ~boundary.vertical
    return GradientField(du, dv, du_mask, dv_mask)


def build_mesh(
    depth: DepthMap,
    intr: CameraIntrinsics,
    boundary: BoundaryMask | None = None,
) -> TriangleMesh:
    """Two triangles per pixel quad, split along the TL-BR diagonal.

    A triangle is kept only if all three corners are valid and none of
    its edges crosses the boundary mask. The diagonal is treated as
    crossing when both two-step paths around the quad cross (if one
    side of the quad is boundary-free the diagonal stays on a
    connected surface).
    """
    h, w = depth.shape
    if boundary is None:
        boundary = BoundaryMask.empty(h, w)
    pm = unproject(depth, intr)
    v = depth.valid

    idx = -np.ones((h, w), np.int64)
    rows, cols = np.nonzero(v)
    idx[rows, cols] = np.arange(rows.size)
    vertices = pm.points[rows, cols]
    pixels = np.stack([rows, cols], axis=1)

    top = boundary.horizontal[:-1, :]  # TL-TR
    bottom = boundary.horizontal[1:, :]  # BL-BR
    left = boundary.vertical[:, :-1]  # TL-BL
    right = boundary.vertical[:, 1:]  # TR-BR
    diag = (top | right) & (left | bottom)

    tl, tr = v[:-1, :-1], v[:-1, 1:]
    bl, br = v[1:, :-1], v[1:, 1:]
    # triangle 1: TL, BL, BR; triangle 2: TL, BR, TR
    t1 = tl & bl & br & ~left & ~bottom & ~diag
    t2 = tl & br & tr & ~top & ~right & ~diag

    faces = []
    i1, j1 = np.nonzero(t1)
    faces.append(np.stack([idx[i1, j1], idx[i1 + 1, j1], idx[i1 + 1, j1 + 1]], axis=1))
    i2, j2 = np.nonzero(t2)
    faces.append(np.stack([idx[i2, j2], idx[i2 + 1, j2 + 1], idx[i2, j2 + 1]], axis=1))
    faces = np.concatenate(faces, axis=0) if faces else np.zeros((0, 3), np.int64)
    return TriangleMesh(vertices, faces, pixels)
