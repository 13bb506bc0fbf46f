"""Depth-inspection renders: textureless relighting, projected
contours, and textured novel views.

All images come from a deterministic software rasterizer (z-buffer,
per-face processing in a fixed order), so identical inputs produce
byte-identical PNGs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .depthcore import (
    BoundaryMask,
    CameraIntrinsics,
    DepthMap,
    TriangleMesh,
    build_mesh,
    detect_occlusion_boundaries,
    unproject,
)


class RenderError(RuntimeError):
    pass


@dataclass
class LightRig:
    """Directional lights; each direction points toward the light source."""

    directions: np.ndarray  # (L, 3) unit vectors
    ambient: float = 0.15

    def __post_init__(self):
        self.directions = np.asarray(self.directions, float)
        if self.directions.ndim != 2 or self.directions.shape[0] < 2:
            raise RenderError("a light rig needs at least 2 directions")
        norms = np.linalg.norm(self.directions, axis=1, keepdims=True)
        self.directions = self.directions / norms

    @classmethod
    def default(cls) -> "LightRig":
        # four lights at 45 deg elevation toward the camera hemisphere
        azimuths = np.deg2rad([0.0, 90.0, 180.0, 270.0])
        c = np.sqrt(0.5)
        dirs = np.stack([c * np.cos(azimuths), c * np.sin(azimuths), -c * np.ones(4)], axis=1)
        return cls(dirs)


@dataclass
class ContourSpec:
    axis: str = "z"  # "x", "y" or "z"
    spacing: float | None = None  # meters; None = depth range / 20
    line_width: float = 1.5  # pixels

    def __post_init__(self):
        if self.axis.lower() not in ("x", "y", "z"):
            raise RenderError("contour axis must be x, y or z")
        if self.spacing is not None and self.spacing <= 0:
            raise RenderError("contour spacing must be positive")


@dataclass
class CameraPose:
    """world -> camera: p_cam = rotation @ p + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls()

    @classmethod
    def translated(cls, x=0.0, y=0.0, z=0.0) -> "CameraPose":
        return cls(np.eye(3), -np.array([x, y, z], float))


def face_normals(mesh: TriangleMesh) -> np.ndarray:
    """Unit normals per face, oriented toward the camera (n . centroid < 0)."""
    v = mesh.vertices
    f = mesh.faces
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    n = np.cross(b - a, c - a)
    norms = np.linalg.norm(n, axis=1, keepdims=True)
    n = n / np.maximum(norms, 1e-300)
    centroid = (a + b + c) / 3.0
    flip = np.einsum("ij,ij->i", n, centroid) > 0
    n[flip] *= -1
    return n


def rasterize(
    mesh: TriangleMesh,
    intr: CameraIntrinsics,
    pose: CameraPose,
    h: int,
    w: int,
    vertex_values: np.ndarray | None = None,
    face_values: np.ndarray | None = None,
    background: float = 0.0,
) -> np.ndarray:
    """Z-buffered rasterization of per-vertex or per-face values.

    `vertex_values` (N,) or (N, C) interpolates perspective-correctly;
    `face_values` (F,) or (F, C) shades flat. Returns (h, w) or
    (h, w, C) float array.
    """
    if (vertex_values is None) == (face_values is None):
        raise RenderError("pass exactly one of vertex_values or face_values")
    if mesh.faces.shape[0] == 0:
        raise RenderError("empty mesh")
    pts = mesh.vertices @ pose.rotation.T + pose.translation
    z = pts[:, 2]
    good_z = z > 1e-9
    u = np.where(good_z, intr.fx * pts[:, 0] / np.where(good_z, z, 1.0) + intr.cx, 0.0)
    v = np.where(good_z, intr.fy * pts[:, 1] / np.where(good_z, z, 1.0) + intr.cy, 0.0)

    values = vertex_values if vertex_values is not None else face_values
    channels = 1 if values.ndim == 1 else values.shape[1]
    frame = np.full((h, w, channels), background, float)
    zbuf = np.full((h, w), np.inf)

    for fi, face in enumerate(mesh.faces):
        if not good_z[face].all():
            continue
        fu, fv, fz = u[face], v[face], z[face]
        x0, x1 = int(np.floor(fu.min())), int(np.ceil(fu.max()))
        y0, y1 = int(np.floor(fv.min())), int(np.ceil(fv.max()))
        x0, x1 = max(x0, 0), min(x1, w - 1)
        y0, y1 = max(y0, 0), min(y1, h - 1)
        if x0 > x1 or y0 > y1:
            continue
        gx, gy = np.meshgrid(np.arange(x0, x1 + 1) + 0.0, np.arange(y0, y1 + 1) + 0.0)
        d = (fu[1] - fu[0]) * (fv[2] - fv[0]) - (fu[2] - fu[0]) * (fv[1] - fv[0])
        if abs(d) < 1e-12:
            continue
        l1 = ((gx - fu[0]) * (fv[2] - fv[0]) - (gy - fv[0]) * (fu[2] - fu[0])) / d
        l2 = ((gy - fv[0]) * (fu[1] - fu[0]) - (gx - fu[0]) * (fv[1] - fv[0])) / d
        l0 = 1.0 - l1 - l2
        inside = (l0 >= -1e-9) & (l1 >= -1e-9) & (l2 >= -1e-9)
        if not inside.any():
            continue
        inv_z = l0 / fz[0] + l1 / fz[1] + l2 / fz[2]
        depth = 1.0 / np.maximum(inv_z, 1e-12)
        sub_z = zbuf[y0:y1 + 1, x0:x1 + 1]
        win = inside & (depth < sub_z)
        if not win.any():
            continue
        if face_values is not None:
            val = np.broadcast_to(np.atleast_1d(face_values[fi]), (win.sum(), channels))
        else:
            vv = np.atleast_2d(vertex_values.T).T[face]  # (3, C)
            num = (
                l0[win][:, None] * vv[0] / fz[0]
                + l1[win][:, None] * vv[1] / fz[1]
                + l2[win][:, None] * vv[2] / fz[2]
            )
            val = num * depth[win][:, None]
        sub_f = frame[y0:y1 + 1, x0:x1 + 1]
        sub_z[win] = depth[win]
        sub_f[win] = val
    return frame[..., 0] if channels == 1 else frame


def shade_faces(mesh: TriangleMesh, light: np.ndarray, ambient: float) -> np.ndarray:
    """Lambertian brightness per face: max(0, n . l) + ambient, clipped to 1.

    Mesh normals face the camera (-z hemisphere) and rig directions
    point toward the light source, so a light in front of the surface
    gives a positive dot product.
    """
    n = face_normals(mesh)
    lambert = np.maximum(0.0, n @ np.asarray(light, float))
    return np.clip(lambert + ambient, 0.0, 1.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def save_png(path, img: np.ndarray) -> None:
    Image.fromarray(img).save(path)


def textureless_relight(
    depth: DepthMap,
    intr: CameraIntrinsics,
    rig: LightRig | None = None,
    boundary: BoundaryMask | None = None,
) -> list[np.ndarray]:
    """One grayscale uint8 image per rig light, rendered from the
    original camera on the untextured depth-induced mesh."""
    rig = rig or LightRig.default()
    if boundary is None:
        boundary = detect_occlusion_boundaries(depth)
    mesh = build_mesh(depth, intr, boundary)
    if mesh.faces.shape[0] == 0:
        raise RenderError("empty mesh")
    images = []
    for light in rig.directions:
        shades = shade_faces(mesh, light, rig.ambient)
        frame = rasterize(
            mesh, intr, CameraPose.identity(), depth.height, depth.width,
            face_values=shades, background=0.0,
        )
        images.append(to_uint8(frame))
    return images


def projected_contours(
    depth: DepthMap, intr: CameraIntrinsics, spec: ContourSpec | None = None
) -> np.ndarray:
    """Iso-lines of one world coordinate drawn on the surface.

    A pixel is inked when its chosen coordinate is within half a line
    width of an iso level, with the width converted from pixels to
    meters through the local image-plane gradient of that coordinate.
    """
    spec = spec or ContourSpec()
    pm = unproject(depth, intr)
    axis_idx = {"x": 0, "y": 1, "z": 2}[spec.axis.lower()]
    coord = pm.points[..., axis_idx]
    valid = pm.valid
    vals = coord[valid]
    if vals.size == 0:
        raise RenderError("no valid pixels to contour")
    spacing = spec.spacing
    if spacing is None:
        rng = float(vals.max() - vals.min())
        spacing = rng / 20.0 if rng > 0 else 1.0

    gy, gx = np.gradient(coord)
    grad = np.hypot(gx, gy)  # meters per pixel step
    dist = np.abs(coord - spacing * np.round(coord / spacing))
    ink = valid & (dist <= 0.5 * spec.line_width * np.maximum(grad, 1e-12))

    base = np.full(depth.shape, 0.8)
    base[~valid] = 1.0
    img = np.where(ink, 0.05, base)
    return to_uint8(img)


def textured_views(
    depth: DepthMap,
    intr: CameraIntrinsics,
    image: np.ndarray,
    poses: list[CameraPose],
    boundary: BoundaryMask | None = None,
) -> list[np.ndarray]:
    """Textured mesh rendered from novel poses; the baseline view."""
    if boundary is None:
        boundary = detect_occlusion_boundaries(depth)
    mesh = build_mesh(depth, intr, boundary)
    if mesh.faces.shape[0] == 0:
        raise RenderError("empty mesh")
    img = np.asarray(image, float)
    if img.ndim == 2:
        img = img[..., None]
    colors = img[mesh.pixels[:, 0], mesh.pixels[:, 1]]  # (N, C)
    out = []
    for pose in poses:
        frame = rasterize(
            mesh, intr, pose, depth.height, depth.width,
            vertex_values=colors, background=255.0 if img.max() > 1.5 else 1.0,
        )
        if img.max() > 1.5:
            out.append(np.clip(np.round(frame), 0, 255).astype(np.uint8))
        else:
            out.append(to_uint8(frame))
    return out
