"""Calibrated ground-truth perturbations, one generator per family.

Families: surface orientation, camera intrinsics, relative scale,
curvature (two spatial frequencies), affine transforms of depth and
disparity, and boundary blur. Each generator maps (ground truth,
intensity) to a perturbed depth map and is the identity at its zero
intensity (angle 0, scale 1, or strength 0 depending on the family).

The surface-orientation and camera-intrinsics families prescribe a
target log-depth gradient field derived from (rotated or re-projected)
surface normals and recover the depth that matches it in least squares,
solved with conjugate gradients on the constraint-graph Laplacian,
initialized at the ground truth. Constraints crossing occlusion
boundaries are dropped so they cannot dominate the objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import distance_transform_edt, gaussian_filter, uniform_filter
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import LinearOperator, cg
from scipy.spatial.transform import Rotation

from .depthcore import (
    BoundaryMask,
    CameraIntrinsics,
    DepthMap,
    detect_occlusion_boundaries,
    normals_from_depth,
    pixel_rays,
)

PERTURBATION_KINDS = (
    "surface_orientation",
    "camera_intrinsics",
    "relative_scale",
    "curvature_high",
    "curvature_low",
    "affine_depth",
    "affine_disparity",
    "boundary",
)

CG_MAX_ITER = 10_000
CG_RESIDUAL_TARGET = 1e-8
DEFAULT_AXIS = (1.0, 0.0, 0.0)


class PerturbationError(RuntimeError):
    pass


class CGConvergenceError(PerturbationError):
    def __init__(self, residual: float):
        super().__init__(f"conjugate gradients stalled at relative residual {residual:.3e}")
        self.residual = residual


@dataclass
class PerturbationSpec:
    kind: str
    intensity: float
    axis: tuple[float, float, float] = DEFAULT_AXIS
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        ax = np.asarray(self.axis, dtype=float)
        if self.kind == "surface_orientation":
            if not np.isclose(np.linalg.norm(ax), 1.0, atol=1e-6):
                raise ValueError("rotation axis must be unit norm")
        lo = identity_intensity(self.kind)
        if self.intensity < lo:
            raise ValueError(f"{self.kind} intensity must be >= {lo}")
        if self.kind == "boundary" and self.intensity != int(self.intensity):
            raise ValueError("boundary intensity must be a non-negative integer")


def identity_intensity(kind: str) -> float:
    """The intensity at which a family is the identity map."""
    if kind in ("surface_orientation", "curvature_high", "curvature_low", "boundary"):
        return 0.0
    return 1.0


def curvature_sigma(kind: str) -> float:
    return 1.0 if kind == "curvature_high" else 10.0


def gradients_from_normals(
    normals: np.ndarray,
    normal_valid: np.ndarray,
    intr: CameraIntrinsics,
    gt: DepthMap | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Target forward log-depth differences implied by per-pixel normals.

    For a surface with normal n, stepping one pixel along u moves the
    ray from r to r' and the tangency condition n.p = n.p' gives
    log z' - log z = log((n.r) / (n.r')). Pixels with no normal of
    their own (image border, neighbours of holes) borrow the nearest
    valid normal so the constraint graph stays connected; each forward
    pair then uses the normal at its first pixel. Pairs whose ratio is
    non-positive (grazing or back-facing configurations) are dropped,
    and when `gt` is given they fall back to the ground truth's own
    log gradient instead.
    """
    h, w = normal_valid.shape
    filled = normals
    if not normal_valid.all() and normal_valid.any():
        idx = distance_transform_edt(~normal_valid, return_distances=False, return_indices=True)
        filled = normals[idx[0], idx[1]]
    rays = pixel_rays(h, w, intr)
    s = np.einsum("ijk,ijk->ij", filled, rays)
    ray_u = rays.copy()
    ray_u[..., 0] += 1.0 / intr.fx
    ray_v = rays.copy()
    ray_v[..., 1] += 1.0 / intr.fy
    su = np.einsum("ijk,ijk->ij", filled, ray_u)
    sv = np.einsum("ijk,ijk->ij", filled, ray_v)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio_u = s / su
        ratio_v = s / sv
    gu = np.zeros((h, w - 1))
    gv = np.zeros((h - 1, w))
    mu = (ratio_u[:, :-1] > 0) & np.isfinite(ratio_u[:, :-1])
    mv = (ratio_v[:-1, :] > 0) & np.isfinite(ratio_v[:-1, :])
    gu[mu] = np.log(ratio_u[:, :-1][mu])
    gv[mv] = np.log(ratio_v[:-1, :][mv])

    if gt is not None:
        from .depthcore import log_depth_gradient

        grad = log_depth_gradient(gt)
        fill_u = ~mu & grad.du_mask
        gu[fill_u] = grad.du[fill_u]
        mu |= fill_u
        fill_v = ~mv & grad.dv_mask
        gv[fill_v] = grad.dv[fill_v]
        mv |= fill_v
    return gu, mu, gv, mv


def _normals_crossing_boundary(boundary, shape) -> np.ndarray:
    """Pixels whose central-difference normal stencil spans an occlusion
    boundary; their cross-product normals mix the two surfaces."""
    h, w = shape
    bad = np.zeros((h, w), bool)
    bad[:, 1:] |= boundary.horizontal
    bad[:, :-1] |= boundary.horizontal
    bad[1:, :] |= boundary.vertical
    bad[:-1, :] |= boundary.vertical
    return bad


def _constraint_matrix(valid: np.ndarray, gu, mu, gv, mv):
    """Sparse difference operator D and target vector g over valid pixels."""
    h, w = valid.shape
    idx = -np.ones((h, w), np.int64)
    idx[valid] = np.arange(int(valid.sum()))

    rows_i, rows_j, targets = [], [], []
    hy, hx = np.nonzero(mu & valid[:, :-1] & valid[:, 1:])
    rows_i.append(idx[hy, hx])
    rows_j.append(idx[hy, hx + 1])
    targets.append(gu[hy, hx])
    vy, vx = np.nonzero(mv & valid[:-1, :] & valid[1:, :])
    rows_i.append(idx[vy, vx])
    rows_j.append(idx[vy + 1, vx])
    targets.append(gv[vy, vx])

    i = np.concatenate(rows_i)
    j = np.concatenate(rows_j)
    g = np.concatenate(targets)
    n_con = i.size
    n_pix = int(valid.sum())
    data = np.concatenate([-np.ones(n_con), np.ones(n_con)])
    row = np.concatenate([np.arange(n_con), np.arange(n_con)])
    col = np.concatenate([i, j])
    D = sp.csr_matrix((data, (row, col)), shape=(n_con, n_pix))
    return D, g, idx


def solve_log_depth(
    gt: DepthMap,
    gu: np.ndarray,
    mu: np.ndarray,
    gv: np.ndarray,
    mv: np.ndarray,
    max_iter: int = CG_MAX_ITER,
    residual_target: float = CG_RESIDUAL_TARGET,
) -> DepthMap:
    """Least-squares log depth matching the target gradients.

    Solves the normal equations (graph Laplacian) with Jacobi-
    preconditioned CG from the ground-truth log depth, then re-centers
    each connected component of the constraint graph to preserve its
    median log depth (the Laplacian's null space is the per-component
    constants, so re-centering leaves the residual unchanged).
    """
    valid = gt.valid
    D, g, idx = _constraint_matrix(valid, gu, mu, gv, mv)
    n_pix = D.shape[1]
    x0 = np.log(gt.values[valid])
    if D.shape[0] == 0:
        return gt.copy()

    A = (D.T @ D).tocsr()
    b = D.T @ g
    diag = A.diagonal()
    inv_diag = np.where(diag > 0, 1.0 / np.maximum(diag, 1e-300), 1.0)
    M = LinearOperator(A.shape, matvec=lambda v: inv_diag * v)

    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        bnorm = 1.0
    x, _ = cg(A, b, x0=x0, rtol=residual_target / 10, atol=0.0, maxiter=max_iter, M=M)
    residual = np.linalg.norm(A @ x - b) / bnorm
    if residual > residual_target:
        raise CGConvergenceError(residual)

    # re-center per connected component of the constraint graph
    n_comp, labels = connected_components(A != 0, directed=False)
    for c in range(n_comp):
        sel = labels == c
        x[sel] += np.median(x0[sel]) - np.median(x[sel])

    out = gt.values.copy()
    out[valid] = np.exp(x)
    return DepthMap(out, valid.copy())


def perturb_surface_orientation(
    gt: DepthMap,
    intr: CameraIntrinsics,
    angle_deg: float,
    axis=DEFAULT_AXIS,
    boundary_ratio: float = 1.25,
) -> DepthMap:
    """Rotate every surface normal by the same angle, then re-integrate."""
    if angle_deg == 0:
        return gt.copy()
    nm = normals_from_depth(gt, intr)
    rot = Rotation.from_rotvec(np.deg2rad(angle_deg) * np.asarray(axis, float))
    rotated = nm.normals @ rot.as_matrix().T
    boundary = detect_occlusion_boundaries(gt, boundary_ratio)
    n_valid = nm.valid & ~_normals_crossing_boundary(boundary, gt.shape)
    gu, mu, gv, mv = gradients_from_normals(rotated, n_valid, intr, gt)
    mu &= ~boundary.horizontal
    mv &= ~boundary.vertical
    return solve_log_depth(gt, gu, mu, gv, mv)


def perturb_camera_intrinsics(
    gt: DepthMap,
    intr: CameraIntrinsics,
    s: float,
    boundary_ratio: float = 1.25,
) -> tuple[DepthMap, CameraIntrinsics]:
    """Scale the focal length by s and re-integrate depth so that the
    shape (surface normals) under the new intrinsics matches the ground
    truth shape under the old ones."""
    if s < 1:
        raise ValueError("camera intrinsics intensity must be >= 1")
    intr_p = intr.with_focal_scaled(s)
    if s == 1:
        return gt.copy(), intr_p
    nm = normals_from_depth(gt, intr)
    boundary = detect_occlusion_boundaries(gt, boundary_ratio)
    n_valid = nm.valid & ~_normals_crossing_boundary(boundary, gt.shape)
    gu, mu, gv, mv = gradients_from_normals(nm.normals, n_valid, intr_p, gt)
    mu &= ~boundary.horizontal
    mv &= ~boundary.vertical
    return solve_log_depth(gt, gu, mu, gv, mv), intr_p


def two_region_split(gt: DepthMap, boundary_ratio: float = 1.25):
    """Partition valid pixels into exactly two occlusion-bounded regions.

    Returns (near_mask, far_mask) or None when the cut does not produce
    exactly two connected components.
    """
    boundary = detect_occlusion_boundaries(gt, boundary_ratio)
    if not boundary.any():
        return None
    valid = gt.valid
    h, w = valid.shape
    idx = -np.ones((h, w), np.int64)
    idx[valid] = np.arange(int(valid.sum()))
    mu = valid[:, :-1] & valid[:, 1:] & ~boundary.horizontal
    mv = valid[:-1, :] & valid[1:, :] & ~boundary.vertical
    hy, hx = np.nonzero(mu)
    vy, vx = np.nonzero(mv)
    i = np.concatenate([idx[hy, hx], idx[vy, vx]])
    j = np.concatenate([idx[hy, hx + 1], idx[vy + 1, vx]])
    n = int(valid.sum())
    adj = sp.csr_matrix((np.ones(i.size), (i, j)), shape=(n, n))
    n_comp, labels = connected_components(adj, directed=False)
    if n_comp != 2:
        return None
    full = np.full((h, w), -1, np.int64)
    full[valid] = labels
    mean0 = gt.values[(full == 0)].mean()
    mean1 = gt.values[(full == 1)].mean()
    near_label = 0 if mean0 <= mean1 else 1
    return (full == near_label), (full == (1 - near_label))


def _quantile_partition(depths: np.ndarray, granularity: float = 0.005):
    """Search (d_l, d_r) minimizing d_r/d_l with 5% of pixels between
    and at least 30% on each side; ties break toward smaller d_l."""
    qs = np.arange(0.30, 0.65 + 1e-9, granularity)
    d_l = np.quantile(depths, qs)
    d_r = np.quantile(depths, qs + 0.05)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = d_r / d_l
    ok = (d_l > 0) & (d_l < d_r)
    if not ok.any():
        raise PerturbationError("no feasible relative-scale partition")
    ratio = np.where(ok, ratio, np.inf)
    k = int(np.argmin(ratio))  # argmin takes the first (smallest d_l) tie
    return float(d_l[k]), float(d_r[k])


def perturb_relative_scale(
    gt: DepthMap, s: float, boundary_ratio: float = 1.25
) -> DepthMap:
    """Scale far content by s, keep near content, interpolate between."""
    if s < 1:
        raise ValueError("relative-scale intensity must be >= 1")
    if s == 1:
        return gt.copy()
    out = gt.values.copy()
    split = two_region_split(gt, boundary_ratio)
    if split is not None:
        near, far = split
        out[far] *= s
        return DepthMap(out, gt.valid.copy())
    depths = gt.values[gt.valid]
    d_l, d_r = _quantile_partition(depths)
    d = gt.values
    far = gt.valid & (d >= d_r)
    between = gt.valid & (d > d_l) & (d < d_r)
    out[far] *= s
    frac = (d[between] - d_l) / (d_r - d_l)
    out[between] *= 1.0 + (s - 1.0) * frac
    return DepthMap(out, gt.valid.copy())


def curvature_multiplier(shape, s: float, sigma: float, seed: int) -> np.ndarray:
    """Smoothed multiplicative noise field, clipped below at 0.1.

    The raw noise is i.i.d. uniform on [1-s, 1+s], generated by the
    counter-based Philox generator so the field depends only on (seed,
    pixel index), not on traversal order.
    """
    gen = np.random.Generator(np.random.Philox(seed))
    u = gen.random(shape)
    k = (1.0 - s) + 2.0 * s * u
    smooth = gaussian_filter(k, sigma=sigma, truncate=4.0, mode="reflect")
    return np.clip(smooth, 0.1, None)


def perturb_curvature(gt: DepthMap, s: float, sigma: float, seed: int = 0) -> DepthMap:
    if s < 0:
        raise ValueError("curvature intensity must be >= 0")
    if s == 0:
        return gt.copy()
    mult = curvature_multiplier(gt.shape, s, sigma, seed)
    return DepthMap(gt.values * mult, gt.valid.copy())


def perturb_affine_depth(gt: DepthMap, s: float) -> DepthMap:
    """D' = D/s + median(D) - median(D/s): flatten while keeping the median."""
    if s < 1:
        raise ValueError("affine-depth intensity must be >= 1")
    if s == 1:
        return gt.copy()
    med = np.median(gt.values[gt.valid])
    out = gt.values / s + med - med / s
    return DepthMap(np.where(gt.valid, out, gt.values), gt.valid.copy())


def perturb_affine_disparity(gt: DepthMap, s: float) -> DepthMap:
    """Same flattening applied in disparity (1/depth) space."""
    if s < 1:
        raise ValueError("affine-disparity intensity must be >= 1")
    if s == 1:
        return gt.copy()
    disp = np.where(gt.valid, 1.0 / np.where(gt.valid, gt.values, 1.0), 0.0)
    med = np.median(disp[gt.valid])
    out = disp / s + med - med / s
    out = np.maximum(out, 1e-12)
    vals = np.where(gt.valid, 1.0 / out, gt.values)
    return DepthMap(vals, gt.valid.copy())


def perturb_boundary(gt: DepthMap, s: float) -> DepthMap:
    """Valid-masked mean filter of window 2s+1, clipped to [0.7, 1.3] x gt."""
    s = int(s)
    if s < 0:
        raise ValueError("boundary intensity must be a non-negative integer")
    if s == 0:
        return gt.copy()
    size = 2 * s + 1
    num = uniform_filter(np.where(gt.valid, gt.values, 0.0), size=size, mode="reflect")
    den = uniform_filter(gt.valid.astype(np.float64), size=size, mode="reflect")
    blurred = np.where(den > 0, num / np.maximum(den, 1e-12), gt.values)
    out = np.clip(blurred, 0.7 * gt.values, 1.3 * gt.values)
    return DepthMap(np.where(gt.valid, out, gt.values), gt.valid.copy())


def apply(
    spec: PerturbationSpec, gt: DepthMap, intr: CameraIntrinsics
) -> tuple[DepthMap, CameraIntrinsics]:
    """Run one perturbation; returns the depth and its intrinsics
    (changed only by the camera-intrinsics family)."""
    k, s = spec.kind, spec.intensity
    if k == "surface_orientation":
        return perturb_surface_orientation(gt, intr, s, spec.axis), intr
    if k == "camera_intrinsics":
        return perturb_camera_intrinsics(gt, intr, s)
    if k == "relative_scale":
        return perturb_relative_scale(gt, s), intr
    if k in ("curvature_high", "curvature_low"):
        return perturb_curvature(gt, s, curvature_sigma(k), spec.seed), intr
    if k == "affine_depth":
        return perturb_affine_depth(gt, s), intr
    if k == "affine_disparity":
        return perturb_affine_disparity(gt, s), intr
    if k == "boundary":
        return perturb_boundary(gt, s), intr
    raise ValueError(f"unknown perturbation kind {k!r}")


def sweep(
    gt: DepthMap,
    intr: CameraIntrinsics,
    kind: str,
    intensities,
    axis=DEFAULT_AXIS,
    seed: int = 0,
) -> list[tuple[float, DepthMap, CameraIntrinsics]]:
    """Apply one family at each intensity; the identity intensity is
    prepended when missing so every sweep anchors at zero response."""
    intensities = list(intensities)
    ident = identity_intensity(kind)
    if ident not in intensities:
        intensities = [ident] + intensities
    out = []
    for s in intensities:
        depth, pintr = apply(PerturbationSpec(kind, s, axis=axis, seed=seed), gt, intr)
        out.append((s, depth, pintr))
    return out


def default_intensity_grid(kind: str) -> list[float]:
    """Six intensities per family, identity included."""
    grids = {
        "surface_orientation": [0.0, 2.0, 4.0, 8.0, 12.0, 16.0],
        "camera_intrinsics": [1.0, 1.25, 1.5, 2.0, 3.0, 4.0],
        "relative_scale": [1.0, 1.1, 1.25, 1.5, 2.0, 3.0],
        "curvature_high": [0.0, 0.05, 0.1, 0.2, 0.3, 0.4],
        "curvature_low": [0.0, 0.05, 0.1, 0.2, 0.3, 0.4],
        "affine_depth": [1.0, 1.25, 1.5, 2.0, 3.0, 5.0],
        "affine_disparity": [1.0, 1.25, 1.5, 2.0, 3.0, 5.0],
        "boundary": [0.0, 1.0, 2.0, 3.0, 4.0, 6.0],
    }
    return grids[kind]
