"""Relative-normal metric over deterministically sampled pixel pairs.

The score is the mean absolute difference, normalized by pi, between
the angle of a pair of surface normals in the prediction and the same
pair's angle in the ground truth, averaged over multiple scales of an
area-downsampled depth pyramid. Pairs are drawn from the Sobol
low-discrepancy sequence so the score is a deterministic function of
its inputs.

Sobol dimension mapping (fixed): dims (0, 1) index the center pixel I
as floor(u * (H, W)); dims (2, 3) index the offset of J inside the
(2r+1)^2 box centered on I (an L-inf neighborhood). J is clipped to
the image bounds. Pairs whose normals are invalid in either map are
excluded from the mean, not resampled.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .depthcore import CameraIntrinsics, DepthMap, NormalMap, PointMap, unproject


@dataclass
class RelNormalConfig:
    radius: int = 32
    scales: tuple[int, ...] = (1, 2, 4, 8)
    samples: int = 1_000_000
    plane_fit: bool = False  # 5x5 plane-of-best-fit normals for noisy depth
    plane_fit_window: int = 5

    def __post_init__(self):
        if self.radius < 1 or self.samples < 1 or min(self.scales) < 1:
            raise ValueError("radius, scales and samples must be >= 1")


def sobol_points(m: int, dim: int = 4) -> np.ndarray:
    """First m points of the (unscrambled) Sobol sequence in [0, 1)^dim."""
    sampler = qmc.Sobol(d=dim, scramble=False)
    with warnings.catch_warnings():
        # scipy warns when m is not a power of two; balance is irrelevant
        # here because we always want exactly the first m elements.
        warnings.simplefilter("ignore", UserWarning)
        return sampler.random(m)


def sobol_pairs(
    height: int, width: int, radius: int | None, m: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic (I, J) pixel pairs; returns (iy, ix, jy, jx).

    With `radius=None` the second pixel is drawn uniformly over the
    whole image instead of a neighborhood box.
    """
    u = sobol_points(m, 4)
    iy = np.minimum((u[:, 0] * height).astype(np.int64), height - 1)
    ix = np.minimum((u[:, 1] * width).astype(np.int64), width - 1)
    if radius is None:
        jy = np.minimum((u[:, 2] * height).astype(np.int64), height - 1)
        jx = np.minimum((u[:, 3] * width).astype(np.int64), width - 1)
    else:
        box = 2 * radius + 1
        oy = np.minimum((u[:, 2] * box).astype(np.int64), box - 1) - radius
        ox = np.minimum((u[:, 3] * box).astype(np.int64), box - 1) - radius
        jy = np.clip(iy + oy, 0, height - 1)
        jx = np.clip(ix + ox, 0, width - 1)
    return iy, ix, jy, jx


def downsample(depth: DepthMap, k: int) -> DepthMap:
    """Area-average depth over k x k blocks with mask-weighted validity."""
    if k == 1:
        return depth.copy()
    h = (depth.height // k) * k
    w = (depth.width // k) * k
    vals = np.where(depth.valid, depth.values, 0.0)[:h, :w]
    mask = depth.valid[:h, :w].astype(np.float64)
    num = vals.reshape(h // k, k, w // k, k).sum(axis=(1, 3))
    den = mask.reshape(h // k, k, w // k, k).sum(axis=(1, 3))
    valid = den > 0
    out = np.where(valid, num / np.maximum(den, 1), 1.0)
    return DepthMap(out, valid)


def plane_fit_normals(points: PointMap, window: int = 5) -> NormalMap:
    """Normals from a least-squares plane over a window of valid points.

    The normal is the eigenvector of the local point covariance with
    the smallest eigenvalue, oriented toward the camera. Meant for
    noisy ground truth; the cross-product normal is the default.
    """
    from scipy.ndimage import uniform_filter

    p = points.points
    v = points.valid.astype(np.float64)
    h, w = points.valid.shape

    def box(a):
        return uniform_filter(a, size=window, mode="constant")

    cnt = box(v)
    means = [box(p[..., c] * v) / np.maximum(cnt, 1e-12) for c in range(3)]
    cov = np.zeros((h, w, 3, 3))
    for a in range(3):
        for b in range(a, 3):
            m2 = box(p[..., a] * p[..., b] * v) / np.maximum(cnt, 1e-12)
            cov[..., a, b] = cov[..., b, a] = m2 - means[a] * means[b]
    # enough support for a stable plane: most of the window valid
    ok = cnt * window * window >= 3
    evals, evecs = np.linalg.eigh(cov)
    n = evecs[..., 0]
    flip = np.einsum("ijk,ijk->ij", n, p) > 0
    n = np.where(flip[..., None], -n, n)
    degenerate = evals[..., 1] <= 1e-18
    return NormalMap(np.where(ok[..., None], n, 0.0), ok & points.valid & ~degenerate)


def _normals(depth: DepthMap, intr: CameraIntrinsics, config: RelNormalConfig) -> NormalMap:
    from .depthcore import compute_normals

    pm = unproject(depth, intr)
    if config.plane_fit:
        return plane_fit_normals(pm, config.plane_fit_window)
    return compute_normals(pm)


def pair_angle(n1: np.ndarray, n2: np.ndarray) -> np.ndarray:
    """Angle between unit vectors via atan2; stable near 0 and pi."""
    cross = np.linalg.norm(np.cross(n1, n2), axis=-1)
    dot = np.einsum("...k,...k->...", n1, n2)
    return np.arctan2(cross, dot)


def relnormal_at_scale(
    pred: DepthMap,
    gt: DepthMap,
    intr: CameraIntrinsics,
    config: RelNormalConfig,
    scale: int,
    pred_intr: CameraIntrinsics | None = None,
) -> float | None:
    """Per-scale score, or None if no valid pair survives."""
    if gt.height // scale < 3 or gt.width // scale < 3:
        return None
    gt_k = downsample(gt, scale)
    pred_k = downsample(pred, scale)
    intr_k = intr.scaled(1.0 / scale)
    pred_intr_k = (pred_intr or intr).scaled(1.0 / scale)
    n_gt = _normals(gt_k, intr_k, config)
    n_pred = _normals(pred_k, pred_intr_k, config)
    iy, ix, jy, jx = sobol_pairs(gt_k.height, gt_k.width, config.radius, config.samples)
    ok = (
        n_gt.valid[iy, ix]
        & n_gt.valid[jy, jx]
        & n_pred.valid[iy, ix]
        & n_pred.valid[jy, jx]
    )
    if not ok.any():
        return None
    a_gt = pair_angle(n_gt.normals[iy[ok], ix[ok]], n_gt.normals[jy[ok], jx[ok]])
    a_pred = pair_angle(n_pred.normals[iy[ok], ix[ok]], n_pred.normals[jy[ok], jx[ok]])
    return float(np.mean(np.abs(a_pred - a_gt)) / np.pi)


def relnormal(
    pred: DepthMap,
    gt: DepthMap,
    intr: CameraIntrinsics,
    config: RelNormalConfig | None = None,
    pred_intr: CameraIntrinsics | None = None,
) -> float | None:
    """Mean of per-scale scores, skipping scales with no valid pair."""
    config = config or RelNormalConfig()
    scores = [
        relnormal_at_scale(pred, gt, intr, config, k, pred_intr) for k in config.scales
    ]
    scores = [s for s in scores if s is not None]
    if not scores:
        return None
    return float(np.mean(scores))
