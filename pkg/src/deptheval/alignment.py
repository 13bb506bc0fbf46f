"""Pre-metric alignment of predictions to ground truth.

Modes: scale on depth (robust truncated-L1), affine on depth (L1 via
golden-section over the slope with exact median shift, or closed-form
least squares), affine on disparity, and scale/affine on point maps.
All fits run on the intersection of the two validity masks and are
deterministic for fixed inputs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .depthcore import DepthMap, PointMap

ALIGNMENT_MODES = (
    "none",
    "scale_depth",
    "affine_depth_l1",
    "affine_depth_lstsq",
    "affine_disparity",
    "pointmap_scale",
    "pointmap_affine",
)

#: Floor for aligned disparities; non-positive aligned disparities are
#: clamped here before inverting back to depth.
EPS_DISP = 1e-6

#: Truncation constant of the robust relative-residual objective used
#: by the scale and point-map fits. Residuals larger than this no
#: longer influence the fit.
DEFAULT_TRUNCATION = 1.0

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


class AlignmentError(ValueError):
    """Raised when a fit is impossible (e.g. empty shared mask)."""


@dataclass
class AffineParams:
    """Transform pred -> scale * pred + shift (in depth or disparity)."""

    scale: float
    shift: float = 0.0
    space: str = "depth"  # "depth" or "disparity"

    def apply(self, pred: DepthMap) -> DepthMap:
        if self.space == "depth":
            out = self.scale * pred.values + self.shift
            valid = pred.valid & (out > 0)
            out = np.where(valid, out, 1.0)
            return DepthMap(out, valid)
        disp = np.zeros_like(pred.values)
        disp[pred.valid] = 1.0 / pred.values[pred.valid]
        disp = self.scale * disp + self.shift
        disp = np.maximum(disp, EPS_DISP)
        out = np.where(pred.valid, 1.0 / disp, 1.0)
        return DepthMap(out, pred.valid.copy())


def _shared(pred: DepthMap, gt: DepthMap, minimum: int = 2):
    mask = pred.valid & gt.valid
    if mask.sum() < minimum:
        raise AlignmentError("not enough shared valid pixels for alignment")
    return pred.values[mask], gt.values[mask]


def _golden_section(f, lo: float, hi: float, iters: int = 90) -> float:
    """Minimize a unimodal scalar function on [lo, hi]."""
    a, b = lo, hi
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(iters):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = f(x2)
    return x1 if f1 <= f2 else x2


def _robust_scale(p: np.ndarray, g: np.ndarray, truncation: float) -> float:
    """Scale minimizing sum(min(|s*p - g| / g, truncation))."""

    def objective(s):
        return np.minimum(np.abs(s * p - g) / g, truncation).sum()

    with np.errstate(divide="ignore", invalid="ignore"):
        cand = g / p
    cand = cand[np.isfinite(cand) & (cand > 0)]
    if cand.size == 0:
        raise AlignmentError("no positive scale candidate")
    # The objective is piecewise smooth with breakpoints at g_i/p_i;
    # scan quantile candidates, then refine around the best one.
    qs = np.unique(np.quantile(cand, np.linspace(0, 1, 513)))
    vals = np.array([objective(s) for s in qs])
    k = int(np.argmin(vals))
    lo = qs[max(k - 1, 0)]
    hi = qs[min(k + 1, qs.size - 1)]
    if lo == hi:
        return float(lo)
    return float(_golden_section(objective, lo, hi))


def align_scale_depth(
    pred: DepthMap, gt: DepthMap, truncation: float = DEFAULT_TRUNCATION
) -> AffineParams:
    """Robust scale-only fit on depth; shift fixed to 0."""
    p, g = _shared(pred, gt)
    s = _robust_scale(p, g, truncation)
    if s < 0:
        warnings.warn("negative fitted scale clamped to 0")
        s = 0.0
    return AffineParams(scale=s, shift=0.0, space="depth")


def _l1_affine(p: np.ndarray, g: np.ndarray, nonneg_scale: bool) -> tuple[float, float]:
    """Minimize sum |a*p + b - g| with b = median(g - a*p) per slope."""

    def objective(a):
        r = g - a * p
        return np.abs(r - np.median(r)).sum()

    if np.ptp(p) == 0:
        # constant prediction: the slope is unidentifiable, so use the
        # pure-shift solution instead of letting the search run away
        return 0.0, float(np.median(g))
    spread = np.quantile(p, 0.75) - np.quantile(p, 0.25)
    gspread = np.quantile(g, 0.75) - np.quantile(g, 0.25)
    a0 = gspread / spread if spread > 0 else 0.0
    half = 5.0 * abs(a0) + 1.0
    lo, hi = a0 - half, a0 + half
    # expand the bracket while the minimum sits on an endpoint
    for _ in range(60):
        a = _golden_section(objective, lo, hi)
        width = hi - lo
        if a - lo < 1e-3 * width:
            lo -= width
        elif hi - a < 1e-3 * width:
            hi += width
        else:
            break
    a = _golden_section(objective, lo, hi, iters=120)
    if nonneg_scale and a < 0:
        warnings.warn("negative fitted scale clamped to 0")
        a = 0.0
    b = float(np.median(g - a * p))
    return float(a), b


def align_affine_depth_l1(
    pred: DepthMap, gt: DepthMap, nonneg_scale: bool = False
) -> AffineParams:
    p, g = _shared(pred, gt)
    a, b = _l1_affine(p, g, nonneg_scale)
    return AffineParams(scale=a, shift=b, space="depth")


def align_affine_depth_lstsq(pred: DepthMap, gt: DepthMap) -> AffineParams:
    """Ordinary least squares (a, b) on valid pixels; closed form."""
    p, g = _shared(pred, gt)
    design = np.stack([p, np.ones_like(p)], axis=1)
    (a, b), *_ = np.linalg.lstsq(design, g, rcond=None)
    return AffineParams(scale=float(a), shift=float(b), space="depth")


def align_affine_disparity(pred: DepthMap, gt: DepthMap) -> AffineParams:
    """L1 affine fit between 1/pred and 1/gt."""
    p, g = _shared(pred, gt)
    a, b = _l1_affine(1.0 / p, 1.0 / g, nonneg_scale=False)
    return AffineParams(scale=a, shift=b, space="disparity")


@dataclass
class PointTransform:
    """Point alignment pred -> scale * p + (0, 0, z_shift)."""

    scale: float
    z_shift: float = 0.0

    def apply(self, points: PointMap) -> PointMap:
        out = self.scale * points.points.copy()
        out[..., 2] += self.z_shift
        return PointMap(out, points.valid.copy())


def align_pointmap(
    pred: PointMap,
    gt: PointMap,
    mode: str = "scale",
    truncation: float = DEFAULT_TRUNCATION,
) -> PointTransform:
    """Robust scale (or scale + z-translation) between point maps."""
    mask = pred.valid & gt.valid
    if mask.sum() < 2:
        raise AlignmentError("not enough shared valid pixels for alignment")
    p = pred.points[mask]
    g = gt.points[mask]
    gnorm = np.linalg.norm(g, axis=1)
    ok = gnorm > 0
    p, g, gnorm = p[ok], g[ok], gnorm[ok]

    def scale_objective(s):
        r = np.linalg.norm(s * p - g, axis=1) / gnorm
        return np.minimum(r, truncation).sum()

    with np.errstate(divide="ignore", invalid="ignore"):
        cand = np.einsum("ij,ij->i", p, g) / np.einsum("ij,ij->i", p, p)
    cand = cand[np.isfinite(cand) & (cand > 0)]
    if cand.size == 0:
        raise AlignmentError("no positive scale candidate")
    qs = np.unique(np.quantile(cand, np.linspace(0, 1, 257)))
    vals = np.array([scale_objective(s) for s in qs])
    k = int(np.argmin(vals))
    lo, hi = qs[max(k - 1, 0)], qs[min(k + 1, qs.size - 1)]
    s0 = qs[k] if lo == hi else _golden_section(scale_objective, lo, hi)
    if mode == "scale":
        if s0 < 0:
            warnings.warn("negative fitted scale clamped to 0")
            s0 = 0.0
        return PointTransform(scale=float(s0))
    if mode != "affine":
        raise ValueError(f"unknown pointmap alignment mode {mode!r}")

    def affine_objective(x):
        s, t = x
        d = s * p - g
        d = d.copy()
        d[:, 2] += t
        r = np.linalg.norm(d, axis=1) / gnorm
        return np.minimum(r, truncation).sum()

    t0 = float(np.median(g[:, 2] - s0 * p[:, 2]))
    res = minimize(
        affine_objective,
        x0=np.array([s0, t0]),
        method="Nelder-Mead",
        options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 2000},
    )
    s, t = res.x
    if s < 0:
        warnings.warn("negative fitted scale clamped to 0")
        s = 0.0
    return PointTransform(scale=float(s), z_shift=float(t))


def fit(mode: str, pred: DepthMap, gt: DepthMap):
    """Fit the named depth-space alignment mode."""
    if mode == "none":
        return AffineParams(1.0, 0.0, "depth")
    if mode == "scale_depth":
        return align_scale_depth(pred, gt)
    if mode == "affine_depth_l1":
        return align_affine_depth_l1(pred, gt)
    if mode == "affine_depth_lstsq":
        return align_affine_depth_lstsq(pred, gt)
    if mode == "affine_disparity":
        return align_affine_disparity(pred, gt)
    raise ValueError(f"unknown depth alignment mode {mode!r}")


def align_depth(mode: str, pred: DepthMap, gt: DepthMap) -> DepthMap:
    """Fit and apply a depth-space alignment; `none` returns a copy."""
    if mode == "none":
        return pred.copy()
    return fit(mode, pred, gt).apply(pred)
