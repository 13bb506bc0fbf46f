"""Metric catalog, standardized so ground truth scores 0 and larger is worse.

Accuracy-style metrics (delta, boundary F1) are reported as 1 - value.
A metric can be *absent* for a scene (e.g. boundary F1 when the ground
truth has no depth edges); absent scores are returned as None and must
be excluded from aggregation by the caller.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import binary_dilation

from . import alignment, relnormal as rn
from .depthcore import CameraIntrinsics, DepthMap, PointMap, unproject

METRIC_BASES = (
    "absrel",
    "absrel_p",
    "delta",
    "rmse",
    "rmse_log",
    "rmse_log_si",
    "wkdr",
    "boundary_f1",
    "relnormal",
)

DEFAULT_F1_THRESHOLDS = (1.05, 1.1, 1.15, 1.2, 1.25)
DEFAULT_WKDR_TAU = 1.02
DEFAULT_WKDR_PAIRS = 100_000


class MetricError(ValueError):
    pass


@dataclass
class MetricScore:
    value: float
    valid_pixel_count: int


@dataclass(frozen=True)
class MetricSpec:
    """A base metric plus the alignment applied before it.

    String form: "BASE@ALIGNMENT" with optional bracketed parameters,
    e.g. "absrel@affine_disparity" or "delta@none[t=0.125]".
    """

    base: str
    align: str = "none"
    params: tuple = ()

    def __post_init__(self):
        if self.base not in METRIC_BASES:
            raise MetricError(f"unknown metric base {self.base!r}")
        if self.align not in alignment.ALIGNMENT_MODES:
            raise MetricError(f"unknown alignment mode {self.align!r}")

    @property
    def param_dict(self) -> dict:
        return dict(self.params)

    @classmethod
    def parse(cls, text: str) -> "MetricSpec":
        m = re.match(r"^([a-z0-9_]+)(?:@([a-z0-9_]+))?(?:\[(.*)\])?$", text.strip())
        if not m:
            raise MetricError(f"cannot parse metric spec {text!r}")
        base, align, raw = m.group(1), m.group(2) or "none", m.group(3)
        params = []
        if raw:
            for item in raw.split(","):
                key, _, val = item.partition("=")
                try:
                    value = float(val)
                except ValueError:
                    value = val
                params.append((key.strip(), value))
        return cls(base, align, tuple(params))

    def __str__(self) -> str:
        s = f"{self.base}@{self.align}"
        if self.params:
            inner = ",".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}"
                             for k, v in self.params)
            s += f"[{inner}]"
        return s


def _shared_values(pred: DepthMap, gt: DepthMap):
    mask = pred.valid & gt.valid
    if not mask.any():
        raise MetricError("no shared valid pixels")
    return pred.values[mask], gt.values[mask], int(mask.sum())


def absrel(pred: DepthMap, gt: DepthMap) -> MetricScore:
    p, g, n = _shared_values(pred, gt)
    return MetricScore(float(np.mean(np.abs(g - p) / g)), n)


def absrel_p(pred: PointMap, gt: PointMap) -> MetricScore:
    mask = pred.valid & gt.valid
    if not mask.any():
        raise MetricError("no shared valid pixels")
    p = pred.points[mask]
    g = gt.points[mask]
    gnorm = np.linalg.norm(g, axis=1)
    ok = gnorm > 0
    err = np.linalg.norm(p[ok] - g[ok], axis=1) / gnorm[ok]
    return MetricScore(float(err.mean()), int(ok.sum()))


def delta(pred: DepthMap, gt: DepthMap, t: float = 1.0) -> MetricScore:
    """1 - fraction of pixels with max depth ratio below 1.25**t."""
    p, g, n = _shared_values(pred, gt)
    ratio = np.maximum(g / p, p / g)
    acc = np.mean(ratio < 1.25 ** t)
    return MetricScore(float(1.0 - acc), n)


def rmse(pred: DepthMap, gt: DepthMap) -> MetricScore:
    p, g, n = _shared_values(pred, gt)
    return MetricScore(float(np.sqrt(np.mean((p - g) ** 2))), n)


def rmse_log(pred: DepthMap, gt: DepthMap) -> MetricScore:
    p, g, n = _shared_values(pred, gt)
    return MetricScore(float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))), n)


def rmse_log_si(pred: DepthMap, gt: DepthMap) -> MetricScore:
    """Scale-invariant log RMSE: residuals recentred by their mean."""
    p, g, n = _shared_values(pred, gt)
    d = np.log(g) - np.log(p)
    alpha = -np.mean(d)  # mean(log p - log g)
    return MetricScore(float(np.sqrt(np.mean((d + alpha) ** 2))), n)


def _ordinal_labels(d1: np.ndarray, d2: np.ndarray, tau: float) -> np.ndarray:
    ratio = np.maximum(d1 / d2, d2 / d1)
    labels = np.sign(d1 - d2).astype(np.int8)
    labels[ratio < tau] = 0
    return labels


def wkdr(
    pred: DepthMap,
    gt: DepthMap,
    pair_budget: int = DEFAULT_WKDR_PAIRS,
    tau: float = DEFAULT_WKDR_TAU,
) -> MetricScore:
    """Disagreement rate of ordinal depth relations over sampled pairs.

    Pairs are the first `pair_budget` global Sobol pairs; pairs with an
    invalid endpoint are excluded from the denominator.
    """
    mask = pred.valid & gt.valid
    iy, ix, jy, jx = rn.sobol_pairs(gt.height, gt.width, None, pair_budget)
    ok = mask[iy, ix] & mask[jy, jx]
    if not ok.any():
        raise MetricError("no valid pixel pair for wkdr")
    iy, ix, jy, jx = iy[ok], ix[ok], jy[ok], jx[ok]
    lg = _ordinal_labels(gt.values[iy, ix], gt.values[jy, jx], tau)
    lp = _ordinal_labels(pred.values[iy, ix], pred.values[jy, jx], tau)
    return MetricScore(float(np.mean(lg != lp)), int(ok.sum()))


def depth_edges(depth: DepthMap, threshold: float) -> np.ndarray:
    """Pixels adjacent to a valid neighbor with depth ratio above threshold."""
    d, v = depth.values, depth.valid
    with np.errstate(invalid="ignore", divide="ignore"):
        rh = np.maximum(d[:, :-1] / d[:, 1:], d[:, 1:] / d[:, :-1])
        rv = np.maximum(d[:-1, :] / d[1:, :], d[1:, :] / d[:-1, :])
    eh = (rh > threshold) & v[:, :-1] & v[:, 1:]
    ev = (rv > threshold) & v[:-1, :] & v[1:, :]
    edges = np.zeros(depth.shape, bool)
    edges[:, :-1] |= eh
    edges[:, 1:] |= eh
    edges[:-1, :] |= ev
    edges[1:, :] |= ev
    return edges


def boundary_f1(
    pred: DepthMap,
    gt: DepthMap,
    thresholds=DEFAULT_F1_THRESHOLDS,
    tolerance_px: int = 1,
) -> MetricScore | None:
    """1 - mean F1 of depth-edge maps, with 1-pixel matching tolerance.

    Returns None (absent) when the ground truth has no edge at any
    threshold; thresholds without gt edges are skipped individually.
    """
    f1s = []
    n = int((pred.valid & gt.valid).sum())
    for t in thresholds:
        ge = depth_edges(gt, t)
        if not ge.any():
            continue
        pe = depth_edges(pred, t)
        ge_d = binary_dilation(ge, iterations=tolerance_px) if tolerance_px else ge
        pe_d = binary_dilation(pe, iterations=tolerance_px) if tolerance_px else pe
        precision = (pe & ge_d).sum() / pe.sum() if pe.any() else 0.0
        recall = (ge & pe_d).sum() / ge.sum()
        f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
        f1s.append(f1)
    if not f1s:
        return None
    return MetricScore(float(1.0 - np.mean(f1s)), n)


def evaluate(
    spec: MetricSpec,
    pred: DepthMap,
    gt: DepthMap,
    intr: CameraIntrinsics | None = None,
    pred_intr: CameraIntrinsics | None = None,
) -> MetricScore | None:
    """Apply the spec's alignment, then its base metric.

    Point-map metrics unproject with `intr` (ground truth) and
    `pred_intr` (prediction; defaults to `intr`). Returns None when the
    base metric is absent for this scene.
    """
    params = spec.param_dict
    pred_intr = pred_intr or intr

    if spec.align in ("pointmap_scale", "pointmap_affine"):
        if intr is None:
            raise MetricError(f"{spec} needs camera intrinsics")
        gp = unproject(gt, intr)
        pp = unproject(pred, pred_intr)
        mode = "scale" if spec.align == "pointmap_scale" else "affine"
        transform = alignment.align_pointmap(pp, gp, mode=mode)
        pp = transform.apply(pp)
        if spec.base == "absrel_p":
            return absrel_p(pp, gp)
        # depth metrics read the z-channel of the aligned points
        z = pp.points[..., 2]
        ok = pp.valid & (z > 0)
        pred_aligned = DepthMap(np.where(ok, z, 1.0), ok)
        return _evaluate_depth_base(spec, params, pred_aligned, gt, intr, pred_intr)

    pred_aligned = alignment.align_depth(spec.align, pred, gt)
    if spec.base == "absrel_p":
        if intr is None:
            raise MetricError(f"{spec} needs camera intrinsics")
        return absrel_p(unproject(pred_aligned, pred_intr), unproject(gt, intr))
    return _evaluate_depth_base(spec, params, pred_aligned, gt, intr, pred_intr)


def _evaluate_depth_base(spec, params, pred, gt, intr, pred_intr):
    if spec.base == "absrel":
        return absrel(pred, gt)
    if spec.base == "delta":
        return delta(pred, gt, t=params.get("t", 1.0))
    if spec.base == "rmse":
        return rmse(pred, gt)
    if spec.base == "rmse_log":
        return rmse_log(pred, gt)
    if spec.base == "rmse_log_si":
        return rmse_log_si(pred, gt)
    if spec.base == "wkdr":
        return wkdr(
            pred,
            gt,
            pair_budget=int(params.get("pairs", DEFAULT_WKDR_PAIRS)),
            tau=params.get("tau", DEFAULT_WKDR_TAU),
        )
    if spec.base == "boundary_f1":
        return boundary_f1(pred, gt)
    if spec.base == "relnormal":
        if intr is None:
            raise MetricError(f"{spec} needs camera intrinsics")
        config = rn.RelNormalConfig(
            radius=int(params.get("radius", 32)),
            samples=int(params.get("samples", 1_000_000)),
        )
        value = rn.relnormal(pred, gt, intr, config, pred_intr=pred_intr)
        if value is None:
            return None
        return MetricScore(value, int((pred.valid & gt.valid).sum()))
    raise MetricError(f"unknown metric base {spec.base!r}")


def default_catalog(relnormal_samples: int = 100_000) -> list[MetricSpec]:
    """The standard row list: each base under its applicable alignments."""
    specs: list[MetricSpec] = []
    depth_aligns = (
        "none",
        "scale_depth",
        "affine_depth_l1",
        "affine_depth_lstsq",
        "affine_disparity",
    )
    for a in depth_aligns:
        specs.append(MetricSpec("absrel", a))
    for a in ("none", "pointmap_scale", "pointmap_affine"):
        specs.append(MetricSpec("absrel_p", a))
    for t in (1.0, 0.125):
        specs.append(MetricSpec("delta", "none", (("t", t),)))
        specs.append(MetricSpec("delta", "scale_depth", (("t", t),)))
    specs.append(MetricSpec("rmse", "none"))
    specs.append(MetricSpec("rmse", "scale_depth"))
    specs.append(MetricSpec("rmse_log", "none"))
    specs.append(MetricSpec("rmse_log_si", "none"))
    specs.append(MetricSpec("wkdr", "none"))
    specs.append(MetricSpec("boundary_f1", "none"))
    specs.append(MetricSpec("relnormal", "none", (("samples", float(relnormal_samples)),)))
    return specs
