"""Sensitivity-aligned weighted averages of base metrics.

Given sensitivity vectors R_i of base metrics (all against one common
reference) and a target vector T, find non-negative weights w
maximizing the cosine similarity between sum_i w_i R_i and T. Over the
convex cone {R w : w >= 0} the maximum-cosine direction is exactly the
Euclidean projection of T onto the cone, so the problem reduces to
non-negative least squares min_{w>=0} ||R w - T||, solved with the
active-set NNLS algorithm. Active-set solutions put exact zeros on
excluded metrics, and the solution is verified against its KKT
conditions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from . import metrics as metrics_mod
from .depthcore import CameraIntrinsics, DepthMap
from .metrics import MetricScore, MetricSpec
from .sensitivity import cosine_similarity, fit_quadratic

KKT_TOLERANCE = 1e-8


class SawaError(RuntimeError):
    pass


class InfeasibleProblem(SawaError):
    """No base vector has positive inner product with the target."""


@dataclass
class SawaProblem:
    """Base sensitivity vectors in their original units, plus a target."""

    names: list[str]
    vectors: np.ndarray  # (K, M), row i = R_i
    target: np.ndarray  # (M,)

    @classmethod
    def from_rows(cls, rows: dict[str, np.ndarray], target=None) -> "SawaProblem":
        names = list(rows)
        vectors = np.stack([np.asarray(rows[n], float) for n in names])
        if target is None:
            target = np.ones(vectors.shape[1])
        return cls(names, vectors, np.asarray(target, float))


@dataclass
class SawaSolution:
    names: list[str]
    weights_rescaled: np.ndarray  # for unit-normalized (L2 = sqrt(M)) vectors
    weights_original: np.ndarray  # equivalent weights in original metric units
    similarity: float
    kkt_residual: float

    def weight_dict(self, original: bool = False) -> dict[str, float]:
        w = self.weights_original if original else self.weights_rescaled
        return {n: float(x) for n, x in zip(self.names, w)}

    def to_json(self) -> str:
        return json.dumps(
            {
                "similarity": self.similarity,
                "weights_rescaled": self.weight_dict(original=False),
                "weights_original": self.weight_dict(original=True),
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "SawaSolution":
        d = json.loads(text)
        names = list(d["weights_original"])
        return cls(
            names,
            np.array([d["weights_rescaled"][n] for n in names]),
            np.array([d["weights_original"][n] for n in names]),
            float(d["similarity"]),
            kkt_residual=float("nan"),
        )


def solve(problem: SawaProblem) -> SawaSolution:
    """Globally optimal non-negative weights for maximum cosine similarity."""
    R = problem.vectors
    T = problem.target
    m = R.shape[1]
    norms = np.linalg.norm(R, axis=1)
    if np.any(norms == 0):
        raise SawaError("base sensitivity vector with zero norm")
    if not np.any(R @ T > 0):
        raise InfeasibleProblem(
            "no base vector has positive inner product with the target; "
            f"inner products: {dict(zip(problem.names, R @ T))}"
        )
    # solve on unit-rescaled rows (L2 = sqrt(M)); the cone is unchanged
    Rn = R * (np.sqrt(m) / norms)[:, None]
    w, _ = nnls(Rn.T, T)
    combo = Rn.T @ w
    if np.linalg.norm(combo) == 0:
        raise InfeasibleProblem("projection of the target onto the cone is zero")

    grad = Rn @ (combo - T)  # stationarity: grad_i = 0 on support, >= 0 off it
    kkt = max(
        float(np.max(np.abs(grad[w > 0]), initial=0.0)),
        float(np.max(-grad[w == 0], initial=0.0)),
    )
    scale = max(float(np.linalg.norm(Rn @ Rn.T @ w)), 1.0)
    if kkt / scale > KKT_TOLERANCE:
        raise SawaError(f"KKT residual {kkt:.3e} exceeds tolerance")

    similarity = cosine_similarity(combo, T)
    w_orig = w * (np.sqrt(m) / norms)
    # report both weight sets normalized to sum 1 (same composite up to
    # a positive global factor)
    w_resc = w / w.sum()
    w_orig = w_orig / w_orig.sum()
    return SawaSolution(list(problem.names), w_resc, w_orig, similarity, kkt / scale)


def brute_force_similarity(problem: SawaProblem, resolution: int = 24, refine: int = 2) -> float:
    """Best cosine over a dense simplex grid of weights; oracle for solve()."""
    R = problem.vectors
    norms = np.linalg.norm(R, axis=1)
    Rn = R * (np.sqrt(R.shape[1]) / norms)[:, None]
    T = problem.target
    k = Rn.shape[0]

    def grid_points(center, radius, steps):
        axes = [np.linspace(max(c - radius, 0.0), c + radius, steps) for c in center]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        return pts[pts.sum(axis=1) > 0]

    center = np.full(k, 0.5)
    radius = 0.5
    best_w, best_sim = None, -np.inf
    for _ in range(refine + 1):
        pts = grid_points(center, radius, resolution)
        combos = pts @ Rn
        nrm = np.linalg.norm(combos, axis=1)
        ok = nrm > 0
        sims = (combos[ok] @ T) / (nrm[ok] * np.linalg.norm(T))
        i = int(np.argmax(sims))
        if sims[i] > best_sim:
            best_sim = float(sims[i])
            best_w = pts[ok][i]
        center = best_w
        radius *= 2.5 / resolution
    return best_sim


def compose_evaluate(
    weights: dict[str, float],
    pred: DepthMap,
    gt: DepthMap,
    intr: CameraIntrinsics | None = None,
    pred_intr: CameraIntrinsics | None = None,
) -> tuple[MetricScore, dict]:
    """Weighted sum of base metric scores.

    Components that are absent for this scene (e.g. boundary F1 with no
    ground-truth edges) are dropped and the remaining weights
    renormalized to keep the total weight constant; the metadata lists
    the dropped components and per-component scores.
    """
    specs = {name: MetricSpec.parse(name) for name in weights}
    scores: dict[str, float] = {}
    absent: list[str] = []
    counts = []
    for name, spec in specs.items():
        score = metrics_mod.evaluate(spec, pred, gt, intr, pred_intr=pred_intr)
        if score is None:
            absent.append(name)
        else:
            scores[name] = score.value
            counts.append(score.valid_pixel_count)
    if not scores:
        raise SawaError("all composite components are absent for this scene")
    total_w = sum(weights.values())
    present_w = sum(weights[n] for n in scores)
    renorm = total_w / present_w if present_w > 0 else 1.0
    value = sum(weights[n] * renorm * scores[n] for n in scores)
    meta = {
        "component_scores": scores,
        "absent_components": absent,
        "weight_renormalization": renorm,
    }
    return MetricScore(float(value), int(min(counts))), meta


def linearity_check(
    responses: dict,
    weights: dict[str, float],
    reference: str,
    kinds,
) -> dict:
    """Compare the composite's fitted sensitivity vector against the
    weighted sum of its components' vectors, using the same response
    sweeps for both. Returns per-family relative deviations."""
    from .sensitivity import ResponseSamples, sensitivity_vector

    combined_rates = np.zeros(len(kinds))
    for name, w in weights.items():
        vec = sensitivity_vector(name, reference, responses, kinds)
        combined_rates += w * vec.rates

    # empirical composite: weighted sum of mean scores per intensity
    empirical = []
    for kind in kinds:
        xs = None
        ys = None
        for name, w in weights.items():
            pts = responses[(name, kind)].points
            if xs is None:
                xs = [x for x, _ in pts]
                ys = np.zeros(len(pts))
            if [x for x, _ in pts] != xs:
                raise SawaError("component sweeps use different intensity grids")
            ys += w * np.array([y for _, y in pts])
        fit_c = fit_quadratic(list(zip(xs, ys)))
        fit_ref = fit_quadratic(responses[(reference, kind)].points)
        empirical.append(fit_c.b / fit_ref.b)
    empirical = np.array(empirical)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(empirical - combined_rates) / np.maximum(np.abs(combined_rates), 1e-300)
    return {
        "combined": combined_rates,
        "empirical": empirical,
        "max_relative_deviation": float(np.max(rel)),
        "per_family": dict(zip(kinds, rel)),
    }


def error_heatmap(
    weights: dict[str, float],
    pred: DepthMap,
    gt: DepthMap,
    intr: CameraIntrinsics | None = None,
    pred_intr: CameraIntrinsics | None = None,
) -> np.ndarray:
    """Per-pixel decomposition of the composite score.

    Pixel-mean metrics contribute their per-pixel errors divided by the
    pixel count (so the heatmap sums to the score); RMS-style metrics
    spread their score proportionally to squared error; pair metrics
    split each pair's error between its two pixels; boundary F1 divides
    its score equally among disagreeing edge pixels. Alignment is
    computed globally and its residual attributed per pixel.
    """
    from . import alignment, relnormal as rn
    from .depthcore import unproject

    h, w = gt.shape
    heat = np.zeros((h, w))
    total_w = sum(weights.values())
    present = {}
    for name in weights:
        spec = MetricSpec.parse(name)
        score = metrics_mod.evaluate(spec, pred, gt, intr, pred_intr=pred_intr)
        if score is not None:
            present[name] = (spec, score)
    present_w = sum(weights[n] for n in present)
    renorm = total_w / present_w if present_w > 0 else 1.0

    for name, (spec, score) in present.items():
        weight = weights[name] * renorm
        heat += weight * _component_heatmap(spec, score, pred, gt, intr, pred_intr)
    return heat


def _component_heatmap(spec, score, pred, gt, intr, pred_intr):
    from . import alignment, relnormal as rn
    from .depthcore import unproject

    h, w = gt.shape
    out = np.zeros((h, w))
    aligned = alignment.align_depth(spec.align, pred, gt) if spec.align in (
        "none",
        "scale_depth",
        "affine_depth_l1",
        "affine_depth_lstsq",
        "affine_disparity",
    ) else pred
    mask = aligned.valid & gt.valid
    n = max(int(mask.sum()), 1)
    p = aligned.values
    g = gt.values
    params = spec.param_dict

    if spec.base == "absrel":
        out[mask] = np.abs(g[mask] - p[mask]) / g[mask] / n
    elif spec.base == "absrel_p":
        gp = unproject(gt, intr)
        pp = unproject(aligned, pred_intr or intr)
        gnorm = np.linalg.norm(gp.points, axis=-1)
        err = np.linalg.norm(pp.points - gp.points, axis=-1)
        ok = mask & (gnorm > 0)
        out[ok] = err[ok] / gnorm[ok] / max(int(ok.sum()), 1)
    elif spec.base == "delta":
        t = params.get("t", 1.0)
        ratio = np.maximum(g[mask] / p[mask], p[mask] / g[mask])
        out[mask] = (ratio >= 1.25 ** t).astype(float) / n
    elif spec.base in ("rmse", "rmse_log", "rmse_log_si"):
        if spec.base == "rmse":
            sq = (p[mask] - g[mask]) ** 2
        else:
            d = np.log(g[mask]) - np.log(p[mask])
            if spec.base == "rmse_log_si":
                d = d - np.mean(d)
            sq = d ** 2
        total = sq.sum()
        share = sq / total if total > 0 else np.zeros_like(sq)
        out[mask] = share * score.value
    elif spec.base == "wkdr":
        tau = params.get("tau", metrics_mod.DEFAULT_WKDR_TAU)
        budget = int(params.get("pairs", metrics_mod.DEFAULT_WKDR_PAIRS))
        iy, ix, jy, jx = rn.sobol_pairs(h, w, None, budget)
        ok = mask[iy, ix] & mask[jy, jx]
        iy, ix, jy, jx = iy[ok], ix[ok], jy[ok], jx[ok]
        lg = metrics_mod._ordinal_labels(g[iy, ix], g[jy, jx], tau)
        lp = metrics_mod._ordinal_labels(p[iy, ix], p[jy, jx], tau)
        bad = lg != lp
        half = 0.5 / max(bad.size, 1)
        np.add.at(out, (iy[bad], ix[bad]), half)
        np.add.at(out, (jy[bad], jx[bad]), half)
    elif spec.base == "boundary_f1":
        union = np.zeros((h, w), bool)
        for t in metrics_mod.DEFAULT_F1_THRESHOLDS:
            ge = metrics_mod.depth_edges(gt, t)
            pe = metrics_mod.depth_edges(aligned, t)
            union |= ge ^ pe
        if union.any():
            out[union] = score.value / union.sum()
    elif spec.base == "relnormal":
        config = rn.RelNormalConfig(
            radius=int(params.get("radius", 32)),
            samples=int(params.get("samples", 100_000)),
            scales=(1,),
        )
        from .depthcore import compute_normals

        n_gt = compute_normals(unproject(gt, intr))
        n_pr = compute_normals(unproject(aligned, pred_intr or intr))
        iy, ix, jy, jx = rn.sobol_pairs(h, w, config.radius, config.samples)
        ok = n_gt.valid[iy, ix] & n_gt.valid[jy, jx] & n_pr.valid[iy, ix] & n_pr.valid[jy, jx]
        iy, ix, jy, jx = iy[ok], ix[ok], jy[ok], jx[ok]
        a_gt = rn.pair_angle(n_gt.normals[iy, ix], n_gt.normals[jy, jx])
        a_pr = rn.pair_angle(n_pr.normals[iy, ix], n_pr.normals[jy, jx])
        err = np.abs(a_pr - a_gt) / np.pi
        half = 0.5 / max(err.size, 1)
        np.add.at(out, (iy, ix), half * err)
        np.add.at(out, (jy, jx), half * err)
    else:
        raise SawaError(f"no heatmap rule for metric base {spec.base!r}")
    return out
