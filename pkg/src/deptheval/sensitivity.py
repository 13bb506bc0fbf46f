"""Exchange-rate estimation from perturbation sweeps.

Each metric's response to a perturbation family is treated as a smooth
function of intensity, approximated by a least-squares quadratic
a*x^2 + b*x through the origin; the exchange rate between two metrics
under the same family is the ratio of their derivatives at zero,
b_A / b_B. A metric's sensitivity vector collects its exchange rates
against a reference metric over all families, optionally L2-normalized
to sqrt(M) for display.

Intensities are measured relative to each family's identity point
(angle 0 or scale 1), so x = 0 always means "unperturbed" and computed
metrics anchor at (0, 0).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import metrics as metrics_mod
from . import perturb as perturb_mod
from .depthcore import CameraIntrinsics, DepthMap


class SensitivityError(RuntimeError):
    pass


class UndefinedExchangeRate(SensitivityError):
    pass


@dataclass
class QuadraticFit:
    a: float
    b: float
    residual_rms: float

    def derivative_at_zero(self) -> float:
        return self.b


@dataclass
class ResponseSamples:
    metric: str  # metric spec string or "human"
    perturbation: str
    points: list[tuple[float, float]]  # (intensity offset x, mean score y)
    scene_counts: list[int] = field(default_factory=list)


def fit_quadratic(points) -> QuadraticFit:
    """OLS fit of y = a*x^2 + b*x; the origin is included as one point."""
    pts = [(float(x), float(y)) for x, y in points]
    if not any(x == 0 for x, _ in pts):
        pts = [(0.0, 0.0)] + pts
    xs = np.array([x for x, _ in pts])
    ys = np.array([y for _, y in pts])
    if np.unique(xs[xs != 0]).size < 2:
        raise SensitivityError("need at least 2 distinct nonzero intensities")
    design = np.stack([xs ** 2, xs], axis=1)
    coef, *_ = np.linalg.lstsq(design, ys, rcond=None)
    a, b = float(coef[0]), float(coef[1])
    resid = ys - design @ coef
    if b < 0:
        warnings.warn(
            "fitted derivative at zero is negative (non-monotone response); kept as-is"
        )
    return QuadraticFit(a, b, float(np.sqrt(np.mean(resid ** 2))))


def exchange_rate(samples_a: ResponseSamples, samples_b: ResponseSamples) -> float:
    """Ratio of derivatives at zero intensity, b_A / b_B."""
    fit_a = fit_quadratic(samples_a.points)
    fit_b = fit_quadratic(samples_b.points)
    if abs(fit_b.b) < 1e-12:
        raise UndefinedExchangeRate(
            f"{samples_b.metric} has zero derivative under {samples_b.perturbation}"
        )
    return fit_a.b / fit_b.b


@dataclass
class SensitivityVector:
    metric: str
    reference: str
    perturbations: tuple[str, ...]
    rates: np.ndarray
    normalized: bool = False

    def normalize(self) -> "SensitivityVector":
        """Rescale so the L2 norm equals sqrt(M) (the all-ones norm)."""
        norm = float(np.linalg.norm(self.rates))
        if norm == 0:
            raise SensitivityError("cannot normalize a zero sensitivity vector")
        scaled = self.rates * (np.sqrt(len(self.rates)) / norm)
        return SensitivityVector(
            self.metric, self.reference, self.perturbations, scaled, normalized=True
        )


def collect_responses(
    scenes,
    metric_specs,
    kinds=perturb_mod.PERTURBATION_KINDS,
    grids: dict | None = None,
    axis=perturb_mod.DEFAULT_AXIS,
    seed: int = 0,
    on_scene_failure: str = "skip",
) -> dict[tuple[str, str], ResponseSamples]:
    """Sweep every scene and average scores per (metric, family, intensity).

    `scenes` is a list of (DepthMap, CameraIntrinsics). Scene-level
    perturbation failures (solver non-convergence, infeasible
    partition) drop that scene for that family instead of aborting.
    """
    grids = grids or {}
    spec_strs = [str(s) for s in metric_specs]
    sums: dict = {}
    counts: dict = {}
    intensity_lists: dict = {}
    for kind in kinds:
        grid = grids.get(kind, perturb_mod.default_intensity_grid(kind))
        ident = perturb_mod.identity_intensity(kind)
        intensity_lists[kind] = sorted(set([ident] + list(grid)))
        for gt, intr in scenes:
            try:
                swept = perturb_mod.sweep(gt, intr, kind, intensity_lists[kind], axis=axis, seed=seed)
            except perturb_mod.PerturbationError:
                if on_scene_failure == "skip":
                    continue
                raise
            for s, depth, pintr in swept:
                for spec, name in zip(metric_specs, spec_strs):
                    score = metrics_mod.evaluate(spec, depth, gt, intr, pred_intr=pintr)
                    if score is None:
                        continue
                    key = (name, kind, s)
                    sums[key] = sums.get(key, 0.0) + score.value
                    counts[key] = counts.get(key, 0) + 1
    out: dict[tuple[str, str], ResponseSamples] = {}
    for kind in kinds:
        ident = perturb_mod.identity_intensity(kind)
        for name in spec_strs:
            points, n_scenes = [], []
            for s in intensity_lists[kind]:
                key = (name, kind, s)
                if key not in counts:
                    continue
                points.append((s - ident, sums[key] / counts[key]))
                n_scenes.append(counts[key])
            if points:
                out[(name, kind)] = ResponseSamples(name, kind, points, n_scenes)
    return out


def sensitivity_vector(
    metric: str,
    reference: str,
    responses: dict[tuple[str, str], ResponseSamples],
    kinds=perturb_mod.PERTURBATION_KINDS,
) -> SensitivityVector:
    rates = []
    for kind in kinds:
        rates.append(exchange_rate(responses[(metric, kind)], responses[(reference, kind)]))
    return SensitivityVector(metric, reference, tuple(kinds), np.array(rates))


def cosine_similarity(v1, v2) -> float:
    v1 = np.asarray(v1, float)
    v2 = np.asarray(v2, float)
    denom = np.linalg.norm(v1) * np.linalg.norm(v2)
    if denom == 0:
        raise SensitivityError("cosine similarity of a zero vector is undefined")
    return float(np.dot(v1, v2) / denom)


def ingest_human_csv(
    path,
    gold_accuracy_threshold: float = 0.7,
    include_zero_intensity: bool = True,
) -> dict[str, ResponseSamples]:
    """Mean noticing rate per (perturbation, intensity) from raw responses.

    CSV columns: scene, perturbation, intensity, annotator, response
    (1 = perturbation noticed). Annotators whose accuracy on the
    zero-intensity decoys falls below the threshold are dropped before
    averaging; an annotator with no decoy rows is an error.
    """
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        required = {"scene", "perturbation", "intensity", "annotator", "response"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise SensitivityError(f"human CSV must have columns {sorted(required)}")
        for i, row in enumerate(reader):
            try:
                intensity = float(row["intensity"])
                response = int(row["response"])
            except (TypeError, ValueError) as e:
                raise SensitivityError(f"malformed row {i + 2}: {row}") from e
            if response not in (0, 1):
                raise SensitivityError(f"row {i + 2}: response must be 0 or 1")
            rows.append((row["scene"], row["perturbation"], intensity, row["annotator"], response))

    annotators = {a for _, _, _, a, _ in rows}
    accuracy = {}
    for a in annotators:
        gold = [r for _, _, x, ann, r in rows if ann == a and x == 0]
        if not gold:
            raise SensitivityError(f"annotator {a!r} has no zero-intensity gold rows")
        # the correct decoy answer is 0 ("this is the ground truth")
        accuracy[a] = float(np.mean([r == 0 for r in gold]))
    kept = {a for a in annotators if accuracy[a] >= gold_accuracy_threshold}

    agg: dict[tuple[str, float], list[int]] = {}
    for _, kind, x, a, r in rows:
        if a not in kept:
            continue
        if x == 0 and not include_zero_intensity:
            continue
        agg.setdefault((kind, x), []).append(r)
    out: dict[str, ResponseSamples] = {}
    for (kind, x), vals in sorted(agg.items()):
        sample = out.setdefault(kind, ResponseSamples("human", kind, []))
        sample.points.append((x, float(np.mean(vals))))
        sample.scene_counts.append(len(vals))
    return out


def table_to_csv(path, vectors: list[SensitivityVector], similarities=None) -> None:
    """Write rows = metrics, columns = perturbation families (+ cosine)."""
    if not vectors:
        raise SensitivityError("no sensitivity vectors to write")
    kinds = vectors[0].perturbations
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        header = ["metric"] + list(kinds)
        if similarities is not None:
            header.append("cosine_to_target")
        writer.writerow(header)
        for vec in vectors:
            row = [vec.metric] + [f"{r:.6g}" for r in vec.rates]
            if similarities is not None:
                row.append(f"{similarities.get(vec.metric, float('nan')):.4f}")
            writer.writerow(row)


def render_table(path, vectors: list[SensitivityVector], similarities=None) -> None:
    """Heat-table image: one row per metric, one column per family."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    kinds = vectors[0].perturbations
    data = np.stack([v.rates for v in vectors])
    fig, ax = plt.subplots(figsize=(1.2 * len(kinds) + 3, 0.45 * len(vectors) + 1.5))
    im = ax.imshow(data, cmap="Reds", aspect="auto")
    ax.set_xticks(range(len(kinds)), kinds, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(len(vectors)), [v.metric for v in vectors], fontsize=8)
    for i in range(data.shape[0]):
        for j in range(data.shape[1]):
            ax.text(j, i, f"{data[i, j]:.2f}", ha="center", va="center", fontsize=7)
    if similarities is not None:
        labels = [f"{similarities.get(v.metric, float('nan')):.2f}" for v in vectors]
        ax2 = ax.secondary_yaxis("right")
        ax2.set_yticks(range(len(vectors)), labels)
        ax2.set_ylabel("cosine to target")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
