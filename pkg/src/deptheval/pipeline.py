"""Dataset ingestion and batch evaluation.

A scene manifest is a JSON file:

    {"scenes": [{"id": ..., "rgb": ..., "gt_depth": ..., "intrinsics": ...,
                 "predictions": {"method": "path", ...},
                 "pred_intrinsics": {"method": "path", ...},
                 "boundary_accurate": true}, ...]}

Paths are relative to the manifest file. Evaluation runs in one of
three regimes that are never merged into one ranking:

  - align_gt_gt_intr: predictions aligned to ground truth, unprojected
    with ground-truth intrinsics;
  - no_align_gt_intr: raw predictions, ground-truth intrinsics;
  - no_align_pred_intr: raw predictions, predicted intrinsics.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import depthio, metrics as metrics_mod, perturb as perturb_mod, sensitivity as sens_mod
from .depthcore import CameraIntrinsics, DepthMap
from .metrics import MetricSpec

log = logging.getLogger(__name__)

REGIMES = ("align_gt_gt_intr", "no_align_gt_intr", "no_align_pred_intr")


class ManifestError(ValueError):
    pass


@dataclass
class Scene:
    id: str
    gt_depth: DepthMap
    intrinsics: CameraIntrinsics
    rgb_path: Path | None = None
    predictions: dict[str, Path] = field(default_factory=dict)
    pred_intrinsics: dict[str, CameraIntrinsics] = field(default_factory=dict)
    boundary_accurate: bool = False


@dataclass
class SceneManifest:
    scenes: list[Scene]

    @classmethod
    def load(cls, path) -> "SceneManifest":
        path = Path(path)
        data = json.loads(path.read_text())
        base = path.parent
        scenes = []
        ids = set()
        for entry in data["scenes"]:
            sid = entry["id"]
            if sid in ids:
                raise ManifestError(f"duplicate scene id {sid!r}")
            ids.add(sid)
            gt = depthio.read_depth(base / entry["gt_depth"])
            intr = depthio.read_intrinsics(base / entry["intrinsics"])
            preds = {m: base / p for m, p in entry.get("predictions", {}).items()}
            for p in preds.values():
                if not p.exists():
                    raise ManifestError(f"missing prediction file {p}")
            pintr = {
                m: depthio.read_intrinsics(base / p)
                for m, p in entry.get("pred_intrinsics", {}).items()
            }
            rgb = base / entry["rgb"] if "rgb" in entry else None
            scenes.append(
                Scene(sid, gt, intr, rgb, preds, pintr, bool(entry.get("boundary_accurate", False)))
            )
        return cls(sorted(scenes, key=lambda s: s.id))


@dataclass
class EvaluationReport:
    regime: str
    means: dict[tuple[str, str], float]  # (method, metric spec) -> mean
    scene_counts: dict[tuple[str, str], int]
    dropped: list[tuple[str, str, str]]  # (method, metric, scene id)

    def to_csv(self, path) -> None:
        import csv

        methods = sorted({m for m, _ in self.means})
        specs = sorted({s for _, s in self.means})
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["regime", self.regime])
            writer.writerow(["method"] + specs)
            for m in methods:
                row = [m]
                for s in specs:
                    v = self.means.get((m, s))
                    row.append(f"{v:.6g}" if v is not None else "absent")
                writer.writerow(row)


def _apply_regime_alignment(pred: DepthMap, gt: DepthMap, spec: MetricSpec, regime: str):
    """In the align-gt regime the spec's alignment runs as usual; in the
    no-align regimes any requested alignment is an error."""
    if regime == "align_gt_gt_intr":
        return spec
    if spec.align != "none":
        raise ManifestError(
            f"regime {regime} forbids aligned metric {spec}; use the align regime"
        )
    return spec


def run_eval(manifest: SceneManifest, specs, regime: str) -> EvaluationReport:
    if regime not in REGIMES:
        raise ManifestError(f"unknown regime {regime!r}; choose from {REGIMES}")
    specs = [s if isinstance(s, MetricSpec) else MetricSpec.parse(s) for s in specs]
    sums: dict = {}
    counts: dict = {}
    dropped: list = []
    for scene in manifest.scenes:
        if not scene.predictions:
            raise ManifestError(f"scene {scene.id!r} has no predictions for regime {regime}")
        for method in sorted(scene.predictions):
            pred = depthio.read_depth(scene.predictions[method])
            if regime == "no_align_pred_intr":
                if method not in scene.pred_intrinsics:
                    raise ManifestError(
                        f"scene {scene.id!r} lacks predicted intrinsics for {method!r}"
                    )
                pred_intr = scene.pred_intrinsics[method]
            else:
                pred_intr = scene.intrinsics
            for spec in specs:
                spec = _apply_regime_alignment(pred, scene.gt_depth, spec, regime)
                score = metrics_mod.evaluate(
                    spec, pred, scene.gt_depth, scene.intrinsics, pred_intr=pred_intr
                )
                key = (method, str(spec))
                if score is None:
                    dropped.append((method, str(spec), scene.id))
                    continue
                sums[key] = sums.get(key, 0.0) + score.value
                counts[key] = counts.get(key, 0) + 1
    means = {k: sums[k] / counts[k] for k in sums}
    return EvaluationReport(regime, means, counts, dropped)


def run_sensitivity_study(
    manifest_or_scenes,
    metric_specs,
    reference: str,
    kinds=perturb_mod.PERTURBATION_KINDS,
    grids: dict | None = None,
    seed: int = 0,
    axis=perturb_mod.DEFAULT_AXIS,
    out_csv=None,
    out_image=None,
    normalize: bool = True,
):
    """End-to-end sweeps -> fits -> sensitivity vectors (rows = metrics)."""
    scenes = _as_scene_pairs(manifest_or_scenes)
    specs = [s if isinstance(s, MetricSpec) else MetricSpec.parse(s) for s in metric_specs]
    ref_spec = MetricSpec.parse(reference)
    all_specs = list(specs)
    if str(ref_spec) not in [str(s) for s in specs]:
        all_specs.append(ref_spec)
    responses = sens_mod.collect_responses(
        scenes, all_specs, kinds=kinds, grids=grids, axis=axis, seed=seed
    )
    vectors = []
    for spec in specs:
        vec = sens_mod.sensitivity_vector(str(spec), str(ref_spec), responses, kinds)
        vectors.append(vec.normalize() if normalize else vec)
    if out_csv:
        sens_mod.table_to_csv(out_csv, vectors)
    if out_image:
        sens_mod.render_table(out_image, vectors)
    return vectors, responses


def _as_scene_pairs(manifest_or_scenes):
    if isinstance(manifest_or_scenes, SceneManifest):
        return [(s.gt_depth, s.intrinsics) for s in manifest_or_scenes.scenes]
    return list(manifest_or_scenes)


def make_sensitivity_dataset(
    manifest: SceneManifest,
    out_dir,
    kinds=perturb_mod.PERTURBATION_KINDS,
    grids: dict | None = None,
    seed: int = 0,
    axis=perturb_mod.DEFAULT_AXIS,
) -> list[Path]:
    """Write every (scene, kind, intensity) perturbed depth as PFM with a
    JSON provenance sidecar; per-scene failures are logged and skipped."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grids = grids or {}
    written = []
    for scene in manifest.scenes:
        for kind in kinds:
            grid = grids.get(kind, perturb_mod.default_intensity_grid(kind))
            try:
                swept = perturb_mod.sweep(scene.gt_depth, scene.intrinsics, kind, grid, axis=axis, seed=seed)
            except perturb_mod.PerturbationError as e:
                log.warning("scene %s: %s skipped (%s)", scene.id, kind, e)
                continue
            for s, depth, pintr in swept:
                stem = f"{scene.id}__{kind}__{s:g}"
                pfm = out_dir / f"{stem}.pfm"
                depthio.write_pfm(pfm, depth)
                meta = {
                    "scene": scene.id,
                    "kind": kind,
                    "intensity": s,
                    "seed": seed,
                    "axis": list(axis) if kind == "surface_orientation" else None,
                    "sigma": perturb_mod.curvature_sigma(kind) if kind.startswith("curvature") else None,
                    "intrinsics": pintr.to_dict(),
                }
                (out_dir / f"{stem}.meta.json").write_text(json.dumps(meta, indent=2))
                written.append(pfm)
    return written
