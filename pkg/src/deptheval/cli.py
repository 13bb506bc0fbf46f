"""Command-line interface.

Subcommands: eval, perturb, sweep, sensitivity, sawa solve/eval,
render, report. All randomness sits behind --seed.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import click
import numpy as np

from . import depthio, metrics as metrics_mod, perturb as perturb_mod
from . import pipeline as pipeline_mod
from . import render as render_mod
from . import sawa as sawa_mod
from .depthcore import DepthMap
from .metrics import MetricSpec
from .relnormal import RelNormalConfig


@click.group()
def main():
    """Monocular depth evaluation toolkit."""


@main.command("eval")
@click.option("--manifest", type=click.Path(exists=True), required=True)
@click.option("--metrics", "metric_list", required=True,
              help="comma-separated metric specs, e.g. absrel@none,delta@none[t=1]")
@click.option("--regime", type=click.Choice(pipeline_mod.REGIMES), default="align_gt_gt_intr")
@click.option("--out", type=click.Path(), required=True, help="output CSV")
def eval_cmd(manifest, metric_list, regime, out):
    """Batch-evaluate the predictions in a scene manifest."""
    mani = pipeline_mod.SceneManifest.load(manifest)
    specs = [MetricSpec.parse(s) for s in metric_list.split(",")]
    report = pipeline_mod.run_eval(mani, specs, regime)
    report.to_csv(out)
    click.echo(f"wrote {out} ({len(report.means)} cells, {len(report.dropped)} absent)")


@main.command("perturb")
@click.option("--kind", type=click.Choice(perturb_mod.PERTURBATION_KINDS), required=True)
@click.option("--intensity", type=float, required=True)
@click.option("--sigma", type=float, default=None,
              help="override curvature smoothing sigma (else set by kind)")
@click.option("--seed", type=int, default=0)
@click.option("--axis", default="1,0,0", help="rotation axis for surface_orientation")
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--intr", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
def perturb_cmd(kind, intensity, sigma, seed, axis, in_path, intr, out):
    """Apply one perturbation to a depth map."""
    gt = depthio.read_depth(in_path)
    intrinsics = depthio.read_intrinsics(intr)
    axis_vec = tuple(float(x) for x in axis.split(","))
    if kind.startswith("curvature") and sigma is not None:
        depth = perturb_mod.perturb_curvature(gt, intensity, sigma, seed)
        pintr = intrinsics
    else:
        spec = perturb_mod.PerturbationSpec(kind, intensity, axis=axis_vec, seed=seed)
        depth, pintr = perturb_mod.apply(spec, gt, intrinsics)
    depthio.write_depth(out, depth)
    if pintr.to_dict() != intrinsics.to_dict():
        depthio.write_intrinsics(Path(out).with_suffix(".intr.json"), pintr)
    click.echo(f"wrote {out}")


@main.command("sweep")
@click.option("--manifest", type=click.Path(exists=True), required=True)
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--kinds", default=",".join(perturb_mod.PERTURBATION_KINDS))
@click.option("--seed", type=int, default=0)
@click.option("--axis", default="1,0,0")
def sweep_cmd(manifest, out_dir, kinds, seed, axis):
    """Write the perturbed-depth archive for a manifest."""
    mani = pipeline_mod.SceneManifest.load(manifest)
    axis_vec = tuple(float(x) for x in axis.split(","))
    written = pipeline_mod.make_sensitivity_dataset(
        mani, out_dir, kinds=tuple(kinds.split(",")), seed=seed, axis=axis_vec
    )
    click.echo(f"wrote {len(written)} perturbed depth maps to {out_dir}")


@main.command("sensitivity")
@click.option("--manifest", type=click.Path(exists=True), required=True)
@click.option("--metrics", "metric_list", required=True)
@click.option("--reference", default="absrel@none")
@click.option("--seed", type=int, default=0)
@click.option("--out-csv", type=click.Path(), required=True)
@click.option("--out-image", type=click.Path(), default=None)
@click.option("--rn-radius", type=int, default=32)
@click.option("--rn-samples", type=int, default=1_000_000)
def sensitivity_cmd(manifest, metric_list, reference, seed, out_csv, out_image, rn_radius, rn_samples):
    """Estimate sensitivity vectors over the manifest's scenes."""
    mani = pipeline_mod.SceneManifest.load(manifest)
    specs = []
    for s in metric_list.split(","):
        spec = MetricSpec.parse(s)
        if spec.base == "relnormal" and not spec.params:
            spec = MetricSpec(spec.base, spec.align,
                              (("radius", float(rn_radius)), ("samples", float(rn_samples))))
        specs.append(spec)
    pipeline_mod.run_sensitivity_study(
        mani, specs, reference, seed=seed, out_csv=out_csv, out_image=out_image
    )
    click.echo(f"wrote {out_csv}")


@main.group("sawa")
def sawa_group():
    """Composite-metric solving and evaluation."""


@sawa_group.command("solve")
@click.option("--sensitivity", "table", type=click.Path(exists=True), required=True,
              help="CSV from the sensitivity subcommand")
@click.option("--target", default="ones", help="'ones' or comma-separated floats")
@click.option("--out", type=click.Path(), required=True)
def sawa_solve_cmd(table, target, out):
    """Solve for non-negative weights maximizing cosine similarity."""
    rows = {}
    with open(table, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        kinds = [c for c in header[1:] if c != "cosine_to_target"]
        for row in reader:
            rows[row[0]] = np.array([float(x) for x in row[1:1 + len(kinds)]])
    t = None if target == "ones" else np.array([float(x) for x in target.split(",")])
    problem = sawa_mod.SawaProblem.from_rows(rows, t)
    solution = sawa_mod.solve(problem)
    Path(out).write_text(solution.to_json())
    click.echo(f"similarity {solution.similarity:.4f}; wrote {out}")


@sawa_group.command("eval")
@click.option("--weights", type=click.Path(exists=True), required=True)
@click.option("--pred", type=click.Path(exists=True), required=True)
@click.option("--gt", type=click.Path(exists=True), required=True)
@click.option("--intr", type=click.Path(exists=True), required=True)
@click.option("--original-units/--rescaled-units", default=True)
@click.option("--heatmap", type=click.Path(), default=None, help="also write a PNG error heatmap")
def sawa_eval_cmd(weights, pred, gt, intr, original_units, heatmap):
    """Evaluate the weighted composite on one prediction."""
    solution = sawa_mod.SawaSolution.from_json(Path(weights).read_text())
    w = solution.weight_dict(original=original_units)
    p = depthio.read_depth(pred)
    g = depthio.read_depth(gt)
    k = depthio.read_intrinsics(intr)
    score, meta = sawa_mod.compose_evaluate(w, p, g, k)
    click.echo(json.dumps({"score": score.value, **meta}, indent=2, default=str))
    if heatmap:
        heat = sawa_mod.error_heatmap(w, p, g, k)
        hmax = heat.max() if heat.max() > 0 else 1.0
        render_mod.save_png(heatmap, render_mod.to_uint8(heat / hmax))


@main.command("render")
@click.argument("what", type=click.Choice(["relight", "contours", "textured"]))
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--intr", type=click.Path(exists=True), required=True)
@click.option("--image", type=click.Path(exists=True), default=None)
@click.option("--axis", default="z", help="contour axis")
@click.option("--spacing", type=float, default=None, help="contour spacing in meters")
@click.option("--out", "out_dir", type=click.Path(), required=True)
def render_cmd(what, in_path, intr, image, axis, spacing, out_dir):
    """Write inspection renders for a depth map."""
    depth = depthio.read_depth(in_path)
    intrinsics = depthio.read_intrinsics(intr)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(in_path).stem
    if what == "relight":
        for i, img in enumerate(render_mod.textureless_relight(depth, intrinsics)):
            render_mod.save_png(out / f"{stem}_relight_{i}.png", img)
    elif what == "contours":
        for ax in (axis.split(",") if axis else ["x", "y", "z"]):
            spec = render_mod.ContourSpec(axis=ax, spacing=spacing)
            img = render_mod.projected_contours(depth, intrinsics, spec)
            render_mod.save_png(out / f"{stem}_contours_{ax}.png", img)
    else:
        if image is None:
            raise click.UsageError("--image is required for textured renders")
        from PIL import Image

        rgb = np.asarray(Image.open(image))
        poses = [
            render_mod.CameraPose.identity(),
            render_mod.CameraPose.translated(x=0.1),
            render_mod.CameraPose.translated(x=-0.1),
        ]
        for i, img in enumerate(render_mod.textured_views(depth, intrinsics, rgb, poses)):
            render_mod.save_png(out / f"{stem}_view_{i}.png", img)
    click.echo(f"wrote renders to {out}")


@main.command("report")
@click.option("--in", "in_csv", type=click.Path(exists=True), required=True)
def report_cmd(in_csv):
    """Pretty-print an evaluation CSV as an aligned table."""
    with open(in_csv, newline="") as f:
        rows = list(csv.reader(f))
    widths = [max(len(r[i]) for r in rows if i < len(r)) for i in range(max(map(len, rows)))]
    for r in rows:
        click.echo("  ".join(c.ljust(widths[i]) for i, c in enumerate(r)))


if __name__ == "__main__":
    main()
