import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from deptheval import cli, depthio, fixtures, perturb, pipeline
from deptheval.depthcore import DepthMap


def _write_manifest(tmp_path, scenes, predictions=("good", "scaled"), pred_intr=False):
    entries = []
    for i, scene in enumerate(scenes):
        sid = f"scene{i}"
        depthio.write_pfm(tmp_path / f"{sid}_gt.pfm", scene.depth)
        depthio.write_intrinsics(tmp_path / f"{sid}_intr.json", scene.intr)
        preds = {}
        pintr = {}
        for method in predictions:
            if method == "good":
                pred = scene.depth
            else:
                pred = DepthMap(scene.depth.values / 2.0, scene.depth.valid.copy())
            path = f"{sid}_{method}.pfm"
            depthio.write_pfm(tmp_path / path, pred)
            preds[method] = path
            if pred_intr:
                ipath = f"{sid}_{method}_intr.json"
                depthio.write_intrinsics(tmp_path / ipath, scene.intr)
                pintr[method] = ipath
        entry = {
            "id": sid,
            "gt_depth": f"{sid}_gt.pfm",
            "intrinsics": f"{sid}_intr.json",
            "predictions": preds,
        }
        if pred_intr:
            entry["pred_intrinsics"] = pintr
        entries.append(entry)
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"scenes": entries}))
    return path


@pytest.fixture
def manifest_path(tmp_path):
    return _write_manifest(tmp_path, [fixtures.generate("sphere_cap", 32), fixtures.generate("ramp", 32)])


class TestManifest:
    def test_load(self, manifest_path):
        mani = pipeline.SceneManifest.load(manifest_path)
        assert [s.id for s in mani.scenes] == ["scene0", "scene1"]
        assert set(mani.scenes[0].predictions) == {"good", "scaled"}

    def test_duplicate_ids_rejected(self, tmp_path):
        scene = fixtures.generate("ramp", 16)
        path = _write_manifest(tmp_path, [scene])
        data = json.loads(path.read_text())
        data["scenes"].append(data["scenes"][0])
        path.write_text(json.dumps(data))
        with pytest.raises(pipeline.ManifestError):
            pipeline.SceneManifest.load(path)

    def test_missing_prediction_file_rejected(self, tmp_path):
        scene = fixtures.generate("ramp", 16)
        path = _write_manifest(tmp_path, [scene])
        data = json.loads(path.read_text())
        data["scenes"][0]["predictions"]["ghost"] = "nope.pfm"
        path.write_text(json.dumps(data))
        with pytest.raises(pipeline.ManifestError):
            pipeline.SceneManifest.load(path)


class TestRunEval:
    def test_perfect_prediction_scores_zero(self, manifest_path):
        mani = pipeline.SceneManifest.load(manifest_path)
        report = pipeline.run_eval(mani, ["absrel@none"], "no_align_gt_intr")
        assert report.means[("good", "absrel@none")] == pytest.approx(0.0)
        assert report.means[("scaled", "absrel@none")] == pytest.approx(0.5)

    def test_alignment_regime_fixes_scale(self, manifest_path):
        mani = pipeline.SceneManifest.load(manifest_path)
        report = pipeline.run_eval(mani, ["absrel@scale_depth"], "align_gt_gt_intr")
        assert report.means[("scaled", "absrel@scale_depth")] < 1e-9

    def test_no_align_regime_forbids_alignment(self, manifest_path):
        mani = pipeline.SceneManifest.load(manifest_path)
        with pytest.raises(pipeline.ManifestError):
            pipeline.run_eval(mani, ["absrel@scale_depth"], "no_align_gt_intr")

    def test_unknown_regime(self, manifest_path):
        mani = pipeline.SceneManifest.load(manifest_path)
        with pytest.raises(pipeline.ManifestError):
            pipeline.run_eval(mani, ["absrel@none"], "blended")

    def test_pred_intr_regime_requires_intrinsics(self, manifest_path):
        mani = pipeline.SceneManifest.load(manifest_path)
        with pytest.raises(pipeline.ManifestError):
            pipeline.run_eval(mani, ["absrel@none"], "no_align_pred_intr")

    def test_pred_intr_regime_runs_with_intrinsics(self, tmp_path):
        path = _write_manifest(tmp_path, [fixtures.generate("sphere_cap", 32)], pred_intr=True)
        mani = pipeline.SceneManifest.load(path)
        report = pipeline.run_eval(mani, ["absrel_p@none"], "no_align_pred_intr")
        assert report.means[("good", "absrel_p@none")] == pytest.approx(0.0)

    def test_absent_scores_recorded_not_averaged(self, tmp_path):
        # smooth scenes have no gt edges: boundary F1 is absent everywhere
        path = _write_manifest(tmp_path, [fixtures.generate("ramp", 32)], predictions=("good",))
        mani = pipeline.SceneManifest.load(path)
        report = pipeline.run_eval(mani, ["boundary_f1@none"], "no_align_gt_intr")
        assert ("good", "boundary_f1@none") not in report.means
        assert report.dropped == [("good", "boundary_f1@none", "scene0")]

    def test_csv_output(self, manifest_path, tmp_path):
        mani = pipeline.SceneManifest.load(manifest_path)
        report = pipeline.run_eval(mani, ["absrel@none", "rmse@none"], "no_align_gt_intr")
        out = tmp_path / "report.csv"
        report.to_csv(out)
        rows = list(csv.reader(out.open()))
        assert rows[0] == ["regime", "no_align_gt_intr"]
        assert rows[1] == ["method", "absrel@none", "rmse@none"]
        assert rows[2][0] == "good"


class TestSensitivityDataset:
    def test_writes_depths_and_sidecars(self, tmp_path):
        path = _write_manifest(tmp_path, [fixtures.generate("sphere_cap", 24)], predictions=("good",))
        mani = pipeline.SceneManifest.load(path)
        out_dir = tmp_path / "sweeps"
        written = pipeline.make_sensitivity_dataset(
            mani, out_dir, kinds=("affine_depth",), grids={"affine_depth": [1.0, 2.0]}
        )
        assert len(written) == 2
        for pfm in written:
            meta = json.loads(pfm.with_name(pfm.stem + ".meta.json").read_text())
            assert meta["kind"] == "affine_depth"
            assert "intrinsics" in meta

    def test_identity_file_equals_ground_truth(self, tmp_path):
        scene = fixtures.generate("sphere_cap", 24)
        path = _write_manifest(tmp_path, [scene], predictions=("good",))
        mani = pipeline.SceneManifest.load(path)
        out_dir = tmp_path / "sweeps"
        pipeline.make_sensitivity_dataset(
            mani, out_dir, kinds=("curvature_high",), grids={"curvature_high": [0.0, 0.2]}
        )
        ident = depthio.read_pfm(out_dir / "scene0__curvature_high__0.pfm")
        gt_file = depthio.read_pfm(tmp_path / "scene0_gt.pfm")
        np.testing.assert_array_equal(ident.values, gt_file.values)

    def test_infeasible_family_skipped(self, tmp_path, flat_plane, intr48):
        depthio.write_pfm(tmp_path / "p_gt.pfm", flat_plane)
        depthio.write_intrinsics(tmp_path / "p_intr.json", intr48)
        depthio.write_pfm(tmp_path / "p_pred.pfm", flat_plane)
        mani_path = tmp_path / "m.json"
        mani_path.write_text(json.dumps({"scenes": [{
            "id": "p", "gt_depth": "p_gt.pfm", "intrinsics": "p_intr.json",
            "predictions": {"good": "p_pred.pfm"},
        }]}))
        mani = pipeline.SceneManifest.load(mani_path)
        written = pipeline.make_sensitivity_dataset(
            mani, tmp_path / "out", kinds=("relative_scale",), grids={"relative_scale": [2.0]}
        )
        assert written == []


class TestStudy:
    def test_vectors_normalized(self, tmp_path):
        scenes = [fixtures.generate("sphere_cap", 24)]
        vectors, responses = pipeline.run_sensitivity_study(
            [(s.depth, s.intr) for s in scenes],
            ["rmse_log@none"],
            "absrel@none",
            kinds=("affine_depth", "affine_disparity"),
            grids={k: [1.25, 1.5, 2.0] for k in ("affine_depth", "affine_disparity")},
        )
        assert len(vectors) == 1
        assert np.linalg.norm(vectors[0].rates) == pytest.approx(np.sqrt(2))

    def test_csv_written(self, tmp_path):
        scenes = [fixtures.generate("sphere_cap", 24)]
        out = tmp_path / "table.csv"
        pipeline.run_sensitivity_study(
            [(s.depth, s.intr) for s in scenes],
            ["rmse_log@none"],
            "absrel@none",
            kinds=("affine_depth",),
            grids={"affine_depth": [1.25, 1.5, 2.0]},
            out_csv=out,
        )
        rows = list(csv.reader(out.open()))
        assert rows[0] == ["metric", "affine_depth"]
        assert rows[1][0] == "rmse_log@none"


class TestCli:
    def test_eval_command(self, manifest_path, tmp_path):
        out = tmp_path / "report.csv"
        result = CliRunner().invoke(cli.main, [
            "eval", "--manifest", str(manifest_path), "--metrics", "absrel@none",
            "--regime", "no_align_gt_intr", "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        assert out.exists()

    def test_perturb_command(self, tmp_path, sphere_scene):
        depthio.write_pfm(tmp_path / "gt.pfm", sphere_scene.depth)
        depthio.write_intrinsics(tmp_path / "intr.json", sphere_scene.intr)
        out = tmp_path / "out.pfm"
        result = CliRunner().invoke(cli.main, [
            "perturb", "--kind", "affine_depth", "--intensity", "2.0",
            "--in", str(tmp_path / "gt.pfm"), "--intr", str(tmp_path / "intr.json"),
            "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        back = depthio.read_pfm(out)
        expected = perturb.perturb_affine_depth(sphere_scene.depth, 2.0)
        np.testing.assert_allclose(back.values, expected.values, rtol=1e-6)

    def test_perturb_writes_new_intrinsics(self, tmp_path, flat_plane, intr48):
        depthio.write_pfm(tmp_path / "gt.pfm", flat_plane)
        depthio.write_intrinsics(tmp_path / "intr.json", intr48)
        out = tmp_path / "out.pfm"
        result = CliRunner().invoke(cli.main, [
            "perturb", "--kind", "camera_intrinsics", "--intensity", "2.0",
            "--in", str(tmp_path / "gt.pfm"), "--intr", str(tmp_path / "intr.json"),
            "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        pintr = depthio.read_intrinsics(tmp_path / "out.intr.json")
        assert pintr.fx == pytest.approx(2 * intr48.fx)

    def test_render_contours_command(self, tmp_path, sphere_scene):
        depthio.write_pfm(tmp_path / "gt.pfm", sphere_scene.depth)
        depthio.write_intrinsics(tmp_path / "intr.json", sphere_scene.intr)
        out_dir = tmp_path / "renders"
        result = CliRunner().invoke(cli.main, [
            "render", "contours", "--in", str(tmp_path / "gt.pfm"),
            "--intr", str(tmp_path / "intr.json"), "--axis", "z", "--out", str(out_dir),
        ])
        assert result.exit_code == 0, result.output
        assert (out_dir / "gt_contours_z.png").exists()

    def test_sawa_solve_command(self, tmp_path):
        table = tmp_path / "table.csv"
        with table.open("w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["metric", "k1", "k2"])
            writer.writerow(["m1", "1.0", "0.0"])
            writer.writerow(["m2", "0.0", "1.0"])
        out = tmp_path / "weights.json"
        result = CliRunner().invoke(cli.main, [
            "sawa", "solve", "--sensitivity", str(table), "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        weights = json.loads(out.read_text())
        assert weights["similarity"] == pytest.approx(1.0)

    def test_report_command(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("a,b\n1,2\n")
        result = CliRunner().invoke(cli.main, ["report", "--in", str(path)])
        assert result.exit_code == 0
        assert "a" in result.output
