import numpy as np
import pytest

from deptheval import sensitivity as sens
from deptheval.sensitivity import QuadraticFit, ResponseSamples


def _samples(metric, kind, points):
    return ResponseSamples(metric, kind, [(float(x), float(y)) for x, y in points])


class TestQuadraticFit:
    def test_exact_quadratic_recovered(self):
        xs = [0.5, 1.0, 2.0, 3.0]
        pts = [(x, 0.7 * x * x + 1.3 * x) for x in xs]
        fit = sens.fit_quadratic(pts)
        assert fit.a == pytest.approx(0.7, abs=1e-9)
        assert fit.b == pytest.approx(1.3, abs=1e-9)
        assert fit.residual_rms < 1e-9

    def test_origin_always_included(self):
        # two nonzero points plus the implicit origin pin the parabola
        fit = sens.fit_quadratic([(1.0, 2.0), (2.0, 6.0)])
        assert fit.a == pytest.approx(1.0)
        assert fit.b == pytest.approx(1.0)

    def test_needs_two_distinct_intensities(self):
        with pytest.raises(sens.SensitivityError):
            sens.fit_quadratic([(1.0, 2.0), (1.0, 2.1)])

    def test_negative_derivative_warns(self):
        with pytest.warns(UserWarning):
            sens.fit_quadratic([(1.0, -1.0), (2.0, -2.0)])

    def test_derivative_accessor(self):
        assert QuadraticFit(2.0, 3.0, 0.0).derivative_at_zero() == 3.0


class TestExchangeRate:
    def test_linear_responses(self):
        a = _samples("m_a", "k", [(x, 2.0 * x) for x in (0.5, 1.0, 2.0)])
        b = _samples("m_b", "k", [(x, 0.5 * x) for x in (0.5, 1.0, 2.0)])
        assert sens.exchange_rate(a, b) == pytest.approx(4.0)

    def test_zero_reference_derivative(self):
        a = _samples("m_a", "k", [(x, x) for x in (0.5, 1.0, 2.0)])
        b = _samples("m_b", "k", [(x, 0.0) for x in (0.5, 1.0, 2.0)])
        with pytest.raises(sens.UndefinedExchangeRate):
            sens.exchange_rate(a, b)


class TestSensitivityVector:
    def test_normalize_to_sqrt_m(self):
        vec = sens.SensitivityVector("m", "ref", ("a", "b", "c", "d"), np.array([1.0, 2.0, 2.0, 4.0]))
        out = vec.normalize()
        assert np.linalg.norm(out.rates) == pytest.approx(2.0)  # sqrt(4)
        assert out.normalized

    def test_zero_vector_rejected(self):
        vec = sens.SensitivityVector("m", "ref", ("a",), np.zeros(1))
        with pytest.raises(sens.SensitivityError):
            vec.normalize()

    def test_built_from_responses(self):
        kinds = ("k1", "k2")
        responses = {
            ("m", "k1"): _samples("m", "k1", [(1.0, 3.0), (2.0, 6.0)]),
            ("m", "k2"): _samples("m", "k2", [(1.0, 1.0), (2.0, 2.0)]),
            ("ref", "k1"): _samples("ref", "k1", [(1.0, 1.0), (2.0, 2.0)]),
            ("ref", "k2"): _samples("ref", "k2", [(1.0, 2.0), (2.0, 4.0)]),
        }
        vec = sens.sensitivity_vector("m", "ref", responses, kinds)
        np.testing.assert_allclose(vec.rates, [3.0, 0.5])


class TestCollectResponses:
    def test_intensities_offset_by_identity(self, sphere_scene):
        from deptheval.metrics import MetricSpec

        responses = sens.collect_responses(
            [(sphere_scene.depth, sphere_scene.intr)],
            [MetricSpec.parse("absrel@none")],
            kinds=("affine_depth",),
            grids={"affine_depth": [1.0, 1.5, 2.0]},
        )
        pts = responses[("absrel@none", "affine_depth")].points
        assert [x for x, _ in pts] == [0.0, 0.5, 1.0]
        assert pts[0][1] == 0.0  # identity scores zero

    def test_scene_failures_skipped(self, flat_plane, intr48, sphere_scene):
        from deptheval.metrics import MetricSpec

        # relative scale is infeasible on the constant plane; the sphere carries it
        responses = sens.collect_responses(
            [(flat_plane, intr48), (sphere_scene.depth, sphere_scene.intr)],
            [MetricSpec.parse("absrel@none")],
            kinds=("relative_scale",),
            grids={"relative_scale": [1.5]},
        )
        sample = responses[("absrel@none", "relative_scale")]
        assert sample.scene_counts == [1, 1]


class TestCosine:
    def test_parallel(self):
        assert sens.cosine_similarity([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert sens.cosine_similarity([1, 0], [0, 1]) == pytest.approx(0.0)

    def test_zero_vector(self):
        with pytest.raises(sens.SensitivityError):
            sens.cosine_similarity([0, 0], [1, 1])


class TestHumanCsv:
    HEADER = "scene,perturbation,intensity,annotator,response\n"

    def _write(self, tmp_path, rows):
        path = tmp_path / "human.csv"
        path.write_text(self.HEADER + "".join(rows))
        return path

    def _rows(self, annotator, kind, pairs, scene="s1"):
        return [f"{scene},{kind},{x},{annotator},{r}\n" for x, r in pairs]

    def test_mean_noticing_rate(self, tmp_path):
        rows = self._rows("a1", "boundary", [(0, 0), (1, 1), (2, 1)])
        rows += self._rows("a2", "boundary", [(0, 0), (1, 0), (2, 1)])
        out = sens.ingest_human_csv(self._write(tmp_path, rows))
        pts = dict(out["boundary"].points)
        assert pts[1.0] == 0.5 and pts[2.0] == 1.0

    def test_unreliable_annotator_dropped(self, tmp_path):
        rows = self._rows("good", "boundary", [(0, 0), (0, 0), (1, 1)])
        # "bad" answers 1 on every decoy: 0% gold accuracy, below 70%
        rows += self._rows("bad", "boundary", [(0, 1), (0, 1), (1, 0)])
        out = sens.ingest_human_csv(self._write(tmp_path, rows))
        assert dict(out["boundary"].points)[1.0] == 1.0

    def test_annotator_without_gold_rows_rejected(self, tmp_path):
        rows = self._rows("a1", "boundary", [(1, 1)])
        with pytest.raises(sens.SensitivityError):
            sens.ingest_human_csv(self._write(tmp_path, rows))

    def test_zero_intensity_excluded_on_request(self, tmp_path):
        rows = self._rows("a1", "boundary", [(0, 0), (1, 1)])
        out = sens.ingest_human_csv(self._write(tmp_path, rows), include_zero_intensity=False)
        assert [x for x, _ in out["boundary"].points] == [1.0]

    def test_malformed_response_rejected(self, tmp_path):
        path = self._write(tmp_path, ["s1,boundary,1.0,a1,2\n"])
        with pytest.raises(sens.SensitivityError):
            sens.ingest_human_csv(path)

    def test_missing_columns_rejected(self, tmp_path):
        path = tmp_path / "broken.csv"
        path.write_text("scene,intensity\ns1,0\n")
        with pytest.raises(sens.SensitivityError):
            sens.ingest_human_csv(path)


class TestTableOutput:
    def _vectors(self):
        kinds = ("k1", "k2")
        return [
            sens.SensitivityVector("m1", "ref", kinds, np.array([1.0, 2.0])),
            sens.SensitivityVector("m2", "ref", kinds, np.array([0.5, 0.25])),
        ]

    def test_csv_layout(self, tmp_path):
        path = tmp_path / "table.csv"
        sens.table_to_csv(path, self._vectors(), similarities={"m1": 0.9, "m2": 0.5})
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "metric,k1,k2,cosine_to_target"
        assert lines[1].startswith("m1,1,2,0.9")

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(sens.SensitivityError):
            sens.table_to_csv(tmp_path / "t.csv", [])

    def test_heat_table_image_written(self, tmp_path):
        path = tmp_path / "table.png"
        sens.render_table(path, self._vectors())
        assert path.stat().st_size > 0
