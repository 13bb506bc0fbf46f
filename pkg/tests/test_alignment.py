import numpy as np
import pytest

from deptheval import alignment
from deptheval.depthcore import CameraIntrinsics, DepthMap, unproject
from deptheval import fixtures


def _noisy_scene(seed=0, shape=(32, 32)):
    rng = np.random.default_rng(seed)
    vals = rng.uniform(1.0, 4.0, shape)
    return DepthMap(vals, np.ones(shape, bool))


class TestScaleDepth:
    def test_recovers_pure_scale(self):
        gt = _noisy_scene(1)
        pred = DepthMap(gt.values / 3.0, gt.valid.copy())
        params = alignment.align_scale_depth(pred, gt)
        assert params.shift == 0.0
        assert abs(params.scale - 3.0) < 1e-9

    def test_robust_to_outliers(self):
        gt = _noisy_scene(2)
        vals = gt.values / 2.0
        vals[:4, :4] = 100.0  # 16/1024 wild outliers
        params = alignment.align_scale_depth(DepthMap(vals, gt.valid.copy()), gt)
        assert abs(params.scale - 2.0) < 1e-6

    def test_matches_dense_grid_oracle(self):
        gt = _noisy_scene(3, (16, 16))
        rng = np.random.default_rng(5)
        pred = DepthMap(gt.values * rng.uniform(0.4, 0.6, gt.shape), gt.valid.copy())
        params = alignment.align_scale_depth(pred, gt)

        p, g = pred.values.ravel(), gt.values.ravel()

        def objective(s):
            return np.minimum(np.abs(s * p - g) / g, 1.0).sum()

        grid = np.linspace(0.5, 5.0, 200_001)
        best = grid[np.argmin([objective(s) for s in grid])]
        assert objective(params.scale) <= objective(best) + 1e-9


class TestAffineDepth:
    def test_l1_recovers_exact_affine(self):
        gt = _noisy_scene(4)
        pred = DepthMap((gt.values - 0.7) / 1.9, gt.valid.copy())
        params = alignment.align_affine_depth_l1(pred, gt)
        assert abs(params.scale - 1.9) < 1e-6
        assert abs(params.shift - 0.7) < 1e-6

    def test_l1_matches_grid_oracle_with_outliers(self):
        gt = _noisy_scene(6, (16, 16))
        vals = (gt.values - 0.5) / 2.0
        vals[0, :6] = 7.0
        pred = DepthMap(vals, gt.valid.copy())
        params = alignment.align_affine_depth_l1(pred, gt)

        p, g = pred.values.ravel(), gt.values.ravel()

        def objective(a):
            r = g - a * p
            return np.abs(r - np.median(r)).sum()

        grid = np.linspace(0.1, 5.0, 100_001)
        best = min(objective(a) for a in grid)
        assert objective(params.scale) <= best + 1e-7

    def test_lstsq_matches_polyfit(self):
        gt = _noisy_scene(7)
        rng = np.random.default_rng(8)
        pred = DepthMap(gt.values * 0.5 + rng.normal(0, 0.01, gt.shape) + 1.0, gt.valid.copy())
        params = alignment.align_affine_depth_lstsq(pred, gt)
        a, b = np.polyfit(pred.values.ravel(), gt.values.ravel(), 1)
        assert abs(params.scale - a) < 1e-9
        assert abs(params.shift - b) < 1e-9

    def test_nonpositive_aligned_depth_invalidated(self):
        gt = _noisy_scene(9)
        pred = DepthMap(gt.values.copy(), gt.valid.copy())
        out = alignment.AffineParams(scale=1.0, shift=-3.9, space="depth").apply(pred)
        assert not out.valid.all()
        assert (out.values[out.valid] > 0).all()


class TestAffineDisparity:
    def test_recovers_exact_affine_in_disparity(self):
        gt = _noisy_scene(10)
        disp = 1.0 / gt.values
        pred = DepthMap(1.0 / ((disp - 0.05) / 1.5), gt.valid.copy())
        params = alignment.align_affine_disparity(pred, gt)
        assert params.space == "disparity"
        aligned = params.apply(pred)
        np.testing.assert_allclose(aligned.values, gt.values, rtol=1e-6)

    def test_disparity_floor(self):
        gt = _noisy_scene(11)
        pred = DepthMap(gt.values.copy(), gt.valid.copy())
        out = alignment.AffineParams(scale=1.0, shift=-10.0, space="disparity").apply(pred)
        assert np.isfinite(out.values).all()
        assert out.values.max() <= 1.0 / alignment.EPS_DISP + 1e-6


class TestPointmap:
    def test_scale_recovery(self):
        scene = fixtures.generate("sphere_cap", 32)
        gp = unproject(scene.depth, scene.intr)
        pred = DepthMap(scene.depth.values / 2.5, scene.depth.valid.copy())
        pp = unproject(pred, scene.intr)
        t = alignment.align_pointmap(pp, gp, mode="scale")
        assert abs(t.scale - 2.5) < 1e-6
        assert t.z_shift == 0.0

    def test_affine_recovery(self):
        scene = fixtures.generate("sphere_cap", 32)
        gp = unproject(scene.depth, scene.intr)
        from deptheval.depthcore import PointMap

        shifted = gp.points.copy() / 2.0
        shifted[..., 2] -= 0.3
        t = alignment.align_pointmap(PointMap(shifted, gp.valid.copy()), gp, mode="affine")
        assert abs(t.scale - 2.0) < 1e-4
        assert abs(t.z_shift - 0.6) < 1e-3

    def test_unknown_mode(self):
        scene = fixtures.generate("plane", 16)
        pm = unproject(scene.depth, scene.intr)
        with pytest.raises(ValueError):
            alignment.align_pointmap(pm, pm, mode="rigid")


class TestFitDispatch:
    def test_none_is_identity(self):
        gt = _noisy_scene(12)
        out = alignment.align_depth("none", gt, gt)
        np.testing.assert_array_equal(out.values, gt.values)
        assert out.values is not gt.values  # a copy, not an alias

    def test_all_modes_fit(self):
        gt = _noisy_scene(13)
        pred = DepthMap(gt.values / 2.0, gt.valid.copy())
        for mode in ("scale_depth", "affine_depth_l1", "affine_depth_lstsq", "affine_disparity"):
            aligned = alignment.align_depth(mode, pred, gt)
            err = np.abs(aligned.values - gt.values) / gt.values
            assert err.max() < 1e-5, mode

    def test_unknown_mode_raises(self):
        gt = _noisy_scene(14)
        with pytest.raises(ValueError):
            alignment.fit("procrustes", gt, gt)

    def test_empty_overlap_raises(self):
        a = DepthMap(np.ones((4, 4)), np.zeros((4, 4), bool))
        b = DepthMap(np.ones((4, 4)), np.ones((4, 4), bool))
        with pytest.raises(alignment.AlignmentError):
            alignment.align_scale_depth(a, b)

    def test_deterministic(self):
        gt = _noisy_scene(15)
        rng = np.random.default_rng(16)
        pred = DepthMap(gt.values * rng.uniform(0.4, 0.7, gt.shape), gt.valid.copy())
        p1 = alignment.align_affine_depth_l1(pred, gt)
        p2 = alignment.align_affine_depth_l1(pred, gt)
        assert p1.scale == p2.scale and p1.shift == p2.shift
