import json

import numpy as np
import pytest

from deptheval import depthio
from deptheval.depthcore import CameraIntrinsics, DepthMap


@pytest.fixture
def sample_depth():
    rng = np.random.default_rng(7)
    vals = rng.uniform(0.5, 5.0, (12, 17))
    valid = np.ones((12, 17), bool)
    valid[3, 4] = False
    return DepthMap(vals, valid)


class TestPfm:
    def test_round_trip(self, tmp_path, sample_depth):
        path = tmp_path / "d.pfm"
        depthio.write_pfm(path, sample_depth)
        back = depthio.read_pfm(path)
        assert back.shape == sample_depth.shape
        np.testing.assert_array_equal(back.valid, sample_depth.valid)
        np.testing.assert_allclose(
            back.values[back.valid], sample_depth.values[sample_depth.valid], rtol=1e-6
        )

    def test_write_is_deterministic(self, tmp_path, sample_depth):
        p1, p2 = tmp_path / "a.pfm", tmp_path / "b.pfm"
        depthio.write_pfm(p1, sample_depth)
        depthio.write_pfm(p2, sample_depth)
        assert p1.read_bytes() == p2.read_bytes()

    def test_rejects_color_pfm(self, tmp_path):
        path = tmp_path / "c.pfm"
        path.write_bytes(b"PF\n2 2\n-1.0\n" + b"\x00" * 48)
        with pytest.raises(ValueError):
            depthio.read_pfm(path)

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "g.pfm"
        path.write_bytes(b"not a pfm")
        with pytest.raises(ValueError):
            depthio.read_pfm(path)


class TestPng16:
    def test_round_trip(self, tmp_path, sample_depth):
        path = tmp_path / "d.png"
        depthio.write_png16(path, sample_depth)
        back = depthio.read_png16(path)
        np.testing.assert_array_equal(back.valid, sample_depth.valid)
        # quantized to 16 bits of the depth range
        np.testing.assert_allclose(
            back.values[back.valid], sample_depth.values[sample_depth.valid], rtol=2e-4
        )

    def test_sidecar_contents(self, tmp_path, sample_depth):
        path = tmp_path / "d.png"
        depthio.write_png16(path, sample_depth, meters_per_unit=0.001)
        meta = json.loads((tmp_path / "d.json").read_text())
        assert meta == {"meters_per_unit": 0.001, "invalid_value": 0}

    def test_zero_reserved_for_invalid(self, tmp_path):
        # tiny depths must quantize to raw >= 1, not collide with invalid
        d = DepthMap(np.full((4, 4), 1e-9), np.ones((4, 4), bool))
        path = tmp_path / "d.png"
        depthio.write_png16(path, d, meters_per_unit=1.0)
        back = depthio.read_png16(path)
        assert back.valid.all()


class TestDispatch:
    def test_by_extension(self, tmp_path, sample_depth):
        depthio.write_depth(tmp_path / "d.pfm", sample_depth)
        depthio.write_depth(tmp_path / "d.png", sample_depth)
        assert depthio.read_depth(tmp_path / "d.pfm").shape == sample_depth.shape
        assert depthio.read_depth(tmp_path / "d.png").shape == sample_depth.shape

    def test_unknown_extension(self, tmp_path, sample_depth):
        with pytest.raises(ValueError):
            depthio.write_depth(tmp_path / "d.exr", sample_depth)
        with pytest.raises(ValueError):
            depthio.read_depth(tmp_path / "d.exr")


def test_intrinsics_round_trip(tmp_path):
    intr = CameraIntrinsics(320.5, 321.5, 160.0, 120.0)
    path = tmp_path / "intr.json"
    depthio.write_intrinsics(path, intr)
    assert depthio.read_intrinsics(path) == intr
