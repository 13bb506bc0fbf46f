import numpy as np
import pytest

from deptheval.depthcore import CameraIntrinsics, DepthMap
from deptheval import fixtures


@pytest.fixture
def intr48():
    return CameraIntrinsics(fx=48.0, fy=48.0, cx=23.5, cy=23.5)


@pytest.fixture
def flat_plane(intr48):
    """Fronto-parallel plane at 2 m, 48x48."""
    return DepthMap(np.full((48, 48), 2.0), np.ones((48, 48), bool))


@pytest.fixture
def sphere_scene():
    return fixtures.generate("sphere_cap", 64)


@pytest.fixture
def step_scene():
    return fixtures.generate("step", 48)


@pytest.fixture
def ramp_scene():
    return fixtures.generate("ramp", 48)
