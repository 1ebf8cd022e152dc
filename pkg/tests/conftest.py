import numpy as np
import pytest

from robosynth.data import data_path
from robosynth.scene import load_scene


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def grasp_scene():
    return load_scene(data_path("scenes", "grasp_lab.json"))


@pytest.fixture(scope="session")
def minimal_scene():
    return load_scene(data_path("scenes", "minimal.json"))


def random_pose(rng):
    from robosynth.transforms import Pose

    return Pose(pos=rng.uniform(-2, 2, 3), quat=rng.normal(size=4))


def pytest_runtest_logreport(report):
    # one visible pass/fail line per acceptance criterion
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        outcome = "PASS" if report.passed else "FAIL"
        print(f"\n[ACCEPTANCE] {outcome}: {name}")
