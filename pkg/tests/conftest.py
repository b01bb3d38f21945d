import dataclasses

import numpy as np
import pytest
from hypothesis import settings

from sdfgraph.scene import CameraRig, Disturbance, gen, scene_presets

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_scene(tmp_path_factory):
    """Two-node sphere scene at 33^3 with a cheap camera rig."""
    spec = dataclasses.replace(scene_presets()["sphere-pair"], dims=(33, 33, 33),
                               rig=CameraRig(per_cell=2, per_overlap=3, width=32, height=32))
    out = tmp_path_factory.mktemp("small_scene")
    return gen(spec, out)


@pytest.fixture(scope="session")
def flat_scene(tmp_path_factory):
    """Same layout without disturbance: every true transform is the identity."""
    spec = dataclasses.replace(scene_presets()["sphere-pair"], dims=(33, 33, 33),
                               disturbance=Disturbance(0.0, 0.0, 0.0),
                               rig=CameraRig(per_cell=2, per_overlap=3, width=32, height=32))
    out = tmp_path_factory.mktemp("flat_scene")
    return gen(spec, out)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
