import json
import math
import os
import sys

import numpy as np
import pytest

from hvsense.geometry import SINGLE, ClusterLayout, Pose, Scene

HERE = os.path.dirname(__file__)
sys.path.insert(0, HERE)  # make tests/oracle.py importable

LAYOUT = ClusterLayout(3.0, 6.0)


def random_scene(rng, n_paths, multi=False, distance=None, gamma=None, layout=LAYOUT):
    """Random NLoS scene with scatterers in two strips beside the SV-HV axis."""
    dist = rng.uniform(20, 80) if distance is None else distance
    bearing = rng.uniform(-0.3, 0.3)
    pose = Pose(dist * np.array([math.cos(bearing), math.sin(bearing)]), rng.uniform(0, 2 * math.pi))
    scat = np.column_stack(
        [rng.uniform(-20, dist + 20, n_paths), rng.choice([-1.0, 1.0], n_paths) * rng.uniform(3, 30, n_paths)]
    )
    if multi:
        labels = tuple(int(k) for k in np.r_[[1, 2, 3, 4], rng.integers(1, 5, n_paths - 4)])
        lay = layout
    else:
        labels, lay = (SINGLE,) * n_paths, None
    g = rng.uniform(0, 1e-6) if gamma is None else gamma
    return Scene(pose, scat, labels, lay, g)


def load_fixtures():
    with open(os.path.join(HERE, "fixtures", "oracle_scenes.json")) as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def oracle_fixtures():
    return load_fixtures()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    report = getattr(sys.modules.get("test_acceptance"), "REPORT", None)
    if report:
        terminalreporter.section("acceptance criteria")
        for line in sorted(report):
            terminalreporter.write_line(line)
