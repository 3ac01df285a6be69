import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from splatzip.core import Camera, SourceGaussianSet

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES = []


def random_source(rng, n, spread=1.0, scale=(-3.0, -1.5)):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return SourceGaussianSet(
        rng.uniform(-spread, spread, (n, 3)),
        rng.uniform(scale[0], scale[1], (n, 3)),
        q,
        rng.uniform(0.05, 1.0, n),
        rng.normal(0.0, 1.0, (n, 3)),
        rng.normal(0.0, 0.2, (n, 45)),
    )


def front_camera(width=16, height=16, fov=60.0, dist=3.0):
    return Camera.look_at([0.0, -dist, 0.0], [0.0, 0.0, 0.0], width=width, height=height, fov_deg=fov)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
