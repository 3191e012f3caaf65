import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from psot.measures import DiscreteMeasure

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

coords = st.floats(-10, 10, allow_nan=False, allow_infinity=False, width=64)


@st.composite
def clouds(draw, n=None, d=None, min_n=1, max_n=7, integer=False):
    """Uniform clouds; ``integer=True`` snaps to a coarse grid so projections tie often."""
    n = draw(st.integers(min_n, max_n)) if n is None else n
    d = draw(st.integers(1, 3)) if d is None else d
    if integer:
        pts = draw(arrays(np.float64, (n, d), elements=st.integers(-3, 3).map(float)))
    else:
        pts = draw(arrays(np.float64, (n, d), elements=coords))
    return DiscreteMeasure(pts)


@st.composite
def weighted_clouds(draw, d, max_n=6):
    n = draw(st.integers(1, max_n))
    pts = draw(arrays(np.float64, (n, d), elements=coords))
    w = np.array(draw(st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n)))
    return DiscreteMeasure(pts, w / w.sum())


@st.composite
def unit_vectors(draw, d):
    v = np.array(draw(st.lists(st.floats(-1, 1), min_size=d, max_size=d)))
    if np.linalg.norm(v) < 1e-3:
        v = np.eye(d)[0]
    return v / np.linalg.norm(v)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = [v for k, v in sorted(getattr(mod, "RESULTS", {}).items()) if not k.startswith("_")]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
