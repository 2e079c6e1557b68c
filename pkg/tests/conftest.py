"""Shared fixtures: analytic shapes and a small accepted fracture of a sphere."""

import os

import numpy as np
import pytest

from src.fields import primitive_shape
from src.fracture import FractureConfig, FracturePrimitiveSpec, ShapeTuple, attempt_fracture
from src.geometry import AnalyticPrimitive

SPHERE_RADIUS = 0.4
CAP_HEIGHT = 0.2


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale runs, enabled with RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if os.getenv("RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def cap_cutter(height: float = CAP_HEIGHT) -> AnalyticPrimitive:
    """Half-space keeping everything above ``z = height``."""
    return AnalyticPrimitive("half-space", {}, rotation=np.diag([1.0, -1.0, -1.0]),
                             translation=[0.0, 0.0, height])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sphere():
    return AnalyticPrimitive("sphere", {"radius": SPHERE_RADIUS})


@pytest.fixture
def sphere_field(sphere):
    return primitive_shape(sphere)


@pytest.fixture(scope="session")
def sphere_tuple() -> ShapeTuple:
    """Sphere of radius 0.4 with the cap above z = 0.2 broken off."""
    complete = primitive_shape(AnalyticPrimitive("sphere", {"radius": SPHERE_RADIUS}))
    spec = FracturePrimitiveSpec(kinds=("half-space",), seed=3, fixed=cap_cutter())
    config = FractureConfig(retention_lo=0.0, retention_hi=1.0, resolution=32)
    outcome = attempt_fracture("sphere_000_f0", complete, spec, config)
    assert isinstance(outcome, ShapeTuple), outcome
    return outcome
