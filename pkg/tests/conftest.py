"""Session-scoped fixtures: calibration runs shared across test modules."""

from __future__ import annotations

import os
import time

import pytest

from ergodev.models import get_model
from ergodev.montecarlo import estimate_reference


@pytest.fixture(scope="session")
def workers() -> int:
    return min(4, os.cpu_count() or 1)


@pytest.fixture(scope="session")
def hypo_calibration():
    """Single-trajectory ergodic averages for the 1d hypoelliptic family.

    Supplies nu(|sigma|^2) and the squared-gradient average consumed by
    the empirical bound curves.
    """
    bundle = get_model("hypo1d-drifted")
    return estimate_reference(
        "hypo1d-drifted",
        f=bundle.phi.value,
        n_c=10_000,
        theta_c=1.0 / 3.0 + 1e-3,
        seed=1,
        replicates=1,
    )


@pytest.fixture(scope="session")
def confluent_reference(workers):
    """Replicate-averaged reference value for the confluent model, full scale.

    By far the most expensive fixture (about a minute on one core), hence
    session-scoped.  Returns (estimate, elapsed_seconds).
    """
    start = time.monotonic()
    ref = estimate_reference(
        "confluent2d",
        n_c=500_000,
        theta_c=0.401,
        seed=0,
        replicates=100,
        gamma0=0.1,
        workers=workers,
    )
    return ref, time.monotonic() - start
