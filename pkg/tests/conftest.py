import os
from fractions import Fraction

import pytest
from hypothesis import settings, HealthCheck

from unifeed.capacity import solve_capacity
from unifeed.channel import UnifilarChannelSpec, builtin
from unifeed.exponent import solve_ctilde1

settings.register_profile(
    "default",
    max_examples=50,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("fast", max_examples=10, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def make_bsc(p, name=None) -> UnifilarChannelSpec:
    """Single-state binary symmetric channel with crossover p."""
    p = Fraction(str(p))
    q = (((1 - p, p),), ((p, 1 - p),))
    g = (((0, 0), (0, 0)),)
    return UnifilarChannelSpec(
        name=name or f"bsc({p})", nx=2, ny=2, ns=1, q=q, g=g, s1=0
    )


@pytest.fixture(scope="session")
def bsc01():
    return make_bsc("0.1", name="bsc(0.1)")


@pytest.fixture(scope="session")
def solved_symmetric():
    """Solved capacity and confirmation policies for symmetric(0.5, 0.1).

    Session-scoped because the capacity solve takes a few seconds and
    several modules exercise the same channel.
    """
    spec = builtin("symmetric", [0.5, 0.1])
    cap = solve_capacity(spec)
    exp = solve_ctilde1(spec, capacity=cap.capacity)
    return spec, cap, exp
