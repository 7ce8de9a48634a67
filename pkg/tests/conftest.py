"""Shared bands, directions and RNG streams for the test suite."""

from __future__ import annotations

import pytest

from bandpath.functionals import make_bump
from bandpath.pathcore import Band, Curve
from bandpath.rng import RngStream


@pytest.fixture
def rng() -> RngStream:
    return RngStream(12345)


@pytest.fixture
def flat_band() -> Band:
    return Band.flat(0.0, 1.0)


@pytest.fixture
def lower_only() -> Band:
    return Band.flat(0.0, None)


@pytest.fixture
def curved_band() -> Band:
    return Band(Curve.sine(0.2, name="sine_lower"), Curve.constant(1.0, "one"))


@pytest.fixture
def wide_bump():
    return make_bump(0.2, 0.8)


@pytest.fixture
def left_bump():
    return make_bump(0.15, 0.45)


@pytest.fixture
def right_bump():
    return make_bump(0.55, 0.85)
