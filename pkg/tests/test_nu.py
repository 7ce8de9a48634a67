"""Infinitesimal probabilities and the assembled boundary densities.

Tests:
  1. Finite-dimensional densities
  2. Extrapolation fit
  3. ΔP by the lemma, definition and grid routes
  4. Δ²P by the τ-decomposition
  5. NuEngine assembly and caching
"""

from __future__ import annotations

import math

import pytest
from scipy.integrate import quad

from bandpath.errors import DegenerateEstimateError, DomainError, StructuralError
from bandpath.models import DeltaPSchedule, MCEstimate, Side
from bandpath.nu import (
    NuEngine,
    delta_p_first_def,
    delta_p_first_lemma,
    delta_p_free_lemma,
    delta_p_grid,
    delta_p_second,
    delta_p_second_tau,
    finite_dim_density,
    fit_extrapolation,
    nu,
)
from bandpath.pathcore import Band, Curve, heat_kernel
from bandpath.rng import RngStream

ONE_SIDED_BRIDGE = math.sqrt(2.0) * 0.5  # √2·dist/√T at dist 0.5, T 1


def flat_containment(y: float, T: float, terms: int = 50) -> float:
    """P(a Bessel-3 bridge 0 → y over time T stays below 1), from the sine series."""
    series = sum(n * math.pi * math.sin(n * math.pi * y) * math.exp(-((n * math.pi) ** 2) * T / 2)
                 for n in range(1, terms + 1))
    one_sided = (y / T) * math.exp(-y * y / (2 * T)) / math.sqrt(2 * math.pi * T)
    return series / one_sided


# ── 1. Densities ────────────────────────────────────────────────────────────


def test_free_density_is_the_heat_kernel():
    assert finite_dim_density((0.3,), (0.2,), 0.1, None) == pytest.approx(heat_kernel(0.3, 0.1, 0.2))


def test_pinned_density_integrates_to_one():
    total, _ = quad(lambda y: finite_dim_density((0.4,), (y,), 0.5, 0.2), -10, 10)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_two_time_density_marginalises():
    c2 = 0.3
    total, _ = quad(lambda y: finite_dim_density((0.25, 0.6), (y, c2), 0.5, 0.5), -10, 10)
    assert total == pytest.approx(finite_dim_density((0.6,), (c2,), 0.5, 0.5), rel=1e-8)


def test_density_domain_errors():
    with pytest.raises(DomainError):
        finite_dim_density((0.3, 0.5), (0.1,), 0.0, 0.0)
    with pytest.raises(DomainError):
        finite_dim_density((0.5, 0.3), (0.1, 0.2), 0.0, 0.0)


# ── 2. Extrapolation ────────────────────────────────────────────────────────


def test_extrapolation_recovers_an_exact_model():
    sizes = [50, 100, 200, 400]
    ests = [MCEstimate(mean=2.0 + 3.0 / math.sqrt(m), std_error=0.01, n_samples=100, seed=1) for m in sizes]
    fit = fit_extrapolation(sizes, ests)
    assert fit.limit.mean == pytest.approx(2.0, abs=1e-10)
    assert fit.slope == pytest.approx(3.0, abs=1e-8)
    assert 0.0 < fit.limit.std_error
    assert fit.limit.n_samples == 400


def test_extrapolation_needs_two_distinct_sizes():
    est = MCEstimate(mean=1.0, std_error=0.1, n_samples=10, seed=0)
    with pytest.raises(DomainError):
        fit_extrapolation([50], [est])
    with pytest.raises(DomainError):
        fit_extrapolation([50, 50], [est, est])


# ── 3. ΔP ───────────────────────────────────────────────────────────────────


def test_lemma_route_closed_forms_on_a_flat_one_sided_band(rng, lower_only):
    free = delta_p_free_lemma(lower_only, 0.5, Side.LOWER, 1000, rng)
    assert free.mean == pytest.approx(1 / math.sqrt(math.pi))
    assert free.std_error == 0.0
    pinned = delta_p_first_lemma(lower_only, (0.0, 1.0), 0.5, "lower", 1000, rng)
    assert pinned.mean == pytest.approx(ONE_SIDED_BRIDGE, rel=1e-15)
    assert pinned.std_error == 0.0


def test_lemma_route_is_zero_when_the_other_end_is_outside(rng, lower_only):
    est = delta_p_first_lemma(lower_only, (0.0, 1.0), -0.2, "lower", 1000, rng)
    assert est.mean == 0.0


def test_definition_route_matches_the_flat_closed_form(rng, lower_only):
    schedule = DeltaPSchedule(sizes=[50, 100, 200, 400], n_samples=100_000)
    est = delta_p_first_def(lower_only, (0.0, 1.0), 0.5, Side.LOWER, schedule, rng)
    assert abs(est.mean - ONE_SIDED_BRIDGE) <= 4 * est.std_error + 0.03


def test_grid_excursion_is_exact_in_expectation(rng, lower_only):
    est = delta_p_grid(lower_only, (0.0, 1.0), "lower", "lower", 50, 50_000, rng)
    assert abs(est.mean - 1.0) <= 4 * est.std_error


def test_pin_counts_are_checked(rng, lower_only):
    schedule = DeltaPSchedule()
    with pytest.raises(StructuralError):
        delta_p_grid(lower_only, (0.0, 1.0), 0.5, 0.5, 50, 100, rng)
    with pytest.raises(StructuralError):
        delta_p_first_def(lower_only, (0.0, 1.0), "lower", "lower", schedule, rng)
    with pytest.raises(StructuralError):
        delta_p_second(lower_only, (0.0, 1.0), "lower", 0.5, schedule, rng)
    with pytest.raises(StructuralError):
        delta_p_grid(lower_only, (0.0, 1.0), "sideways", 0.5, 50, 100, rng)


def test_empty_band_probability_is_degenerate(rng):
    thin = Band.flat(0.0, 0.001)
    with pytest.raises(DegenerateEstimateError):
        delta_p_grid(thin, (0.0, 1.0), "lower", "lower", 100, 1000, rng)


@pytest.mark.parametrize("means, se", [
    ((0.5, 0.1), 0.001),   # fitted limit below zero
    ((0.02, 0.03), 0.05),  # positive but lost in the noise
])
def test_insignificant_limit_is_degenerate(monkeypatch, rng, lower_only, means, se):
    by_m = dict(zip((50, 100), means))

    def fake(band, t1, t2, start, end, m, n_samples, rng, parallel, far_bridge=False):
        return MCEstimate(mean=by_m[m], std_error=se, n_samples=n_samples, seed=0)

    monkeypatch.setattr("bandpath.nu._scaled_survival", fake)
    schedule = DeltaPSchedule(sizes=[50, 100], n_samples=10_000)
    with pytest.raises(DegenerateEstimateError, match="not positive"):
        delta_p_first_def(lower_only, (0.0, 1.0), 0.5, "lower", schedule, rng)


def test_wider_band_has_larger_delta_p_on_common_paths(lower_only):
    for start, end in ((0.5, "lower"), ("lower", "lower")):
        narrow = delta_p_grid(Band.flat(0.0, 1.0), (0.0, 1.0), start, end, 50, 20_000, RngStream(4))
        wide = delta_p_grid(Band.flat(0.0, 1.5), (0.0, 1.0), start, end, 50, 20_000, RngStream(4))
        none = delta_p_grid(lower_only, (0.0, 1.0), start, end, 50, 20_000, RngStream(4))
        assert narrow.mean <= wide.mean <= none.mean


@pytest.mark.parametrize("start, end", [("lower", "upper"), ("lower", "lower")])
def test_second_order_delta_p_is_time_reversible(start, end):
    # on [0.2, 0.8] reversal is t -> 1 - t, so 0.2t becomes 0.2 - 0.2t
    forward = Band(Curve.linear(0.0, 0.2), Curve.constant(1.0))
    backward = Band(Curve.linear(0.2, -0.2), Curve.constant(1.0))
    there = delta_p_grid(forward, (0.2, 0.8), start, end, 50, 100_000, RngStream(21))
    back = delta_p_grid(backward, (0.2, 0.8), end, start, 50, 100_000, RngStream(22))
    assert abs(there.mean - back.mean) <= 4 * math.hypot(there.std_error, back.std_error)


def test_lemma_route_on_a_flat_two_sided_band(rng, flat_band):
    # bridge-corrected weights make the grid estimate exact for flat curves
    est = delta_p_first_lemma(flat_band, (0.0, 1.0), 0.5, "lower", 40_000, rng, n=50)
    expected = ONE_SIDED_BRIDGE * flat_containment(0.5, 1.0)
    assert abs(est.mean - expected) <= 4 * est.std_error
    assert est.mean < ONE_SIDED_BRIDGE


def test_lemma_route_settles_as_the_kink_is_smoothed():
    values = []
    for width in (0.1, 0.05, 0.025):
        kink = Curve.mollified_polyline([0.0, 0.5, 1.0], [0.0, 0.2, 0.0], width)
        band = Band(kink, None)
        est = delta_p_first_lemma(band, (0.0, 1.0), 0.5, "lower", 10_000, RngStream(8), n=100)
        values.append(est.mean)
    assert all(v > 0 for v in values)
    assert abs(values[2] - values[1]) < abs(values[1] - values[0])


# ── 4. Δ²P by τ ─────────────────────────────────────────────────────────────


def test_tau_route_on_the_flat_excursion(rng, lower_only):
    est = delta_p_second_tau(lower_only, (0.0, 1.0), "lower", "lower", 0.5, 4000, 10, rng)
    assert abs(est.mean - 1.0) <= 4 * est.std_error
    assert est.std_error == pytest.approx(math.sqrt(5 / 4000), rel=0.25)


def test_tau_route_does_not_depend_on_tau_under_common_numbers(lower_only):
    at_half = delta_p_second_tau(lower_only, (0.0, 1.0), "lower", "lower", 0.5, 500, 10, RngStream(3))
    at_four = delta_p_second_tau(lower_only, (0.0, 1.0), "lower", "lower", 0.4, 500, 10, RngStream(3))
    assert at_four.mean == pytest.approx(at_half.mean, rel=1e-9)


def test_tau_route_does_not_depend_on_tau_on_a_two_sided_band(flat_band):
    at_half = delta_p_second_tau(flat_band, (0.0, 1.0), "lower", "lower", 0.5, 200, 500, RngStream(3), n=50)
    at_four = delta_p_second_tau(flat_band, (0.0, 1.0), "lower", "lower", 0.4, 200, 500, RngStream(4), n=50)
    assert 0.0 < at_half.mean < 1.0
    assert abs(at_four.mean - at_half.mean) <= 4 * math.hypot(at_half.std_error, at_four.std_error)


def test_tau_must_be_interior(rng, lower_only):
    with pytest.raises(DomainError):
        delta_p_second_tau(lower_only, (0.2, 0.8), "lower", "lower", 0.9, 10, 10, rng)
    with pytest.raises(StructuralError):
        delta_p_second_tau(lower_only, (0.2, 0.8), "lower", 0.5, 0.5, 10, 10, rng)


# ── 5. NuEngine ─────────────────────────────────────────────────────────────


def test_lemma_engine_reproduces_the_flat_closed_form(rng, lower_only):
    engine = NuEngine(lower_only, 0.5, 0.5, 40, rng, route="lemma")
    value = engine.nu((-1,), (0.5,))
    density = math.exp(-0.5) * math.sqrt(2.0) / math.sqrt(math.pi)
    assert value.value == pytest.approx(2.0 * density)
    assert value.std_error == 0.0
    assert list(value.breakdown) == ["density", "start", "end"]
    assert value.value == math.prod(value.breakdown.values())


def test_engine_caches_factors(rng, lower_only):
    engine = NuEngine(lower_only, 0.5, None, 40, rng, route="lemma")
    first = engine.nu((-1,), (0.5,))
    keys = set(engine.cached_factors())
    again = nu(1, (-1,), (0.5,), engine)
    assert again.value == first.value
    assert set(engine.cached_factors()) == keys == {("start", 0.5, "lower"), ("end", 0.5, "lower")}
    assert engine.cached_factors()[("end", 0.5, "lower")].mean == pytest.approx(1 / math.sqrt(math.pi))


def test_curve_at_infinity_is_unreachable(rng, lower_only):
    engine = NuEngine(lower_only, 0.5, 0.5, 40, rng)
    value = engine.nu((1,), (0.5,))
    assert value.value == 0.0
    assert value.breakdown == {"unreachable": 0.0}
    assert not engine.cached_factors()


def test_house_moving_density_has_one_middle_factor(rng, flat_band):
    engine = NuEngine(flat_band, 0.5, 0.5, 40, rng, schedule=DeltaPSchedule(n_samples=10_000))
    value = engine.nu((-1, 1), (0.3, 0.6))
    assert list(value.breakdown) == ["density", "start", "middle_1", "end"]
    assert value.value > 0.0
    assert len(engine.cached_factors()) == 3


def test_engine_argument_checks(rng, flat_band):
    with pytest.raises(DomainError):
        NuEngine(flat_band, 0.5, 0.5, 40, rng, route="tau")
    engine = NuEngine(flat_band, 0.5, 0.5, 40, rng)
    with pytest.raises(DomainError):
        nu(2, (1,), (0.5,), engine)
    with pytest.raises(DomainError):
        engine.nu((1, -1), (0.5,))


def test_engine_names_the_degenerate_factor(rng):
    engine = NuEngine(Band.flat(0.0, 0.001), 0.0005, 0.0005, 100, rng,
                      schedule=DeltaPSchedule(n_samples=10_000))
    with pytest.raises(DegenerateEstimateError, match="start factor"):
        engine.nu((1,), (0.5,))


# ── Slow cross-route checks ─────────────────────────────────────────────────


@pytest.mark.slow
def test_lemma_and_definition_routes_agree_on_a_curved_band(rng, curved_band):
    lemma = delta_p_first_lemma(curved_band, (0.0, 1.0), 0.5, "lower", 20_000, rng.child("lemma"))
    schedule = DeltaPSchedule(sizes=[50, 100, 200, 400], n_samples=100_000)
    direct = delta_p_first_def(curved_band, (0.0, 1.0), 0.5, "lower", schedule, rng.child("def"))
    tol = 4 * math.hypot(lemma.std_error, direct.std_error) + 0.05 * abs(lemma.mean)
    assert abs(lemma.mean - direct.mean) <= tol


@pytest.mark.slow
def test_excursion_definition_and_tau_routes_agree(rng, flat_band):
    schedule = DeltaPSchedule(sizes=[50, 100, 200, 400], n_samples=100_000)
    direct = delta_p_second(flat_band, (0.0, 1.0), "lower", "lower", schedule, rng.child("def"))
    tau = delta_p_second_tau(flat_band, (0.0, 1.0), "lower", "lower", 0.5, 400, 2000, rng.child("tau"))
    tol = 4 * math.hypot(tau.std_error, direct.std_error) + 0.1 * abs(direct.mean)
    assert abs(tau.mean - direct.mean) <= tol


@pytest.mark.slow
def test_definition_route_matches_the_flat_two_sided_series(rng, flat_band):
    schedule = DeltaPSchedule(sizes=[50, 100, 200], n_samples=200_000)
    est = delta_p_first_def(flat_band, (0.0, 1.0), 0.5, "lower", schedule, rng)
    expected = ONE_SIDED_BRIDGE * flat_containment(0.5, 1.0)
    assert abs(est.mean - expected) <= 4 * est.std_error + 0.05 * expected
