"""Infinitesimal probabilities ΔP, Δ²P and the boundary densities ν.

Three routes estimate a scaled survival probability with one or two
endpoints sitting on the band curves:
  1. grid       √m·P_m (one pin) or m·P_m (two pins) at a single segment
                step count m; the discrete face probability matching
                node-only band monitoring.
  2. definition the same scaled probabilities over a schedule of grid sizes,
                extrapolated with c₀ + c₁·m^{-1/2}. The curve with no pinned
                endpoint is monitored between nodes through the Brownian
                bridge crossing probability, so only the pinned side is left
                to the extrapolation.
  3. lemma      flatten the pinned curve, weight one-side-conditioned paths
                by the Cameron–Martin density and multiply by the two-sided
                containment probability; Δ²P via the τ-decomposition. Both
                the one-sided conditioning and the containment are corrected
                for crossings between nodes.
The grid route pairs with node-monitored path sums in the verifier; the two
continuum routes pair with bridge-weighted ones.
`NuEngine` caches every factor per (interval, pins) key and assembles ν.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable, Literal, Sequence

import numpy as np

from .errors import DegenerateEstimateError, DomainError, StructuralError
from .logger import get_logger
from .models import DeltaPSchedule, MCEstimate, NuValue, Side
from .pathcore import (
    Band,
    Partition,
    SignVector,
    TimeTuple,
    bridge_survival_weights,
    cameron_martin_batch,
    heat_kernel,
)
from .rng import SERIAL, Parallelism, RngStream
from .samplers import (
    ProcessSpec,
    sample_bridge_batch,
    sample_pinned_segment_batch,
    survival_probability,
)

Route = Literal["grid", "definition", "lemma"]
EndSpec = Side | str | float | None

_SQRT2 = math.sqrt(2.0)
_SQRT_PI = math.sqrt(math.pi)

logger = get_logger()


# ── Extrapolation ───────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ExtrapolationFit:
    limit: MCEstimate
    slope: float


def fit_extrapolation(sizes: Sequence[int], estimates: Sequence[MCEstimate]) -> ExtrapolationFit:
    """Weighted least-squares fit of c₀ + c₁·m^{-1/2}; the limit carries the propagated SE."""
    m = np.asarray(sizes, dtype=float)
    if len(m) != len(estimates) or len(m) < 2 or len(set(sizes)) != len(m):
        raise DomainError("extrapolation needs at least two distinct sizes, one estimate each")
    y = np.array([e.mean for e in estimates])
    se = np.array([e.std_error for e in estimates])
    var = se * se
    if np.any(var > 0):
        weights = 1.0 / np.maximum(var, var[var > 0].min() * 1e-6)
    else:
        weights = np.ones_like(var)
    design = np.column_stack([np.ones_like(m), m**-0.5]) * np.sqrt(weights)[:, None]
    solve = np.linalg.pinv(design) * np.sqrt(weights)[None, :]
    coef = solve @ y
    limit = MCEstimate(
        mean=float(coef[0]),
        std_error=float(np.sqrt(np.sum((solve[0] * se) ** 2))),
        n_samples=sum(e.n_samples for e in estimates),
        seed=estimates[0].seed,
    )
    return ExtrapolationFit(limit=limit, slope=float(coef[1]))


# ── Finite-dimensional densities ────────────────────────────────────────────

def finite_dim_density(times: TimeTuple | Sequence[float], levels: Sequence[float],
                       a: float, b: float | None) -> float:
    """Joint density at `levels` of the bridge a → b (or of free motion from a) at `times`."""
    times = times if isinstance(times, TimeTuple) else TimeTuple(tuple(times))
    if len(levels) != len(times):
        raise DomainError(f"{len(levels)} levels for {len(times)} times")
    dens, prev_t, prev_c = 1.0, 0.0, float(a)
    for t, c in zip(times, levels):
        dens *= heat_kernel(t - prev_t, prev_c, c)
        prev_t, prev_c = t, float(c)
    if b is not None:
        dens *= heat_kernel(1.0 - prev_t, prev_c, b) / heat_kernel(1.0, a, b)
    return dens


# ── Segment helpers ─────────────────────────────────────────────────────────

def _as_end(x: EndSpec) -> Side | float | None:
    if isinstance(x, str) and not isinstance(x, Side):
        try:
            return Side(x)
        except ValueError:
            raise StructuralError(f"unknown side '{x}'") from None
    return x


def _steps(n: int, t1: float, t2: float) -> int:
    return max(1, int(round(n * (t2 - t1))))


def _scaled_survival(band: Band, t1: float, t2: float, start: EndSpec, end: EndSpec, m: int,
                     n_samples: int, rng: RngStream, parallel: Parallelism,
                     far_bridge: bool = False) -> MCEstimate:
    spec = ProcessSpec.on_band(band, t1, t2, _as_end(start), _as_end(end))
    if not spec.boundary_pins:
        raise StructuralError("an infinitesimal probability needs an endpoint on a curve")
    far: tuple[Side, ...] = ()
    if far_bridge:
        pinned = (spec.start_on, spec.end_on)
        far = tuple(s for s in Side if s not in pinned and band.curve(s) is not None)
    p = survival_probability(spec, band, Partition(t1, t2, m), n_samples, rng, parallel,
                             bridge_sides=far)
    return p.scaled(m ** (spec.boundary_pins / 2))


def delta_p_grid(band: Band, interval: tuple[float, float], start: EndSpec, end: EndSpec,
                 n: int, n_samples: int, rng: RngStream,
                 parallel: Parallelism = SERIAL) -> MCEstimate:
    """√m·P_m (one pin) or m·P_m (two pins) with m = round(n·(t₂ − t₁))."""
    t1, t2 = interval
    est = _scaled_survival(band, t1, t2, start, end, _steps(n, t1, t2), n_samples, rng, parallel)
    if est.mean <= 0:
        raise DegenerateEstimateError(f"ΔP[{t1:g},{t2:g}]", "no path survived")
    return est


def _limit(band: Band, t1: float, t2: float, start: EndSpec, end: EndSpec,
           schedule: DeltaPSchedule, rng: RngStream, parallel: Parallelism,
           label: str) -> MCEstimate:
    ms = sorted({_steps(n, t1, t2) for n in schedule.sizes})
    if len(ms) < 2:
        raise DomainError(f"interval [{t1}, {t2}] is too short for grid sizes {schedule.sizes}")
    estimates = [
        _scaled_survival(band, t1, t2, start, end, m, schedule.n_samples, rng.child("m", m),
                         parallel, far_bridge=True)
        for m in ms
    ]
    if all(e.mean <= 0 for e in estimates):
        raise DegenerateEstimateError(label, f"zero survival at every m in {ms}")
    fit = fit_extrapolation(ms, estimates)
    logger.debug("%s: m=%s → limit %.5g ± %.2g (slope %.3g)",
                 label, ms, fit.limit.mean, fit.limit.std_error, fit.slope)
    limit = fit.limit
    if limit.mean <= 0 or limit.mean < 2 * limit.std_error:
        raise DegenerateEstimateError(
            label, f"extrapolated limit {limit.mean:.4g} ± {limit.std_error:.2g} is not positive"
        )
    return limit


def _one_pin(start: EndSpec, end: EndSpec) -> None:
    pins = sum(isinstance(_as_end(x), Side) for x in (start, end))
    if pins != 1:
        raise StructuralError(f"exactly one endpoint must sit on a curve, got {pins}")


# ── Definition route ────────────────────────────────────────────────────────

def delta_p_first_def(band: Band, interval: tuple[float, float], start: EndSpec, end: EndSpec,
                      schedule: DeltaPSchedule, rng: RngStream,
                      parallel: Parallelism = SERIAL) -> MCEstimate:
    """lim √m·P_m with exactly one endpoint on a curve."""
    _one_pin(start, end)
    t1, t2 = interval
    return _limit(band, t1, t2, start, end, schedule, rng, parallel, f"ΔP[{t1:g},{t2:g}]")


def delta_p_second(band: Band, interval: tuple[float, float], start: Side | str, end: Side | str,
                   schedule: DeltaPSchedule, rng: RngStream,
                   parallel: Parallelism = SERIAL) -> MCEstimate:
    """lim m·P_m with both endpoints on curves (same curve: excursion; opposite: house-moving)."""
    start, end = _as_end(start), _as_end(end)
    if not (isinstance(start, Side) and isinstance(end, Side)):
        raise StructuralError("Δ²P needs both endpoints on curves")
    t1, t2 = interval
    return _limit(band, t1, t2, start, end, schedule, rng, parallel, f"Δ²P[{t1:g},{t2:g}]")


def delta_p_free(band: Band, t: float, start: Side | str, schedule: DeltaPSchedule,
                 rng: RngStream, parallel: Parallelism = SERIAL) -> MCEstimate:
    """lim √m·P_m for a free path started on a curve at t, over [t, 1]."""
    if not isinstance(_as_end(start), Side):
        raise StructuralError("the free-end factor starts on a curve")
    return _limit(band, t, 1.0, start, None, schedule, rng, parallel, f"ΔP[{t:g},1] free")


# ── Lemma route ─────────────────────────────────────────────────────────────

def _flattened_factor(band: Band, t1: float, t2: float, pin: Side, pin_at_start: bool,
                      other: float | None, n: int, n_samples: int, rng: RngStream,
                      parallel: Parallelism) -> MCEstimate:
    """ΔP through the distance to the pinned curve.

    Pinned end:  √2·dist/√T · E[Z·1_contain | one-sided] / E[Z]
    Free end:    E[Z·1_contain | one-sided meander] / √π
    with Z the Cameron–Martin weight of ε·f^ε and the one-sided law taken
    against the flat curve 0. The sampler only conditions the nodes, so each
    path is reweighted by the chance its inter-node bridges stay above 0, and
    containment uses the same bridge probability under the gap curve.
    """
    curve = band.curve(pin)
    if curve is None:
        raise StructuralError(f"no {pin.value} curve to pin to")
    free = other is None
    head = 1.0 / _SQRT_PI
    if not free:
        dist = pin.sign * (float(curve.value(t2 if pin_at_start else t1)) - other)
        if dist <= 0:
            return MCEstimate.exact(0.0, rng.seed)
        head = _SQRT2 * dist / math.sqrt(t2 - t1)

    gap = band.gap()
    if curve.is_constant and gap is None:
        return MCEstimate.exact(head, rng.seed)

    flat = Band.flat(0.0, None)
    if free:
        start, end = Side.LOWER, None
    else:
        start, end = (Side.LOWER, dist) if pin_at_start else (dist, Side.LOWER)
    spec = ProcessSpec.on_band(flat, t1, t2, start, end)
    part = Partition(t1, t2, _steps(n, t1, t2))
    g = curve.scaled(pin.sign)

    paths = sample_pinned_segment_batch(spec, flat, part, n_samples, rng.child("conditioned"),
                                        parallel=parallel)
    z = cameron_martin_batch(g, paths, part)
    pin_node = 0 if free or pin_at_start else part.n
    one_sided = bridge_survival_weights(paths, part, flat, pins=[(pin_node, Side.LOWER)])
    if gap is None:
        contain = np.ones(len(paths))
    else:
        contain = bridge_survival_weights(paths, part, Band(None, gap), sides=(Side.UPPER,))
    num = MCEstimate.weighted(z * contain, one_sided, rng.seed)
    if free or curve.is_constant:
        return num.scaled(head)
    bridges = sample_bridge_batch(spec.a, spec.b, part, n_samples, rng.child("bridge"), parallel)
    den = MCEstimate.from_samples(cameron_martin_batch(g, bridges, part), rng.seed)
    return num.divided(den).scaled(head)


def delta_p_first_lemma(band: Band, interval: tuple[float, float], start: EndSpec, end: EndSpec,
                        n_samples: int, rng: RngStream, n: int = 200,
                        parallel: Parallelism = SERIAL) -> MCEstimate:
    """ΔP from the Cameron–Martin ratio and the containment probability."""
    _one_pin(start, end)
    start, end = _as_end(start), _as_end(end)
    t1, t2 = interval
    if isinstance(start, Side):
        return _flattened_factor(band, t1, t2, start, True, float(end), n, n_samples, rng, parallel)
    return _flattened_factor(band, t1, t2, end, False, float(start), n, n_samples, rng, parallel)


def delta_p_free_lemma(band: Band, t: float, start: Side | str, n_samples: int, rng: RngStream,
                       n: int = 200, parallel: Parallelism = SERIAL) -> MCEstimate:
    """Free-end ΔP from the Cameron–Martin weight of a meander off the flattened curve."""
    start = _as_end(start)
    if not isinstance(start, Side):
        raise StructuralError("the free-end factor starts on a curve")
    return _flattened_factor(band, t, 1.0, start, True, None, n, n_samples, rng, parallel)


def delta_p_second_tau(band: Band, interval: tuple[float, float], start: Side | str,
                       end: Side | str, tau: float, n_alpha: int, n_inner: int, rng: RngStream,
                       n: int = 200, parallel: Parallelism = SERIAL) -> MCEstimate:
    """Δ²P = T·E[ΔP_{[t₁,τ]}(α)/√(τ−t₁) · ΔP_{[τ,t₂]}(α)/√(t₂−τ)], α from the bridge at τ."""
    start, end = _as_end(start), _as_end(end)
    if not (isinstance(start, Side) and isinstance(end, Side)):
        raise StructuralError("Δ²P needs both endpoints on curves")
    t1, t2 = interval
    if not t1 < tau < t2:
        raise DomainError(f"τ={tau} must lie strictly inside ({t1}, {t2})")
    grid = Partition(t1, t2, _steps(n, t1, t2))
    k = grid.snap(tau)
    if not 0 < k < grid.n:
        raise DomainError(f"τ={tau} has no interior grid node on an n={n} grid")
    tau = float(grid.nodes[k])

    lo, hi = band.curve(start), band.curve(end)
    if lo is None or hi is None:
        raise StructuralError("both pinned curves must be finite")
    A, B, T = float(lo.value(t1)), float(hi.value(t2)), t2 - t1
    mean = A + (B - A) * (tau - t1) / T
    sd = math.sqrt((tau - t1) * (t2 - tau) / T)
    alphas = mean + sd * rng.child("alpha").normals(n_alpha, 1)[:, 0]

    def one(i: int) -> float:
        alpha = float(alphas[i])
        if not band.strictly_inside(tau, alpha):
            return 0.0
        left = _flattened_factor(band, t1, tau, start, True, alpha, n, n_inner,
                                 rng.child("left", i), SERIAL)
        right = _flattened_factor(band, tau, t2, end, False, alpha, n, n_inner,
                                  rng.child("right", i), SERIAL)
        return left.mean * right.mean

    values = np.array(parallel.map(one, range(n_alpha)))
    scale = T / math.sqrt((tau - t1) * (t2 - tau))
    return MCEstimate.from_samples(values * scale, rng.seed)


# ── ν assembly ──────────────────────────────────────────────────────────────

class NuEngine:
    """Boundary densities ν for one band and one pair of endpoints.

    Factors are cached per (interval, pins) key; each key is computed once,
    under its own lock, from an RNG stream derived from the key itself.
    """

    def __init__(
        self,
        band: Band,
        a: float,
        b: float | None,
        n_global: int,
        rng: RngStream,
        *,
        route: Route = "grid",
        schedule: DeltaPSchedule | None = None,
        n_alpha: int = 64,
        n_inner: int = 2_000,
        parallel: Parallelism = SERIAL,
    ) -> None:
        if route not in ("grid", "definition", "lemma"):
            raise DomainError(f"unknown ν route '{route}'")
        self.band, self.a, self.b = band, float(a), b
        self.n_global = n_global
        self.rng = rng
        self.route = route
        self.schedule = schedule or DeltaPSchedule()
        self.n_alpha = n_alpha
        self.n_inner = n_inner
        self.parallel = parallel
        self._cache: dict[tuple, MCEstimate] = {}
        self._locks: dict[tuple, threading.Lock] = {}
        self._guard = threading.Lock()

    @property
    def lemma_n(self) -> int:
        return self.n_global if self.route == "grid" else max(self.schedule.sizes)

    def _cached(self, key: tuple, compute: Callable[[RngStream], MCEstimate]) -> MCEstimate:
        with self._guard:
            if key in self._cache:
                return self._cache[key]
            lock = self._locks.setdefault(key, threading.Lock())
        with lock:
            if key not in self._cache:
                try:
                    self._cache[key] = compute(self.rng.child(*key))
                except DegenerateEstimateError as exc:
                    raise DegenerateEstimateError(_factor_name(key), str(exc)) from exc
            return self._cache[key]

    def cached_factors(self) -> dict[tuple, MCEstimate]:
        return dict(self._cache)

    # factors

    def start_factor(self, t: float, side: Side) -> MCEstimate:
        """ΔP over [0, t] from a to f^side(t)."""
        interval = (0.0, t)

        def compute(rng: RngStream) -> MCEstimate:
            if self.route == "grid":
                return delta_p_grid(self.band, interval, self.a, side, self.n_global,
                                    self.schedule.n_samples, rng, self.parallel)
            if self.route == "definition":
                return delta_p_first_def(self.band, interval, self.a, side, self.schedule,
                                         rng, self.parallel)
            return delta_p_first_lemma(self.band, interval, self.a, side,
                                       self.schedule.n_samples, rng, self.lemma_n, self.parallel)

        return self._cached(("start", t, side.value), compute)

    def end_factor(self, t: float, side: Side) -> MCEstimate:
        """ΔP over [t, 1] from f^side(t) to b, or free when b is None."""
        interval = (t, 1.0)

        def compute(rng: RngStream) -> MCEstimate:
            if self.route == "grid":
                return delta_p_grid(self.band, interval, side, self.b, self.n_global,
                                    self.schedule.n_samples, rng, self.parallel)
            if self.b is None:
                if self.route == "definition":
                    return delta_p_free(self.band, t, side, self.schedule, rng, self.parallel)
                return delta_p_free_lemma(self.band, t, side, self.schedule.n_samples, rng,
                                          self.lemma_n, self.parallel)
            if self.route == "definition":
                return delta_p_first_def(self.band, interval, side, self.b, self.schedule,
                                         rng, self.parallel)
            return delta_p_first_lemma(self.band, interval, side, self.b,
                                       self.schedule.n_samples, rng, self.lemma_n, self.parallel)

        return self._cached(("end", t, side.value), compute)

    def middle_factor(self, t1: float, s1: Side, t2: float, s2: Side) -> MCEstimate:
        """Δ²P over [t1, t2] between f^{s1}(t1) and f^{s2}(t2)."""
        interval = (t1, t2)

        def compute(rng: RngStream) -> MCEstimate:
            if self.route == "grid":
                return delta_p_grid(self.band, interval, s1, s2, self.n_global,
                                    self.schedule.n_samples, rng, self.parallel)
            if self.route == "definition":
                return delta_p_second(self.band, interval, s1, s2, self.schedule, rng, self.parallel)
            m = _steps(self.lemma_n, t1, t2)
            tau = t1 + (t2 - t1) * (m // 2) / m
            return delta_p_second_tau(self.band, interval, s1, s2, tau, self.n_alpha,
                                      self.n_inner, rng, self.lemma_n,
                                      self.parallel)

        return self._cached(("middle", t1, s1.value, t2, s2.value), compute)

    # ν

    def nu(self, eps: SignVector | Sequence[int], times: TimeTuple | Sequence[float]) -> NuValue:
        eps = eps if isinstance(eps, SignVector) else SignVector(tuple(eps))
        times = times if isinstance(times, TimeTuple) else TimeTuple(tuple(times))
        if len(eps) != len(times):
            raise DomainError(f"{len(eps)} signs for {len(times)} times")
        sides = eps.sides
        curves = [self.band.curve(s) for s in sides]
        if any(c is None for c in curves):
            return NuValue.unreachable(eps.entries, times.times)

        ts = times.times
        levels = [float(c.value(t)) for c, t in zip(curves, ts)]
        factors: dict[str, MCEstimate] = {
            "density": MCEstimate.exact(finite_dim_density(times, levels, self.a, self.b), self.rng.seed),
            "start": self.start_factor(ts[0], sides[0]).scaled(1.0 / math.sqrt(ts[0])),
        }
        for i in range(1, len(ts)):
            d2p = self.middle_factor(ts[i - 1], sides[i - 1], ts[i], sides[i])
            factors[f"middle_{i}"] = d2p.scaled(1.0 / (ts[i] - ts[i - 1]))
        factors["end"] = self.end_factor(ts[-1], sides[-1]).scaled(1.0 / math.sqrt(1.0 - ts[-1]))
        return NuValue.assemble(eps.entries, ts, factors)


def _factor_name(key: tuple) -> str:
    kind, *rest = key
    return f"{kind} factor {tuple(rest)}"


def nu(j: int, eps: SignVector | Sequence[int], times: TimeTuple | Sequence[float],
       engine: NuEngine) -> NuValue:
    """ν_(j) at the given signs and times, from the engine's cached factors."""
    if len(eps) != j:
        raise DomainError(f"j={j} but got {len(eps)} signs")
    return engine.nu(eps, times)
