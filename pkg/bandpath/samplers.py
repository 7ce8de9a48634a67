"""Random grid paths: bridges, free motion, conditioned and boundary-pinned segments.

Approach:
  1. Unconditioned draws: bridges node by node from the Gaussian conditional
     law, free motion as a cumulative sum of increments.
  2. Conditioning: rejection on the exact discrete law, one RNG block at a
     time, so accepted paths come out in attempt order whatever the thread
     count.
  3. Boundary pins: an endpoint placed exactly on a band curve with the
     interior conditioned to the closed band (excursion, house-moving,
     Bessel-type and meander segments).
  4. Y processes: concatenations of pinned segments through curve levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, SaturationError, StructuralError
from .logger import AcceptanceReporter
from .models import MCEstimate, Side
from .pathcore import (
    Band,
    GridPath,
    Partition,
    SignVector,
    TimeTuple,
    concat,
    concat_rows,
    bridge_survival_weights,
    in_band_mask,
    log_heat_kernel,
    polygonalize,
)
from .rng import BLOCK_SIZE, SERIAL, Parallelism, RngStream

DEFAULT_MAX_ATTEMPTS = 10_000_000

Endpoint = Side | float | None


# ── Process descriptors ─────────────────────────────────────────────────────

def _level(band: Band, where: Side | str | float, t: float) -> tuple[float, Side | None]:
    if isinstance(where, str):
        try:
            where = Side(where)
        except ValueError:
            raise StructuralError(f"unknown side '{where}'") from None
    if isinstance(where, Side):
        curve = band.curve(where)
        if curve is None:
            raise StructuralError(f"no {where.value} curve to pin to")
        return float(curve.value(t)), where
    return float(where), None


@dataclass(frozen=True)
class ProcessSpec:
    """Interval, endpoint values and boundary pins of one path segment.

    `b is None` means a free end. A pinned side requires the matching value
    to equal the curve value exactly.
    """

    t1: float
    t2: float
    a: float
    b: float | None = None
    start_on: Side | None = None
    end_on: Side | None = None

    @classmethod
    def on_band(cls, band: Band, t1: float, t2: float,
                start: Side | str | float, end: Side | str | float | None) -> "ProcessSpec":
        a, start_on = _level(band, start, t1)
        if end is None:
            return cls(t1, t2, a, None, start_on, None)
        b, end_on = _level(band, end, t2)
        return cls(t1, t2, a, b, start_on, end_on)

    @property
    def free(self) -> bool:
        return self.b is None

    @property
    def boundary_pins(self) -> int:
        return (self.start_on is not None) + (self.end_on is not None)

    def check(self, band: Band, partition: Partition) -> None:
        if not (math.isclose(partition.t_start, self.t1, abs_tol=1e-12)
                and math.isclose(partition.t_end, self.t2, abs_tol=1e-12)):
            raise StructuralError(
                f"partition [{partition.t_start}, {partition.t_end}] does not match "
                f"process interval [{self.t1}, {self.t2}]"
            )
        if self.free and self.end_on is not None:
            raise StructuralError("a free end cannot be pinned to a curve")
        for side, value, t in ((self.start_on, self.a, self.t1), (self.end_on, self.b, self.t2)):
            if side is None:
                continue
            curve = band.curve(side)
            if curve is None:
                raise StructuralError(f"no {side.value} curve to pin to")
            if value != curve.value(t):
                raise StructuralError(f"value {value} at t={t} is not on the {side.value} curve")

    def check_interior(self, band: Band) -> None:
        if not band.strictly_inside(self.t1, self.a):
            raise DomainError(f"start value {self.a} is not strictly inside the band")
        if self.b is not None and not band.strictly_inside(self.t2, self.b):
            raise DomainError(f"end value {self.b} is not strictly inside the band")


# ── Unconditioned draws ─────────────────────────────────────────────────────

def draw_bridge(gen: np.random.Generator, rows: int, a: float, b: float,
                partition: Partition) -> np.ndarray:
    """Bridge rows a → b, each interior node drawn from its conditional law given the previous one."""
    n, dt = partition.n, partition.step
    z = gen.standard_normal((rows, max(n - 1, 0)))
    out = np.empty((rows, n + 1))
    out[:, 0], out[:, n] = a, b
    x = np.full(rows, float(a))
    for k in range(1, n):
        left = n - k + 1  # steps from node k-1 to the end
        x = x + (b - x) / left + math.sqrt(dt * (left - 1) / left) * z[:, k - 1]
        out[:, k] = x
    return out


def draw_free(gen: np.random.Generator, rows: int, a: float, partition: Partition) -> np.ndarray:
    z = gen.standard_normal((rows, partition.n))
    out = np.empty((rows, partition.n + 1))
    out[:, 0] = a
    out[:, 1:] = a + np.cumsum(math.sqrt(partition.step) * z, axis=1)
    return out


def draw_unconditioned(gen: np.random.Generator, rows: int, a: float, b: float | None,
                       partition: Partition) -> np.ndarray:
    if b is None:
        return draw_free(gen, rows, a, partition)
    return draw_bridge(gen, rows, a, b, partition)


def _unconditioned_batch(a: float, b: float | None, partition: Partition, count: int,
                         rng: RngStream, parallel: Parallelism) -> np.ndarray:
    if count <= 0:
        raise DomainError(f"sample count must be positive, got {count}")
    parts = parallel.map(
        lambda blk: draw_unconditioned(rng.generator(blk[0]), blk[1], a, b, partition),
        rng.blocks(count),
    )
    return np.concatenate(parts)


def sample_bridge_batch(a: float, b: float, partition: Partition, count: int, rng: RngStream,
                        parallel: Parallelism = SERIAL) -> np.ndarray:
    return _unconditioned_batch(a, b, partition, count, rng, parallel)


def sample_bridge(a: float, b: float, partition: Partition, rng: RngStream) -> GridPath:
    return polygonalize(sample_bridge_batch(a, b, partition, 1, rng)[0], partition)


def sample_free_batch(a: float, partition: Partition, count: int, rng: RngStream,
                      parallel: Parallelism = SERIAL) -> np.ndarray:
    return _unconditioned_batch(a, None, partition, count, rng, parallel)


def sample_free(a: float, partition: Partition, rng: RngStream) -> GridPath:
    return polygonalize(sample_free_batch(a, partition, 1, rng)[0], partition)


# ── Exact grid densities ────────────────────────────────────────────────────

def grid_bridge_log_density(path: GridPath, a: float, b: float, form: str = "xi") -> float:
    """Log density of the interior node values under the discrete bridge law.

    form="xi" uses log q_n − log Ξ with q_n = exp(−Σ Δx² / 2dt);
    form="kernel" uses the heat-kernel product over the pinned transition.
    """
    x = path.values
    if x[0] != a or x[-1] != b:
        raise StructuralError(f"path runs {x[0]} → {x[-1]}, expected {a} → {b}")
    k, dt = path.partition.n, path.partition.step
    if form == "kernel":
        steps = np.sum(log_heat_kernel(dt, x[:-1], x[1:]))
        return float(steps - log_heat_kernel(path.partition.length, a, b))
    if form != "xi":
        raise DomainError(f"unknown density form '{form}'")
    log_q = -float(np.sum(np.diff(x) ** 2)) / (2 * dt)
    log_xi = -0.5 * math.log(k) + 0.5 * (k - 1) * math.log(2 * math.pi * dt) - (a - b) ** 2 / (2 * k * dt)
    return log_q - log_xi


def grid_free_log_density(path: GridPath, a: float) -> float:
    """Log density of the node values after the start under the discrete free law."""
    x = path.values
    if x[0] != a:
        raise StructuralError(f"path starts at {x[0]}, expected {a}")
    return float(np.sum(log_heat_kernel(path.partition.step, x[:-1], x[1:])))


# ── Band probabilities ──────────────────────────────────────────────────────

def survival_probability(spec: ProcessSpec, band: Band, partition: Partition, n_samples: int,
                         rng: RngStream, parallel: Parallelism = SERIAL,
                         bridge_sides: Sequence[Side] = ()) -> MCEstimate:
    """Probability that every node of an unconditioned draw lies in the closed band.

    Endpoints may sit on the curves; this is the raw survival estimate behind
    the infinitesimal probabilities. For the curves in `bridge_sides` the
    indicator is multiplied by the chance that the bridges between nodes stay
    clear too, which removes the node-monitoring bias on that side. A side
    with a pinned endpoint must not be listed.
    """
    if n_samples <= 0:
        raise DomainError(f"sample count must be positive, got {n_samples}")
    spec.check(band, partition)
    if band.is_whole_line:
        return MCEstimate(mean=1.0, std_error=0.0, n_samples=n_samples, seed=rng.seed)
    bridge_sides = tuple(bridge_sides)
    if any(side in (spec.start_on, spec.end_on) for side in bridge_sides):
        raise StructuralError("bridge weights apply only to sides without a pinned endpoint")

    def block(blk: tuple[int, int]) -> np.ndarray:
        paths = draw_unconditioned(rng.generator(blk[0]), blk[1], spec.a, spec.b, partition)
        hits = in_band_mask(paths, partition, band).astype(float)
        if bridge_sides:
            hits *= bridge_survival_weights(paths, partition, band, sides=bridge_sides)
        return hits

    hits = np.concatenate(parallel.map(block, rng.blocks(n_samples)))
    return MCEstimate.from_samples(hits, rng.seed)


def band_probability(spec: ProcessSpec, band: Band, partition: Partition, n_samples: int,
                     rng: RngStream, parallel: Parallelism = SERIAL) -> MCEstimate:
    """P(all nodes in the closed band) for a bridge or free path started inside it."""
    if n_samples <= 0:
        raise DomainError(f"sample count must be positive, got {n_samples}")
    if spec.boundary_pins:
        raise StructuralError("band_probability needs endpoints strictly inside the band")
    spec.check_interior(band)
    return survival_probability(spec, band, partition, n_samples, rng, parallel)


# ── Rejection samplers ──────────────────────────────────────────────────────

def _rejection(
    draw: Callable[[np.random.Generator, int], np.ndarray],
    accept: Callable[[np.ndarray], np.ndarray],
    count: int,
    rng: RngStream,
    max_attempts: int,
    parallel: Parallelism,
    label: str,
) -> np.ndarray:
    """Accepted rows in attempt order; blocks are drawn `threads` at a time."""
    if count <= 0:
        raise DomainError(f"sample count must be positive, got {count}")
    reporter = AcceptanceReporter(label)
    kept: list[np.ndarray] = []
    accepted = attempts = block = 0

    def run(b: int) -> np.ndarray:
        candidates = draw(rng.generator(b), BLOCK_SIZE)
        return candidates[accept(candidates)]

    while accepted < count:
        for hits in parallel.map(run, range(block, block + parallel.threads)):
            if attempts >= max_attempts:
                raise SaturationError(label, attempts, accepted, count)
            kept.append(hits)
            accepted += len(hits)
            attempts += BLOCK_SIZE
            reporter.update(attempts, accepted)
            if accepted >= count:
                break
        block += parallel.threads
    return np.concatenate(kept)[:count]


def sample_conditioned_batch(spec: ProcessSpec, band: Band, partition: Partition, count: int,
                             rng: RngStream, max_attempts: int = DEFAULT_MAX_ATTEMPTS,
                             parallel: Parallelism = SERIAL) -> np.ndarray:
    """Bridge or free paths from inside the band, conditioned to stay in it."""
    spec.check(band, partition)
    if spec.boundary_pins:
        raise StructuralError("boundary-pinned specs go through sample_pinned_segment")
    spec.check_interior(band)
    return _rejection(
        lambda gen, rows: draw_unconditioned(gen, rows, spec.a, spec.b, partition),
        lambda paths: in_band_mask(paths, partition, band),
        count, rng, max_attempts, parallel, "conditioned",
    )


def sample_conditioned(spec: ProcessSpec, band: Band, partition: Partition,
                       max_attempts: int, rng: RngStream) -> GridPath:
    return polygonalize(
        sample_conditioned_batch(spec, band, partition, 1, rng, max_attempts)[0], partition
    )


def _segment_label(spec: ProcessSpec) -> str:
    if spec.free:
        return "meander"
    if spec.start_on and spec.end_on:
        return "excursion" if spec.start_on is spec.end_on else "house-moving"
    return "bessel"


def sample_pinned_segment_batch(spec: ProcessSpec, band: Band, partition: Partition, count: int,
                                rng: RngStream, max_attempts: int = DEFAULT_MAX_ATTEMPTS,
                                parallel: Parallelism = SERIAL) -> np.ndarray:
    """Segments with at least one endpoint on a curve, interior conditioned to the closed band."""
    spec.check(band, partition)
    if not spec.boundary_pins:
        raise StructuralError("pinned segment needs an endpoint on a band curve")
    ends = [(spec.t1, spec.a)] + ([] if spec.free else [(spec.t2, spec.b)])
    for t, x in ends:
        if not band.lower_at(t) <= x <= band.upper_at(t):
            raise DomainError(f"endpoint {x} at t={t} lies outside the band")
    return _rejection(
        lambda gen, rows: draw_unconditioned(gen, rows, spec.a, spec.b, partition),
        lambda paths: in_band_mask(paths, partition, band),
        count, rng, max_attempts, parallel, _segment_label(spec),
    )


def sample_pinned_segment(spec: ProcessSpec, band: Band, partition: Partition,
                          rng: RngStream, max_attempts: int = DEFAULT_MAX_ATTEMPTS) -> GridPath:
    return polygonalize(
        sample_pinned_segment_batch(spec, band, partition, 1, rng, max_attempts)[0], partition
    )


def sample_widened_segment_batch(spec: ProcessSpec, band: Band, partition: Partition, eta: float,
                                 count: int, rng: RngStream,
                                 max_attempts: int = DEFAULT_MAX_ATTEMPTS,
                                 parallel: Parallelism = SERIAL) -> np.ndarray:
    """Pinned-segment law approached from outside: condition on the band widened by η."""
    if eta <= 0:
        raise DomainError(f"widening must be positive, got {eta}")
    spec.check(band, partition)
    wide = band.widened(eta)
    return _rejection(
        lambda gen, rows: draw_unconditioned(gen, rows, spec.a, spec.b, partition),
        lambda paths: in_band_mask(paths, partition, wide),
        count, rng, max_attempts, parallel, f"widened({eta:g})",
    )


def sample_widened_segment(spec: ProcessSpec, band: Band, partition: Partition, eta: float,
                           rng: RngStream) -> GridPath:
    return polygonalize(
        sample_widened_segment_batch(spec, band, partition, eta, 1, rng)[0], partition
    )


# ── Y processes ─────────────────────────────────────────────────────────────

def _y_layout(
    j: int, eps: SignVector | Sequence[int], times: TimeTuple | Sequence[float], n_global: int,
) -> tuple[Partition, SignVector, list[int]]:
    eps = eps if isinstance(eps, SignVector) else SignVector(tuple(eps))
    times = times if isinstance(times, TimeTuple) else TimeTuple(tuple(times))
    if len(eps) != j or len(times) != j:
        raise DomainError(f"j={j} but got {len(eps)} signs and {len(times)} times")
    grid = Partition.unit(n_global)
    ks = [grid.snap(t) for t in times]
    if ks[0] <= 0 or ks[-1] >= n_global or any(k2 <= k1 for k1, k2 in zip(ks, ks[1:])):
        raise DomainError(f"times {tuple(times)} collide or reach the ends on an n={n_global} grid")
    return grid, eps, [0, *ks, n_global]


def _y_specs(grid: Partition, eps: SignVector, bounds: list[int], band: Band, a: float,
             b: float | None) -> list[tuple[ProcessSpec, Partition]]:
    levels: list[Endpoint] = [a, *eps.sides, b]
    out = []
    for i in range(len(bounds) - 1):
        part = grid.sub(bounds[i], bounds[i + 1])
        spec = ProcessSpec.on_band(band, part.t_start, part.t_end, levels[i], levels[i + 1])
        out.append((spec, part))
    return out


def sample_Y_batch(j: int, eps: SignVector | Sequence[int], times: TimeTuple | Sequence[float],
                   band: Band, a: float, b: float | None, n_global: int, count: int,
                   rng: RngStream, max_attempts: int = DEFAULT_MAX_ATTEMPTS,
                   parallel: Parallelism = SERIAL) -> np.ndarray:
    """`count` Y paths on the n_global grid, each pinned to f^{ε_i}(t_i) at every t_i."""
    grid, eps, bounds = _y_layout(j, eps, times, n_global)
    rows = [
        sample_pinned_segment_batch(spec, band, part, count, rng.child("segment", i),
                                    max_attempts, parallel)
        for i, (spec, part) in enumerate(_y_specs(grid, eps, bounds, band, a, b))
    ]
    return concat_rows(rows)


def sample_Y(j: int, eps: SignVector | Sequence[int], times: TimeTuple | Sequence[float],
             band: Band, a: float, b: float | None, n_global: int, rng: RngStream,
             max_attempts: int = DEFAULT_MAX_ATTEMPTS) -> GridPath:
    grid, eps, bounds = _y_layout(j, eps, times, n_global)
    segments = [
        sample_pinned_segment(spec, band, part, rng.child("segment", i), max_attempts)
        for i, (spec, part) in enumerate(_y_specs(grid, eps, bounds, band, a, b))
    ]
    return concat(segments)
