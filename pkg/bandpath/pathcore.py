"""Deterministic path, curve and grid primitives.

Everything here is a pure function of its inputs and every value is
immutable once built:
  - Partition / GridPath: uniform grids and piecewise-linear paths on them.
  - Curve / Band: C² curves with closed-form derivatives and the band
    between two of them (either side may sit at infinity).
  - heat kernel, Cameron–Martin density, concatenation, band membership
    and L² inner products, in single-path and batch (rows = paths) form.

Band membership is decided at grid nodes; `bridge_survival_weights` adds the
probability that the Brownian bridge between two nodes stays inside too.
Integrals use the trapezoid rule on the path's own grid.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from scipy.integrate import trapezoid
from scipy.stats import norm

from .errors import DomainError, StructuralError
from .logger import get_logger
from .models import Side

ArrayFn = Callable[[np.ndarray], np.ndarray]

_GAP_PROBE = 10_000
_SNAP_TOL = 1e-12


# ── Grids ───────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Partition:
    """Uniform partition of [t_start, t_end] ⊆ [0, 1] into n steps."""

    t_start: float
    t_end: float
    n: int

    def __post_init__(self) -> None:
        if self.n < 1:
            raise DomainError(f"partition needs n >= 1, got {self.n}")
        if not 0.0 <= self.t_start < self.t_end <= 1.0:
            raise DomainError(f"bad partition interval [{self.t_start}, {self.t_end}]")

    @classmethod
    def unit(cls, n: int) -> "Partition":
        return cls(0.0, 1.0, n)

    @property
    def length(self) -> float:
        return self.t_end - self.t_start

    @property
    def step(self) -> float:
        return self.length / self.n

    @cached_property
    def nodes(self) -> np.ndarray:
        t = self.t_start + self.length * (np.arange(self.n + 1) / self.n)
        t[-1] = self.t_end
        t.setflags(write=False)
        return t

    def sub(self, k_start: int, k_end: int) -> "Partition":
        """Sub-partition between two node indices, reusing this grid's nodes."""
        if not 0 <= k_start < k_end <= self.n:
            raise DomainError(f"bad node range [{k_start}, {k_end}] for n={self.n}")
        return Partition(float(self.nodes[k_start]), float(self.nodes[k_end]), k_end - k_start)

    def snap(self, t: float) -> int:
        """Index of the node nearest to t; off-node requests are logged."""
        k = int(round((t - self.t_start) / self.step))
        k = min(max(k, 0), self.n)
        if abs(self.nodes[k] - t) > _SNAP_TOL:
            get_logger().warning("time %.12g is off the grid; snapped to node %.12g", t, self.nodes[k])
        return k


@dataclass(frozen=True)
class GridPath:
    """Path values at the nodes of a partition, read piecewise-linearly."""

    partition: Partition
    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.values, dtype=float)
        if arr.shape != (self.partition.n + 1,):
            raise StructuralError(
                f"path needs {self.partition.n + 1} values, got shape {arr.shape}"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def times(self) -> np.ndarray:
        return self.partition.nodes

    def __call__(self, t: float | np.ndarray) -> float | np.ndarray:
        out = np.interp(t, self.partition.nodes, self.values)
        return float(out) if np.ndim(out) == 0 else out


def polygonalize(samples: Sequence[float] | np.ndarray, partition: Partition) -> GridPath:
    """Polygonal path through the given node values."""
    return GridPath(partition, np.asarray(samples, dtype=float))


def concat(segments: Sequence[GridPath]) -> GridPath:
    """Join abutting segments that share a junction value and a grid step."""
    if not segments:
        raise StructuralError("nothing to concatenate")
    for left, right in zip(segments, segments[1:]):
        if left.partition.t_end != right.partition.t_start:
            raise StructuralError(
                f"segments do not abut: {left.partition.t_end} vs {right.partition.t_start}"
            )
        if left.values[-1] != right.values[0]:
            raise StructuralError(
                f"junction mismatch at t={left.partition.t_end}: "
                f"{left.values[-1]} vs {right.values[0]}"
            )
        if not math.isclose(left.partition.step, right.partition.step, rel_tol=1e-9):
            raise StructuralError("segments use different grid steps")
    partition = Partition(
        segments[0].partition.t_start,
        segments[-1].partition.t_end,
        sum(s.partition.n for s in segments),
    )
    values = np.concatenate([segments[0].values] + [s.values[1:] for s in segments[1:]])
    return GridPath(partition, values)


def concat_rows(blocks: Sequence[np.ndarray]) -> np.ndarray:
    """Batch counterpart of `concat` for (paths × nodes) arrays already checked to abut."""
    return np.concatenate([blocks[0]] + [b[:, 1:] for b in blocks[1:]], axis=1)


# ── Curves and bands ────────────────────────────────────────────────────────

def _apply(fn: ArrayFn, t: float | np.ndarray) -> float | np.ndarray:
    arr = np.asarray(t, dtype=float)
    out = np.broadcast_to(np.asarray(fn(arr), dtype=float), arr.shape)
    return float(out) if out.ndim == 0 else np.array(out)


@dataclass(frozen=True)
class Curve:
    """A C² curve on [0, 1] with closed-form first and second derivatives."""

    name: str
    f: ArrayFn = field(repr=False)
    df: ArrayFn = field(repr=False)
    d2f: ArrayFn = field(repr=False)
    is_constant: bool = False

    def value(self, t: float | np.ndarray) -> float | np.ndarray:
        return _apply(self.f, t)

    def derivative(self, t: float | np.ndarray) -> float | np.ndarray:
        return _apply(self.df, t)

    def second_derivative(self, t: float | np.ndarray) -> float | np.ndarray:
        return _apply(self.d2f, t)

    __call__ = value

    # constructors

    @classmethod
    def constant(cls, c: float, name: str | None = None) -> "Curve":
        zero: ArrayFn = lambda t: np.zeros_like(t)
        return cls(name or f"const({c:g})", lambda t: np.full_like(t, c), zero, zero, True)

    @classmethod
    def linear(cls, c0: float, c1: float, name: str | None = None) -> "Curve":
        if c1 == 0.0:
            return cls.constant(c0, name)
        return cls(
            name or f"linear({c0:g},{c1:g})",
            lambda t: c0 + c1 * t,
            lambda t: np.full_like(t, c1),
            lambda t: np.zeros_like(t),
        )

    @classmethod
    def sine(cls, amplitude: float, offset: float = 0.0, frequency: float = 1.0,
             name: str | None = None) -> "Curve":
        """offset + amplitude · sin(π · frequency · t)."""
        w = math.pi * frequency
        return cls(
            name or f"sine({amplitude:g},{offset:g},{frequency:g})",
            lambda t: offset + amplitude * np.sin(w * t),
            lambda t: amplitude * w * np.cos(w * t),
            lambda t: -amplitude * w * w * np.sin(w * t),
        )

    @classmethod
    def polynomial(cls, coeffs: Sequence[float], name: str | None = None) -> "Curve":
        """Polynomial with coefficients in increasing degree."""
        p = Polynomial(list(coeffs))
        dp, d2p = p.deriv(1), p.deriv(2)
        return cls(
            name or "poly(" + ",".join(f"{c:g}" for c in coeffs) + ")",
            lambda t: p(t), lambda t: dp(t), lambda t: d2p(t),
            is_constant=p.degree() < 1,
        )

    @classmethod
    def mollified_polyline(cls, knots: Sequence[float], values: Sequence[float],
                           width: float, name: str | None = None) -> "Curve":
        """Piecewise-linear interpolant of (knots, values) smoothed by a Gaussian of given width.

        Each kink (t - k)_+ is replaced by its Gaussian average
        u·Φ(u/w) + w·φ(u/w) with u = t - k, so all derivatives stay closed-form.
        """
        k = np.asarray(knots, dtype=float)
        v = np.asarray(values, dtype=float)
        if k.ndim != 1 or k.shape != v.shape or k.size < 2 or np.any(np.diff(k) <= 0):
            raise DomainError("polyline needs >= 2 strictly increasing knots with matching values")
        if width <= 0:
            raise DomainError(f"mollification width must be positive, got {width}")
        slopes = np.diff(v) / np.diff(k)
        kinks, jumps = k[1:-1], np.diff(slopes)
        base, s0 = v[0] - slopes[0] * k[0], slopes[0]

        def f(t: np.ndarray) -> np.ndarray:
            u = t[..., None] - kinks
            ramp = u * norm.cdf(u / width) + width * norm.pdf(u / width)
            return base + s0 * t + ramp @ jumps

        def df(t: np.ndarray) -> np.ndarray:
            u = t[..., None] - kinks
            return s0 + norm.cdf(u / width) @ jumps

        def d2f(t: np.ndarray) -> np.ndarray:
            u = t[..., None] - kinks
            return (norm.pdf(u / width) / width) @ jumps

        return cls(name or f"mollified({width:g})", f, df, d2f)

    # transforms

    def scaled(self, c: float) -> "Curve":
        if c == 1.0:
            return self
        return Curve(
            f"{c:g}*{self.name}",
            lambda t: c * self.f(t), lambda t: c * self.df(t), lambda t: c * self.d2f(t),
            self.is_constant,
        )

    def negated(self) -> "Curve":
        return Curve(
            f"-{self.name}",
            lambda t: -self.f(t), lambda t: -self.df(t), lambda t: -self.d2f(t),
            self.is_constant,
        )

    def shifted(self, c: float) -> "Curve":
        return Curve(f"{self.name}{c:+g}", lambda t: self.f(t) + c, self.df, self.d2f, self.is_constant)

    def minus(self, other: "Curve") -> "Curve":
        return Curve(
            f"({self.name})-({other.name})",
            lambda t: self.f(t) - other.f(t),
            lambda t: self.df(t) - other.df(t),
            lambda t: self.d2f(t) - other.d2f(t),
            self.is_constant and other.is_constant,
        )

    def check_consistency(self, n_points: int = 200, h: float = 1e-4, tol: float = 1e-6) -> None:
        """Compare the declared derivatives with central differences on an evenly spaced grid."""
        t = np.linspace(h, 1.0 - h, n_points)
        f_plus, f_mid, f_minus = self.value(t + h), self.value(t), self.value(t - h)
        d1 = self.derivative(t)
        d2 = self.second_derivative(t)
        fd1 = (f_plus - f_minus) / (2 * h)
        fd2 = (f_plus - 2 * f_mid + f_minus) / (h * h)
        bad1 = np.abs(fd1 - d1) > tol * (1 + np.abs(d1))
        # second differences lose ~eps/h² to round-off; scale the tolerance with |f|
        bad2 = np.abs(fd2 - d2) > tol * (1 + np.abs(d2)) + 1e-7 * (1 + np.abs(f_mid))
        if bad1.any() or bad2.any():
            where = float(t[np.argmax(bad1 | bad2)])
            raise DomainError(f"curve '{self.name}' derivatives inconsistent near t={where:.4g}")


@dataclass(frozen=True)
class Band:
    """Closed band between a lower and an upper curve; a missing side is at infinity."""

    lower: Curve | None
    upper: Curve | None
    unbounded: bool = field(default=False, repr=False)

    def __post_init__(self) -> None:
        if self.lower is None and self.upper is None and not self.unbounded:
            raise StructuralError("a band needs at least one finite side (use Band.whole_line())")
        if self.lower is not None and self.upper is not None:
            t = np.linspace(0.0, 1.0, _GAP_PROBE)
            gap = float(np.min(self.upper.value(t) - self.lower.value(t)))
            if gap <= 0:
                raise StructuralError(f"band gap must be positive, min gap is {gap:.6g}")

    @classmethod
    def whole_line(cls) -> "Band":
        return cls(None, None, unbounded=True)

    @classmethod
    def flat(cls, lower: float | None, upper: float | None) -> "Band":
        return cls(
            None if lower is None else Curve.constant(lower),
            None if upper is None else Curve.constant(upper),
            unbounded=lower is None and upper is None,
        )

    @property
    def is_whole_line(self) -> bool:
        return self.lower is None and self.upper is None

    def curve(self, side: Side | int) -> Curve | None:
        if not isinstance(side, Side):
            side = Side.from_sign(side)
        return self.upper if side is Side.UPPER else self.lower

    def lower_at(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.full(t.shape, -np.inf) if self.lower is None else np.asarray(self.lower.value(t))

    def upper_at(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.full(t.shape, np.inf) if self.upper is None else np.asarray(self.upper.value(t))

    def strictly_inside(self, t: float, x: float) -> bool:
        return bool(self.lower_at(t) < x < self.upper_at(t))

    def gap(self) -> Curve | None:
        """Distance curve upper − lower, or None when a side is infinite."""
        if self.lower is None or self.upper is None:
            return None
        return self.upper.minus(self.lower)

    # transforms

    def reflected(self) -> "Band":
        """Mirror image under x ↦ −x."""
        return Band(
            None if self.upper is None else self.upper.negated(),
            None if self.lower is None else self.lower.negated(),
            self.unbounded,
        )

    def shifted(self, c: float) -> "Band":
        return Band(
            None if self.lower is None else self.lower.shifted(c),
            None if self.upper is None else self.upper.shifted(c),
            self.unbounded,
        )

    def widened(self, eta: float) -> "Band":
        if eta < 0:
            raise DomainError(f"widening must be nonnegative, got {eta}")
        return Band(
            None if self.lower is None else self.lower.shifted(-eta),
            None if self.upper is None else self.upper.shifted(eta),
            self.unbounded,
        )


# ── Sign vectors and time tuples ────────────────────────────────────────────

@dataclass(frozen=True)
class SignVector:
    """Entries ε₁ … ε_j, each ±1; +1 names the upper curve."""

    entries: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(int(e) for e in self.entries))
        if not self.entries:
            raise DomainError("sign vector must be non-empty")
        if any(e not in (1, -1) for e in self.entries):
            raise DomainError(f"sign entries must be ±1, got {self.entries}")

    @classmethod
    def all(cls, j: int) -> list["SignVector"]:
        return [cls(e) for e in itertools.product((1, -1), repeat=j)]

    @property
    def sign(self) -> int:
        return math.prod(self.entries)

    @property
    def sides(self) -> tuple[Side, ...]:
        return tuple(Side.from_sign(e) for e in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[int]:
        return iter(self.entries)


@dataclass(frozen=True)
class TimeTuple:
    """Strictly increasing times t₁ < … < t_j inside (0, 1)."""

    times: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        if not self.times:
            raise DomainError("time tuple must be non-empty")
        if any(not 0.0 < t < 1.0 for t in self.times):
            raise DomainError(f"times must lie in (0, 1), got {self.times}")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise DomainError(f"times must be strictly increasing, got {self.times}")

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self) -> Iterator[float]:
        return iter(self.times)


# ── Heat kernel ─────────────────────────────────────────────────────────────

def log_heat_kernel(t: float, x: float | np.ndarray, y: float | np.ndarray) -> float | np.ndarray:
    if t <= 0:
        raise DomainError(f"heat kernel needs t > 0, got {t}")
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    out = -0.5 * math.log(2 * math.pi * t) - diff * diff / (2 * t)
    return float(out) if np.ndim(out) == 0 else out


def heat_kernel(t: float, x: float | np.ndarray, y: float | np.ndarray) -> float | np.ndarray:
    """(2πt)^{-1/2} exp(−(x−y)²/(2t))."""
    out = np.exp(log_heat_kernel(t, x, y))
    return float(out) if np.ndim(out) == 0 else out


# ── Band membership ─────────────────────────────────────────────────────────

def in_band_mask(values: np.ndarray, partition: Partition, band: Band) -> np.ndarray:
    """Row-wise closed-band test at every node for a (paths × nodes) array."""
    values = np.atleast_2d(values)
    if band.is_whole_line:
        return np.ones(values.shape[0], dtype=bool)
    t = partition.nodes
    ok = np.ones(values.shape, dtype=bool)
    if band.lower is not None:
        ok &= values >= band.lower_at(t)
    if band.upper is not None:
        ok &= values <= band.upper_at(t)
    return ok.all(axis=1)


def in_band(path: GridPath, band: Band) -> bool:
    return bool(in_band_mask(path.values, path.partition, band)[0])


def bridge_survival_weights(
    values: np.ndarray,
    partition: Partition,
    band: Band,
    *,
    sides: Sequence[Side] = (Side.LOWER, Side.UPPER),
    pins: Sequence[tuple[int, Side]] = (),
) -> np.ndarray:
    """Per row, the probability that Brownian bridges between consecutive nodes stay in the band.

    Each cell contributes 1 − exp(−2·d_k·d_{k+1}/Δ) for every finite curve in
    `sides`, d being the distance to the curve on the inside (the curve is
    read linearly between nodes). A row with a node outside weighs 0.

    A node in `pins` sits exactly on the named curve. A cell with one pinned
    end contributes the distance at its other end instead, the pinned law up
    to a constant factor; a cell pinned at both ends contributes 1. With pins
    the weights only make sense normalised by their own mean.
    """
    values = np.atleast_2d(values)
    weight = np.ones(values.shape[0])
    t, dt = partition.nodes, partition.step
    for side in sides:
        curve = band.curve(side)
        if curve is None:
            continue
        dist = np.maximum(side.sign * (np.asarray(curve.value(t)) - values), 0.0)
        pinned = np.zeros(values.shape[1], dtype=bool)
        for k, on in pins:
            if on is side:
                pinned[k] = True
        left, right = dist[:, :-1], dist[:, 1:]
        cell = -np.expm1(-2.0 * left * right / dt)
        pin_l, pin_r = pinned[:-1], pinned[1:]
        cell = np.where(pin_l & ~pin_r, right, cell)
        cell = np.where(pin_r & ~pin_l, left, cell)
        cell = np.where(pin_l & pin_r, 1.0, cell)
        weight = weight * np.prod(cell, axis=1)
    return weight


# ── Cameron–Martin density ──────────────────────────────────────────────────

def cameron_martin_batch(g: Curve, values: np.ndarray, partition: Partition) -> np.ndarray:
    """Z^g for every row: exp(g′X|ₜ₁ᵗ² − ∫X g″ − ½∫(g′)²), trapezoid on the grid."""
    values = np.atleast_2d(values)
    t = partition.nodes
    d1 = np.asarray(g.derivative(t))
    d2 = np.asarray(g.second_derivative(t))
    exponent = (
        d1[-1] * values[:, -1]
        - d1[0] * values[:, 0]
        - trapezoid(values * d2, t, axis=1)
        - 0.5 * trapezoid(d1 * d1, t)
    )
    return np.exp(exponent)


def cameron_martin(g: Curve, path: GridPath) -> float:
    return float(cameron_martin_batch(g, path.values, path.partition)[0])


# ── Inner products ──────────────────────────────────────────────────────────

def _kernel_on(lam: Callable[[np.ndarray], np.ndarray] | np.ndarray, t: np.ndarray) -> np.ndarray:
    if callable(lam):
        return np.broadcast_to(np.asarray(lam(t), dtype=float), t.shape)
    arr = np.asarray(lam, dtype=float)
    if arr.shape != t.shape:
        raise StructuralError(f"grid kernel has shape {arr.shape}, expected {t.shape}")
    return arr


def inner_products(
    values: np.ndarray,
    partition: Partition,
    kernels: Sequence[Callable[[np.ndarray], np.ndarray] | np.ndarray],
) -> np.ndarray:
    """⟨x, λ_i⟩ for every row and kernel, shape (paths, len(kernels))."""
    values = np.atleast_2d(values)
    t = partition.nodes
    cols = [trapezoid(values * _kernel_on(lam, t), t, axis=1) for lam in kernels]
    return np.stack(cols, axis=1) if cols else np.empty((values.shape[0], 0))


def inner_product(x: GridPath, lam: Callable[[np.ndarray], np.ndarray] | np.ndarray) -> float:
    return float(inner_products(x.values, x.partition, [lam])[0, 0])
