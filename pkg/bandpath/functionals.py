"""Cylindrical functionals, direction functions and discrete stochastic integrals.

A functional is φ(x) = Φ(⟨x, λ₁⟩, …, ⟨x, λ_ℓ⟩) with Φ a ridge profile
F(w · u), so every mixed partial of Φ is F^{(d)}(w · u) ∏ w_{j_i}. Inner
products are trapezoid sums on the path's grid, which makes `grad_phi` the
exact directional derivative of the discretised functional.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .errors import DomainError, StructuralError
from .pathcore import GridPath, Partition, inner_products

ArrayFn = Callable[[np.ndarray], np.ndarray]


# ── Direction functions ─────────────────────────────────────────────────────

@dataclass(frozen=True)
class DirectionFunction:
    """C² bump supported on [alpha, beta] ⊂ (0, 1), peak value `scale`."""

    alpha: float
    beta: float
    scale: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < self.beta < 1.0:
            raise DomainError(f"bump support [{self.alpha}, {self.beta}] must satisfy 0 < α < β < 1")

    @property
    def _c(self) -> float:
        return self.scale * ((self.beta - self.alpha) / 2) ** -6

    def _uv(self, t: np.ndarray | float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        t = np.asarray(t, dtype=float)
        inside = (t > self.alpha) & (t < self.beta)
        return t - self.alpha, self.beta - t, inside

    def value(self, t: np.ndarray | float) -> np.ndarray:
        u, v, inside = self._uv(t)
        return np.where(inside, self._c * u**3 * v**3, 0.0)

    def d1(self, t: np.ndarray | float) -> np.ndarray:
        u, v, inside = self._uv(t)
        return np.where(inside, 3 * self._c * u**2 * v**2 * (v - u), 0.0)

    def d2(self, t: np.ndarray | float) -> np.ndarray:
        u, v, inside = self._uv(t)
        return np.where(inside, 6 * self._c * u * v * ((v - u) ** 2 - u * v), 0.0)

    __call__ = value

    def scaled(self, c: float) -> "DirectionFunction":
        return DirectionFunction(self.alpha, self.beta, self.scale * c)

    def overlaps(self, other: "DirectionFunction") -> bool:
        return self.alpha < other.beta and other.alpha < self.beta


def make_bump(alpha: float, beta: float) -> DirectionFunction:
    """(t−α)³(β−t)³ / ((β−α)/2)⁶ on [α, β], zero elsewhere."""
    if alpha >= beta:
        raise DomainError(f"bump needs alpha < beta, got [{alpha}, {beta}]")
    return DirectionFunction(alpha, beta)


# ── Kernels and profiles ────────────────────────────────────────────────────

@dataclass(frozen=True)
class Kernel:
    name: str
    fn: ArrayFn

    def __call__(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(np.asarray(self.fn(t), dtype=float), t.shape)


@dataclass(frozen=True)
class Profile:
    """One-variable outer function with its derivatives F, F′, F″, …"""

    name: str
    derivatives: tuple[ArrayFn, ...]

    @property
    def order(self) -> int:
        return len(self.derivatives) - 1

    def __call__(self, s: np.ndarray, k: int = 0) -> np.ndarray:
        if k > self.order:
            raise DomainError(f"profile '{self.name}' has derivatives up to order {self.order}")
        s = np.asarray(s, dtype=float)
        return np.broadcast_to(np.asarray(self.derivatives[k](s), dtype=float), s.shape)

    @classmethod
    def constant(cls, c: float = 1.0) -> "Profile":
        zero: ArrayFn = lambda s: np.zeros_like(s)
        return cls(f"constant({c:g})", (lambda s: np.full_like(s, c), zero, zero, zero, zero))

    @classmethod
    def linear(cls) -> "Profile":
        zero: ArrayFn = lambda s: np.zeros_like(s)
        return cls("linear", (lambda s: s, lambda s: np.ones_like(s), zero, zero, zero))

    @classmethod
    def quadratic(cls) -> "Profile":
        zero: ArrayFn = lambda s: np.zeros_like(s)
        return cls("quadratic", (lambda s: s * s, lambda s: 2 * s, lambda s: np.full_like(s, 2.0), zero, zero))

    @classmethod
    def cubic(cls) -> "Profile":
        return cls("cubic", (
            lambda s: s**3, lambda s: 3 * s**2, lambda s: 6 * s,
            lambda s: np.full_like(s, 6.0), lambda s: np.zeros_like(s),
        ))

    @classmethod
    def tanh(cls) -> "Profile":
        def d0(s): return np.tanh(s)
        def d1(s): return 1 - np.tanh(s) ** 2
        def d2(s):
            th = np.tanh(s)
            return -2 * th * (1 - th**2)
        def d3(s):
            th = np.tanh(s)
            return -2 * (1 - th**2) * (1 - 3 * th**2)
        def d4(s):
            th = np.tanh(s)
            return 8 * th * (1 - th**2) * (2 - 3 * th**2)
        return cls("tanh", (d0, d1, d2, d3, d4))


# ── Cylindrical functionals ─────────────────────────────────────────────────

@dataclass(frozen=True)
class CylFunctional:
    """φ(x) = F(Σ_i w_i ⟨x, λ_i⟩)."""

    name: str
    profile: Profile
    kernels: tuple[Kernel, ...]
    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.kernels:
            raise StructuralError("a functional needs at least one kernel")
        if len(self.weights) != len(self.kernels):
            raise StructuralError("one weight per kernel is required")

    @property
    def ell(self) -> int:
        return len(self.kernels)

    @property
    def d(self) -> int:
        return self.profile.order

    def coordinates(self, values: np.ndarray, partition: Partition) -> np.ndarray:
        return inner_products(values, partition, self.kernels)

    def outer(self, u: np.ndarray) -> np.ndarray:
        return self.profile(np.asarray(u) @ np.asarray(self.weights))

    def partial(self, u: np.ndarray, idx: Sequence[int]) -> np.ndarray:
        """∂^{|idx|}Φ / ∂u_{idx[0]} … ∂u_{idx[-1]} at u (rows = paths)."""
        w = self.weights
        return self.profile(np.asarray(u) @ np.asarray(w), len(idx)) * math.prod(w[i] for i in idx)


def eval_phi_batch(phi: CylFunctional, values: np.ndarray, partition: Partition) -> np.ndarray:
    return phi.outer(phi.coordinates(values, partition))


def eval_phi(phi: CylFunctional, x: GridPath) -> float:
    return float(eval_phi_batch(phi, x.values, x.partition)[0])


def _direction_coordinates(phi: CylFunctional, hs: Sequence[DirectionFunction],
                           partition: Partition) -> np.ndarray:
    """⟨h_i, λ_j⟩ on the grid, shape (len(hs), ℓ)."""
    t = partition.nodes
    h_rows = np.stack([h.value(t) for h in hs])
    return inner_products(h_rows, partition, phi.kernels)


def grad_phi_batch(phi: CylFunctional, hs: Sequence[DirectionFunction], values: np.ndarray,
                   partition: Partition) -> np.ndarray:
    """d-th order derivative of φ along h₁ … h_d for every row, by the chain rule."""
    d = len(hs)
    if d > phi.d:
        raise DomainError(f"functional '{phi.name}' supports order <= {phi.d}, got {d}")
    u = phi.coordinates(values, partition)
    if d == 0:
        return phi.outer(u)
    hl = _direction_coordinates(phi, hs, partition)
    total = np.zeros(u.shape[0])
    for idx in itertools.product(range(phi.ell), repeat=d):
        coeff = math.prod(hl[i, j] for i, j in enumerate(idx))
        if coeff != 0.0:
            total = total + phi.partial(u, idx) * coeff
    return total


def grad_phi(phi: CylFunctional, hs: Sequence[DirectionFunction], x: GridPath) -> float:
    return float(grad_phi_batch(phi, hs, x.values, x.partition)[0])


def grad_phi_fd(phi: CylFunctional, hs: Sequence[DirectionFunction], x: GridPath,
                step: float = 1e-3) -> float:
    """Mixed partial ∂^d/∂s₁…∂s_d φ(x + Σ s_i h_i) at 0 by the 2^d central stencil."""
    if step <= 0:
        raise DomainError(f"finite-difference step must be positive, got {step}")
    if not hs:
        return eval_phi(phi, x)
    t = x.partition.nodes
    h_rows = np.stack([h.value(t) for h in hs])
    signs = np.array(list(itertools.product((1.0, -1.0), repeat=len(hs))))
    shifted = x.values + step * (signs @ h_rows)
    vals = eval_phi_batch(phi, shifted, x.partition)
    return float(np.sum(np.prod(signs, axis=1) * vals) / (2 * step) ** len(hs))


# ── Discrete stochastic integrals ───────────────────────────────────────────

@dataclass(frozen=True)
class ItoSums:
    """Three discretisations of ∫ h′ dX on one grid.

    left:     Σ h′(t_k) (x_{k+1} − x_k)
    by_parts: −∫ h″ x dt (trapezoid)
    cell:     Σ ((h_{k+1} − h_k)/dt) (x_{k+1} − x_k)
    """

    left: np.ndarray | float
    by_parts: np.ndarray | float
    cell: np.ndarray | float

    @property
    def primary(self) -> np.ndarray | float:
        return self.left

    def form(self, name: str) -> np.ndarray | float:
        if name not in ("left", "by_parts", "cell"):
            raise DomainError(f"unknown stochastic-integral form '{name}'")
        return getattr(self, name)


def ito_batch(h: DirectionFunction, values: np.ndarray, partition: Partition) -> ItoSums:
    values = np.atleast_2d(values)
    t = partition.nodes
    dx = np.diff(values, axis=1)
    hv = h.value(t)
    return ItoSums(
        left=dx @ h.d1(t[:-1]),
        by_parts=-trapezoid(values * h.d2(t), t, axis=1),
        cell=dx @ (np.diff(hv) / partition.step),
    )


def ito_integral(h: DirectionFunction, x: GridPath) -> ItoSums:
    sums = ito_batch(h, x.values, x.partition)
    return ItoSums(float(sums.left[0]), float(sums.by_parts[0]), float(sums.cell[0]))


def second_difference_sum(h: DirectionFunction, x: GridPath) -> float:
    """Σ_{interior k} h(t_k) (x_{k+1} − 2x_k + x_{k−1}) / dt.

    Equals minus the cell form whenever h vanishes at both ends of the grid.
    """
    t = x.partition.nodes
    d2x = x.values[2:] - 2 * x.values[1:-1] + x.values[:-2]
    return float(h.value(t[1:-1]) @ d2x / x.partition.step)
