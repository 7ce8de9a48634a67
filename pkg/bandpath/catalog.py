"""Named curves, kernels, profiles and functionals that run configurations refer to."""

from __future__ import annotations

from typing import Any, Callable

import numpy as np

from .errors import DomainError
from .functionals import CylFunctional, Kernel, Profile
from .pathcore import Curve

# ── Curves ──────────────────────────────────────────────────────────────────

BUILTIN_CURVES: dict[str, Curve] = {
    "zero": Curve.constant(0.0, "zero"),
    "one": Curve.constant(1.0, "one"),
    "sine_lower": Curve.sine(0.2, name="sine_lower"),
}

CURVE_KINDS: dict[str, Callable[..., Curve]] = {
    "constant": lambda name, value: Curve.constant(value, name),
    "linear": lambda name, c0, c1: Curve.linear(c0, c1, name),
    "sine": lambda name, amplitude, offset=0.0, frequency=1.0: Curve.sine(amplitude, offset, frequency, name),
    "polynomial": lambda name, coeffs: Curve.polynomial(coeffs, name),
    "mollified": lambda name, knots, values, width: Curve.mollified_polyline(knots, values, width, name),
}


def build_curve(name: str, kind: str, params: dict[str, Any]) -> Curve:
    if kind not in CURVE_KINDS:
        raise DomainError(f"unknown curve kind '{kind}' (expected one of {sorted(CURVE_KINDS)})")
    try:
        return CURVE_KINDS[kind](name, **params)
    except TypeError as exc:
        raise DomainError(f"bad parameters for {kind} curve '{name}': {exc}") from None


# ── Kernels and profiles ────────────────────────────────────────────────────

KERNELS: dict[str, Kernel] = {
    "one": Kernel("one", lambda t: np.ones_like(t)),
    "t": Kernel("t", lambda t: t),
    "sin": Kernel("sin", lambda t: np.sin(np.pi * t)),
    "cos": Kernel("cos", lambda t: np.cos(np.pi * t)),
}

PROFILES: dict[str, Callable[[], Profile]] = {
    "constant": Profile.constant,
    "linear": Profile.linear,
    "quadratic": Profile.quadratic,
    "cubic": Profile.cubic,
    "tanh": Profile.tanh,
}


def build_functional(name: str, profile: str, kernels: list[str],
                     weights: list[float] | None = None) -> CylFunctional:
    if profile not in PROFILES:
        raise DomainError(f"unknown profile '{profile}' (expected one of {sorted(PROFILES)})")
    missing = [k for k in kernels if k not in KERNELS]
    if missing:
        raise DomainError(f"unknown kernels {missing} (expected names from {sorted(KERNELS)})")
    weights = weights if weights is not None else [1.0] * len(kernels)
    return CylFunctional(name, PROFILES[profile](), tuple(KERNELS[k] for k in kernels), tuple(weights))


def catalog_functionals() -> dict[str, CylFunctional]:
    """Built-in functionals, addressable by name without a `functionals` section."""
    return {
        "const": build_functional("const", "constant", ["one"]),
        "mean": build_functional("mean", "linear", ["one"]),
        "mean_sq": build_functional("mean_sq", "quadratic", ["one"]),
        "sin_sq": build_functional("sin_sq", "quadratic", ["sin"]),
        "mix_tanh": build_functional("mix_tanh", "tanh", ["one", "sin"], [1.0, 0.5]),
        "t_cubic": build_functional("t_cubic", "cubic", ["t", "cos"], [1.0, -0.3]),
    }
