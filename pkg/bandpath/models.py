"""Core domain records for bandpath runs.

Every estimator returns an `MCEstimate`; the ν engine returns `NuValue`
records whose breakdown multiplies to the reported value; the verifier
returns a `VerificationReport`. All of them are pydantic models so they
validate on construction and serialize straight into the JSON reports.
"""

from __future__ import annotations

import math
from enum import Enum
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import DomainError


# ── Enums ───────────────────────────────────────────────────────────────────

class Side(str, Enum):
    """Which band curve a pinned endpoint sits on."""
    LOWER = "lower"
    UPPER = "upper"

    @property
    def sign(self) -> int:
        return 1 if self is Side.UPPER else -1

    @classmethod
    def from_sign(cls, eps: int) -> "Side":
        if eps not in (1, -1):
            raise DomainError(f"sign must be +1 or -1, got {eps}")
        return cls.UPPER if eps == 1 else cls.LOWER


class Status(str, Enum):
    """Outcome of a verification run."""
    PASS = "PASS"
    FAIL = "FAIL"
    INVALID = "INVALID"


# ── Monte Carlo estimates ───────────────────────────────────────────────────

class MCEstimate(BaseModel):
    """Mean, standard error, sample count and seed of a Monte Carlo estimate."""
    model_config = ConfigDict(frozen=True)

    mean: float
    std_error: float = Field(ge=0.0)
    n_samples: int = Field(gt=0)
    seed: int = Field(ge=0)

    @classmethod
    def from_samples(cls, values: np.ndarray | Sequence[float], seed: int) -> "MCEstimate":
        arr = np.asarray(values, dtype=float).ravel()
        if arr.size == 0:
            raise DomainError("cannot form an estimate from zero samples")
        mean = float(np.mean(arr))
        se = float(np.std(arr, ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
        return cls(mean=mean, std_error=se, n_samples=int(arr.size), seed=seed)

    @classmethod
    def weighted(cls, values: np.ndarray | Sequence[float], weights: np.ndarray | Sequence[float],
                 seed: int) -> "MCEstimate":
        """Self-normalised mean Σwv / Σw; the SE is the delta-method ratio error."""
        v = np.asarray(values, dtype=float).ravel()
        w = np.asarray(weights, dtype=float).ravel()
        if v.shape != w.shape:
            raise DomainError(f"{v.size} values for {w.size} weights")
        if v.size == 0:
            raise DomainError("cannot form an estimate from zero samples")
        w_bar = float(np.mean(w))
        if w_bar <= 0.0:
            raise DomainError("weights have no positive mass")
        mean = float(np.dot(w, v) / (w_bar * v.size))
        se = 0.0
        if v.size > 1:
            se = float(np.std(w * (v - mean) / w_bar, ddof=1) / math.sqrt(v.size))
        return cls(mean=mean, std_error=se, n_samples=int(v.size), seed=seed)

    @classmethod
    def exact(cls, value: float, seed: int = 0) -> "MCEstimate":
        return cls(mean=float(value), std_error=0.0, n_samples=1, seed=seed)

    def scaled(self, c: float) -> "MCEstimate":
        return self.model_copy(update={"mean": self.mean * c, "std_error": self.std_error * abs(c)})

    def plus(self, other: "MCEstimate") -> "MCEstimate":
        """Sum of two independent estimates."""
        return MCEstimate(
            mean=self.mean + other.mean,
            std_error=math.hypot(self.std_error, other.std_error),
            n_samples=self.n_samples + other.n_samples,
            seed=self.seed,
        )

    def times(self, other: "MCEstimate") -> "MCEstimate":
        """Product of two independent estimates, first-order error propagation."""
        return MCEstimate(
            mean=self.mean * other.mean,
            std_error=math.hypot(other.mean * self.std_error, self.mean * other.std_error),
            n_samples=self.n_samples + other.n_samples,
            seed=self.seed,
        )

    def divided(self, other: "MCEstimate") -> "MCEstimate":
        """Ratio of two independent estimates, first-order error propagation."""
        if other.mean == 0.0:
            raise DomainError("ratio with a zero denominator")
        ratio = self.mean / other.mean
        rel = math.hypot(
            self.std_error / self.mean if self.mean else 0.0,
            other.std_error / other.mean,
        )
        se = abs(ratio) * rel if self.mean else self.std_error / abs(other.mean)
        return MCEstimate(
            mean=ratio, std_error=se,
            n_samples=self.n_samples + other.n_samples, seed=self.seed,
        )


# ── ν values ────────────────────────────────────────────────────────────────

class NuValue(BaseModel):
    """One boundary density value with its ordered factor breakdown."""
    j: int = Field(ge=1)
    eps: tuple[int, ...]
    times: tuple[float, ...]
    value: float = Field(ge=0.0)
    std_error: float = Field(ge=0.0)
    breakdown: dict[str, float]

    @model_validator(mode="after")
    def _product_matches(self) -> "NuValue":
        if len(self.eps) != self.j or len(self.times) != self.j:
            raise ValueError("eps and times must both have length j")
        if self.value != math.prod(self.breakdown.values()):
            raise ValueError("value must equal the product of the breakdown factors")
        return self

    @classmethod
    def assemble(
        cls,
        eps: Sequence[int],
        times: Sequence[float],
        factors: dict[str, MCEstimate],
    ) -> "NuValue":
        means = {k: max(f.mean, 0.0) for k, f in factors.items()}
        value = math.prod(means.values())
        var = 0.0
        for key, factor in factors.items():
            others = math.prod(v for k, v in means.items() if k != key)
            var += (factor.std_error * others) ** 2
        return cls(
            j=len(eps), eps=tuple(eps), times=tuple(times),
            value=value, std_error=math.sqrt(var), breakdown=means,
        )

    @classmethod
    def unreachable(cls, eps: Sequence[int], times: Sequence[float]) -> "NuValue":
        """ν for a sign vector that names a curve at infinity."""
        return cls(
            j=len(eps), eps=tuple(eps), times=tuple(times),
            value=0.0, std_error=0.0, breakdown={"unreachable": 0.0},
        )

    def as_estimate(self, seed: int = 0) -> MCEstimate:
        return MCEstimate(mean=self.value, std_error=self.std_error, n_samples=1, seed=seed)


# ── Budgets and schedules ───────────────────────────────────────────────────

class DeltaPSchedule(BaseModel):
    """Grid sizes and per-size sample count for the infinitesimal-probability limits."""
    model_config = ConfigDict(extra="forbid")

    sizes: list[int] = Field(default_factory=lambda: [50, 100, 200])
    n_samples: int = Field(10_000, ge=10_000)

    @field_validator("sizes")
    @classmethod
    def _increasing(cls, sizes: list[int]) -> list[int]:
        if len(sizes) < 2:
            raise ValueError("at least two grid sizes are required")
        if any(n < 1 for n in sizes) or any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("grid sizes must be positive and strictly increasing")
        return sizes


class Budgets(BaseModel):
    """Sample counts and quadrature settings for one verification run."""
    model_config = ConfigDict(extra="forbid")

    n_paths: int = Field(200_000, gt=0)
    n_inner: int = Field(20_000, gt=0)
    n_inner_by_order: dict[int, int] = Field(default_factory=dict)
    quad_nodes: int = Field(12, gt=0)
    quadrature: Literal["midpoint", "grid"] = "midpoint"
    collar: int = Field(1, ge=0)
    max_attempts: int = Field(10_000_000, gt=0)
    nu_route: Literal["grid", "definition", "lemma"] = "grid"
    ito_form: Literal["left", "cell"] = "cell"
    schedule: DeltaPSchedule = Field(default_factory=DeltaPSchedule)

    @field_validator("n_inner_by_order")
    @classmethod
    def _positive_inner(cls, counts: dict[int, int]) -> dict[int, int]:
        if any(j < 1 or n < 1 for j, n in counts.items()):
            raise ValueError("orders and inner sample counts must be positive")
        return counts

    @property
    def monitoring(self) -> Literal["nodes", "bridge"]:
        """The grid route is exact for node-monitored paths; the continuum routes need bridge weights."""
        return "nodes" if self.nu_route == "grid" else "bridge"

    def inner_count(self, j: int) -> int:
        return self.n_inner_by_order.get(j, self.n_inner)


# ── Verification report ─────────────────────────────────────────────────────

class BreakdownRow(BaseModel):
    """Contribution of one (j, ε, σ) combination to a boundary term."""
    j: int
    eps: tuple[int, ...]
    sigma: tuple[int, ...]
    value: float
    std_error: float


class VerificationReport(BaseModel):
    """Both sides of the integration-by-parts identity for one scenario."""
    scenario: str
    status: Status
    lhs: MCEstimate | None = None
    bulk: MCEstimate | None = None
    bd: dict[int, MCEstimate] = Field(default_factory=dict)
    rhs_total: MCEstimate | None = None
    z_score: float | None = None
    cause: str = ""
    breakdown: list[BreakdownRow] = Field(default_factory=list)
    skipped_nodes: int = 0
    cost: dict[str, int] = Field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status is Status.PASS
