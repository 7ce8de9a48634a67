"""Both sides of the integration-by-parts identity on a band.

Approach:
  1. LHS and bulk term share one stream of unconditioned bridge (or free)
     paths, processed one RNG block at a time; the band enters as a
     weight, never as conditioning. Node monitoring uses the indicator of
     the nodes; bridge monitoring multiplies it by the chance that every
     inter-node bridge stays inside, matching the continuum ν routes.
  2. Each boundary term BD(j) is a quadrature over ordered time tuples inside
     the direction supports. At every node the engine supplies ν and the
     inner expectation is a Monte Carlo average over Y paths pinned to the
     curves at those times.
  3. The symmetrized weight sums over every ordering of the directions; the
     sign ε₁⋯ε_j and the weight 1/(d−j)! are applied per node.
  4. `verify` compares the two sides by a z-score and never raises for an
     estimator failure; the report is marked INVALID with the cause instead.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .errors import BandPathError, DegenerateEstimateError, DomainError
from .functionals import CylFunctional, DirectionFunction, eval_phi_batch, grad_phi_batch, ito_batch
from .logger import get_logger, log_stage
from .models import BreakdownRow, Budgets, MCEstimate, Status, VerificationReport
from .nu import NuEngine
from .pathcore import Band, Partition, SignVector, bridge_survival_weights, in_band_mask
from .rng import SERIAL, Parallelism, RngStream
from .samplers import draw_unconditioned, sample_Y_batch

Z_THRESHOLD = 3.0
SE_FRACTION = 0.1
SE_FLOOR = 1e-3

logger = get_logger()


# ── Scenario ────────────────────────────────────────────────────────────────

@dataclass
class Scenario:
    """One band, one pair of endpoints, one functional and d directions."""

    name: str
    band: Band
    a: float
    b: float | None
    phi: CylFunctional
    hs: tuple[DirectionFunction, ...]
    n_global: int = 100
    budgets: Budgets = field(default_factory=Budgets)
    seed: int = 0

    @property
    def d(self) -> int:
        return len(self.hs)

    @property
    def free(self) -> bool:
        return self.b is None

    @property
    def partition(self) -> Partition:
        return Partition.unit(self.n_global)

    def validate(self) -> None:
        if self.n_global < 2:
            raise DomainError(f"n_global must be >= 2, got {self.n_global}")
        if not self.hs:
            raise DomainError("a scenario needs at least one direction")
        if self.d > self.phi.d:
            raise DomainError(f"functional '{self.phi.name}' supports order <= {self.phi.d}, got d={self.d}")
        if not self.band.strictly_inside(0.0, self.a):
            raise DomainError(f"start value {self.a} is not strictly inside the band at t=0")
        if self.b is not None and not self.band.strictly_inside(1.0, self.b):
            raise DomainError(f"end value {self.b} is not strictly inside the band at t=1")
        for h1, h2 in itertools.combinations(self.hs, 2):
            if h1.overlaps(h2):
                logger.warning(
                    "%s: direction supports [%g, %g] and [%g, %g] overlap; "
                    "the same-curve boundary density is not integrable near the diagonal",
                    self.name, h1.alpha, h1.beta, h2.alpha, h2.beta,
                )

    def scaled_direction(self, index: int, c: float) -> "Scenario":
        hs = tuple(h.scaled(c) if i == index else h for i, h in enumerate(self.hs))
        return Scenario(self.name, self.band, self.a, self.b, self.phi, hs,
                        self.n_global, self.budgets, self.seed)

    def reflected(self) -> "Scenario":
        """Mirror image under x ↦ −x: band, endpoints and functional weights."""
        phi = CylFunctional(f"-{self.phi.name}", self.phi.profile,
                            self.phi.kernels, tuple(-w for w in self.phi.weights))
        return Scenario(self.name, self.band.reflected(), -self.a,
                        None if self.b is None else -self.b, phi, self.hs,
                        self.n_global, self.budgets, self.seed)


# ── LHS and bulk ────────────────────────────────────────────────────────────

def _path_block(scenario: Scenario, stream: RngStream,
                blk: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """LHS and bulk samples for one RNG block; rows outside the band contribute 0."""
    index, rows = blk
    part = scenario.partition
    paths = draw_unconditioned(stream.generator(index), rows, scenario.a, scenario.b, part)
    inside = in_band_mask(paths, part, scenario.band)
    lhs = np.zeros(rows)
    bulk = np.zeros(rows)
    if inside.any():
        kept = paths[inside]
        w = np.ones(len(kept))
        if scenario.budgets.monitoring == "bridge":
            w = bridge_survival_weights(kept, part, scenario.band)
        lhs[inside] = w * grad_phi_batch(scenario.phi, scenario.hs, kept, part)
        ito = np.ones(len(kept))
        for h in scenario.hs:
            ito = ito * ito_batch(h, kept, part).form(scenario.budgets.ito_form)
        bulk[inside] = w * eval_phi_batch(scenario.phi, kept, part) * ito
    return lhs, bulk


def lhs_and_bulk(scenario: Scenario, rng: RngStream,
                 parallel: Parallelism = SERIAL) -> tuple[MCEstimate, MCEstimate]:
    """Both path-space expectations on common random numbers."""
    stream = rng.child("paths")
    parts = parallel.map(lambda blk: _path_block(scenario, stream, blk),
                         stream.blocks(scenario.budgets.n_paths))
    lhs = np.concatenate([p[0] for p in parts])
    bulk = np.concatenate([p[1] for p in parts])
    return MCEstimate.from_samples(lhs, rng.seed), MCEstimate.from_samples(bulk, rng.seed)


def lhs(scenario: Scenario, rng: RngStream, parallel: Parallelism = SERIAL) -> MCEstimate:
    """E[1_K(X) ∇^d φ(X)(h₁, …, h_d)]."""
    return lhs_and_bulk(scenario, rng, parallel)[0]


def bulk_term(scenario: Scenario, rng: RngStream, parallel: Parallelism = SERIAL) -> MCEstimate:
    """E[1_K(X) φ(X) ∏ ∫ h_i′ dX]."""
    return lhs_and_bulk(scenario, rng, parallel)[1]


# ── Simplex quadrature ──────────────────────────────────────────────────────

@dataclass(frozen=True)
class QuadNode:
    ks: tuple[int, ...]
    times: tuple[float, ...]
    weight: float


def support_intervals(hs: Sequence[DirectionFunction]) -> list[tuple[float, float]]:
    """Union of the direction supports as disjoint sorted intervals."""
    spans = sorted((h.alpha, h.beta) for h in hs)
    merged = [list(spans[0])]
    for lo, hi in spans[1:]:
        if lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return [(lo, hi) for lo, hi in merged]


def _axis_weights(hs: Sequence[DirectionFunction], n: int, quad_nodes: int,
                  quadrature: str) -> dict[int, float]:
    weights: dict[int, float] = {}
    off_grid: list[tuple[float, float]] = []
    for lo, hi in support_intervals(hs):
        if quadrature == "grid":
            for k in range(1, n):
                if lo <= k / n <= hi:
                    weights[k] = 1.0 / n
            continue
        width = (hi - lo) / quad_nodes
        for i in range(quad_nodes):
            t = lo + (i + 0.5) * width
            k = int(round(t * n))
            if abs(k / n - t) > 1e-12:
                off_grid.append((t, k / n))
            if 0 < k < n:
                weights[k] = weights.get(k, 0.0) + width
    if off_grid:
        t, s = off_grid[0]
        logger.warning("%d quadrature nodes off the n=%d grid were snapped (first: %.6g → %.6g)",
                       len(off_grid), n, t, s)
    return dict(sorted(weights.items()))


def simplex_nodes(j: int, hs: Sequence[DirectionFunction], n_global: int, *,
                  quad_nodes: int = 12, quadrature: str = "midpoint",
                  collar: int = 1) -> list[QuadNode]:
    """Tensor nodes on grid indices k₁ < … < k_j inside the supports.

    Tuples with two indices within `collar` of each other are the
    pseudo-diagonal and are dropped.
    """
    if j < 1:
        raise DomainError(f"simplex dimension must be >= 1, got {j}")
    if quadrature not in ("midpoint", "grid"):
        raise DomainError(f"unknown quadrature '{quadrature}'")
    axis = list(_axis_weights(hs, n_global, quad_nodes, quadrature).items())
    nodes = []
    for combo in itertools.combinations(axis, j):
        ks = tuple(k for k, _ in combo)
        if any(k2 - k1 <= collar for k1, k2 in zip(ks, ks[1:])):
            continue
        nodes.append(QuadNode(ks, tuple(k / n_global for k in ks), math.prod(w for _, w in combo)))
    return nodes


# ── Symmetrization ──────────────────────────────────────────────────────────

def symmetrized_terms(hs: Sequence[DirectionFunction], j: int, times: Sequence[float],
                      itos: Sequence[np.ndarray | float]) -> dict[tuple[int, ...], np.ndarray | float]:
    """Per ordering σ: ∏_{i≤j} h_{σ(i)}(t_i) · ∏_{i>j} I_{σ(i)}."""
    out = {}
    for sigma in itertools.permutations(range(len(hs))):
        head = math.prod(float(hs[sigma[i]].value(times[i])) for i in range(j))
        term: np.ndarray | float = head
        if head != 0.0:
            for i in sigma[j:]:
                term = term * itos[i]
        out[sigma] = term
    return out


def symmetrized_weight(hs: Sequence[DirectionFunction], j: int, times: Sequence[float],
                       itos: Sequence[np.ndarray | float]) -> np.ndarray | float:
    """Σ_σ ∏_{i≤j} h_{σ(i)}(t_i) ∏_{i>j} I_{σ(i)}."""
    return sum(symmetrized_terms(hs, j, times, itos).values())


# ── Boundary terms ──────────────────────────────────────────────────────────

@dataclass
class BoundaryTerm:
    estimate: MCEstimate
    rows: list[BreakdownRow]
    skipped: int = 0
    samples: int = 0
    nodes: int = 0


def _node_contribution(j: int, eps: SignVector, node: QuadNode, scenario: Scenario,
                       engine: NuEngine, rng: RngStream, form: str) -> tuple[dict, int, bool]:
    """Per-σ (mean, SE) of ν·E[φ(Y)·weight] at one node, Y-paths drawn, degenerate flag."""
    hs, d = scenario.hs, scenario.d
    heads = {
        sigma: math.prod(float(hs[sigma[i]].value(node.times[i])) for i in range(j))
        for sigma in itertools.permutations(range(d))
    }
    if not any(heads.values()):
        return {}, 0, False
    try:
        nu_val = engine.nu(eps, node.times)
    except DegenerateEstimateError as exc:
        logger.warning("BD(%d) node %s ε=%s skipped: %s", j, node.times, eps.entries, exc)
        return {}, 0, True
    if nu_val.value == 0.0:
        return {}, 0, False

    budgets = scenario.budgets
    part = scenario.partition
    Y = sample_Y_batch(j, eps, node.times, scenario.band, scenario.a, scenario.b,
                       scenario.n_global, budgets.inner_count(j),
                       rng.child("Y", *eps.entries, *node.ks), budgets.max_attempts)
    weights = None
    if budgets.monitoring == "bridge":
        weights = bridge_survival_weights(Y, part, scenario.band,
                                          pins=list(zip(node.ks, eps.sides)))
    phi_y = eval_phi_batch(scenario.phi, Y, part)
    if form == "proof":
        sign = (-1) ** (d - j)
        itos = [trapezoid(Y * h.d2(part.nodes), part.nodes, axis=1) for h in hs]
    else:
        sign = 1
        itos = [ito_batch(h, Y, part).form(budgets.ito_form) for h in hs]
    terms = symmetrized_terms(hs, j, node.times, itos)

    scale = eps.sign * sign * node.weight / math.factorial(d - j)
    out = {}
    for sigma, term in terms.items():
        if heads[sigma] == 0.0:
            out[sigma] = (0.0, 0.0)
            continue
        values = phi_y * term
        if weights is None:
            inner = MCEstimate.from_samples(values, rng.seed)
        else:
            inner = MCEstimate.weighted(values, weights, rng.seed)
        est = inner.times(nu_val.as_estimate(rng.seed)).scaled(scale)
        out[sigma] = (est.mean, est.std_error)
    return out, len(Y), False


def boundary_term(j: int, scenario: Scenario, rng: RngStream, engine: NuEngine | None = None,
                  parallel: Parallelism = SERIAL,
                  form: Literal["theorem", "proof"] = "theorem") -> BoundaryTerm:
    """BD(j): Σ_ε ε₁⋯ε_j ∫ ν_(j) E[φ(Y) Σ_σ …] / (d−j)! over the time simplex.

    form="proof" replaces each ∫h′dY by (−1) ∫h″Y dt, the kernel the limit
    argument works with.
    """
    d = scenario.d
    if not 1 <= j <= d:
        raise DomainError(f"boundary term order must satisfy 1 <= j <= d={d}, got {j}")
    if form not in ("theorem", "proof"):
        raise DomainError(f"unknown boundary form '{form}'")
    if scenario.band.is_whole_line:
        return BoundaryTerm(MCEstimate.exact(0.0, rng.seed), [])

    budgets = scenario.budgets
    engine = engine or make_engine(scenario, rng.child("nu"))
    nodes = simplex_nodes(j, scenario.hs, scenario.n_global, quad_nodes=budgets.quad_nodes,
                          quadrature=budgets.quadrature, collar=budgets.collar)
    work = [(eps, node) for eps in SignVector.all(j) for node in nodes]
    results = parallel.map(
        lambda item: _node_contribution(j, item[0], item[1], scenario, engine, rng, form), work
    )

    acc: dict[tuple[tuple[int, ...], tuple[int, ...]], list[float]] = {}
    skipped = samples = 0
    for (eps, _), (contrib, drawn, degenerate) in zip(work, results):
        skipped += degenerate
        samples += drawn
        for sigma, (mean, se) in contrib.items():
            slot = acc.setdefault((eps.entries, sigma), [0.0, 0.0])
            slot[0] += mean
            slot[1] += se * se

    rows = []
    for eps in SignVector.all(j):
        for sigma in itertools.permutations(range(d)):
            mean, var = acc.get((eps.entries, sigma), (0.0, 0.0))
            rows.append(BreakdownRow(j=j, eps=eps.entries, sigma=sigma,
                                     value=mean, std_error=math.sqrt(var)))
    estimate = MCEstimate(
        mean=sum(r.value for r in rows),
        std_error=math.sqrt(sum(r.std_error**2 for r in rows)),
        n_samples=max(samples, 1),
        seed=rng.seed,
    )
    if skipped:
        logger.warning("BD(%d): %d quadrature nodes skipped (degenerate ν)", j, skipped)
    return BoundaryTerm(estimate, rows, skipped, samples, len(nodes))


def make_engine(scenario: Scenario, rng: RngStream, parallel: Parallelism = SERIAL) -> NuEngine:
    budgets = scenario.budgets
    return NuEngine(scenario.band, scenario.a, scenario.b, scenario.n_global, rng,
                    route=budgets.nu_route, schedule=budgets.schedule,
                    n_inner=budgets.n_inner, parallel=parallel)


# ── Verification ────────────────────────────────────────────────────────────

def z_score(left: MCEstimate, right: MCEstimate) -> float:
    spread = math.hypot(left.std_error, right.std_error)
    diff = abs(left.mean - right.mean)
    if spread == 0.0:
        return 0.0 if diff <= 1e-12 * max(1.0, abs(left.mean)) else math.inf
    return diff / spread


def verify(scenario: Scenario, rng: RngStream | None = None,
           parallel: Parallelism = SERIAL) -> VerificationReport:
    """Estimate both sides and decide PASS / FAIL; estimator failures give INVALID."""
    rng = rng or RngStream(scenario.seed)
    try:
        scenario.validate()
        with log_stage(f"{scenario.name}: lhs+bulk"):
            left, bulk = lhs_and_bulk(scenario, rng, parallel)
        engine = make_engine(scenario, rng.child("nu"))
        bd: dict[int, MCEstimate] = {}
        rows: list[BreakdownRow] = []
        skipped = y_paths = nodes = 0
        if not scenario.band.is_whole_line:
            for j in range(1, scenario.d + 1):
                with log_stage(f"{scenario.name}: BD({j})"):
                    term = boundary_term(j, scenario, rng.child("bd", j), engine, parallel)
                bd[j] = term.estimate
                rows.extend(term.rows)
                skipped += term.skipped
                y_paths += term.samples
                nodes += term.nodes
    except BandPathError as exc:
        logger.error("%s: INVALID (%s)", scenario.name, exc)
        return VerificationReport(scenario=scenario.name, status=Status.INVALID,
                                  cause=f"{type(exc).__name__}: {exc}")

    rhs = bulk
    for term in bd.values():
        rhs = rhs.plus(term)
    z = z_score(left, rhs)
    limit = SE_FRACTION * max(abs(left.mean), abs(rhs.mean), SE_FLOOR)
    components = [left, bulk, *bd.values()]
    precise = all(c.std_error <= limit for c in components)
    status = Status.PASS if z <= Z_THRESHOLD and precise else Status.FAIL
    cause = ""
    if status is Status.FAIL:
        cause = f"z={z:.2f} > {Z_THRESHOLD:g}" if z > Z_THRESHOLD else f"a component SE exceeds {limit:.3g}"

    logger.info("=" * 60)
    logger.info("%s: lhs=%.6g ± %.2g  rhs=%.6g ± %.2g  z=%.2f  %s",
                scenario.name, left.mean, left.std_error, rhs.mean, rhs.std_error, z, status.value)
    logger.info("=" * 60)
    return VerificationReport(
        scenario=scenario.name, status=status, lhs=left, bulk=bulk, bd=bd, rhs_total=rhs,
        z_score=z, cause=cause, breakdown=rows, skipped_nodes=skipped,
        cost={"paths": scenario.budgets.n_paths, "y_paths": y_paths,
              "quad_nodes": nodes, "nu_factors": len(engine.cached_factors())},
    )
