"""YAML run configuration: schema, loading and name resolution.

A run file has the sections `seed`, `threads`, `output_dir`, `curves`,
`functionals`, `directions`, `scenarios`, `delta_p`, `converge` and
`samples`. Syntax errors report the line; schema and reference errors report
the field path (e.g. `scenarios.0.upper`) and, where it can be found, the
line. The schema is documented in configs/README.md.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal, Sequence

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .catalog import BUILTIN_CURVES, build_curve, build_functional, catalog_functionals
from .errors import BandPathError, ConfigError
from .functionals import CylFunctional, DirectionFunction
from .models import Budgets, DeltaPSchedule, Side
from .pathcore import Band, Curve
from .verifier import Scenario

Level = str | float

_U64 = 2**64
# declared derivatives vs central differences, relative
DERIVATIVE_TOL = 1e-4


# ── Schema ──────────────────────────────────────────────────────────────────

class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CurveSpec(_Section):
    kind: Literal["constant", "linear", "sine", "polynomial", "mollified"]
    params: dict[str, Any] = Field(default_factory=dict)


class FunctionalSpec(_Section):
    profile: str
    kernels: list[str] = Field(min_length=1)
    weights: list[float] | None = None

    @model_validator(mode="after")
    def _weights_match(self) -> "FunctionalSpec":
        if self.weights is not None and len(self.weights) != len(self.kernels):
            raise ValueError("one weight per kernel is required")
        return self


class DirectionSpec(_Section):
    alpha: float
    beta: float
    scale: float = 1.0

    @model_validator(mode="after")
    def _inside(self) -> "DirectionSpec":
        if not 0.0 < self.alpha < self.beta < 1.0:
            raise ValueError("support must satisfy 0 < alpha < beta < 1")
        return self


class _BandRef(_Section):
    lower: Level | None = None
    upper: Level | None = None
    whole_line: bool = False

    @model_validator(mode="after")
    def _one_side(self) -> "_BandRef":
        if self.whole_line and (self.lower is not None or self.upper is not None):
            raise ValueError("whole_line excludes lower/upper")
        if not self.whole_line and self.lower is None and self.upper is None:
            raise ValueError("a band needs lower or upper (or whole_line: true)")
        return self


class ScenarioSpec(_BandRef):
    name: str
    a: float
    b: float | None = None
    functional: str
    directions: list[str] = Field(min_length=1)
    n_global: int = Field(100, ge=2)
    budgets: Budgets = Field(default_factory=Budgets)


class DeltaPJob(_BandRef):
    name: str
    interval: tuple[float, float] = (0.0, 1.0)
    start: Level
    end: Level | None = None
    routes: list[Literal["grid", "definition", "lemma", "tau"]] = Field(
        default_factory=lambda: ["definition", "lemma"]
    )
    n: int = Field(200, ge=2)
    taus: list[float] = Field(default_factory=list)
    n_alpha: int = Field(64, gt=0)
    n_inner: int = Field(2_000, gt=0)
    schedule: DeltaPSchedule = Field(default_factory=DeltaPSchedule)

    @model_validator(mode="after")
    def _tau_pins(self) -> "DeltaPJob":
        if "tau" in self.routes and not (_is_side(self.start) and _is_side(self.end)):
            raise ValueError("the tau route needs both endpoints on curves")
        return self


class ConvergeJob(_BandRef):
    name: str
    estimator: Literal["band_probability", "delta_p", "lhs", "bulk"]
    interval: tuple[float, float] = (0.0, 1.0)
    start: Level | None = None
    end: Level | None = None
    scenario: str | None = None
    sizes: list[int] = Field(default_factory=lambda: [50, 100, 200], min_length=2)
    n_samples: int = Field(10_000, gt=0)

    @model_validator(mode="before")
    @classmethod
    def _scenario_band(cls, data: Any) -> Any:
        # lhs/bulk take their band from the referenced scenario
        if isinstance(data, dict) and data.get("estimator") in ("lhs", "bulk"):
            data = {"whole_line": True, **data} if "lower" not in data and "upper" not in data else data
        return data

    @model_validator(mode="after")
    def _needs(self) -> "ConvergeJob":
        if self.estimator in ("lhs", "bulk") and self.scenario is None:
            raise ValueError(f"estimator '{self.estimator}' needs a scenario name")
        if self.estimator in ("band_probability", "delta_p") and self.start is None:
            raise ValueError(f"estimator '{self.estimator}' needs a start")
        return self


SampleKind = Literal["bridge", "free", "conditioned", "excursion", "house_moving", "meander", "bessel"]


class SampleJob(_BandRef):
    name: str
    kind: SampleKind
    interval: tuple[float, float] = (0.0, 1.0)
    start: Level
    end: Level | None = None
    count: int = Field(gt=0)
    n: int = Field(100, ge=1)

    @model_validator(mode="after")
    def _shape(self) -> "SampleJob":
        start_side, end_side = _is_side(self.start), _is_side(self.end)
        rules = {
            "bridge": not start_side and self.end is not None and not end_side,
            "free": not start_side and self.end is None,
            "conditioned": not start_side and not end_side,
            "excursion": start_side and end_side and self.start == self.end,
            "house_moving": start_side and end_side and self.start != self.end,
            "meander": start_side and self.end is None,
            "bessel": self.end is not None and start_side != end_side,
        }
        if not rules[self.kind]:
            raise ValueError(f"start/end do not fit a {self.kind} sample")
        return self


class RunConfig(_Section):
    seed: int | None = Field(None, ge=0, lt=_U64)
    threads: int | None = Field(None, ge=1)
    output_dir: str | None = None
    curves: dict[str, CurveSpec] = Field(default_factory=dict)
    functionals: dict[str, FunctionalSpec] = Field(default_factory=dict)
    directions: dict[str, DirectionSpec] = Field(default_factory=dict)
    scenarios: list[ScenarioSpec] = Field(default_factory=list)
    delta_p: list[DeltaPJob] = Field(default_factory=list)
    converge: list[ConvergeJob] = Field(default_factory=list)
    samples: list[SampleJob] = Field(default_factory=list)


def _is_side(x: Level | None) -> bool:
    return isinstance(x, str) and x in (Side.LOWER.value, Side.UPPER.value)


# ── Resolution ──────────────────────────────────────────────────────────────

@dataclass
class Catalog:
    """Curves, functionals and directions of one run, by name."""

    curves: dict[str, Curve]
    functionals: dict[str, CylFunctional]
    directions: dict[str, DirectionFunction]

    def curve(self, ref: Level | None, field: str) -> Curve | None:
        if ref is None:
            return None
        if isinstance(ref, (int, float)):
            return Curve.constant(float(ref))
        if ref not in self.curves:
            raise ConfigError(f"unknown curve '{ref}'", field=field)
        return self.curves[ref]

    def band(self, ref: _BandRef, field: str) -> Band:
        if ref.whole_line:
            return Band.whole_line()
        lower = self.curve(ref.lower, f"{field}.lower")
        upper = self.curve(ref.upper, f"{field}.upper")
        try:
            return Band(lower, upper)
        except BandPathError as exc:
            raise ConfigError(str(exc), field=field) from None

    def functional(self, name: str, field: str) -> CylFunctional:
        if name not in self.functionals:
            raise ConfigError(f"unknown functional '{name}'", field=field)
        return self.functionals[name]

    def direction(self, name: str, field: str) -> DirectionFunction:
        if name not in self.directions:
            raise ConfigError(f"unknown direction '{name}'", field=field)
        return self.directions[name]

    def scenario(self, spec: ScenarioSpec, field: str, seed: int = 0) -> Scenario:
        return Scenario(
            name=spec.name,
            band=self.band(spec, field),
            a=spec.a,
            b=spec.b,
            phi=self.functional(spec.functional, f"{field}.functional"),
            hs=tuple(self.direction(h, f"{field}.directions.{i}") for i, h in enumerate(spec.directions)),
            n_global=spec.n_global,
            budgets=spec.budgets,
            seed=seed,
        )


def build_catalog(config: RunConfig) -> Catalog:
    curves = dict(BUILTIN_CURVES)
    for name, spec in config.curves.items():
        try:
            curve = build_curve(name, spec.kind, spec.params)
            curve.check_consistency(tol=DERIVATIVE_TOL)
            curves[name] = curve
        except BandPathError as exc:
            raise ConfigError(str(exc), field=f"curves.{name}") from None
    functionals = catalog_functionals()
    for name, spec in config.functionals.items():
        try:
            functionals[name] = build_functional(name, spec.profile, spec.kernels, spec.weights)
        except BandPathError as exc:
            raise ConfigError(str(exc), field=f"functionals.{name}") from None
    directions = {
        name: DirectionFunction(spec.alpha, spec.beta, spec.scale)
        for name, spec in config.directions.items()
    }
    return Catalog(curves, functionals, directions)


def _check_references(config: RunConfig) -> Catalog:
    catalog = build_catalog(config)
    names = [s.name for s in config.scenarios]
    for i, spec in enumerate(config.scenarios):
        catalog.scenario(spec, f"scenarios.{i}")
        if spec.name in names[:i]:
            raise ConfigError(f"duplicate scenario name '{spec.name}'", field=f"scenarios.{i}.name")
    for section in ("delta_p", "converge", "samples"):
        for i, job in enumerate(getattr(config, section)):
            band = catalog.band(job, f"{section}.{i}")
            for end in ("start", "end"):
                ref = getattr(job, end, None)
                if isinstance(ref, str) and _is_side(ref) and band.curve(Side(ref)) is None:
                    raise ConfigError(f"no {ref} curve to pin to", field=f"{section}.{i}.{end}")
                if isinstance(ref, str) and not _is_side(ref):
                    raise ConfigError(f"'{ref}' is neither a number nor lower/upper",
                                      field=f"{section}.{i}.{end}")
    for i, job in enumerate(config.converge):
        if job.scenario is not None and job.scenario not in names:
            raise ConfigError(f"unknown scenario '{job.scenario}'", field=f"converge.{i}.scenario")
    return catalog


# ── Loading ─────────────────────────────────────────────────────────────────

def _line_of(node: yaml.Node | None, loc: Sequence[Any]) -> int | None:
    """1-based line of the deepest node reachable along a pydantic error location."""
    line = None
    for key in loc:
        if node is None:
            break
        line = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            node = next((v for k, v in node.value if k.value == str(key)), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            node = None
    if node is not None:
        line = node.start_mark.line + 1
    return line


def _field_line(root: yaml.Node | None, field: str) -> int | None:
    loc = [int(p) if p.isdigit() else p for p in field.split(".")] if field else []
    return _line_of(root, loc)


def load_config_text(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text)
        root = yaml.compose(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ConfigError(f"YAML syntax error: {exc.problem}",
                          line=mark.line + 1 if mark else None) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("the top level of a run file must be a mapping", line=1)
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = [p for p in err["loc"] if not isinstance(p, str) or p not in ("str", "float", "int")]
        raise ConfigError(err["msg"], field=".".join(str(p) for p in loc),
                          line=_line_of(root, loc)) from None
    try:
        _check_references(config)
    except ConfigError as exc:
        raise ConfigError(exc.message, field=exc.field,
                          line=_field_line(root, exc.field)) from None
    return config


def load_config(path: str | Path) -> tuple[RunConfig, str]:
    """Parse and validate a run file; returns the config and the sha256 of its text."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return load_config_text(text), hashlib.sha256(text.encode("utf-8")).hexdigest()
