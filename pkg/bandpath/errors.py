"""Exception hierarchy.

Library code raises these; the CLI maps them to exit codes
(configuration problems → 2, numerical failures → 1).
"""

from __future__ import annotations


class BandPathError(Exception):
    """Base class for every error raised by bandpath."""


class DomainError(BandPathError, ValueError):
    """A numeric argument lies outside the operation's domain."""


class StructuralError(BandPathError, ValueError):
    """Shapes, intervals or pinned values do not fit together."""


class SaturationError(BandPathError, RuntimeError):
    """A rejection sampler exhausted its attempt budget."""

    retryable = True

    def __init__(self, label: str, attempts: int, accepted: int, wanted: int) -> None:
        self.label = label
        self.attempts = attempts
        self.accepted = accepted
        self.wanted = wanted
        super().__init__(
            f"{label}: accepted {accepted}/{wanted} paths after {attempts} attempts"
        )


class DegenerateEstimateError(BandPathError, RuntimeError):
    """Every estimate feeding a limit was zero, so the limit cannot be fitted."""

    def __init__(self, factor: str, detail: str = "") -> None:
        self.factor = factor
        msg = f"degenerate estimate for {factor}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class ConfigError(BandPathError, ValueError):
    """The run configuration is malformed or references unknown names."""

    def __init__(self, message: str, field: str = "", line: int | None = None) -> None:
        self.message = message
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
