"""Run logging for bandpath.

Everything goes through the `bandpath` logger on stderr, never into report
files. Records emitted inside `log_stage` carry the stage name, which the
terminal formatter prints as a bold tag; rejection samplers report their
acceptance rate at DEBUG through `AcceptanceReporter`.
"""

from __future__ import annotations

import logging
import sys
import time
from contextlib import contextmanager
from typing import Iterator

LOGGER_NAME = "bandpath"

_ANSI = {
    "dim": "\033[2m",
    "bold": "\033[1m",
    "blue": "\033[34m",
    "yellow": "\033[33m",
    "red": "\033[31m",
    "reset": "\033[0m",
}
_LEVEL_STYLE = {
    logging.DEBUG: "dim",
    logging.INFO: "blue",
    logging.WARNING: "yellow",
    logging.ERROR: "red",
    logging.CRITICAL: "red",
}


# ── Formatter ───────────────────────────────────────────────────────────────


class StageFormatter(logging.Formatter):
    """`HH:MM:SS.mmm [stage] message`, coloured by level when the stream is a TTY."""

    def __init__(self, colour: bool) -> None:
        super().__init__(datefmt="%H:%M:%S")
        self.colour = colour

    def _paint(self, name: str, text: str) -> str:
        if not self.colour:
            return text
        return f"{_ANSI[name]}{text}{_ANSI['reset']}"

    def format(self, record: logging.LogRecord) -> str:
        clock = f"{self.formatTime(record, self.datefmt)}.{int(record.msecs):03d}"
        parts = [self._paint("dim", clock)]
        stage = getattr(record, "stage", None)
        if stage:
            parts.append(self._paint("bold", f"[{stage}]"))
        if record.levelno >= logging.WARNING:
            parts.append(self._paint(_LEVEL_STYLE[record.levelno], record.levelname))
        parts.append(self._paint(_LEVEL_STYLE.get(record.levelno, "blue"), record.getMessage()))
        line = " ".join(parts)
        if record.exc_info:
            line += "\n" + self.formatException(record.exc_info)
        return line


# ── Package logger ──────────────────────────────────────────────────────────

_logger = logging.getLogger(LOGGER_NAME)


def setup_logging(verbose: bool = False) -> logging.Logger:
    """Point the package logger at the current stderr; DEBUG when verbose."""
    _logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    _logger.propagate = False
    handlers = [h for h in _logger.handlers if isinstance(h, logging.StreamHandler)]
    if not handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(StageFormatter(colour=sys.stderr.isatty()))
        _logger.addHandler(handler)
    else:
        # stderr may have been swapped since the first call (click's test runner does this)
        for handler in handlers:
            handler.stream = sys.stderr
    return _logger


def get_logger() -> logging.Logger:
    if not _logger.handlers:
        setup_logging()
    return _logger


# ── Stages ──────────────────────────────────────────────────────────────────


@contextmanager
def log_stage(stage: str) -> Iterator[logging.Logger]:
    """Time one estimator stage; a failure is logged with its elapsed time and re-raised."""
    logger = get_logger()
    tag = {"stage": stage}
    t0 = time.perf_counter()
    logger.info("▸ start", extra=tag)
    try:
        yield logger
    except Exception as exc:
        logger.error("✗ %s after %.2fs", type(exc).__name__, time.perf_counter() - t0, extra=tag)
        raise
    logger.info("✓ done in %.2fs", time.perf_counter() - t0, extra=tag)


class AcceptanceReporter:
    """Debug-logs a rejection sampler's acceptance rate at 10³, 10⁴, … attempts."""

    def __init__(self, label: str) -> None:
        self.label = label
        self._next = 1_000

    def update(self, attempts: int, accepted: int) -> None:
        if attempts < self._next:
            return
        while self._next <= attempts:
            self._next *= 10
        get_logger().debug(
            "%s: %d/%d accepted (rate %.3g)",
            self.label, accepted, attempts, accepted / attempts,
        )
