"""Run logging.

Tests:
  1. StageFormatter with and without colour
  2. log_stage tags and failure reporting
"""

from __future__ import annotations

import logging
import sys

import pytest

from bandpath.logger import LOGGER_NAME, StageFormatter, get_logger, log_stage


def _record(msg: str, level: int = logging.INFO, **extra) -> logging.LogRecord:
    record = logging.LogRecord(LOGGER_NAME, level, __file__, 1, msg, None, None)
    for key, value in extra.items():
        setattr(record, key, value)
    return record


# ── StageFormatter ──────────────────────────────────────────────────────────


def test_plain_line_has_stage_tag_and_message():
    line = StageFormatter(colour=False).format(_record("sampling done", stage="BD(1)"))
    assert "[BD(1)]" in line
    assert line.endswith("sampling done")
    assert "\033[" not in line


def test_plain_line_without_stage():
    line = StageFormatter(colour=False).format(_record("hello"))
    assert "[" not in line
    assert line.endswith("hello")


def test_warning_carries_level_name():
    line = StageFormatter(colour=False).format(_record("careful", logging.WARNING))
    assert "WARNING careful" in line


def test_coloured_line_wraps_parts_in_ansi():
    line = StageFormatter(colour=True).format(_record("boom", logging.ERROR, stage="verify"))
    assert "\033[1m[verify]\033[0m" in line
    assert "\033[31mERROR\033[0m" in line
    assert "\033[31mboom\033[0m" in line


def test_formatter_keeps_logging_style_attribute():
    fmt = StageFormatter(colour=True)
    assert isinstance(fmt._style, logging.PercentStyle)
    assert fmt.usesTime() is False


def test_exception_text_is_appended():
    try:
        raise ValueError("bad")
    except ValueError:
        record = logging.LogRecord(LOGGER_NAME, logging.ERROR, __file__, 1, "failed", None, sys.exc_info())
    line = StageFormatter(colour=False).format(record)
    assert "failed\nTraceback" in line
    assert "ValueError: bad" in line


# ── log_stage ───────────────────────────────────────────────────────────────


class _Collect(logging.Handler):
    def __init__(self) -> None:
        super().__init__()
        self.records: list[logging.LogRecord] = []

    def emit(self, record: logging.LogRecord) -> None:
        self.records.append(record)


@pytest.fixture()
def collected():
    logger = get_logger()
    handler = _Collect()
    logger.addHandler(handler)
    yield handler.records
    logger.removeHandler(handler)


def test_log_stage_tags_start_and_done(collected):
    with log_stage("lhs+bulk"):
        pass
    stages = [getattr(r, "stage", None) for r in collected]
    assert stages == ["lhs+bulk", "lhs+bulk"]
    assert "start" in collected[0].getMessage()
    assert "done" in collected[1].getMessage()


def test_log_stage_reports_failure_and_reraises(collected):
    with pytest.raises(RuntimeError):
        with log_stage("nu"):
            raise RuntimeError("x")
    assert collected[-1].levelno == logging.ERROR
    assert "RuntimeError" in collected[-1].getMessage()
    text = StageFormatter(colour=False).format(collected[-1])
    assert "[nu]" in text
