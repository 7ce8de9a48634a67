"""Report files.

Tests:
  1. JSON verification reports
  2. CSV tables and the provenance header
"""

from __future__ import annotations

import json
import math

from bandpath.models import MCEstimate, Status, VerificationReport
from bandpath.reports import Provenance, read_csv_rows, write_csv, write_report, write_verify_summary

PROVENANCE = Provenance("ab" * 32, 7)


def _report(z: float) -> VerificationReport:
    one = MCEstimate.exact(1.0)
    two = MCEstimate.exact(2.0)
    return VerificationReport(scenario="exact", status=Status.FAIL, lhs=one, bulk=two,
                              rhs_total=two, z_score=z, cause="z=inf > 3")


# ── 1. JSON ─────────────────────────────────────────────────────────────────


def test_infinite_z_is_written_as_null(tmp_path):
    path = write_report(tmp_path, PROVENANCE, _report(math.inf))
    text = path.read_text(encoding="utf-8")
    assert "Infinity" not in text
    payload = json.loads(text)
    assert payload["report"]["z_score"] is None
    assert payload["report"]["lhs"]["mean"] == 1.0
    assert payload["meta"]["seed"] == 7


def test_finite_z_is_kept(tmp_path):
    payload = json.loads(write_report(tmp_path, PROVENANCE, _report(2.5)).read_text(encoding="utf-8"))
    assert payload["report"]["z_score"] == 2.5
    assert payload["report"]["status"] == "FAIL"


# ── 2. CSV ──────────────────────────────────────────────────────────────────


def test_summary_rows_follow_the_header(tmp_path):
    path = write_verify_summary(tmp_path, PROVENANCE, [_report(2.5)])
    assert path.read_text(encoding="utf-8").startswith(f"# {PROVENANCE.header}\n")
    rows = read_csv_rows(path)
    assert rows == [{"scenario": "exact", "lhs": "1.0", "rhs": "2.0", "z": "2.5", "pass": "FAIL"}]


def test_tuples_are_space_joined(tmp_path):
    path = write_csv(tmp_path / "t.csv", PROVENANCE, ("sizes", "value"), [([50, 100], 0.25)])
    assert read_csv_rows(path) == [{"sizes": "50 100", "value": "0.25"}]
