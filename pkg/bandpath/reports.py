"""Report files: JSON verification reports and CSV tables.

Every file starts with the provenance header (library version, config hash,
seed). Numbers are written with `repr`, so identical runs give identical bytes.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__
from .models import VerificationReport


@dataclass(frozen=True)
class Provenance:
    config_hash: str
    seed: int

    @property
    def header(self) -> str:
        return f"bandpath {__version__} config={self.config_hash[:16]} seed={self.seed}"

    def as_dict(self) -> dict[str, Any]:
        return {"version": __version__, "config_sha256": self.config_hash, "seed": self.seed}


def _cell(value: Any) -> Any:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (tuple, list)):
        return " ".join(str(v) for v in value)
    return value


def write_csv(path: Path, provenance: Provenance, columns: Sequence[str],
              rows: Iterable[Sequence[Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {provenance.header}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def _json_safe(value: Any) -> Any:
    """Non-finite floats become null; JSON has no token for them."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_json_safe(v) for v in value]
    return value


def write_report(out: Path, provenance: Provenance, report: VerificationReport) -> Path:
    """Full breakdown of one verification run as <scenario>.json."""
    path = out / f"{report.scenario}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"meta": provenance.as_dict(), "report": _json_safe(report.model_dump(mode="json"))}
    text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def write_verify_summary(out: Path, provenance: Provenance,
                         reports: Sequence[VerificationReport]) -> Path:
    rows = [
        (
            r.scenario,
            r.lhs.mean if r.lhs else "",
            r.rhs_total.mean if r.rhs_total else "",
            r.z_score if r.z_score is not None else "",
            r.status.value,
        )
        for r in reports
    ]
    return write_csv(out / "verify_summary.csv", provenance,
                     ("scenario", "lhs", "rhs", "z", "pass"), rows)


def read_csv_rows(path: Path) -> list[dict[str, str]]:
    """Rows of a report CSV as dicts, skipping the provenance header."""
    with path.open(encoding="utf-8", newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))
