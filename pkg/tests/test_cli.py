"""End-to-end runs of the bandpath CLI on small run files.

Tests:
  1. Exit codes and configuration errors
  2. sample: path dumps and thread independence
  3. delta-p and converge tables
  4. Output-directory resolution
"""

from __future__ import annotations

from pathlib import Path
from textwrap import dedent

import pytest
from click.testing import CliRunner

from bandpath import __version__
from bandpath.cli import cli
from bandpath.reports import read_csv_rows

SAMPLES = dedent("""\
    seed: 11
    samples:
      - name: house
        kind: house_moving
        lower: zero
        upper: one
        interval: [0.3, 0.7]
        start: lower
        end: upper
        count: 5
        n: 16
      - name: exc
        kind: excursion
        lower: zero
        upper: one
        start: lower
        end: lower
        count: 5
        n: 20
      - name: mea
        kind: meander
        lower: sine_lower
        upper: one
        interval: [0.5, 1.0]
        start: lower
        count: 5
        n: 20
      - name: cond
        kind: conditioned
        lower: zero
        upper: one
        start: 0.5
        end: 0.5
        count: 50
        n: 20
""")


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


def write_run(tmp_path: Path, text: str) -> str:
    path = tmp_path / "run.yaml"
    path.write_text(text, encoding="utf-8")
    return str(path)


def invoke(runner: CliRunner, *args: str):
    return runner.invoke(cli, list(args), catch_exceptions=False)


# ── 1. Exit codes ───────────────────────────────────────────────────────────


def test_version(runner):
    result = invoke(runner, "--version")
    assert result.exit_code == 0
    assert f"bandpath, version {__version__}" in result.output


def test_empty_run_writes_a_summary(runner, tmp_path):
    config = write_run(tmp_path, "seed: 5\n")
    out = tmp_path / "out"
    result = invoke(runner, "verify", "--config", config, "--out", str(out))
    assert result.exit_code == 0
    text = (out / "verify_summary.csv").read_text(encoding="utf-8")
    assert text.startswith(f"# bandpath {__version__} config=")
    assert "seed=5" in text.splitlines()[0]
    assert text.splitlines()[1] == "scenario,lhs,rhs,z,pass"


def test_unknown_curve_is_a_config_error(runner, tmp_path):
    config = write_run(tmp_path, dedent("""\
        seed: 1
        scenarios:
          - name: s
            lower: zero
            upper: nowhere
            a: 0.5
            b: 0.5
            functional: mean_sq
            directions: [d]
        directions:
          d: {alpha: 0.2, beta: 0.8}
    """))
    result = invoke(runner, "verify", "--config", config, "--out", str(tmp_path / "out"))
    assert result.exit_code == 2
    assert "Error:" in result.output
    assert "scenarios.0.upper" in result.output
    assert "line 5" in result.output


def test_missing_seed_is_a_config_error(runner, tmp_path):
    config = write_run(tmp_path, "threads: 1\n")
    result = invoke(runner, "sample", "--config", config, "--out", str(tmp_path / "out"))
    assert result.exit_code == 2
    assert "no seed given" in result.output


def test_seed_flag_replaces_the_missing_seed(runner, tmp_path):
    config = write_run(tmp_path, "threads: 1\n")
    result = invoke(runner, "verify", "--config", config, "--seed", "3", "--out", str(tmp_path / "out"))
    assert result.exit_code == 0


def test_missing_config_file_is_a_usage_error(runner, tmp_path):
    result = invoke(runner, "verify", "--config", str(tmp_path / "absent.yaml"))
    assert result.exit_code == 2


# ── 2. sample ───────────────────────────────────────────────────────────────


def test_sample_dumps_pinned_paths(runner, tmp_path):
    config = write_run(tmp_path, SAMPLES)
    out = tmp_path / "out"
    result = invoke(runner, "sample", "--config", config, "--out", str(out))
    assert result.exit_code == 0

    house = read_csv_rows(out / "sample_house.csv")
    assert len(house) == 5 * 17
    assert {r["value"] for r in house if r["t"] == "0.3"} == {"0.0"}
    assert {r["value"] for r in house if r["t"] == "0.7"} == {"1.0"}

    exc = read_csv_rows(out / "sample_exc.csv")
    values = [float(r["value"]) for r in exc]
    assert min(values) >= 0.0 and max(values) <= 1.0
    assert {r["path_id"] for r in exc} == {str(i) for i in range(5)}

    mea = read_csv_rows(out / "sample_mea.csv")
    starts = [float(r["value"]) for r in mea if r["t"] == "0.5"]
    assert starts == pytest.approx([0.2] * 5)


def test_sample_files_do_not_depend_on_threads(runner, tmp_path):
    config = write_run(tmp_path, SAMPLES)
    for threads in ("1", "3"):
        result = invoke(runner, "sample", "--config", config, "--threads", threads,
                        "--out", str(tmp_path / f"t{threads}"))
        assert result.exit_code == 0
    for name in ("house", "exc", "mea", "cond"):
        one = (tmp_path / "t1" / f"sample_{name}.csv").read_bytes()
        three = (tmp_path / "t3" / f"sample_{name}.csv").read_bytes()
        assert one == three


def test_seed_changes_the_draws(runner, tmp_path):
    config = write_run(tmp_path, SAMPLES)
    invoke(runner, "sample", "--config", config, "--out", str(tmp_path / "a"))
    invoke(runner, "sample", "--config", config, "--seed", "12", "--out", str(tmp_path / "b"))
    first = (tmp_path / "a" / "sample_cond.csv").read_text(encoding="utf-8").splitlines()[1:]
    second = (tmp_path / "b" / "sample_cond.csv").read_text(encoding="utf-8").splitlines()[1:]
    assert first != second


# ── 3. delta-p and converge ─────────────────────────────────────────────────


def test_delta_p_lemma_row(runner, tmp_path):
    config = write_run(tmp_path, dedent("""\
        seed: 2
        delta_p:
          - name: flat
            lower: zero
            start: 0.5
            end: lower
            routes: [lemma]
    """))
    out = tmp_path / "out"
    result = invoke(runner, "delta-p", "--config", config, "--out", str(out))
    assert result.exit_code == 0
    (row,) = read_csv_rows(out / "delta_p.csv")
    assert row["job"] == "flat"
    assert row["route"] == "lemma"
    assert row["end"] == "lower"
    assert float(row["estimate"]) == pytest.approx(0.7071067811865476, rel=1e-12)
    assert row["std_error"] == "0.0"
    assert row["error"] == ""


def test_converge_lhs_of_a_constant_functional(runner, tmp_path):
    config = write_run(tmp_path, dedent("""\
        seed: 4
        directions:
          d: {alpha: 0.2, beta: 0.8}
        scenarios:
          - name: flat
            lower: zero
            upper: one
            a: 0.5
            b: 0.5
            functional: const
            directions: [d]
        converge:
          - name: lhs-const
            estimator: lhs
            scenario: flat
            sizes: [20, 40]
            n_samples: 200
    """))
    out = tmp_path / "out"
    result = invoke(runner, "converge", "--config", config, "--out", str(out))
    assert result.exit_code == 0
    rows = read_csv_rows(out / "converge_lhs-const.csv")
    assert [r["n"] for r in rows] == ["20", "40", "extrapolated"]
    assert all(float(r["estimate"]) == 0.0 for r in rows)


# ── 4. Output directory ─────────────────────────────────────────────────────


def test_output_dir_from_the_environment(runner, tmp_path, monkeypatch):
    target = tmp_path / "from-env"
    monkeypatch.setenv("BANDPATH_OUTPUT_DIR", str(target))
    config = write_run(tmp_path, "seed: 9\n")
    result = invoke(runner, "verify", "--config", config)
    assert result.exit_code == 0
    assert (target / "verify_summary.csv").exists()


def test_out_flag_beats_the_run_file(runner, tmp_path):
    config = write_run(tmp_path, f"seed: 9\noutput_dir: {tmp_path / 'from-file'}\n")
    result = invoke(runner, "verify", "--config", config, "--out", str(tmp_path / "from-flag"))
    assert result.exit_code == 0
    assert (tmp_path / "from-flag" / "verify_summary.csv").exists()
    assert not (tmp_path / "from-file").exists()
