"""Batch runs behind the CLI subcommands: verify, delta-p, converge, sample.

Each run resolves seed, thread count and output directory (CLI flag, then
run file, then environment, then default), derives one RNG stream per job
from the job's name and writes its report files. The return value is the
process exit status: 0 when everything passed, 1 on a numerical failure.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import Catalog, ConvergeJob, DeltaPJob, RunConfig, SampleJob, build_catalog
from .errors import BandPathError, ConfigError
from .logger import get_logger, log_stage
from .models import MCEstimate, Side, Status, VerificationReport
from .nu import (
    delta_p_first_def,
    delta_p_first_lemma,
    delta_p_free,
    delta_p_free_lemma,
    delta_p_grid,
    delta_p_second,
    delta_p_second_tau,
    fit_extrapolation,
)
from .pathcore import Band, Partition
from .reports import Provenance, write_csv, write_report, write_verify_summary
from .rng import Parallelism, RngStream
from .samplers import (
    ProcessSpec,
    sample_bridge_batch,
    sample_conditioned_batch,
    sample_free_batch,
    sample_pinned_segment_batch,
    survival_probability,
)
from .verifier import lhs_and_bulk, verify

logger = get_logger()

DEFAULT_OUTPUT_DIR = "results"


# ── Run context ─────────────────────────────────────────────────────────────

@dataclass
class RunContext:
    config: RunConfig
    catalog: Catalog
    provenance: Provenance
    parallel: Parallelism
    out: Path
    rng: RngStream


def resolve_seed(cli_seed: int | None, config: RunConfig) -> int:
    seed = cli_seed if cli_seed is not None else config.seed
    if seed is None:
        raise ConfigError("no seed given; set `seed` in the run file or pass --seed", field="seed")
    return seed


def resolve_threads(cli_threads: int | None, config: RunConfig) -> int:
    if cli_threads is not None:
        return cli_threads
    if config.threads is not None:
        return config.threads
    raw = os.getenv("BANDPATH_THREADS", "1")
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigError(f"BANDPATH_THREADS must be an integer, got '{raw}'") from None
    if threads < 1:
        raise ConfigError(f"BANDPATH_THREADS must be >= 1, got {threads}")
    return threads


def resolve_out(cli_out: str | Path | None, config: RunConfig) -> Path:
    return Path(cli_out or config.output_dir or os.getenv("BANDPATH_OUTPUT_DIR", DEFAULT_OUTPUT_DIR))


def _context(config: RunConfig, command: str, digest: str, seed: int | None,
             threads: int | None, out: str | Path | None) -> RunContext:
    seed = resolve_seed(seed, config)
    threads = resolve_threads(threads, config)
    ctx = RunContext(
        config=config,
        catalog=build_catalog(config),
        provenance=Provenance(digest, seed),
        parallel=Parallelism(threads),
        out=resolve_out(out, config),
        rng=RngStream(seed).child(command),
    )
    logger.debug("%s: seed=%d threads=%d out=%s", command, seed, threads, ctx.out)
    return ctx


def _end(ref: str | float | None) -> Side | float | None:
    if isinstance(ref, str):
        return Side(ref)
    return ref


# ── verify ──────────────────────────────────────────────────────────────────

def run_verify(config: RunConfig, *, digest: str, seed: int | None = None,
               threads: int | None = None, out: str | Path | None = None) -> int:
    """Verify every scenario; one JSON report each plus verify_summary.csv."""
    ctx = _context(config, "verify", digest, seed, threads, out)
    reports: list[VerificationReport] = []
    for i, spec in enumerate(config.scenarios):
        scenario = ctx.catalog.scenario(spec, f"scenarios.{i}", ctx.provenance.seed)
        with log_stage(f"verify {spec.name}"):
            report = verify(scenario, ctx.rng.child(spec.name), ctx.parallel)
        write_report(ctx.out, ctx.provenance, report)
        reports.append(report)
    write_verify_summary(ctx.out, ctx.provenance, reports)

    passed = sum(r.passed for r in reports)
    logger.info("=" * 60)
    logger.info("verify: %d/%d scenarios passed → %s", passed, len(reports), ctx.out)
    for r in reports:
        if r.status is not Status.PASS:
            logger.info("  %s %s: %s", r.status.value, r.scenario, r.cause)
    logger.info("=" * 60)
    return 0 if passed == len(reports) else 1


# ── delta-p ─────────────────────────────────────────────────────────────────

def _delta_p_route(job: DeltaPJob, band: Band, route: str, tau: float | None,
                   rng: RngStream, parallel: Parallelism) -> MCEstimate:
    start, end = _end(job.start), _end(job.end)
    pins = isinstance(start, Side) + isinstance(end, Side)
    interval = job.interval
    if route == "grid":
        return delta_p_grid(band, interval, start, end, job.n, job.schedule.n_samples, rng, parallel)
    if route == "definition":
        if pins == 2:
            return delta_p_second(band, interval, start, end, job.schedule, rng, parallel)
        if end is None:
            return delta_p_free(band, interval[0], start, job.schedule, rng, parallel)
        return delta_p_first_def(band, interval, start, end, job.schedule, rng, parallel)
    if pins == 2:
        t1, t2 = interval
        tau = tau if tau is not None else t1 + (t2 - t1) * (job.n // 2) / job.n
        return delta_p_second_tau(band, interval, start, end, tau, job.n_alpha, job.n_inner,
                                  rng, job.n, parallel)
    if end is None:
        return delta_p_free_lemma(band, interval[0], start, job.schedule.n_samples, rng, job.n, parallel)
    return delta_p_first_lemma(band, interval, start, end, job.schedule.n_samples, rng, job.n, parallel)


def run_delta_p(config: RunConfig, *, digest: str, seed: int | None = None,
                threads: int | None = None, out: str | Path | None = None) -> int:
    """Infinitesimal probabilities per job and route, written to delta_p.csv."""
    ctx = _context(config, "delta-p", digest, seed, threads, out)
    rows = []
    failures = 0
    for i, job in enumerate(config.delta_p):
        band = ctx.catalog.band(job, f"delta_p.{i}")
        rng = ctx.rng.child(job.name)
        for route in job.routes:
            taus: Sequence[float | None] = job.taus if route in ("tau", "lemma") and job.taus else [None]
            for tau in taus:
                sizes = job.schedule.sizes if route == "definition" else [job.n]
                with log_stage(f"ΔP {job.name} [{route}]"):
                    try:
                        est = _delta_p_route(job, band, route, tau, rng.child(route, tau), ctx.parallel)
                        cells = (est.mean, est.std_error, "")
                    except BandPathError as exc:
                        failures += 1
                        logger.error("%s [%s]: %s", job.name, route, exc)
                        cells = ("", "", str(exc))
                rows.append((job.name, job.interval, job.start,
                             "free" if job.end is None else job.end,
                             route, sizes, "" if tau is None else tau, *cells))
    write_csv(ctx.out / "delta_p.csv", ctx.provenance,
              ("job", "interval", "start", "end", "route", "sizes", "tau", "estimate", "std_error", "error"),
              rows)
    logger.info("delta-p: %d rows, %d failures → %s", len(rows), failures, ctx.out)
    return 1 if failures else 0


# ── converge ────────────────────────────────────────────────────────────────

def _converge_rows(job: ConvergeJob, ctx: RunContext, index: int) -> list[tuple]:
    rng = ctx.rng.child(job.name)
    sizes: list[int] = []
    estimates: list[MCEstimate] = []
    if job.estimator in ("lhs", "bulk"):
        spec_index = [s.name for s in ctx.config.scenarios].index(job.scenario)
        base = ctx.catalog.scenario(ctx.config.scenarios[spec_index], f"scenarios.{spec_index}")
        budgets = base.budgets.model_copy(update={"n_paths": job.n_samples})
        for n in job.sizes:
            scenario = dataclasses.replace(base, n_global=n, budgets=budgets)
            pair = lhs_and_bulk(scenario, rng, ctx.parallel)
            sizes.append(n)
            estimates.append(pair[0] if job.estimator == "lhs" else pair[1])
    else:
        band = ctx.catalog.band(job, f"converge.{index}")
        t1, t2 = job.interval
        start, end = _end(job.start), _end(job.end)
        for n in job.sizes:
            m = max(1, int(round(n * (t2 - t1))))
            if job.estimator == "delta_p":
                est = delta_p_grid(band, job.interval, start, end, n, job.n_samples,
                                   rng.child("n", n), ctx.parallel)
            else:
                spec = ProcessSpec.on_band(band, t1, t2, start, end)
                est = survival_probability(spec, band, Partition(t1, t2, m), job.n_samples,
                                           rng.child("n", n), ctx.parallel)
            sizes.append(m)
            estimates.append(est)

    rows = [(n, m, e.mean, e.std_error, "") for n, m, e in zip(job.sizes, sizes, estimates)]
    if len(set(sizes)) == len(sizes):
        fit = fit_extrapolation(sizes, estimates)
        rows.append(("extrapolated", "", fit.limit.mean, fit.limit.std_error, fit.slope))
        logger.info("%s: limit %.6g ± %.2g, m^-1/2 slope %.4g",
                    job.name, fit.limit.mean, fit.limit.std_error, fit.slope)
    else:
        logger.warning("%s: grid sizes collapse to %s; no extrapolation row", job.name, sizes)
    return rows


def run_converge(config: RunConfig, *, digest: str, seed: int | None = None,
                 threads: int | None = None, out: str | Path | None = None) -> int:
    """One converge_<name>.csv per job: (n, m, estimate, SE) plus the fitted limit."""
    ctx = _context(config, "converge", digest, seed, threads, out)
    failures = 0
    for i, job in enumerate(config.converge):
        with log_stage(f"converge {job.name}"):
            try:
                rows = _converge_rows(job, ctx, i)
            except ConfigError:
                raise
            except BandPathError as exc:
                failures += 1
                logger.error("%s: %s", job.name, exc)
                continue
        write_csv(ctx.out / f"converge_{job.name}.csv", ctx.provenance,
                  ("n", "m", "estimate", "std_error", "slope"), rows)
    return 1 if failures else 0


# ── sample ──────────────────────────────────────────────────────────────────

def draw_sample_job(job: SampleJob, band: Band, rng: RngStream, parallel: Parallelism) -> np.ndarray:
    """Rows of node values for one sample job."""
    t1, t2 = job.interval
    part = Partition(t1, t2, job.n)
    start, end = _end(job.start), _end(job.end)
    if job.kind == "bridge":
        return sample_bridge_batch(start, end, part, job.count, rng, parallel)
    if job.kind == "free":
        return sample_free_batch(start, part, job.count, rng, parallel)
    spec = ProcessSpec.on_band(band, t1, t2, start, end)
    if job.kind == "conditioned":
        return sample_conditioned_batch(spec, band, part, job.count, rng, parallel=parallel)
    return sample_pinned_segment_batch(spec, band, part, job.count, rng, parallel=parallel)


def run_sample(config: RunConfig, *, digest: str, seed: int | None = None,
               threads: int | None = None, out: str | Path | None = None) -> int:
    """Path dumps, one sample_<name>.csv per job in long (path_id, t, value) form."""
    ctx = _context(config, "sample", digest, seed, threads, out)
    failures = 0
    for i, job in enumerate(config.samples):
        band = ctx.catalog.band(job, f"samples.{i}")
        with log_stage(f"sample {job.name} ({job.kind})"):
            try:
                paths = draw_sample_job(job, band, ctx.rng.child(job.name), ctx.parallel)
            except BandPathError as exc:
                failures += 1
                logger.error("%s: %s", job.name, exc)
                continue
        t = Partition(*job.interval, job.n).nodes
        rows = ((p, float(t[k]), float(v)) for p, row in enumerate(paths) for k, v in enumerate(row))
        write_csv(ctx.out / f"sample_{job.name}.csv", ctx.provenance, ("path_id", "t", "value"), rows)
    return 1 if failures else 0
