"""Scenario runner: validate, simulate, solve, diagnose, persist.

``run`` writes ``result.json`` and ``series.csv`` into the output directory and
returns the exit code together with the in-memory result.  Exit codes:
0 all mandatory diagnostics pass, 2 validation failure, 3 solver failure,
4 solved but some mandatory diagnostic failed.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .bsde import oracle_linear
from .core import Scenario, ScenarioError, SolverError, path_mean, simulate_paths, validate
from .diagnostics import DiagnosticsReport, diagnose
from .picard import solve_full
from .reflector import build_profile

log = logging.getLogger(__name__)

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_DIAGNOSTICS = 0, 2, 3, 4
SWEEP_AXES = {
    "n_steps": "grid.n_steps",
    "n_paths": "paths.n_paths",
    "degree": "regression.degree",
    "h_override": "picard.h_override",
}
SERIES_COLUMNS = ("t", "K", "mean_Y", "mean_loss", "mean_absZ")


def worker_count() -> int:
    """Worker cap from ``MRBSDE_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get("MRBSDE_THREADS", "0").strip() or "0"
    n = int(raw)
    return n if n > 0 else (os.cpu_count() or 1)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _clean(obj):
    """Make an object JSON-safe: numpy to python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


@dataclass
class RunResult:
    scenario_digest: str
    seed: int
    exit_code: int
    K_series: list = field(default_factory=list)
    EY_series: list = field(default_factory=list)
    Eloss_series: list = field(default_factory=list)
    mean_absZ_series: list = field(default_factory=list)
    times: list = field(default_factory=list)
    picard_residuals: list = field(default_factory=list)
    picard_iters: int = 0
    diagnostics: dict = field(default_factory=dict)
    diagnostics_passed: bool = False
    worst_margin: float = math.nan
    oracle_error: float | None = None
    validation: dict = field(default_factory=dict)
    windows: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    error: str | None = None

    def as_dict(self) -> dict:
        return _clean(self.__dict__)


def scenario_oracle(scenario: Scenario, paths):
    """Closed-form ``(K, Y)`` when the scenario has a constant-in-state linear driver.

    Applies to drivers ``f = a0`` with no state, law or z dependence, a
    ``linear_shift`` loss and an identity or exp terminal.  ``Y`` is evaluated on
    the simulated Brownian paths.  Returns ``None`` otherwise.
    """
    drv, loss, term = scenario.driver, scenario.loss, scenario.terminal
    if drv.reads_state or drv.z_kind != "none" or loss.kind != "linear_shift":
        return None
    if term.kind not in ("identity", "exp"):
        return None
    grid = paths.grid
    t = grid.times
    orc = oracle_linear(drv.a0, 0.0, term, grid)
    if term.kind == "identity":
        mean_y = orc.y(t, np.zeros_like(t))
    else:
        sigma = float(term.params.get("sigma", 1.0))
        mean_y = np.exp(0.5 * sigma**2 * grid.horizon) + drv.a0 * (grid.horizon - t)
    c_t = -loss.value(t, np.zeros_like(t))
    L = np.maximum(c_t - mean_y, 0.0)
    profile = build_profile(L, grid)
    Y = orc.y(t[None, :], paths.brownian[:, :, 0]) + profile.tail_sup[None, :]
    return profile.K, Y


def oracle_error(K, Y, oracle) -> float:
    """Grid-sup K error plus grid-sup of the path RMS error of ``Y``."""
    K_or, Y_or = oracle
    k_err = float(np.max(np.abs(np.asarray(K) - K_or)))
    y_err = float(np.max(np.sqrt(path_mean((np.asarray(Y) - Y_or) ** 2))))
    return k_err + y_err


def execute(scenario: Scenario, workers: int = 1) -> tuple[RunResult, dict]:
    """Run one scenario in memory; the second value carries the raw arrays."""
    timings: dict[str, float] = {}
    result = RunResult(scenario.digest, scenario.seed, EXIT_OK)
    arrays: dict[str, Any] = {}

    t0 = time.perf_counter()
    paths = simulate_paths(scenario.grid, scenario.n_paths, scenario.d, scenario.seed, workers)
    timings["simulate"] = time.perf_counter() - t0
    arrays["paths"] = paths

    t0 = time.perf_counter()
    report = validate(scenario, xi_samples=scenario.terminal.samples(paths))
    timings["validate"] = time.perf_counter() - t0
    result.validation = report.as_dict()
    if not report.ok:
        bad = report.failures()[0]
        result.exit_code = EXIT_VALIDATION
        result.error = f"validation failed, {bad.assumption}: {bad.name} ({bad.detail})"
        result.timings = timings
        return result, arrays

    t0 = time.perf_counter()
    try:
        solution = solve_full(scenario, paths)
    except (SolverError, ScenarioError) as err:
        result.exit_code = EXIT_SOLVER
        result.error = str(err)
        result.timings = timings
        return result, arrays
    timings["solve"] = time.perf_counter() - t0
    arrays["solution"] = solution

    t0 = time.perf_counter()
    diag: DiagnosticsReport = diagnose(scenario, paths, solution)
    timings["diagnostics"] = time.perf_counter() - t0

    grid = scenario.grid
    times = grid.times
    loss_means = np.array([path_mean(scenario.loss.value(t, solution.Y[:, i]))
                           for i, t in enumerate(times)])
    absZ = np.linalg.norm(solution.Z, axis=2)
    result.times = times.tolist()
    result.K_series = solution.K.tolist()
    result.EY_series = path_mean(solution.Y).tolist()
    result.Eloss_series = loss_means.tolist()
    result.mean_absZ_series = path_mean(absZ).tolist() + [math.nan]
    result.picard_residuals = list(solution.picard_residuals)
    result.picard_iters = solution.iterations
    result.windows = list(solution.windows)
    result.diagnostics = diag.as_dict()
    result.diagnostics_passed = diag.passed
    result.worst_margin = diag.worst_margin()
    oracle = scenario_oracle(scenario, paths)
    if oracle is not None:
        result.oracle_error = oracle_error(solution.K, solution.Y, oracle)
    result.exit_code = EXIT_OK if diag.passed else EXIT_DIAGNOSTICS
    result.timings = timings
    return result, arrays


def write_series(path: Path, result: RunResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SERIES_COLUMNS)
        for row in zip(result.times, result.K_series, result.EY_series, result.Eloss_series,
                       result.mean_absZ_series):
            writer.writerow([_fmt(v) for v in row])


def read_series(path: Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {c: np.array([float(r[c]) for r in rows]) for c in SERIES_COLUMNS}


def run(config_path, out_dir, overrides: Mapping[str, Any] | None = None,
        seed: int | None = None, theta_diagnostics: bool = False) -> tuple[int, RunResult]:
    """Execute one scenario file and persist ``result.json`` and ``series.csv``."""
    overrides = dict(overrides or {})
    if seed is not None:
        overrides["paths.seed"] = int(seed)
    if theta_diagnostics:
        overrides["picard.theta_diagnostics"] = True
    scenario = Scenario.load(config_path, overrides)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result, _ = execute(scenario, workers=worker_count())
    doc = result.as_dict()
    doc["timings"] = {k: round(v, 6) for k, v in result.timings.items()}
    (out / "result.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if result.exit_code in (EXIT_OK, EXIT_DIAGNOSTICS):
        write_series(out / "series.csv", result)
    if result.error:
        log.error("%s", result.error)
    return result.exit_code, result


def _sweep_row(args):
    config_path, axis, value, row_dir, overrides = args
    ov = dict(overrides)
    ov[SWEEP_AXES[axis]] = value
    t0 = time.perf_counter()
    try:
        code, res = run(config_path, row_dir, ov)
    except (ValueError, KeyError) as err:
        return {"axis_value": value, "K_T": math.nan, "oracle_error": math.nan,
                "picard_iters": 0, "worst_diagnostic_margin": math.nan,
                "wall_ms": (time.perf_counter() - t0) * 1e3, "exit_code": EXIT_VALIDATION,
                "error": str(err)}
    return {
        "axis_value": value,
        "K_T": res.K_series[-1] if res.K_series else math.nan,
        "oracle_error": math.nan if res.oracle_error is None else res.oracle_error,
        "picard_iters": res.picard_iters,
        "worst_diagnostic_margin": res.worst_margin,
        "wall_ms": (time.perf_counter() - t0) * 1e3,
        "exit_code": code,
        "error": res.error or "",
    }


SUMMARY_COLUMNS = ("axis_value", "K_T", "oracle_error", "picard_iters",
                   "worst_diagnostic_margin", "wall_ms", "exit_code")


def sweep(config_path, axis: str, values, out_dir, overrides: Mapping[str, Any] | None = None,
          workers: int | None = None) -> list[dict]:
    """One run per axis value (shared seed); writes ``summary.csv`` in axis order."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {sorted(SWEEP_AXES)}")
    values = list(values)
    if any(v <= 0 for v in values) or values != sorted(values):
        raise ValueError("sweep values must be positive and sorted")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(str(config_path), axis, v, str(out / f"{axis}={v}"), dict(overrides or {}))
            for v in values]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            rows = list(pool.map(_sweep_row, jobs))
    else:
        rows = [_sweep_row(j) for j in jobs]
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for r in rows:
            writer.writerow([r["axis_value"]] + [_fmt(r[c]) if isinstance(r[c], float) else r[c]
                                                 for c in SUMMARY_COLUMNS[1:]])
    return rows
