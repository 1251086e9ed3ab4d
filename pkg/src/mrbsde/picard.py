"""Fixed-point iteration for the mean reflected BSDE and backward window stitching.

``gamma_map`` freezes a candidate ``U`` in the driver, solves the inner BSDE,
then reflects it.  ``solve_window`` iterates it from ``U = 0`` on one window;
``solve_full`` walks windows backward from ``T``, each one taking the path-wise
``Y`` of the next window as its terminal value.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .bsde import InnerSolution, RegressionBasis, solve_inner
from .core import (DriverSpec, LossSpec, MrbsdeSolution, PathEnsemble, Scenario, SolverError,
                   path_mean)
from .measure import EmpiricalLaw, law_stats
from .reflector import build_profile, deflect, solve_L

log = logging.getLogger(__name__)

SAFETY = 0.5
SUBSAMPLE = 256
NOISE_FLOOR = 4.0


@dataclass(frozen=True)
class ContractionWindow:
    regime: str
    h: float
    constants: dict
    theoretical_factor: float
    mu_star: float | None = None


def lipschitz_factor(mu, p: float, lam: float, kappa: float):
    """Contraction bound of the solution map for a Lipschitz driver, as a function of ``mu``."""
    mu = np.asarray(mu, dtype=float)
    with np.errstate(over="ignore"):
        scale = 4 * (1 + kappa) * lam * np.exp(lam**2 / 2)
    return scale * (p / (p - mu)) ** (1 / mu) * (mu - 1)


def contraction_window(driver: DriverSpec, loss: LossSpec, p: float = 2.0,
                       horizon: float = np.inf, n_grid: int = 10_000) -> ContractionWindow:
    kappa = loss.kappa
    if driver.regime == "lipschitz":
        lam = driver.lam
        if not p > 1 or not lam > 0:
            raise ValueError("lipschitz window needs p > 1 and lambda > 0")
        mu = 1 + (p - 1) * np.arange(1, n_grid + 1) / (n_grid + 1)
        vals = lipschitz_factor(mu, p, lam, kappa)
        ok = np.nonzero(vals <= SAFETY)[0]
        if ok.size:
            k = ok[-1]
        elif vals.min() < 1:
            k = int(np.argmin(vals))
        else:
            raise ValueError("no contractive window for declared constants")
        mu_star = float(mu[k])
        h = min(mu_star - 1, horizon)
        return ContractionWindow("lipschitz", h, {"p": p, "lambda": lam, "kappa": kappa},
                                 float(vals[k]), mu_star)
    beta = driver.beta
    if not beta > 0:
        # no state dependence: any window contracts (the map is constant)
        return ContractionWindow(driver.regime, float(horizon), {"beta": beta, "kappa": kappa}, 0.0)
    if driver.regime == "quadratic_bounded":
        coef = 2 * (1 + kappa) * beta
    else:
        coef = (32 + 64 * kappa) * beta
    h = min(SAFETY / coef, horizon)
    return ContractionWindow(driver.regime, h, {"beta": beta, "kappa": kappa}, coef * h)


def window_bounds(n_steps: int, step: float, h: float) -> list[tuple[int, int]]:
    """Index windows ``[(a, b), ...]`` covering ``[0, n_steps]``, last window first."""
    w = max(1, int(math.floor(h / step + 1e-9)))
    out = []
    b = n_steps
    while b > 0:
        a = max(0, b - w)
        out.append((a, b))
        b = a
    return out


@dataclass(frozen=True)
class WindowResult:
    Y: np.ndarray
    Z: np.ndarray
    K: np.ndarray
    tail_sup: np.ndarray
    inner: InnerSolution
    iterations: int = 0
    residuals: tuple = ()
    theta_stats: tuple = ()


def _laws(U: np.ndarray) -> list[dict]:
    return [law_stats(EmpiricalLaw(U[:, k])) for k in range(U.shape[1])]


def gamma_map(U: np.ndarray | None, scenario: Scenario, paths: PathEnsemble,
              window: tuple[int, int], terminal_samples: np.ndarray,
              basis: RegressionBasis | None = None) -> WindowResult:
    """One application of the solution map on grid window ``(a, b)``."""
    a, b = window
    basis = basis or RegressionBasis(scenario.degree)
    driver = scenario.driver
    if driver.reads_state:
        if U is None:
            U = np.zeros((paths.n_paths, b - a + 1))
        laws = _laws(U)
    else:
        U, laws = None, None
    inner = solve_inner(driver, U, laws, terminal_samples, paths, basis, window)
    times = paths.grid.times[a:b + 1]
    L = np.array([solve_L(scenario.loss, t, inner.y[:, k], scenario.bisect_tol)
                  for k, t in enumerate(times)])
    profile = build_profile(L)
    return WindowResult(deflect(inner.y, profile), inner.z, profile.K, profile.tail_sup, inner)


def residual(U_new: np.ndarray, U_old: np.ndarray) -> float:
    """Mean-sup distance plus the path-wise sup over a fixed 256-path subsample."""
    diff = np.abs(U_new - U_old)
    mean_sup = float(np.max(path_mean(diff)))
    n = diff.shape[0]
    idx = np.unique(np.linspace(0, n - 1, min(SUBSAMPLE, n)).astype(int))
    return mean_sup + float(np.max(diff[idx]))


def theta_residual(Y_m: np.ndarray, Y_mq: np.ndarray, theta: float, gamma: float = 1.0) -> dict:
    """Scaled differences ``(theta Y_mq - Y_m)/(1-theta)`` and ``(theta Y_m - Y_mq)/(1-theta)``.

    ``sup_stats`` holds a Monte Carlo estimate of
    ``E exp(gamma sup_t (|delta| + |delta_tilde|))`` (and its log, which stays
    finite when the estimate itself overflows) plus the grid-sup of the mean
    absolute differences.
    """
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    delta = (theta * Y_mq - Y_m) / (1 - theta)
    delta_tilde = (theta * Y_m - Y_mq) / (1 - theta)
    sup_path = np.max(np.abs(delta) + np.abs(delta_tilde), axis=1)
    expo = gamma * sup_path
    top = float(np.max(expo))
    log_mean = top + math.log(float(path_mean(np.exp(expo - top))))
    stats = {
        "log_exp_moment": log_mean,
        "exp_moment": math.exp(log_mean) if log_mean < 700 else math.inf,
        "sup_mean_abs_delta": float(np.max(path_mean(np.abs(delta)))),
        "sup_mean_abs_delta_tilde": float(np.max(path_mean(np.abs(delta_tilde)))),
    }
    return {"delta": delta, "delta_tilde": delta_tilde, "sup_stats": stats}


def solve_window(scenario: Scenario, paths: PathEnsemble, window: tuple[int, int],
                 terminal_samples: np.ndarray, max_iter: int | None = None, tol: float | None = None,
                 h_limit: float | None = None, basis: RegressionBasis | None = None) -> WindowResult:
    """Iterate ``U <- gamma_map(U)`` from ``U = 0`` until the residual drops below ``tol``.

    ``residuals[m]`` is the distance between iterates ``m + 1`` and ``m``, so a
    map that ignores ``U`` converges with ``iterations == 1``.  The stopping
    threshold never drops below four bisection tolerances.
    """
    max_iter = scenario.picard.max_iter if max_iter is None else max_iter
    tol = scenario.picard.tol if tol is None else tol
    # L is resolved only to the bisection tolerance, so iterates can flip by that much
    tol = max(tol, NOISE_FLOOR * scenario.bisect_tol)
    a, b = window
    if h_limit is not None and (b - a) * paths.grid.step > h_limit * (1 + 1e-9):
        warnings.warn(f"window {window} is longer than the contraction window {h_limit:g}",
                      stacklevel=2)
    U = np.zeros((paths.n_paths, b - a + 1))
    res = gamma_map(U, scenario, paths, window, terminal_samples, basis)
    residuals = [residual(res.Y, U)]
    if not scenario.driver.reads_state:
        # the map ignores its argument, so the next iterate is bit-identical
        return replace(res, iterations=1, residuals=(residuals[0], 0.0))
    theta_on = scenario.picard.theta_diagnostics
    theta_stats = []
    rising = 0
    for m in range(1, max_iter + 1):
        nxt = gamma_map(res.Y, scenario, paths, window, terminal_samples, basis)
        r = residual(nxt.Y, res.Y)
        residuals.append(r)
        if theta_on:
            theta_stats.append(theta_residual(res.Y, nxt.Y, scenario.picard.theta,
                                              scenario.driver.gamma or 1.0)["sup_stats"])
        res = nxt
        log.debug("window %s iteration %d residual %.3e", window, m, r)
        if r <= tol:
            return replace(res, iterations=m, residuals=tuple(residuals), theta_stats=tuple(theta_stats))
        rising = rising + 1 if r >= residuals[-2] else 0
        if rising >= 3:
            raise SolverError("no empirical contraction", log=list(residuals))
    log.warning("window %s stopped at max_iter=%d with residual %.3e", window, max_iter, residuals[-1])
    return replace(res, iterations=max_iter, residuals=tuple(residuals), theta_stats=tuple(theta_stats))


def picard_window_length(scenario: Scenario) -> float:
    T = scenario.grid.horizon
    if scenario.picard.h_override is not None:
        return min(float(scenario.picard.h_override), T)
    if not scenario.driver.reads_state:
        # the map ignores its argument, so one window covers the horizon
        return T
    return contraction_window(scenario.driver, scenario.loss, scenario.terminal.p, T).h


def solve_full(scenario: Scenario, paths: PathEnsemble, h: float | None = None,
               basis: RegressionBasis | None = None) -> MrbsdeSolution:
    """Solve on ``[0, T]`` by backward stitching of contraction windows."""
    grid = paths.grid
    h = picard_window_length(scenario) if h is None else min(h, grid.horizon)
    h_limit = None
    if scenario.driver.reads_state:
        try:
            h_limit = contraction_window(scenario.driver, scenario.loss, scenario.terminal.p).h
        except ValueError:
            pass
    n, N, d = paths.n_paths, grid.n_steps, paths.d
    Y = np.empty((n, N + 1))
    Z = np.empty((n, N, d))
    shift = np.empty(N + 1)
    segments = []
    terminal = scenario.terminal.samples(paths)
    residuals, windows = [], []
    iterations = clamps = 0
    for w_idx, (a, b) in enumerate(window_bounds(N, grid.step, h)):
        try:
            res = solve_window(scenario, paths, (a, b), terminal, h_limit=h_limit, basis=basis)
        except SolverError as err:
            raise SolverError(str(err), window=w_idx, log=err.log) from err
        except Exception as err:
            raise SolverError(f"{type(err).__name__}: {err}", window=w_idx) from err
        Y[:, a:b + 1] = res.Y
        Z[:, a:b, :] = res.Z
        shift[a:b + 1] = res.tail_sup
        segments.append((a, b, res.K))
        terminal = res.Y[:, 0].copy()
        iterations = max(iterations, res.iterations)
        clamps += res.inner.clamp_count
        residuals.append(list(res.residuals))
        windows.append({"window": [a, b], "iterations": res.iterations,
                        "residuals": list(res.residuals),
                        "theta_stats": list(res.theta_stats),
                        "clamp_rate": res.inner.clamp_rate})
    K = np.zeros(N + 1)
    for a, b, seg in reversed(segments):
        K[a:b + 1] = K[a] + seg
    flat = tuple(r for rs in residuals for r in rs)
    return MrbsdeSolution(Y, Z, K, shift, iterations, flat, {}, clamps, tuple(windows))
