"""Backward regression solver for the unreflected BSDE and its closed-form oracles.

One backward step on ``[t_i, t_{i+1}]``::

    yhat_i = E[y_{i+1} | B_{t_i}]
    z_i    = E[(y_{i+1} - yhat_i) dB_i | B_{t_i}] / h
    y_i    = yhat_i + h * f(t_i, U_i, law(U_i), z_i)

Conditional expectations are least-squares projections on tensor monomials of
the standardised Brownian state ``B_{t_i} / sqrt(t_i)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, roots_hermite

from .core import DriverSpec, PathEnsemble, SolverError, TerminalSpec, TimeGrid, path_mean, path_sum

MAX_CONDITION = 1e12
RIDGE = 1e-10


@dataclass(frozen=True)
class RegressionBasis:
    degree: int = 3
    kind: str = "polynomial_in_B"

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("degree must be non-negative")
        if self.kind != "polynomial_in_B":
            raise ValueError(f"unknown basis kind {self.kind!r}")

    def size(self, d: int) -> int:
        return (self.degree + 1) ** d

    def exponents(self, d: int) -> list[tuple[int, ...]]:
        return list(itertools.product(range(self.degree + 1), repeat=d))

    def design(self, state: np.ndarray, t: float) -> np.ndarray:
        """Design matrix for Brownian states ``state`` of shape ``(n, d)`` at time ``t``."""
        n, d = state.shape
        if t <= 0.0:
            return np.ones((n, 1))
        x = state / np.sqrt(t)
        powers = np.ones((d, self.degree + 1, n))
        for k in range(1, self.degree + 1):
            powers[:, k, :] = powers[:, k - 1, :] * x.T
        cols = []
        for exps in self.exponents(d):
            col = powers[0, exps[0]].copy()
            for c in range(1, d):
                col *= powers[c, exps[c]]
            cols.append(col)
        return np.stack(cols, axis=1)


class RegressionError(SolverError):
    pass


def regress(design: np.ndarray, targets: np.ndarray, step: int | None = None) -> np.ndarray:
    """Least-squares fitted values of ``targets`` (``(n,)`` or ``(n, k)``) on ``design``.

    Normal equations with a trace-scaled ridge; every path reduction is a
    fixed-order :func:`path_sum` so the fit is reproducible across thread counts.
    """
    vec = targets.ndim == 1
    Y = targets[:, None] if vec else targets
    m = design.shape[1]
    gram = np.empty((m, m))
    for j in range(m):
        gram[j] = path_sum(design * design[:, j:j + 1])
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise RegressionError(f"rank-deficient regression at step {step} (condition {cond:.3g})")
    rhs = path_sum(design[:, :, None] * Y[:, None, :])  # (m, k)
    ridge = RIDGE * np.trace(gram) / m
    coef = np.linalg.solve(gram + ridge * np.eye(m), rhs)
    fitted = design[:, 0:1] * coef[0]
    for j in range(1, m):
        fitted = fitted + design[:, j:j + 1] * coef[j]
    return fitted[:, 0] if vec else fitted


@dataclass(frozen=True)
class InnerSolution:
    """``y`` is ``(n_paths, n_window + 1)``, ``z`` is ``(n_paths, n_window, d)``."""

    y: np.ndarray
    z: np.ndarray
    driver_eval_log: np.ndarray
    clamp_count: int = 0
    n_driver_evals: int = 0

    @property
    def clamp_rate(self) -> float:
        return self.clamp_count / self.n_driver_evals if self.n_driver_evals else 0.0

    @property
    def conclusive(self) -> bool:
        return self.clamp_rate <= 1e-3


def solve_inner(driver: DriverSpec, U: np.ndarray | None, U_laws, terminal: np.ndarray,
                paths: PathEnsemble, basis: RegressionBasis, window: tuple[int, int] | None = None
                ) -> InnerSolution:
    """Solve ``y_t = xi + int f(s, U_s, law(U_s), z_s) ds - int z dB`` on a window.

    ``window = (a, b)`` are grid indices; ``U`` (or ``None`` when the driver
    ignores it) and ``U_laws`` are indexed relative to ``a``.  ``terminal`` holds
    the path-wise values at index ``b``.
    """
    grid = paths.grid
    a, b = window if window is not None else (0, grid.n_steps)
    if not 0 <= a < b <= grid.n_steps:
        raise ValueError(f"bad window {window}")
    n, d = paths.n_paths, paths.d
    if basis.size(d) >= n / 10:
        raise ValueError(f"basis of size {basis.size(d)} needs more than {10 * basis.size(d)} paths")
    h = grid.step
    times = grid.times
    width = b - a
    y = np.empty((n, width + 1))
    z = np.empty((n, width, d))
    y[:, width] = terminal
    log = np.empty(width)
    clamps = 0
    for i in range(b - 1, a - 1, -1):
        k = i - a
        design = basis.design(paths.brownian[:, i, :], times[i])
        nxt = y[:, k + 1]
        yhat = regress(design, nxt, step=i)
        dB = paths.increments[:, i, :]
        z[:, k, :] = regress(design, (nxt - yhat)[:, None] * dB, step=i) / h
        if U is None:
            u_col, mean, w1d = np.zeros(n), 0.0, 0.0
        else:
            u_col = U[:, k]
            mean, w1d = U_laws[k]["mean"], U_laws[k]["w1_to_dirac0"]
        f, c = driver.evaluate(times[i], u_col, mean, w1d, z[:, k, :])
        clamps += c
        log[k] = path_mean(np.abs(f))
        y[:, k] = yhat + h * f
    return InnerSolution(y, z, log, clamps, n * width)


# ---------------------------------------------------------------------------
# closed-form oracles


def _affine_terminal(terminal: TerminalSpec) -> tuple[float, float]:
    return float(terminal.params.get("shift", 0.0)), float(terminal.params.get("scale", 1.0))


@dataclass(frozen=True)
class LinearOracle:
    """Exact ``(y, z)`` for ``f = a0 + a_y y`` and a catalogue terminal."""

    a0: float
    ay: float
    terminal: TerminalSpec
    grid: TimeGrid

    def _growth(self, t):
        tau = self.grid.horizon - np.asarray(t, dtype=float)
        if self.ay == 0.0:
            return np.ones_like(tau), tau
        return np.exp(self.ay * tau), np.expm1(self.ay * tau) / self.ay

    def _cond(self, t, b):
        tau = self.grid.horizon - np.asarray(t, dtype=float)
        if self.terminal.kind == "identity":
            shift, scale = _affine_terminal(self.terminal)
            return shift + scale * b, scale * np.ones_like(b)
        sigma = float(self.terminal.params.get("sigma", 1.0))
        val = np.exp(sigma * b + 0.5 * sigma**2 * tau)
        return val, sigma * val

    def y(self, t, b):
        b = np.asarray(b, dtype=float)
        e, integral = self._growth(t)
        cond, _ = self._cond(t, b)
        return e * cond + self.a0 * integral

    def z(self, t, b):
        b = np.asarray(b, dtype=float)
        e, _ = self._growth(t)
        return e * self._cond(t, b)[1]


def oracle_linear(a0: float, ay: float, terminal: TerminalSpec, grid: TimeGrid) -> LinearOracle:
    if terminal.kind not in ("identity", "exp"):
        raise ValueError(f"no linear oracle for terminal kind {terminal.kind!r}")
    return LinearOracle(float(a0), float(ay), terminal, grid)


def _log_mgf_clipped(g: float, m, s, shift: float, scale: float, lo, hi):
    """``log E exp(g * clip(shift + scale X, lo, hi))`` for ``X ~ N(m, s^2)``."""
    mu = shift + scale * m
    sd = abs(scale) * s
    lo = -np.inf if lo is None else float(lo)
    hi = np.inf if hi is None else float(hi)
    sd_safe = np.where(sd > 0, sd, 1.0)
    za, zb = (lo - mu) / sd_safe, (hi - mu) / sd_safe
    # contribution of the unclipped middle part under the exponentially tilted law
    mid = np.exp(g * mu + 0.5 * (g * sd) ** 2) * (ndtr(zb - g * sd) - ndtr(za - g * sd))
    total = mid
    if np.isfinite(lo):
        total = total + np.exp(g * lo) * ndtr(za)
    if np.isfinite(hi):
        total = total + np.exp(g * hi) * ndtr(-zb)
    degenerate = np.exp(g * np.clip(mu, lo, hi))
    return np.log(np.where(sd > 0, total, degenerate))


@dataclass(frozen=True)
class QuadraticOracle:
    """``y_t = (1/g) log E_t exp(g xi)`` with ``g = gamma`` (convex) or ``-gamma`` (concave)."""

    gamma: float
    terminal: TerminalSpec
    grid: TimeGrid
    concave: bool = False
    nodes: int = 128
    _gh: tuple = field(default=(), repr=False, compare=False)

    @property
    def _g(self) -> float:
        return -self.gamma if self.concave else self.gamma

    def y(self, t, b):
        b = np.asarray(b, dtype=float)
        tau = self.grid.horizon - np.asarray(t, dtype=float)
        g = self._g
        kind = self.terminal.kind
        if kind in ("identity", "clipped"):
            shift, scale = _affine_terminal(self.terminal)
            if kind == "identity":
                return shift + scale * b + 0.5 * g * scale**2 * tau
            lo, hi = self.terminal.params.get("lo"), self.terminal.params.get("hi")
            return _log_mgf_clipped(g, b, np.sqrt(tau), shift, scale, lo, hi) / g
        return self.y_quadrature(t, b)

    def y_quadrature(self, t, b):
        """Gauss-Hermite evaluation, valid for any catalogue terminal with finite moments."""
        b = np.asarray(b, dtype=float)
        tau = self.grid.horizon - np.asarray(t, dtype=float)
        x, w = roots_hermite(self.nodes)
        pts = b[..., None] + np.sqrt(2.0 * tau)[..., None] * x
        g = self._g
        vals = g * self.terminal.apply(pts)
        top = vals.max(axis=-1, keepdims=True)
        acc = np.sum(w * np.exp(vals - top), axis=-1) / np.sqrt(np.pi)
        return (np.log(acc) + top[..., 0]) / g


def oracle_quadratic(gamma: float, terminal: TerminalSpec, grid: TimeGrid, concave: bool = False,
                     nodes: int = 128) -> QuadraticOracle:
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if terminal.kind == "exp":
        raise ValueError("exp terminal has no exponential moment; no quadratic oracle")
    if nodes < 64:
        raise ValueError("use at least 64 Gauss-Hermite nodes")
    return QuadraticOracle(float(gamma), terminal, grid, concave, nodes)
