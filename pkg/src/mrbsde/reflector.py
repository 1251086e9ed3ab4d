"""Reflection operator and the deterministic compensator K.

``solve_L`` returns the smallest non-negative shift ``x`` such that the empirical
mean of ``l(t, x + eta)`` is non-negative.  Given these values along an inner
(unreflected) solution ``y``, the reflected solution is ``y`` plus the running
supremum of the shifts over the remaining horizon, and K is the drop of that
running supremum from its value at the left edge.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LossSpec, TimeGrid, path_mean
from .measure import EmpiricalLaw

X_MAX_CAP = 1e6
BINDING_TOL = 1e-12


class ReflectionError(RuntimeError):
    pass


def _mean_loss(loss: LossSpec, t: float, x: float, eta: np.ndarray) -> float:
    return float(path_mean(loss.value(t, x + eta)))


def solve_L(loss: LossSpec, t: float, eta, bisect_tol: float = 1e-8,
            x_max_cap: float = X_MAX_CAP) -> float:
    """Smallest ``x >= 0`` with ``mean l(t, x + eta) >= 0``, to within ``bisect_tol``.

    The returned value always sits on the feasible side of the root.  Returns
    exactly ``0.0`` when the unshifted samples already satisfy the constraint.
    """
    samples = eta.samples if isinstance(eta, EmpiricalLaw) else np.asarray(eta, dtype=float).ravel()
    if samples.size == 0:
        raise ValueError("solve_L needs a non-empty sample")
    if _mean_loss(loss, t, 0.0, samples) >= 0.0:
        return 0.0
    lo, hi = 0.0, 1.0
    while _mean_loss(loss, t, hi, samples) < 0.0:
        lo, hi = hi, 2.0 * hi
        if hi > x_max_cap:
            raise ReflectionError(
                f"E[l(t,.+eta)] never non-negative below x_max_cap={x_max_cap:g} at t={t:g}")
    while hi - lo > bisect_tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _mean_loss(loss, t, mid, samples) >= 0.0:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class ReflectionProfile:
    grid: TimeGrid
    L_values: np.ndarray
    tail_sup: np.ndarray
    K: np.ndarray

    @property
    def binding(self) -> np.ndarray:
        """Grid indices where the running supremum is attained at the current time."""
        return self.tail_sup - self.L_values <= BINDING_TOL


def build_profile(L_values, grid: TimeGrid | None = None) -> ReflectionProfile:
    L = np.asarray(L_values, dtype=float)
    if grid is not None and L.size != grid.n_steps + 1:
        raise ValueError(f"expected {grid.n_steps + 1} L values, got {L.size}")
    if np.any(L < 0):
        raise ValueError("reflection values must be non-negative")
    tail = np.maximum.accumulate(L[::-1])[::-1]
    K = tail[0] - tail
    return ReflectionProfile(grid, L, tail, K)


def deflect(y: np.ndarray, profile: ReflectionProfile) -> np.ndarray:
    """``Y[:, i] = y[:, i] + tail_sup[i]``."""
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != profile.tail_sup.size:
        raise ValueError("channel and profile do not share a grid")
    return y + profile.tail_sup[None, :]


def reflect(loss: LossSpec, times: np.ndarray, y: np.ndarray, bisect_tol: float,
            grid: TimeGrid | None = None) -> tuple[np.ndarray, ReflectionProfile]:
    """Solve the reflection at every column of ``y`` and deflect."""
    L = np.array([solve_L(loss, t, y[:, i], bisect_tol) for i, t in enumerate(times)])
    profile = build_profile(L, grid)
    return deflect(y, profile), profile
