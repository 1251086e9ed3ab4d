"""Post-solution checks, each returning a named scalar with its threshold."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .bsde import RegressionBasis, regress
from .core import LossSpec, MrbsdeSolution, PathEnsemble, TimeGrid, path_mean, path_std_error
from .reflector import solve_L

STAT_SE = 3.0
ROUNDING = 1e-12


@dataclass(frozen=True)
class Entry:
    value: float
    threshold: float
    passed: bool
    detail: str = ""
    mandatory: bool = True
    direction: str = "le"


@dataclass
class DiagnosticsReport:
    entries: dict[str, Entry] = field(default_factory=dict)

    def add(self, name: str, entry: Entry) -> Entry:
        self.entries[name] = entry
        return entry

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries.values() if e.mandatory)

    def worst_margin(self) -> float:
        """Smallest signed distance to a threshold, normalised by ``1 + |threshold|``."""
        margins = []
        for e in self.entries.values():
            if not e.mandatory or not math.isfinite(e.value):
                continue
            sign = 1.0 if e.direction == "ge" else -1.0
            margins.append(sign * (e.value - e.threshold) / (1.0 + abs(e.threshold)))
        return min(margins) if margins else math.nan

    def as_dict(self) -> dict:
        return {k: asdict(v) for k, v in self.entries.items()}


def _loss_table(solution: MrbsdeSolution, loss: LossSpec, grid: TimeGrid):
    times = grid.times
    vals = np.stack([loss.value(t, solution.Y[:, i]) for i, t in enumerate(times)], axis=1)
    return path_mean(vals), path_std_error(vals)


def check_constraint(solution: MrbsdeSolution, loss: LossSpec, grid: TimeGrid,
                     bisect_tol: float) -> Entry:
    means, se = _loss_table(solution, loss, grid)
    worst = int(np.argmin(means))
    value = float(means[worst])
    threshold = -(loss.kappa * loss.C * bisect_tol + STAT_SE * float(se[worst]))
    return Entry(value, threshold, value >= threshold,
                 f"min_t E[l(t,Y_t)] at t={grid.times[worst]:.6g}", direction="ge")


def flatoff_tolerance(solution: MrbsdeSolution, loss: LossSpec, grid: TimeGrid,
                      bisect_tol: float) -> float:
    _, se = _loss_table(solution, loss, grid)
    return 10.0 * (loss.kappa * loss.C * bisect_tol + float(np.max(se)))


def check_flatoff(solution: MrbsdeSolution, loss: LossSpec, grid: TimeGrid, bisect_tol: float,
                  flatoff_tol: float | None = None) -> Entry:
    means, _ = _loss_table(solution, loss, grid)
    dK = np.diff(solution.K)
    value = abs(float(np.sum(means[:-1] * dK)))
    tol = flatoff_tolerance(solution, loss, grid, bisect_tol) if flatoff_tol is None else flatoff_tol
    threshold = tol * (1.0 + float(solution.K[-1]))
    return Entry(value, threshold, value <= threshold, "|sum E[l(t_i,Y)] dK_i|")


def check_K_shape(solution: MrbsdeSolution, grid: TimeGrid, modulus_cap: float) -> Entry:
    K = solution.K
    inc = np.diff(K)
    max_inc = float(inc.max()) if inc.size else 0.0
    threshold = modulus_cap * grid.step
    ok = K[0] == 0.0 and bool(np.all(inc >= -1e-12)) and max_inc <= threshold
    detail = f"max increment, min increment {float(inc.min()) if inc.size else 0.0:.3g}"
    return Entry(max_inc, threshold, ok, detail)


def check_L_lipschitz(loss: LossSpec, trials: int = 1000, seed: int = 0, n_samples: int = 32,
                      bisect_tol: float = 1e-10, t: float = 0.0) -> Entry:
    """Random-pair sweep of ``|L(eta1) - L(eta2)| <= kappa * mean|eta1 - eta2|``.

    Samples are drawn inside the certified range so that shifted samples stay
    where the loss regularity was checked.
    """
    rng = np.random.default_rng(seed)
    half = 0.25 * loss.y_max
    worst, witness = -math.inf, None
    for _ in range(trials):
        centre = rng.uniform(-half, half)
        eta1 = np.clip(rng.normal(centre, rng.uniform(0.05, 0.5) * half, n_samples), -half, half)
        eta2 = np.clip(eta1 + rng.normal(rng.uniform(-0.3, 0.3), 0.2, n_samples) * half,
                       -half, half)
        gap = float(np.mean(np.abs(eta1 - eta2)))
        if gap == 0.0:
            continue
        l1 = solve_L(loss, t, eta1, bisect_tol)
        l2 = solve_L(loss, t, eta2, bisect_tol)
        ratio = (abs(l1 - l2) - 2 * bisect_tol) / gap
        if ratio > worst:
            worst, witness = ratio, (eta1, eta2)
    ok = worst <= loss.kappa
    detail = "worst |dL| / E|d eta| over random pairs"
    if not ok:
        detail += f"; witness means {witness[0].mean():.4g}, {witness[1].mean():.4g}"
    return Entry(float(worst), loss.kappa, ok, detail)


def check_exp_moment(y0: float, terminal_samples: np.ndarray, gamma: float,
                     alpha_integral: float = 0.0, powers=(1, 2)) -> Entry:
    """Two-sided and one-sided exponential bounds on ``y_0`` at ``t = 0``.

    For each ``p``: ``exp(p g |y0|) <= E exp(p g |xi| + p g A)`` and
    ``exp(p g y0^+) <= E exp(p g xi^+ + p g A)``, each right side inflated by
    three relative standard errors.  Equality (a constant terminal) passes up
    to rounding.
    """
    xi = np.asarray(terminal_samples, dtype=float)
    worst_ratio, failed = -math.inf, []
    for p in powers:
        c = p * gamma
        for label, lhs_arg, rhs_arg in (("abs", abs(y0), np.abs(xi)),
                                        ("pos", max(y0, 0.0), np.maximum(xi, 0.0))):
            rhs_samples = np.exp(c * rhs_arg + c * alpha_integral)
            rhs = float(path_mean(rhs_samples))
            rel_se = float(path_std_error(rhs_samples)) / rhs
            lhs = math.exp(c * lhs_arg)
            bound = rhs * (1 + STAT_SE * rel_se)
            ratio = lhs / bound
            worst_ratio = max(worst_ratio, ratio)
            if ratio > 1.0 + ROUNDING:
                failed.append(f"{label} p={p}: {lhs:.5g} > {bound:.5g}")
    detail = "max lhs/rhs over p in {1,2} and both one- and two-sided bounds"
    if failed:
        detail += "; " + "; ".join(failed)
    return Entry(worst_ratio, 1.0 + ROUNDING, not failed, detail)


def check_bmo_proxy(Z: np.ndarray, paths: PathEnsemble, basis: RegressionBasis | None = None,
                    bmo_cap: float = 1e3, quantile: float = 0.99) -> Entry:
    """Grid-time proxy for the BMO norm of ``Z`` (squared, without the root).

    Stopping times are replaced by grid times and the essential supremum by
    the 99th percentile of the regression estimate, so this is a lower-biased
    stand-in for the true norm.
    """
    basis = basis or RegressionBasis(3)
    grid = paths.grid
    h = grid.step
    sq = np.sum(Z * Z, axis=2) * h  # (n, N)
    remaining = np.cumsum(sq[:, ::-1], axis=1)[:, ::-1]
    best = 0.0
    for i in range(grid.n_steps):
        design = basis.design(paths.brownian[:, i, :], grid.times[i])
        fitted = regress(design, remaining[:, i], step=i)
        best = max(best, float(np.quantile(fitted, quantile)))
    ok = math.isfinite(best) and best <= bmo_cap
    return Entry(best, bmo_cap, ok, "grid-time proxy, lower-biased", mandatory=False)


def sup_abs_Y(solution: MrbsdeSolution) -> Entry:
    value = float(np.max(np.abs(solution.Y)))
    return Entry(value, math.inf, True, "sample sup of |Y|, reported only",
                 mandatory=False)


def diagnose(scenario, paths: PathEnsemble, solution: MrbsdeSolution,
             lipschitz_trials: int = 200) -> DiagnosticsReport:
    """Run every applicable check on a solved scenario."""
    grid, loss, driver = paths.grid, scenario.loss, scenario.driver
    tol = scenario.bisect_tol
    report = DiagnosticsReport()
    report.add("constraint", check_constraint(solution, loss, grid, tol))
    report.add("flatoff", check_flatoff(solution, loss, grid, tol, scenario.tolerances.flatoff_tol))
    report.add("K_shape", check_K_shape(solution, grid, 10 * abs(driver.a0) + 10))
    report.add("L_lipschitz", check_L_lipschitz(loss, lipschitz_trials, scenario.seed))
    if driver.z_kind == "quadratic":
        rate = solution.clamp_count / (paths.n_paths * grid.n_steps)
        report.add("clamp_rate", Entry(rate, 1e-3, rate <= 1e-3, "fraction of clamped z evaluations"))
        if not driver.reads_state and len(solution.windows) == 1:
            y0 = float(path_mean(solution.y_inner[:, 0]))
            alpha = abs(float(driver.alpha_bound or 0.0)) * grid.horizon
            report.add("exp_moment", check_exp_moment(y0, scenario.terminal.samples(paths),
                                                      driver.gamma_z, alpha))
    report.add("bmo_proxy", check_bmo_proxy(solution.Z, paths, RegressionBasis(scenario.degree)))
    report.add("sup_abs_Y", sup_abs_Y(solution))
    return report
