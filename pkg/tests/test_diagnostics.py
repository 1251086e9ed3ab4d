import math
from types import SimpleNamespace

import numpy as np
import pytest
from scipy.special import ndtr

from mrbsde.bsde import RegressionBasis
from mrbsde.core import LossSpec, MrbsdeSolution, simulate_paths
from mrbsde.diagnostics import (DiagnosticsReport, Entry, check_bmo_proxy, check_constraint,
                                check_exp_moment, check_flatoff, check_K_shape, check_L_lipschitz,
                                diagnose)
from mrbsde.picard import solve_full

from conftest import scenario


def test_oracle_run_passes_every_check(small_oracle_run):
    sc, paths, sol = small_oracle_run
    rep = diagnose(sc, paths, sol)
    assert rep.passed, rep.as_dict()
    assert rep.worst_margin() >= 0
    assert set(rep.entries) >= {"constraint", "flatoff", "K_shape", "L_lipschitz", "bmo_proxy"}


def test_unreflected_solution_breaks_constraint(small_oracle_run):
    sc, paths, sol = small_oracle_run
    bare = MrbsdeSolution(sol.y_inner, sol.Z, np.zeros_like(sol.K), np.zeros_like(sol.K))
    e = check_constraint(bare, sc.loss, sc.grid, sc.bisect_tol)
    assert not e.passed
    assert e.value == pytest.approx(-0.2, abs=0.02)


def test_lifting_before_binding_breaks_flatoff(small_oracle_run):
    sc, paths, sol = small_oracle_run
    assert check_flatoff(sol, sc.loss, sc.grid, sc.bisect_tol).passed
    Y = sol.Y.copy()
    Y[:, : sc.grid.n_steps // 2] += 1.0
    lifted = MrbsdeSolution(Y, sol.Z, sol.K, sol.shift)
    e = check_flatoff(lifted, sc.loss, sc.grid, sc.bisect_tol)
    assert not e.passed and e.value == pytest.approx(0.1, abs=0.01)


def test_downward_step_breaks_K_shape(small_oracle_run):
    sc, _, sol = small_oracle_run
    assert check_K_shape(sol, sc.grid, 10.0).passed
    K = sol.K.copy()
    K[10] -= 0.05
    bad = SimpleNamespace(K=K)
    assert not check_K_shape(bad, sc.grid, 10.0).passed
    # a jump larger than the modulus cap also fails
    jump = SimpleNamespace(K=np.concatenate([[0.0], np.full(sc.grid.n_steps, 1.0)]))
    assert not check_K_shape(jump, sc.grid, 10.0).passed


def test_lipschitz_sweep_detects_small_kappa():
    good = LossSpec("linear_shift", {"c": 0.0}, kappa=1.0, C=1.0, L_growth=1.0)
    assert check_L_lipschitz(good, trials=300).passed
    bad = LossSpec("linear_shift", {"c": 0.0}, kappa=0.5, C=1.0, L_growth=1.0)
    e = check_L_lipschitz(bad, trials=300)
    assert not e.passed and "witness" in e.detail
    assert e.value == pytest.approx(1.0, abs=1e-6)


def test_exp_moment_examples():
    rng = np.random.default_rng(2)
    xi = rng.standard_normal(200_000)
    assert check_exp_moment(0.5, xi, 1.0).passed
    doubled = check_exp_moment(1.0, xi, 1.0)
    assert not doubled.passed and "pos p=1" in doubled.detail
    # analytic right side of the one-sided p=1 bound, for reference
    assert 0.5 + math.exp(0.5) * ndtr(1.0) < math.e
    const = check_exp_moment(0.7, np.full(100, 0.7), 2.0)
    assert const.passed and const.value == pytest.approx(1.0)


def test_exp_moment_on_solved_quadratic_oracle():
    sc = scenario("quadratic_oracle", **{"paths.n_paths": 20000})
    paths = simulate_paths(sc.grid, sc.n_paths, sc.d, sc.seed)
    sol = solve_full(sc, paths)
    rep = diagnose(sc, paths, sol)
    assert rep.entries["exp_moment"].passed
    assert rep.entries["clamp_rate"].value == 0.0
    assert np.all(sol.K == 0.0)


def test_bmo_proxy_values(small_oracle_run):
    sc, paths, sol = small_oracle_run
    e = check_bmo_proxy(sol.Z, paths, RegressionBasis(3))
    assert e.value == pytest.approx(sc.grid.horizon, abs=0.1)
    assert not e.mandatory
    assert check_bmo_proxy(np.zeros_like(sol.Z), paths).value == 0.0


def test_report_margin_and_direction():
    rep = DiagnosticsReport()
    rep.add("a", Entry(0.5, 1.0, True))
    rep.add("b", Entry(-0.1, -0.3, True, direction="ge"))
    rep.add("c", Entry(5.0, 1.0, False, mandatory=False))
    assert rep.passed
    assert rep.worst_margin() == pytest.approx(0.2 / 1.3)
    rep.add("d", Entry(2.0, 1.0, False))
    assert not rep.passed and rep.worst_margin() < 0
