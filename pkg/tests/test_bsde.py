import math

import numpy as np
import pytest
from scipy.special import ndtr

from mrbsde.bsde import (RegressionBasis, RegressionError, oracle_linear, oracle_quadratic, regress,
                         solve_inner)
from mrbsde.core import DriverSpec, TerminalSpec, TimeGrid, simulate_paths

BM = TerminalSpec("identity")
CLIPPED_VALUE = math.log(0.5 + math.exp(0.5) * ndtr(-1.0))


@pytest.fixture(scope="module")
def paths():
    return simulate_paths(TimeGrid(1.0, 50), 20_000, 1, seed=3)


def _inner(driver, paths, terminal=BM, window=None):
    xi = terminal.samples(paths)
    return solve_inner(driver, None, None, xi, paths, RegressionBasis(3), window)


def test_zero_driver_recovers_brownian_motion(paths):
    sol = _inner(DriverSpec(), paths)
    err = np.mean(np.abs(sol.y - paths.brownian[:, :, 0]), axis=0)
    assert err.max() <= 0.02
    assert np.all(np.abs(sol.z[:, 1:, 0] - 1.0).mean(axis=0) <= 0.05)
    # the constant basis column conserves the mean up to the ridge term
    assert abs(sol.y[:, 0].mean() - paths.terminal[:, 0].mean()) <= 1e-8


def test_terminal_column_is_exact(paths):
    xi = TerminalSpec("clipped", {"lo": -1, "hi": 1}).samples(paths)
    sol = solve_inner(DriverSpec(a0=0.3), None, None, xi, paths, RegressionBasis(3))
    assert np.array_equal(sol.y[:, -1], xi)


def test_constant_driver_matches_oracle(paths):
    sol = _inner(DriverSpec(a0=-0.2), paths)
    orc = oracle_linear(-0.2, 0.0, BM, paths.grid)
    ref = orc.y(paths.grid.times[None, :], paths.brownian[:, :, 0])
    assert np.max(np.abs(sol.y - ref).mean(axis=0)) <= 0.02
    assert abs(sol.y[:, 0].mean() - (paths.terminal[:, 0].mean() - 0.2)) <= 1e-8


def test_linear_in_y_driver_matches_oracle(paths):
    drv = DriverSpec(a0=0.1, a_y=0.5)
    grid = paths.grid
    # with a state-reading driver the frozen input is U; feeding the oracle reproduces it
    orc = oracle_linear(0.1, 0.5, BM, grid)
    U = orc.y(grid.times[None, :], paths.brownian[:, :, 0])
    laws = [{"mean": float(U[:, k].mean()), "w1_to_dirac0": float(np.abs(U[:, k]).mean())}
            for k in range(U.shape[1])]
    sol = solve_inner(drv, U, laws, paths.terminal[:, 0], paths, RegressionBasis(3))
    assert np.max(np.abs(sol.y - U).mean(axis=0)) <= 0.03


def test_shifting_terminal_by_one_shifts_y(paths):
    drv = DriverSpec(a0=0.2, z_kind="linear", b=(0.3,))
    xi = paths.terminal[:, 0]
    base = solve_inner(drv, None, None, xi, paths, RegressionBasis(3))
    up = solve_inner(drv, None, None, xi + 1.0, paths, RegressionBasis(3))
    assert np.allclose(up.y - base.y, 1.0, atol=1e-9)
    assert np.allclose(up.z, base.z, atol=1e-9)


def test_window_solve_uses_given_terminal(paths):
    grid = paths.grid
    drv = DriverSpec(a0=-0.2)
    full = _inner(drv, paths)
    part = solve_inner(drv, None, None, full.y[:, 20], paths, RegressionBasis(3), (0, 20))
    assert np.allclose(part.y, full.y[:, :21], atol=1e-12)
    with pytest.raises(ValueError):
        solve_inner(drv, None, None, full.y[:, 20], paths, RegressionBasis(3), (20, 20))
    with pytest.raises(ValueError):
        small = simulate_paths(grid, 100, 1, seed=1)
        solve_inner(drv, None, None, small.terminal[:, 0], small, RegressionBasis(9))


def test_quadratic_driver_matches_oracle():
    p = simulate_paths(TimeGrid(1.0, 50), 50_000, 1, seed=1)
    drv = DriverSpec(regime="quadratic_unbounded", z_kind="quadratic", gamma_z=1.0, gamma=1.0)
    sol = _inner(drv, p)
    assert abs(sol.y[:, 0].mean() - 0.5) <= 0.01
    assert sol.clamp_count == 0 and sol.conclusive


def test_clamp_counting():
    drv = DriverSpec(regime="quadratic_bounded", z_kind="quadratic", gamma_z=2.0)
    z = np.array([[1.0], [9.0], [11.0], [-30.0]])
    vals, n = drv.z_part(z)
    assert n == 2
    assert np.allclose(vals, [1.0, 81.0, 100.0, 100.0])


def test_regression_projects_polynomials_exactly():
    rng = np.random.default_rng(0)
    state = rng.normal(size=(500, 1))
    basis = RegressionBasis(3)
    design = basis.design(state, 1.0)
    target = 1 - 2 * state[:, 0] + 0.5 * state[:, 0] ** 3
    assert np.allclose(regress(design, target), target, atol=1e-8)
    assert basis.design(state, 0.0).shape == (500, 1)
    assert RegressionBasis(2).size(2) == 9


def test_regression_rejects_degenerate_design():
    design = np.ones((100, 2))
    with pytest.raises(RegressionError):
        regress(design, np.zeros(100), step=4)


def test_linear_oracle_examples():
    grid = TimeGrid(1.0, 10)
    orc = oracle_linear(0.3, 0.0, BM, grid)
    assert orc.y(0.0, 0.0) == pytest.approx(0.3)
    assert orc.y(0.5, 1.0) == pytest.approx(1.15)
    assert orc.z(0.2, -3.0) == pytest.approx(1.0)
    assert oracle_linear(0.0, 0.5, BM, grid).y(0.0, 1.0) == pytest.approx(math.exp(0.5))
    with pytest.raises(ValueError):
        oracle_linear(0.0, 0.0, TerminalSpec("clipped", {"lo": 0}), grid)


@pytest.mark.parametrize("terminal", [BM, TerminalSpec("exp", {"sigma": 0.7})])
def test_linear_oracle_solves_its_pde(terminal):
    # d_t y + y_bb / 2 + a0 + a_y y = 0 and z = y_b
    grid = TimeGrid(1.0, 10)
    orc = oracle_linear(0.2, -0.4, terminal, grid)
    t, b, e = 0.37, 0.3, 1e-4
    yt = (orc.y(t + e, b) - orc.y(t - e, b)) / (2 * e)
    ybb = (orc.y(t, b + e) - 2 * orc.y(t, b) + orc.y(t, b - e)) / e**2
    yb = (orc.y(t, b + e) - orc.y(t, b - e)) / (2 * e)
    assert abs(yt + 0.5 * ybb + 0.2 - 0.4 * orc.y(t, b)) <= 1e-5
    assert abs(yb - orc.z(t, b)) <= 1e-7


def test_quadratic_oracle_examples():
    grid = TimeGrid(1.0, 10)
    assert oracle_quadratic(1.0, BM, grid).y(0.0, 0.0) == pytest.approx(0.5)
    assert oracle_quadratic(2.0, BM, grid).y(0.0, 0.0) == pytest.approx(1.0)
    assert oracle_quadratic(1.0, BM, grid, concave=True).y(0.0, 0.0) == pytest.approx(-0.5)
    clipped = TerminalSpec("clipped", {"hi": 0.0})
    assert oracle_quadratic(1.0, clipped, grid).y(0.0, 0.0) == pytest.approx(CLIPPED_VALUE, abs=1e-14)
    with pytest.raises(ValueError):
        oracle_quadratic(0.0, BM, grid)
    with pytest.raises(ValueError):
        oracle_quadratic(1.0, TerminalSpec("exp"), grid)
    with pytest.raises(ValueError):
        oracle_quadratic(1.0, BM, grid, nodes=32)


def test_clipped_oracle_against_sampling():
    rng = np.random.default_rng(12)
    x = np.exp(np.minimum(rng.standard_normal(1_000_000), 0.0))
    est = math.log(x.mean())
    se = x.std(ddof=1) / math.sqrt(x.size) / x.mean()
    assert abs(est - CLIPPED_VALUE) <= 3 * se


def test_quadrature_agrees_with_closed_form():
    grid = TimeGrid(1.0, 10)
    t = np.array([0.0, 0.5, 0.9])
    b = np.array([-0.4, 0.0, 0.8])
    smooth = oracle_quadratic(1.5, TerminalSpec("identity", {"shift": 0.2, "scale": 0.5}), grid)
    assert np.allclose(smooth.y_quadrature(t, b), smooth.y(t, b), atol=1e-12)
    kinked = oracle_quadratic(1.0, TerminalSpec("clipped", {"lo": -1, "hi": 1}), grid, concave=True)
    assert np.allclose(kinked.y_quadrature(t, b), kinked.y(t, b), atol=5e-3)
