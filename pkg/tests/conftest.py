import json
from pathlib import Path

import pytest

from mrbsde.core import Scenario, simulate_paths
from mrbsde.picard import solve_full

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def load_doc(name: str) -> dict:
    return json.loads((SCENARIOS / f"{name}.json").read_text())


def scenario(name: str, **overrides) -> Scenario:
    doc = load_doc(name)
    sc = Scenario.from_dict(doc)
    return sc.with_overrides(overrides) if overrides else sc


@pytest.fixture(scope="session")
def scenarios_dir():
    return SCENARIOS


@pytest.fixture(scope="session")
def oracle_run():
    """Constant-driver oracle at acceptance scale, solved once per session."""
    sc = scenario("constant_driver")
    paths = simulate_paths(sc.grid, sc.n_paths, sc.d, sc.seed)
    return sc, paths, solve_full(sc, paths)


@pytest.fixture(scope="session")
def small_oracle_run():
    sc = scenario("constant_driver", **{"paths.n_paths": 20000, "grid.n_steps": 50})
    paths = simulate_paths(sc.grid, sc.n_paths, sc.d, sc.seed)
    return sc, paths, solve_full(sc, paths)
