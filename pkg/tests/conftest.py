"""Shared fixtures: shipped scenarios and cached expensive solves."""

from __future__ import annotations

from pathlib import Path

import pytest

from dsuedhi import scenario
from dsuedhi.equilibrium import SolverConfig, solve_sram

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture(scope="session")
def three_link():
    sc = scenario.load_scenario(SCENARIOS / "three_link" / "scenario.ini")
    return sc.build()


@pytest.fixture(scope="session")
def three_link_scenario():
    return scenario.load_scenario(SCENARIOS / "three_link" / "scenario.ini")


@pytest.fixture(scope="session")
def grid_congested():
    sc = scenario.load_scenario(SCENARIOS / "grid" / "scenario.ini")
    return sc.build()


@pytest.fixture(scope="session")
def grid_uncongested():
    sc = scenario.load_scenario(SCENARIOS / "grid_uncongested" / "scenario.ini")
    return sc.build()


@pytest.fixture(scope="session")
def three_link_solution(three_link):
    net, ps, grid, params = three_link
    return solve_sram(net, ps, grid, params, SolverConfig(), record_iterates=True)


@pytest.fixture(scope="session")
def grid_solution(grid_congested):
    net, ps, grid, params = grid_congested
    return solve_sram(net, ps, grid, params, SolverConfig(), record_iterates=True)
