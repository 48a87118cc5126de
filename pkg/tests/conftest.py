"""Test configuration and fixtures."""

from __future__ import annotations

import os

import numpy as np
import pytest

from bdy.core import EquilibriumPair, ModelParams, solve_equilibrium

# Full-scale runs take minutes; opt in with BDY_RUN_SLOW=1
RUN_SLOW = os.getenv("BDY_RUN_SLOW") == "1"


def pytest_collection_modifyitems(
    config: pytest.Config, items: list[pytest.Item]
) -> None:
    if RUN_SLOW:
        return
    skip_slow = pytest.mark.skip(reason="full-scale run; set BDY_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def base_params() -> ModelParams:
    """mu=5, n_h=0.5, gamma=0.5 with 2000 agents."""
    return ModelParams(mu=5.0, n_h=0.5, gamma=0.5, n_agents=2000)


@pytest.fixture
def base_eq(base_params: ModelParams) -> EquilibriumPair:
    return solve_equilibrium(base_params)


@pytest.fixture
def fast_params() -> ModelParams:
    """Small economy whose cheater law mixes quickly (ratio about 0.55)."""
    return ModelParams(mu=1.0, n_h=0.5, gamma=0.2, n_agents=1000)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _hermetic_env(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("BDY_SKIP_DOTENV", "1")
    monkeypatch.setenv("BDY_PLAIN", "1")
