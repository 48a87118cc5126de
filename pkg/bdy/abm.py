"""Event-driven simulation of the N-agent exchange game with cheaters.

Clock: one global exponential clock of rate N, so every agent initiates
exchanges at unit rate and ABM time lines up with mean-field time.

Randomness comes from a single ``numpy.random.Generator`` (PCG64 via
``default_rng``).  :func:`step` draws, in order: holding time, giver, receiver
offset, and the cheat coin only when a solvent cheater gives.  :func:`run`
draws fixed-size blocks, in order: holding times, givers, receiver offsets,
coins; a block's coin for an event is consulted only for solvent cheaters.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import StrEnum

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from bdy.core import ModelParams, WealthPMF
from bdy.errors import (
    ConfigError,
    ConservationViolatedError,
    EmptyGroupError,
    ZeroMeanError,
)

logger = logging.getLogger(__name__)

__all__ = [
    "Group",
    "PopulationState",
    "SimConfig",
    "SimResult",
    "Snapshot",
    "empirical_gini",
    "empirical_pmf",
    "ensemble_pmf",
    "initial_state",
    "run",
    "run_ensemble",
    "spawn_seeds",
    "step",
]

BLOCK_SIZE = 1 << 16
CHECK_EVERY = 1_000_000


class Group(StrEnum):
    ALL = "all"
    HONEST = "honest"
    CHEATER = "cheater"


@dataclass(frozen=True, eq=False)
class PopulationState:
    """Wealth per agent; agents ``0..honest_count-1`` are honest."""

    wealth: NDArray[np.int64]
    honest_count: int
    time: float = 0.0
    total_money: int = field(default=-1)

    def __post_init__(self) -> None:
        wealth = np.array(self.wealth, dtype=np.int64)
        if wealth.ndim != 1 or wealth.size < 2:
            msg = "population needs at least two agents"
            raise ConfigError(msg)
        if wealth.min() < 0:
            msg = "wealth must be nonnegative"
            raise ConfigError(msg)
        if not 0 <= self.honest_count <= wealth.size:
            msg = f"honest_count {self.honest_count} outside 0..{wealth.size}"
            raise ConfigError(msg)
        wealth.setflags(write=False)
        object.__setattr__(self, "wealth", wealth)
        total = int(wealth.sum())
        if self.total_money == -1:
            object.__setattr__(self, "total_money", total)
        elif self.total_money != total:
            msg = f"cached total {self.total_money} != wealth sum {total}"
            raise ConservationViolatedError(msg)

    @property
    def n_agents(self) -> int:
        return int(self.wealth.size)

    def group_wealth(self, group: Group) -> NDArray[np.int64]:
        if group is Group.HONEST:
            return self.wealth[: self.honest_count]
        if group is Group.CHEATER:
            return self.wealth[self.honest_count :]
        return self.wealth


def initial_state(
    params: ModelParams, wealth: ArrayLike | None = None
) -> PopulationState:
    """Everyone starts with mu dollars unless an explicit vector is given."""
    n_agents = params.n_agents
    if n_agents is None:
        msg = "n_agents is required for agent-based runs"
        raise ConfigError(msg)
    if wealth is None:
        if not float(params.mu).is_integer():
            msg = f"default initial condition needs integer mu, got {params.mu}"
            raise ConfigError(msg)
        wealth = np.full(n_agents, int(params.mu), dtype=np.int64)
    state = PopulationState(np.asarray(wealth), params.honest_count)
    if state.n_agents != n_agents:
        msg = f"initial vector has {state.n_agents} agents, params say {n_agents}"
        raise ConfigError(msg)
    return state


class SimConfig(BaseModel):
    """Seed, horizon and snapshot schedule of one run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = Field(ge=0, lt=2**64)
    t_end: float = Field(ge=0)
    record_times: tuple[float, ...] = ()

    @field_validator("record_times")
    @classmethod
    def _sorted(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        if list(v) != sorted(v):
            msg = "record_times must be sorted"
            raise ValueError(msg)
        return v

    @model_validator(mode="after")
    def _within_horizon(self) -> SimConfig:
        if self.record_times and (
            self.record_times[0] < 0 or self.record_times[-1] > self.t_end
        ):
            msg = f"record_times must lie in [0, {self.t_end}]"
            raise ValueError(msg)
        return self


@dataclass(frozen=True, eq=False)
class Snapshot:
    time: float
    all: WealthPMF
    honest: WealthPMF | None
    cheater: WealthPMF | None
    mean_honest: float | None
    mean_cheater: float | None
    gini: float | None

    def group(self, group: Group) -> WealthPMF | None:
        return {Group.ALL: self.all, Group.HONEST: self.honest}.get(
            group, self.cheater
        )


@dataclass(frozen=True, eq=False)
class SimResult:
    snapshots: list[Snapshot]
    event_count: int
    transfer_count: int
    solvent_events: int
    final: PopulationState


def empirical_pmf(state: PopulationState, group: Group = Group.ALL) -> WealthPMF:
    """Histogram of a group's wealth divided by the group size."""
    wealth = state.group_wealth(Group(group))
    if wealth.size == 0:
        msg = f"group '{group}' has no agents"
        raise EmptyGroupError(msg)
    counts = np.bincount(wealth)
    return WealthPMF(counts / wealth.size)


def empirical_gini(state: PopulationState) -> float:
    """Gini index of the wealth vector via sorted prefix sums."""
    if state.total_money <= 0:
        msg = "Gini index undefined for zero total wealth"
        raise ZeroMeanError(msg)
    x = np.sort(state.wealth).astype(np.float64)
    n = x.size
    ranks = np.arange(1, n + 1, dtype=np.float64)
    return float(2.0 * (ranks @ x) / (n * x.sum()) - (n + 1) / n)


def _snapshot(state: PopulationState, time: float) -> Snapshot:
    groups: dict[Group, WealthPMF | None] = {}
    means: dict[Group, float | None] = {}
    for group in (Group.HONEST, Group.CHEATER):
        wealth = state.group_wealth(group)
        groups[group] = empirical_pmf(state, group) if wealth.size else None
        means[group] = float(wealth.mean()) if wealth.size else None
    return Snapshot(
        time=time,
        all=empirical_pmf(state, Group.ALL),
        honest=groups[Group.HONEST],
        cheater=groups[Group.CHEATER],
        mean_honest=means[Group.HONEST],
        mean_cheater=means[Group.CHEATER],
        gini=empirical_gini(state) if state.total_money > 0 else None,
    )


def step(
    state: PopulationState, rng: np.random.Generator, params: ModelParams
) -> PopulationState:
    """Apply one exchange event and advance the clock."""
    n = state.n_agents
    holding = rng.exponential(1.0 / n)
    giver = int(rng.integers(n))
    offset = int(rng.integers(n - 1))
    receiver = offset + (offset >= giver)
    advanced = replace(state, time=state.time + holding)

    if state.wealth[giver] == 0:
        return advanced
    if giver >= state.honest_count and rng.random() >= 1.0 - params.gamma:
        return advanced

    wealth = state.wealth.copy()
    wealth[giver] -= 1
    wealth[receiver] += 1
    return PopulationState(
        wealth, state.honest_count, state.time + holding, state.total_money
    )


def _check_conservation(wealth: list[int], expected: int, events: int) -> None:
    total = sum(wealth)
    if total != expected:
        msg = f"total money {total} != {expected} after {events} events"
        raise ConservationViolatedError(msg)


def run(params: ModelParams, config: SimConfig, initial: PopulationState) -> SimResult:
    """Simulate until ``config.t_end``; snapshot the state at each record time.

    A snapshot at time tau reflects every event with event time <= tau.

    Raises:
        ConservationViolatedError: total money drifted (implementation bug).
    """
    n = initial.n_agents
    if params.n_agents is not None and params.n_agents != n:
        msg = f"params.n_agents={params.n_agents} but state has {n} agents"
        raise ConfigError(msg)
    expected = initial.total_money
    honest_count = initial.honest_count
    give_prob = 1.0 - params.gamma
    rng = np.random.default_rng(config.seed)

    wealth: list[int] = initial.wealth.tolist()
    records = list(config.record_times)
    snapshots: list[Snapshot] = []
    t = initial.time
    events = transfers = solvent = 0
    next_check = CHECK_EVERY

    def emit_until(limit: float) -> None:
        while records and records[0] < limit:
            tau = records.pop(0)
            current = PopulationState(np.asarray(wealth), honest_count, tau, expected)
            snapshots.append(_snapshot(current, tau))

    finished = False
    while not finished:
        holding = rng.exponential(1.0 / n, BLOCK_SIZE).tolist()
        givers = rng.integers(0, n, BLOCK_SIZE).tolist()
        offsets = rng.integers(0, n - 1, BLOCK_SIZE).tolist()
        coins = rng.random(BLOCK_SIZE).tolist()
        for k in range(BLOCK_SIZE):
            t_next = t + holding[k]
            if t_next > config.t_end:
                finished = True
                break
            if records and records[0] < t_next:
                emit_until(t_next)
            t = t_next
            events += 1
            i = givers[k]
            if wealth[i] == 0:
                continue
            solvent += 1
            if i >= honest_count and coins[k] >= give_prob:
                continue
            j = offsets[k]
            if j >= i:
                j += 1
            wealth[i] -= 1
            wealth[j] += 1
            transfers += 1
            if events >= next_check:
                _check_conservation(wealth, expected, events)
                next_check += CHECK_EVERY

    emit_until(np.inf)
    _check_conservation(wealth, expected, events)
    logger.debug(
        "run finished: %d events, %d transfers, seed=%d", events, transfers, config.seed
    )
    final = PopulationState(np.asarray(wealth), honest_count, config.t_end, expected)
    return SimResult(
        snapshots=snapshots,
        event_count=events,
        transfer_count=transfers,
        solvent_events=solvent,
        final=final,
    )


def spawn_seeds(seed: int, replicas: int) -> list[int]:
    """Independent 64-bit child seeds for replicas."""
    children = np.random.SeedSequence(seed).spawn(replicas)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children]


def _run_replica(args: tuple[ModelParams, SimConfig, PopulationState]) -> SimResult:
    return run(*args)


def run_ensemble(
    params: ModelParams,
    config: SimConfig,
    initial: PopulationState,
    replicas: int,
    workers: int = 1,
) -> list[SimResult]:
    """Independent replicas with seeds spawned from ``config.seed``."""
    jobs = [
        (params, config.model_copy(update={"seed": seed}), initial)
        for seed in spawn_seeds(config.seed, replicas)
    ]
    if workers <= 1:
        return [_run_replica(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_replica, jobs))


def ensemble_pmf(
    results: list[SimResult], index: int, group: Group = Group.ALL
) -> WealthPMF:
    """Average of one group's empirical PMF at snapshot ``index``."""
    pmfs = [r.snapshots[index].group(group) for r in results]
    present = [p for p in pmfs if p is not None]
    if not present:
        msg = f"group '{group}' has no agents"
        raise EmptyGroupError(msg)
    n_max = max(p.n_max for p in present)
    return WealthPMF(np.mean([p.padded(n_max) for p in present], axis=0))
