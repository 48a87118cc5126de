"""Tests for the mean-field generators and the RK4 integrator."""

from __future__ import annotations

import numpy as np
import pytest

from bdy import meanfield
from bdy.analysis import Metric, distance
from bdy.core import (
    EquilibriumPair,
    ModelParams,
    WealthPMF,
    dirac_pmf,
    geometric_pmf,
    solve_equilibrium,
)
from bdy.errors import ConfigError, LengthMismatchError, NonFiniteStateError


def _dirac_state(params: ModelParams, n_max: int) -> meanfield.MeanFieldState:
    start = dirac_pmf(round(params.mu), n_max)
    return meanfield.MeanFieldState(start, start, params)


def test_generators_are_zero_sum(rng: np.random.Generator) -> None:
    for _ in range(200):
        p = rng.random(51)
        r = float(rng.uniform())
        assert abs(meanfield.apply_lh(p, r).sum()) < 1e-14
        assert abs(meanfield.apply_lc(p, r, 0.4).sum()) < 1e-14


def test_honest_and_cheater_generators_agree_without_cheating(
    rng: np.random.Generator,
) -> None:
    for _ in range(50):
        p = rng.random(41)
        r = float(rng.uniform())
        np.testing.assert_array_equal(
            meanfield.apply_lc(p, r, 0.0), meanfield.apply_lh(p, r)
        )


def test_weighted_first_moment_conserved_in_the_interior(
    rng: np.random.Generator,
) -> None:
    """With r the receiving rate of the state, the population mean does not move."""
    params = ModelParams(mu=5.0, n_h=0.3, gamma=0.6)
    n = np.arange(51)
    for _ in range(100):
        laws = []
        for _ in range(2):
            probs = np.zeros(51)
            probs[:31] = rng.dirichlet(np.ones(31))
            laws.append(WealthPMF(probs))
        state = meanfield.MeanFieldState(laws[0], laws[1], params)
        r = meanfield.rate_r(state)
        moment = params.n_h * (n @ meanfield.apply_lh(state.ph, r)) + params.n_c * (
            n @ meanfield.apply_lc(state.pc, r, params.gamma)
        )
        assert abs(moment) < 1e-12


def test_equilibrium_pair_is_annihilated(base_eq: EquilibriumPair) -> None:
    gamma = base_eq.params.gamma
    lh = meanfield.apply_lh(base_eq.p_bar_h, base_eq.r_bar)
    lc = meanfield.apply_lc(base_eq.p_bar_c, base_eq.r_bar, gamma)
    assert np.abs(lh).max() < 1e-12
    assert np.abs(lc).max() < 1e-12


def test_no_upward_flux_out_of_the_top_bin() -> None:
    out = meanfield.apply_operator(dirac_pmf(5, 5), 0.7, 0.5)
    assert out[-1] == pytest.approx(-0.5)
    assert out[-2] == pytest.approx(0.5)
    assert out.sum() == 0.0


def test_broke_agents_only_receive() -> None:
    out = meanfield.apply_lh(dirac_pmf(0, 3), 0.25)
    assert out.tolist() == [-0.25, 0.25, 0.0, 0.0]


def test_rate_counts_solvent_givers(base_params: ModelParams) -> None:
    state = _dirac_state(base_params, 20)
    assert meanfield.rate_r(state) == pytest.approx(0.5 * 0.5 + 0.5)
    broke = meanfield.MeanFieldState(dirac_pmf(0, 20), dirac_pmf(0, 20), base_params)
    assert meanfield.rate_r(broke) == 0.0


def test_state_requires_shared_support(base_params: ModelParams) -> None:
    with pytest.raises(LengthMismatchError):
        meanfield.MeanFieldState(dirac_pmf(1, 4), dirac_pmf(1, 5), base_params)


def test_rk4_global_order_on_linear_decay() -> None:
    def f(y: np.ndarray) -> np.ndarray:
        return -y

    def solve(dt: float) -> float:
        y = np.array([1.0])
        for _ in range(round(1.0 / dt)):
            y = meanfield.rk4(f, y, dt)
        return abs(float(y[0]) - np.exp(-1.0))

    assert 14.0 < solve(0.1) / solve(0.05) < 18.0


def test_rk4_step_rejects_bad_steps(base_params: ModelParams) -> None:
    state = _dirac_state(base_params, 20)
    with pytest.raises(ConfigError):
        meanfield.rk4_step(state, 0.0)
    with np.errstate(all="ignore"), pytest.raises(NonFiniteStateError):
        meanfield.rk4_step(state, 1e200)


def test_zero_horizon_echoes_initial(base_params: ModelParams) -> None:
    state = _dirac_state(base_params, 20)
    seen = meanfield.SnapshotObserver()
    trajectory = meanfield.integrate(state, 0.0, 0.01, [seen])
    assert trajectory.final is state
    assert trajectory.steps == 0
    assert len(seen.snapshots) == 1


def test_negative_horizon_rejected(base_params: ModelParams) -> None:
    with pytest.raises(ConfigError):
        meanfield.integrate(_dirac_state(base_params, 20), -1.0, 0.01)


def test_observer_cadence(fast_params: ModelParams) -> None:
    seen = meanfield.SnapshotObserver()
    trajectory = meanfield.integrate(
        _dirac_state(fast_params, 30), 1.0, 0.1, [seen], observe_every=3
    )
    assert trajectory.steps == 10
    times = [s.time for s in seen.snapshots]
    assert times == pytest.approx([0.0, 0.3, 0.6, 0.9, 1.0])


def test_horizon_hit_exactly(fast_params: ModelParams) -> None:
    trajectory = meanfield.integrate(_dirac_state(fast_params, 30), 1.0, 0.3)
    assert trajectory.steps == 4
    assert trajectory.dt == pytest.approx(0.25)
    assert trajectory.final.time == pytest.approx(1.0)


def test_snapshot_rows_cover_all_groups(fast_params: ModelParams) -> None:
    seen = meanfield.SnapshotObserver()
    meanfield.integrate(_dirac_state(fast_params, 10), 0.1, 0.05, [seen])
    rows = seen.rows()
    assert {row["group"] for row in rows} == {"c", "h", "mix"}
    assert len(rows) == 3 * 11 * len(seen.snapshots)
    assert set(rows[0]) == {"time", "group", "n", "probability"}


def test_mass_and_weighted_mean_conserved(fast_params: ModelParams) -> None:
    invariants = meanfield.InvariantObserver()
    meanfield.integrate(_dirac_state(fast_params, 60), 20.0, 0.01, [invariants])
    assert invariants.max_mass_drift < 1e-9
    assert invariants.max_mean_drift < 1e-6


def test_converges_to_equilibrium(fast_params: ModelParams) -> None:
    eq = solve_equilibrium(fast_params, 100)
    final = meanfield.integrate(_dirac_state(fast_params, 100), 300.0, 0.01).final
    assert distance(final.pc, eq.p_bar_c, Metric.L1) < 1e-3
    assert distance(final.ph, eq.p_bar_h, Metric.L1) < 1e-3


def test_halving_dt_barely_moves_final_state(fast_params: ModelParams) -> None:
    state = _dirac_state(fast_params, 60)
    coarse = meanfield.integrate(state, 10.0, 0.005).final
    fine = meanfield.integrate(state, 10.0, 0.0025).final
    assert np.abs(coarse.pc.probs - fine.pc.probs).max() < 1e-8
    assert np.abs(coarse.ph.probs - fine.ph.probs).max() < 1e-8


def test_one_step_error_is_fifth_order(base_params: ModelParams) -> None:
    state = meanfield.MeanFieldState(
        geometric_pmf(0.8, 200).normalized(),
        geometric_pmf(0.3, 200).normalized(),
        base_params,
    )

    def error(dt: float) -> float:
        coarse = meanfield.rk4_step(state, dt)
        fine = meanfield.integrate(state, dt, dt / 100.0).final
        return float(np.abs(coarse.pc.probs - fine.pc.probs).max())

    assert 24.0 <= error(0.1) / error(0.05) <= 40.0


def test_large_step_stays_a_probability(fast_params: ModelParams) -> None:
    """Overshooting entries are clamped and the mass restored."""
    nxt = meanfield.rk4_step(_dirac_state(fast_params, 10), 2.5)
    assert nxt.pc.probs.min() >= 0.0
    assert nxt.ph.probs.min() >= 0.0
    assert nxt.pc.total() == pytest.approx(1.0, abs=1e-9)


@pytest.mark.slow
def test_baseline_run_approaches_equilibrium(base_params: ModelParams) -> None:
    eq = solve_equilibrium(base_params, 500)
    final = meanfield.integrate(_dirac_state(base_params, 500), 5000.0, 0.01).final
    assert distance(final.pc, eq.p_bar_c, Metric.L1) < 1e-2
    assert distance(final.ph, eq.p_bar_h, Metric.L1) < 1e-2
