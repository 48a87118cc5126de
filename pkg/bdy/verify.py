"""Acceptance checks run by ``bdy verify``.

Each check returns a dict with a ``passed`` flag plus the measured values;
:func:`run_verification` consolidates them into one report.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from typing import Any

import numpy as np

from bdy import abm, analysis, lyapunov, meanfield
from bdy.config import ExperimentConfig
from bdy.core import (
    ModelParams,
    WealthPMF,
    bisect_equilibrium_ratio,
    default_n_max,
    dirac_pmf,
    geometric_pmf,
    quadratic_residual,
    solve_equilibrium,
)
from bdy.errors import InequalityViolatedError, MaximalityViolatedError

logger = logging.getLogger(__name__)

__all__ = [
    "CHECKS",
    "abm_window_pmfs",
    "check_abm",
    "check_dissipation",
    "check_ensemble",
    "check_equilibrium",
    "check_gini",
    "check_linearization",
    "check_maximality",
    "check_ode",
    "check_operators",
    "check_poincare",
    "check_rk4_order",
    "run_verification",
]

Check = Callable[[ExperimentConfig, np.random.Generator], dict[str, Any]]

# closed-form Gini is compared on at least this many bins
GINI_SUPPORT = 2000
FD_TRIALS = 100


def check_equilibrium(
    config: ExperimentConfig, _rng: np.random.Generator
) -> dict[str, Any]:
    """Root residual, bisection agreement and the mean identity.

    Returns:
        Check result with r_bar, residual, oracle gap and mean error
    """
    params = config.model
    eq = solve_equilibrium(params)
    residual = abs(quadratic_residual(params, eq.r_bar))
    oracle_gap = abs(eq.r_bar - bisect_equilibrium_ratio(params))
    upper = 1.0 - params.gamma
    mean_error = abs(
        params.n_h * eq.mean_honest + params.n_c * eq.mean_cheater - params.mu
    )
    return {
        "passed": residual < 1e-12
        and oracle_gap < 1e-12
        and 0.0 < eq.r_bar < upper
        and mean_error < 1e-6,
        "r_bar": eq.r_bar,
        "residual": residual,
        "oracle_gap": oracle_gap,
        "mean_error": mean_error,
    }


def check_operators(
    config: ExperimentConfig, rng: np.random.Generator
) -> dict[str, Any]:
    """Zero-sum on random inputs and annihilation of the equilibrium pair."""
    params = config.model
    worst_sum = 0.0
    for _ in range(1000):
        p = rng.random(101)
        r = float(rng.uniform(0.0, 1.0))
        worst_sum = max(
            worst_sum,
            abs(float(meanfield.apply_lh(p, r).sum())),
            abs(float(meanfield.apply_lc(p, r, params.gamma).sum())),
        )
    eq = solve_equilibrium(params)
    residual = max(
        float(np.abs(meanfield.apply_lh(eq.p_bar_h, eq.r_bar)).max()),
        float(
            np.abs(meanfield.apply_lc(eq.p_bar_c, eq.r_bar, params.gamma)).max()
        ),
    )
    return {
        "passed": worst_sum < 1e-14 and residual < 1e-12,
        "max_abs_sum": worst_sum,
        "equilibrium_residual": residual,
    }


def check_ode(
    config: ExperimentConfig, _rng: np.random.Generator
) -> dict[str, Any]:
    """Integrate from Dirac(mu) with the H-trace on; check invariants and production.

    Distances to equilibrium are reported. They are not gated: at the default
    parameters the cheater law relaxes on a scale of several hundred time units.
    """
    params = config.model
    eq = solve_equilibrium(params, config.ode.n_max)
    start = dirac_pmf(round(params.mu), eq.n_max)
    initial = meanfield.MeanFieldState(start, start, params)
    trace = lyapunov.HTraceObserver(eq)
    invariants = meanfield.InvariantObserver()
    trajectory = meanfield.integrate(
        initial, config.verify.ode_t_end, config.ode.dt, [trace, invariants]
    )

    h = np.array(trace.values)
    worst_drop = float(max(0.0, -np.diff(h).min())) if h.size > 1 else 0.0

    dt = trajectory.dt
    fd = (h[2:] - h[:-2]) / (2.0 * dt)
    prod = np.array(trace.productions[1:-1])
    times = np.array(trace.times[1:-1])
    usable = np.flatnonzero(times >= 5.0)
    spread = np.linspace(0, usable.size - 1, min(100, usable.size))
    picks = usable[spread.astype(int)]
    tolerance = np.maximum(1e-6, 1e-3 * np.abs(prod[picks]))
    production_ok = bool(np.all(np.abs(fd[picks] - prod[picks]) <= tolerance))

    final = trajectory.final
    return {
        "passed": invariants.max_mass_drift < 1e-9
        and invariants.max_mean_drift < 1e-6
        and worst_drop <= 1e-10
        and production_ok,
        "t_end": final.time,
        "max_mass_drift": invariants.max_mass_drift,
        "max_mean_drift": invariants.max_mean_drift,
        "max_h_drop": worst_drop,
        "production_matches_fd": production_ok,
        "l1_cheater": analysis.distance(final.pc, eq.p_bar_c, analysis.Metric.L1),
        "l1_honest": analysis.distance(final.ph, eq.p_bar_h, analysis.Metric.L1),
        "h_gap": trace.h_equilibrium - trace.values[-1],
    }


def check_gini(
    config: ExperimentConfig, rng: np.random.Generator
) -> dict[str, Any]:
    """Closed form against the PMF Gini, honest-only value and sweep monotonicity."""
    mu = config.model.mu
    honest_only = analysis.gini_equilibrium(ModelParams(mu=5.0, n_h=1.0, gamma=0.0))
    honest_error = abs(honest_only - 6.0 / 11.0)

    worst = 0.0
    widest = GINI_SUPPORT
    for _ in range(100):
        params = ModelParams(
            mu=float(rng.uniform(1.0, 10.0)),
            n_h=float(rng.uniform(0.1, 1.0)),
            gamma=float(rng.uniform(0.0, 0.9)),
        )
        # heavy cheater tails need more than GINI_SUPPORT bins
        n_max = max(GINI_SUPPORT, default_n_max(params))
        widest = max(widest, n_max)
        eq = solve_equilibrium(params, n_max)
        closed = analysis.gini_equilibrium(params)
        worst = max(worst, abs(closed - analysis.gini_pmf(eq.p_bar_mix)))

    grid = config.sweep.gamma_grid()
    decreases = {
        f"mu={m:g},n_h={n_h:g}": analysis.gini_sweep(m, n_h, grid).adjacent_decreases
        for m in config.sweep.mu_values
        for n_h in config.sweep.n_h_values
    }
    return {
        "passed": honest_error < 1e-10
        and worst < 1e-4
        and not any(decreases.values()),
        "mu": mu,
        "honest_only_error": honest_error,
        "max_closed_vs_pmf": worst,
        "widest_support": widest,
        "adjacent_decreases": decreases,
    }


def check_poincare(
    config: ExperimentConfig, rng: np.random.Generator
) -> dict[str, Any]:
    violations = 0
    for _ in range(config.verify.poincare_trials):
        r = float(rng.uniform(0.05, 0.95))
        n_max = int(rng.integers(3, 60))
        try:
            y = lyapunov.random_poincare_sequence(r, n_max, rng)
            lyapunov.weighted_poincare_check(r, y)
        except InequalityViolatedError:
            violations += 1
    return {
        "passed": violations == 0,
        "trials": config.verify.poincare_trials,
        "violations": violations,
    }


def check_dissipation(
    config: ExperimentConfig, rng: np.random.Generator
) -> dict[str, Any]:
    """Closed-form rate is nonpositive and matches a centered difference of E."""
    params = config.model
    eq = solve_equilibrium(params)
    worst_rate = -math.inf
    worst_rel = 0.0
    for k in range(config.verify.dissipation_trials):
        w = lyapunov.random_admissible_pair(eq, rng)
        rate = lyapunov.energy_dissipation_rate(w, eq, params)
        worst_rate = max(worst_rate, rate)
        if k < FD_TRIALS:
            fd = lyapunov.energy_rate_fd(w, eq, params)
            worst_rel = max(worst_rel, abs(fd - rate) / max(abs(rate), 1e-300))
    return {
        "passed": worst_rate <= 0.0 and worst_rel < 1e-6,
        "max_rate": worst_rate,
        "max_relative_fd_error": worst_rel,
    }


def check_maximality(
    config: ExperimentConfig, rng: np.random.Generator
) -> dict[str, Any]:
    try:
        report = lyapunov.h_max_check(config.model, config.verify.h_max_trials, rng)
    except MaximalityViolatedError as e:
        return {"passed": False, "error": str(e)}
    return {
        "passed": True,
        "samples": report.samples,
        "rejected": report.rejected,
        "max_gap": report.max_gap,
    }


def _one_step_error(state: meanfield.MeanFieldState, dt: float) -> float:
    coarse = meanfield.rk4_step(state, dt)
    fine = meanfield.integrate(state, dt, dt / 100.0).final
    return max(
        float(np.abs(coarse.pc.probs - fine.pc.probs).max()),
        float(np.abs(coarse.ph.probs - fine.ph.probs).max()),
    )


def check_rk4_order(
    config: ExperimentConfig, _rng: np.random.Generator
) -> dict[str, Any]:
    """Halving dt should shrink the one-step error by about 2**5."""
    params = config.model
    pc = geometric_pmf(0.8, 200).normalized()
    ph = geometric_pmf(0.3, 200).normalized()
    state = meanfield.MeanFieldState(pc, ph, params)
    ratio = _one_step_error(state, 0.1) / _one_step_error(state, 0.05)
    return {"passed": 24.0 <= ratio <= 40.0, "ratio": ratio}


def check_linearization(
    config: ExperimentConfig, rng: np.random.Generator
) -> dict[str, Any]:
    """Defect of the linearization shrinks by about 4 when eps halves."""
    params = config.model
    eq = solve_equilibrium(params)
    w = lyapunov.random_admissible_pair(eq, rng)
    eps = 1e-3
    coarse = lyapunov.linearization_defect(w, eq, params, eps)
    ratio = coarse / lyapunov.linearization_defect(w, eq, params, eps / 2.0)
    r_gap = abs(lyapunov.r_w(w, params) - lyapunov.r_w_tail(w, params))
    return {
        "passed": 3.0 <= ratio <= 5.0 and r_gap < 1e-12,
        "ratio": ratio,
        "r_w_gap": r_gap,
    }


def abm_window_pmfs(result: abm.SimResult, t_from: float) -> dict[abm.Group, WealthPMF]:
    """Average each group's snapshots recorded at or after ``t_from``."""
    window = [s for s in result.snapshots if s.time >= t_from]
    averaged: dict[abm.Group, WealthPMF] = {}
    for group in abm.Group:
        pmfs = [p for s in window if (p := s.group(group)) is not None]
        if pmfs:
            n_max = max(p.n_max for p in pmfs)
            stacked = [p.padded(n_max) for p in pmfs]
            averaged[group] = WealthPMF(np.mean(stacked, axis=0))
    return averaged


def check_abm(
    config: ExperimentConfig, _rng: np.random.Generator
) -> dict[str, Any]:
    """Stationary ABM laws against the equilibrium, averaged over the second half."""
    block = config.verify
    params = config.model.model_copy(update={"n_agents": block.abm_agents})
    params = ModelParams.model_validate(params.model_dump())
    t_end = block.abm_t_end
    records = tuple(float(t) for t in np.linspace(t_end / 2.0, t_end, 101))
    sim = abm.SimConfig(seed=config.seed, t_end=t_end, record_times=records)
    result = abm.run(params, sim, abm.initial_state(params))
    eq = solve_equilibrium(params)
    targets = {
        abm.Group.ALL: eq.p_bar_mix,
        abm.Group.HONEST: eq.p_bar_h,
        abm.Group.CHEATER: eq.p_bar_c,
    }
    averaged = abm_window_pmfs(result, t_end / 2.0)
    tv = {
        str(group): analysis.distance(pmf, targets[group])
        for group, pmf in averaged.items()
    }
    conserved = result.final.total_money == round(params.mu) * block.abm_agents
    return {
        "passed": conserved and all(v < 0.05 for v in tv.values()),
        "events": result.event_count,
        "tv": tv,
        "conserved": conserved,
    }


def check_ensemble(
    config: ExperimentConfig, _rng: np.random.Generator
) -> dict[str, Any]:
    """Replica-averaged ABM laws at a short horizon against the ODE from Dirac(mu)."""
    params = config.model
    block = config.verify
    t_end = block.ensemble_t_end
    initial = abm.initial_state(params)
    sim = abm.SimConfig(seed=config.seed, t_end=t_end, record_times=(t_end,))
    results = abm.run_ensemble(
        params, sim, initial, block.ensemble_replicas, config.sim.workers
    )

    n_max = config.ode.n_max or default_n_max(params)
    start = dirac_pmf(round(params.mu), n_max)
    final = meanfield.integrate(
        meanfield.MeanFieldState(start, start, params), t_end, config.ode.dt
    ).final
    targets = {
        abm.Group.ALL: final.mixture(),
        abm.Group.HONEST: final.ph,
        abm.Group.CHEATER: final.pc,
    }
    present = [abm.Group.ALL]
    if initial.honest_count > 0:
        present.append(abm.Group.HONEST)
    if initial.honest_count < initial.n_agents:
        present.append(abm.Group.CHEATER)
    tv = {
        str(group): analysis.distance(
            abm.ensemble_pmf(results, 0, group), targets[group]
        )
        for group in present
    }
    return {
        "passed": all(v < 0.02 for v in tv.values()),
        "replicas": block.ensemble_replicas,
        "t_end": t_end,
        "tv": tv,
    }


CHECKS: dict[str, Check] = {
    "equilibrium": check_equilibrium,
    "operators": check_operators,
    "ode": check_ode,
    "gini": check_gini,
    "poincare": check_poincare,
    "dissipation": check_dissipation,
    "maximality": check_maximality,
    "rk4_order": check_rk4_order,
    "linearization": check_linearization,
    "abm": check_abm,
    "ensemble": check_ensemble,
}


def run_verification(
    config: ExperimentConfig, only: list[str] | None = None
) -> dict[str, Any]:
    """Run the selected checks (all by default) and return consolidated results.

    Args:
        config: Validated experiment configuration
        only: Optional subset of check names

    Returns:
        Report with overall success and per-check results
    """
    names = only or list(CHECKS)
    rng = np.random.default_rng(config.seed)
    checks: dict[str, dict[str, Any]] = {}
    for name in names:
        logger.info("running check %s", name)
        checks[name] = CHECKS[name](config, rng)
    return {
        "success": all(c["passed"] for c in checks.values()),
        "seed": config.seed,
        "checks": checks,
    }
