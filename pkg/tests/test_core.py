"""Tests for model parameters, PMFs and the closed-form equilibrium."""

from __future__ import annotations

import numpy as np
import pytest
from pydantic import ValidationError

from bdy.core import (
    ModelParams,
    WealthPMF,
    bisect_equilibrium_ratio,
    default_n_max,
    dirac_pmf,
    equilibrium_ratio,
    geometric_pmf,
    mix,
    quadratic_residual,
    solve_equilibrium,
)
from bdy.errors import (
    ConfigError,
    InvariantViolation,
    LengthMismatchError,
    NumericError,
    TailTooHeavyError,
)


def test_baseline_ratio_is_root_inside_interval(base_params: ModelParams) -> None:
    """r_bar solves the quadratic and sits in (0, 1 - gamma)."""
    r = equilibrium_ratio(base_params)
    assert abs(quadratic_residual(base_params, r)) < 1e-12
    assert 0.0 < r < 0.5
    assert r == pytest.approx(0.45088, abs=1e-4)


def test_ratio_matches_bisection_oracle(base_params: ModelParams) -> None:
    gap = equilibrium_ratio(base_params) - bisect_equilibrium_ratio(base_params)
    assert abs(gap) < 1e-12


def test_submeans_combine_to_mu(base_params: ModelParams) -> None:
    eq = solve_equilibrium(base_params)
    combined = base_params.n_h * eq.mean_honest + base_params.n_c * eq.mean_cheater
    assert combined == pytest.approx(5.0, abs=1e-9)
    # truncated laws agree up to the dropped tail
    assert eq.p_bar_mix.mean() == pytest.approx(5.0, abs=1e-6)


def test_cheaters_are_richer(base_params: ModelParams) -> None:
    eq = solve_equilibrium(base_params)
    assert eq.cheater_ratio == pytest.approx(eq.r_bar / 0.5)
    assert eq.mean_cheater > 5.0 > eq.mean_honest


def test_honest_only_economy() -> None:
    params = ModelParams(mu=5.0, n_h=1.0, gamma=0.3)
    eq = solve_equilibrium(params)
    assert eq.r_bar == pytest.approx(5.0 / 6.0, abs=1e-15)
    np.testing.assert_array_equal(eq.p_bar_c.probs, eq.p_bar_h.probs)
    assert bisect_equilibrium_ratio(params) == pytest.approx(5.0 / 6.0, abs=1e-12)


def test_no_cheating_gives_classical_geometric() -> None:
    params = ModelParams(mu=3.0, n_h=0.25, gamma=0.0)
    assert equilibrium_ratio(params) == pytest.approx(0.75, abs=1e-14)


def test_ratio_stable_near_gamma_one() -> None:
    params = ModelParams(mu=10.0, n_h=0.5, gamma=0.999)
    r = equilibrium_ratio(params)
    assert 0.0 < r < 1.0 - params.gamma
    assert r == pytest.approx(bisect_equilibrium_ratio(params), rel=1e-9)


def _random_params(rng: np.random.Generator, gamma_max: float = 0.95) -> ModelParams:
    return ModelParams(
        mu=float(rng.uniform(0.5, 20.0)),
        n_h=float(rng.uniform(0.0, 0.99)),
        gamma=float(rng.uniform(0.01, gamma_max)),
    )


def test_quadratic_brackets_a_single_root(rng: np.random.Generator) -> None:
    """Positive at 0, nonpositive at 1 - gamma, positive discriminant."""
    for _ in range(500):
        params = _random_params(rng)
        mu, n_h, gamma = params.mu, params.n_h, params.gamma
        upper = 1.0 - gamma
        assert quadratic_residual(params, 0.0) == pytest.approx(upper * mu)
        assert quadratic_residual(params, upper) == pytest.approx(
            -gamma * (1.0 - n_h) * upper, abs=1e-12
        )
        b = (2.0 - gamma) * mu + (1.0 - gamma * n_h)
        assert b * b - 4.0 * upper * (mu + 1.0) * mu > 0.0

        r = equilibrium_ratio(params)
        assert 0.0 < r < upper
        # product of the roots is c / a
        other = upper * mu / ((mu + 1.0) * r)
        assert other >= upper * (1.0 - 1e-12)


def test_cheaters_hold_more_for_any_params(rng: np.random.Generator) -> None:
    for _ in range(500):
        params = _random_params(rng, gamma_max=0.99)
        r = equilibrium_ratio(params)
        assert r / (1.0 - params.gamma - r) > r / (1.0 - r)


def test_closed_form_matches_bisection_sweep(rng: np.random.Generator) -> None:
    worst = 0.0
    for _ in range(1000):
        params = _random_params(rng)
        gap = abs(equilibrium_ratio(params) - bisect_equilibrium_ratio(params))
        worst = max(worst, gap)
    assert worst < 1e-12


def test_equilibrium_laws_are_normalized(base_params: ModelParams) -> None:
    eq = solve_equilibrium(base_params)
    for pmf in (eq.p_bar_h, eq.p_bar_c, eq.p_bar_mix):
        assert pmf.total() == pytest.approx(1.0, abs=1e-12)
    assert eq.tail_c < 1e-12


def test_short_support_is_too_heavy(base_params: ModelParams) -> None:
    with pytest.raises(TailTooHeavyError):
        solve_equilibrium(base_params, n_max=30)


def test_default_n_max_tail_below_tolerance(base_params: ModelParams) -> None:
    n_max = default_n_max(base_params)
    ratio = solve_equilibrium(base_params).cheater_ratio
    assert ratio ** (n_max + 1) <= 1e-12
    assert ratio ** (n_max - 1) > 1e-12


def test_params_reject_out_of_range_gamma() -> None:
    with pytest.raises(ValidationError, match="gamma"):
        ModelParams(mu=5.0, n_h=0.5, gamma=1.0)


def test_params_require_integer_honest_count() -> None:
    with pytest.raises(ValidationError, match="integer"):
        ModelParams(mu=5.0, n_h=0.3, gamma=0.5, n_agents=11)


def test_params_json_round_trip(base_params: ModelParams) -> None:
    payload = base_params.to_json()
    assert "n_c" not in payload
    assert ModelParams.from_json(payload) == base_params
    assert base_params.n_c == 0.5
    assert base_params.honest_count == 1000


def test_wealth_pmf_validation() -> None:
    with pytest.raises(ConfigError):
        WealthPMF(np.array([0.5, -0.1, 0.6]))
    with pytest.raises(ConfigError):
        WealthPMF(np.array([]))
    with pytest.raises(ConfigError):
        dirac_pmf(11, 10)
    with pytest.raises(ConfigError):
        geometric_pmf(1.0, 10)


def test_padding_and_mean() -> None:
    p = dirac_pmf(3, 5)
    assert p.mean() == 3.0
    assert p.padded(8).tolist() == [0, 0, 0, 1, 0, 0, 0, 0, 0]
    assert len(p.padded(2)) == 6
    assert p[3] == 1.0


def test_geometric_tail_mass_tracked() -> None:
    p = geometric_pmf(0.5, 9)
    assert p.tail_mass == pytest.approx(0.5**10)
    assert p.total() + p.tail_mass == pytest.approx(1.0)


def test_mix_requires_shared_support(base_params: ModelParams) -> None:
    with pytest.raises(LengthMismatchError):
        mix(dirac_pmf(1, 4), dirac_pmf(1, 5), base_params)
    mixed = mix(dirac_pmf(0, 4), dirac_pmf(4, 4), base_params)
    assert mixed.mean() == pytest.approx(2.0)


def test_error_families_carry_exit_codes() -> None:
    assert ConfigError.exit_code == 2
    assert NumericError.exit_code == 3
    assert InvariantViolation.exit_code == 4
    assert issubclass(TailTooHeavyError, NumericError)
    assert TailTooHeavyError("x").exit_code == 3
