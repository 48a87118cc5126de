"""Gini index (definition, CDF form, equilibrium closed form), distances and sweeps."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
from numpy.typing import NDArray

from bdy.core import ModelParams, WealthPMF, equilibrium_ratio
from bdy.errors import ConfigError, DegenerateDenominatorError, ZeroMeanError

logger = logging.getLogger(__name__)

__all__ = [
    "GiniSweepResult",
    "Metric",
    "SweepPoint",
    "distance",
    "gini_double_sum",
    "gini_equilibrium",
    "gini_pmf",
    "gini_sweep",
    "sweep_point",
]

DENOMINATOR_FLOOR = 1e-14
DECREASE_TOLERANCE = 1e-12


def _normalized_probs(p: WealthPMF) -> tuple[NDArray[np.float64], float]:
    total = p.total()
    if total <= 0.0:
        msg = "Gini index undefined for an empty distribution"
        raise ZeroMeanError(msg)
    probs = p.probs / total
    mean = float(np.arange(probs.size) @ probs)
    if mean <= 0.0:
        msg = "Gini index undefined for zero mean"
        raise ZeroMeanError(msg)
    return probs, mean


def gini_pmf(p: WealthPMF) -> float:
    """G = 1 - sum (1 - F_n)**2 / mean, F the CDF of the normalized law."""
    probs, mean = _normalized_probs(p)
    survival = 1.0 - np.cumsum(probs)
    return float(1.0 - (survival @ survival) / mean)


def gini_double_sum(p: WealthPMF) -> float:
    """Mean absolute difference over twice the mean; quadratic in the support."""
    probs, mean = _normalized_probs(p)
    n = np.arange(probs.size, dtype=np.float64)
    spread = np.abs(n[:, None] - n[None, :])
    return float(probs @ spread @ probs / (2.0 * mean))


@dataclass(frozen=True)
class SweepPoint:
    mu: float
    n_h: float
    gamma: float
    r_bar: float
    gini: float
    mean_cheater: float
    mean_honest: float
    min_denominator: float

    def row(self) -> dict[str, object]:
        return {
            "mu": self.mu,
            "n_h": self.n_h,
            "gamma": self.gamma,
            "r_bar": self.r_bar,
            "gini": self.gini,
            "mean_cheater": self.mean_cheater,
            "mean_honest": self.mean_honest,
            "min_denominator": self.min_denominator,
        }


def sweep_point(params: ModelParams) -> SweepPoint:
    """Closed-form equilibrium Gini with the diagnostics reported by sweeps.

    The mixture survival function is ``n_c q**(n+1) + n_h r**(n+1)`` with
    ``q = r / (1 - gamma)``; squaring and summing gives three geometric
    series with denominators ``(1-g)**2 - r**2``, ``1 - r**2`` and
    ``1 - g - r**2``.  Series of a zero-weight type are skipped.

    Raises:
        DegenerateDenominatorError: an active denominator is below 1e-14.
    """
    r = equilibrium_ratio(params)
    mu, n_c, n_h, gamma = params.mu, params.n_c, params.n_h, params.gamma
    terms = (
        ("cheater", n_c * n_c, (1.0 - gamma) ** 2 - r * r),
        ("honest", n_h * n_h, 1.0 - r * r),
        ("cross", 2.0 * n_c * n_h, 1.0 - gamma - r * r),
    )
    bracket = 0.0
    margins = []
    for name, weight, denominator in terms:
        if weight == 0.0:
            continue
        if denominator < DENOMINATOR_FLOOR:
            msg = f"{name} denominator {denominator:.3e} degenerate at {params!r}"
            raise DegenerateDenominatorError(msg)
        margins.append(denominator)
        bracket += weight / denominator

    ratio_c = r / (1.0 - gamma) if n_h < 1.0 else r
    return SweepPoint(
        mu=mu,
        n_h=n_h,
        gamma=gamma,
        r_bar=r,
        gini=1.0 - r * r * bracket / mu,
        mean_cheater=ratio_c / (1.0 - ratio_c),
        mean_honest=r / (1.0 - r),
        min_denominator=min(margins),
    )


def gini_equilibrium(params: ModelParams) -> float:
    """Gini index of the mixed equilibrium law, in closed form."""
    return sweep_point(params).gini


@dataclass(frozen=True)
class GiniSweepResult:
    params_base: ModelParams
    gamma_grid: tuple[float, ...]
    points: tuple[SweepPoint, ...]

    @property
    def gini_values(self) -> tuple[float, ...]:
        return tuple(point.gini for point in self.points)

    @property
    def adjacent_decreases(self) -> int:
        values = self.gini_values
        pairs = zip(values, values[1:], strict=False)
        return sum(1 for a, b in pairs if b < a - DECREASE_TOLERANCE)

    def rows(self) -> list[dict[str, object]]:
        return [point.row() for point in self.points]

    def report(self) -> dict[str, object]:
        return {
            "mu": self.params_base.mu,
            "n_h": self.params_base.n_h,
            "points": len(self.points),
            "adjacent_decreases": self.adjacent_decreases,
            "monotone": self.adjacent_decreases == 0,
        }


def gini_sweep(mu: float, n_h: float, gamma_grid: Sequence[float]) -> GiniSweepResult:
    """Equilibrium Gini along a sorted grid of cheat probabilities."""
    grid = tuple(float(g) for g in gamma_grid)
    if not grid:
        msg = "gamma grid is empty"
        raise ConfigError(msg)
    if list(grid) != sorted(grid) or grid[0] < 0.0 or grid[-1] >= 1.0:
        msg = f"gamma grid must be sorted inside [0, 1), got {grid[0]}..{grid[-1]}"
        raise ConfigError(msg)
    base = ModelParams(mu=mu, n_h=n_h, gamma=0.0)
    points = tuple(sweep_point(ModelParams(mu=mu, n_h=n_h, gamma=g)) for g in grid)
    result = GiniSweepResult(params_base=base, gamma_grid=grid, points=points)
    if result.adjacent_decreases:
        logger.warning(
            "Gini not monotone in gamma for mu=%s n_h=%s: %d decreases",
            mu,
            n_h,
            result.adjacent_decreases,
        )
    return result


class Metric(StrEnum):
    L1 = "l1"
    TV = "tv"
    LINF = "linf"


def distance(p: WealthPMF, q: WealthPMF, metric: Metric = Metric.TV) -> float:
    """Distance between two laws, zero-padding the shorter support."""
    n_max = max(p.n_max, q.n_max)
    diff = np.abs(p.padded(n_max) - q.padded(n_max))
    match Metric(metric):
        case Metric.L1:
            return float(diff.sum())
        case Metric.TV:
            return 0.5 * float(diff.sum())
        case Metric.LINF:
            return float(diff.max())
