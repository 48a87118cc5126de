"""Model parameters, probability vectors and the closed-form equilibrium."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Self

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import bisect

from bdy.errors import (
    ConfigError,
    InvalidParamsError,
    LengthMismatchError,
    TailTooHeavyError,
)

logger = logging.getLogger(__name__)

__all__ = [
    "TAIL_TOLERANCE",
    "EquilibriumPair",
    "ModelParams",
    "WealthPMF",
    "as_pmf",
    "bisect_equilibrium_ratio",
    "default_n_max",
    "dirac_pmf",
    "equilibrium_ratio",
    "geometric_pmf",
    "mix",
    "quadratic_residual",
    "solve_equilibrium",
]

TAIL_TOLERANCE = 1e-12
MASS_TOLERANCE = 1e-9
_ROOT_SLACK = 1e-12


class ModelParams(BaseModel):
    """An economy: average wealth, honest fraction, cheat probability, size.

    ``n_c`` is derived as ``1 - n_h`` and never serialized.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    mu: float = Field(gt=0, description="average dollars per agent")
    n_h: float = Field(ge=0, le=1, description="honest fraction")
    gamma: float = Field(ge=0, lt=1, description="cheat probability")
    n_agents: int | None = Field(default=None, ge=2, description="ABM size")

    @model_validator(mode="after")
    def _check_partition(self) -> Self:
        if self.n_agents is not None:
            honest = self.n_h * self.n_agents
            if abs(honest - round(honest)) > 1e-9:
                msg = (
                    f"n_h * n_agents must be an integer, got "
                    f"{self.n_h} * {self.n_agents} = {honest}"
                )
                raise ValueError(msg)
        return self

    @property
    def n_c(self) -> float:
        """Cheater fraction."""
        return 1.0 - self.n_h

    @property
    def honest_count(self) -> int:
        """Number of honest agents in the ABM population."""
        if self.n_agents is None:
            msg = "n_agents is required for agent-based runs"
            raise InvalidParamsError(msg)
        return round(self.n_h * self.n_agents)

    def to_json(self) -> str:
        """Flat JSON object with keys mu, n_h, gamma, n_agents."""
        return self.model_dump_json()

    @classmethod
    def from_json(cls, payload: str | bytes) -> ModelParams:
        """Inverse of :meth:`to_json`."""
        return cls.model_validate_json(payload)


@dataclass(frozen=True, eq=False)
class WealthPMF:
    """Truncated probability mass function over dollar counts 0..n_max.

    ``tail_mass`` is the mass that the truncation dropped, when known.
    """

    probs: NDArray[np.float64]
    tail_mass: float = 0.0

    def __post_init__(self) -> None:
        arr = np.array(self.probs, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            msg = "WealthPMF needs a non-empty 1-D probability vector"
            raise ConfigError(msg)
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0:
            msg = "WealthPMF entries must be finite and nonnegative"
            raise ConfigError(msg)
        arr.setflags(write=False)
        object.__setattr__(self, "probs", arr)

    @property
    def n_max(self) -> int:
        return int(self.probs.size - 1)

    def total(self) -> float:
        return float(self.probs.sum())

    def mean(self) -> float:
        return float(np.arange(self.probs.size) @ self.probs)

    def normalized(self) -> WealthPMF:
        """Rescale to unit mass (tail bookkeeping is reset)."""
        return WealthPMF(self.probs / self.probs.sum())

    def padded(self, n_max: int) -> NDArray[np.float64]:
        """Probabilities zero-padded to ``n_max``; never truncates."""
        if n_max <= self.n_max:
            return np.array(self.probs)
        out = np.zeros(n_max + 1)
        out[: self.probs.size] = self.probs
        return out

    def __getitem__(self, n: int) -> float:
        return float(self.probs[n])

    def __len__(self) -> int:
        return int(self.probs.size)


def as_pmf(values: ArrayLike) -> WealthPMF:
    """Wrap a raw vector as a WealthPMF."""
    return WealthPMF(np.asarray(values, dtype=np.float64))


def dirac_pmf(k: int, n_max: int) -> WealthPMF:
    """Point mass at ``k`` dollars."""
    if not 0 <= k <= n_max:
        msg = f"Dirac location {k} outside support 0..{n_max}"
        raise ConfigError(msg)
    probs = np.zeros(n_max + 1)
    probs[k] = 1.0
    return WealthPMF(probs)


def geometric_pmf(ratio: float, n_max: int) -> WealthPMF:
    """(1 - ratio) * ratio**n on 0..n_max, not renormalized."""
    if not 0.0 <= ratio < 1.0:
        msg = f"geometric ratio must lie in [0, 1), got {ratio}"
        raise ConfigError(msg)
    powers = ratio ** np.arange(n_max + 1, dtype=np.float64)
    return WealthPMF((1.0 - ratio) * powers, tail_mass=ratio ** (n_max + 1))


def mix(pc: WealthPMF, ph: WealthPMF, params: ModelParams) -> WealthPMF:
    """Population law n_c * pc + n_h * ph."""
    if pc.n_max != ph.n_max:
        msg = f"cheater/honest supports differ: {pc.n_max} vs {ph.n_max}"
        raise LengthMismatchError(msg)
    return WealthPMF(params.n_c * pc.probs + params.n_h * ph.probs)


def _quadratic(params: ModelParams) -> tuple[float, float, float]:
    """Coefficients (a, b, c) of a*r**2 - b*r + c = 0."""
    mu, gamma = params.mu, params.gamma
    b = (2.0 - gamma) * mu + (1.0 - gamma * params.n_h)
    return mu + 1.0, b, (1.0 - gamma) * mu


def quadratic_residual(params: ModelParams, r: float) -> float:
    a, b, c = _quadratic(params)
    return a * r * r - b * r + c


def _upper_ratio(params: ModelParams) -> float:
    return 1.0 - params.gamma if params.n_c > 0.0 else 1.0


def bisect_equilibrium_ratio(params: ModelParams) -> float:
    """Root of the mean balance n_c*r/(1-g-r) + n_h*r/(1-r) = mu by bisection.

    Independent of the quadratic; used as an oracle and as a fallback.
    """
    mu, gamma, n_c, n_h = params.mu, params.gamma, params.n_c, params.n_h

    def excess_mean(r: float) -> float:
        cheaters = n_c * r / (1.0 - gamma - r) if n_c > 0.0 else 0.0
        return cheaters + n_h * r / (1.0 - r) - mu

    upper = _upper_ratio(params)
    root = bisect(
        excess_mean,
        0.0,
        upper * (1.0 - 1e-13),
        xtol=1e-16,
        rtol=4 * np.finfo(float).eps,
        maxiter=400,
    )
    return float(root)


def equilibrium_ratio(params: ModelParams) -> float:
    """r_bar: the root of the equilibrium quadratic inside (0, 1 - gamma).

    Uses the cancellation-free form of the minus branch, 2c / (b + sqrt(D)).
    """
    if params.n_h == 1.0:
        # honest-only economy: classical geometric with mean mu
        return params.mu / (params.mu + 1.0)
    a, b, c = _quadratic(params)
    disc = b * b - 4.0 * a * c
    if disc <= 0.0:
        logger.warning("non-positive discriminant %.3e; using bisection", disc)
        return bisect_equilibrium_ratio(params)
    root = 2.0 * c / (b + math.sqrt(disc))
    upper = 1.0 - params.gamma
    if root < -_ROOT_SLACK or root > upper + _ROOT_SLACK:
        logger.warning(
            "closed-form root %.17g outside (0, %.17g); using bisection", root, upper
        )
        return bisect_equilibrium_ratio(params)
    return root


def default_n_max(params: ModelParams, tol: float = TAIL_TOLERANCE) -> int:
    """Smallest truncation whose geometric tails are below ``tol``."""
    r = equilibrium_ratio(params)
    ratio = r / (1.0 - params.gamma) if params.n_h < 1.0 else r
    if ratio <= 0.0:
        return 1
    return max(1, math.ceil(math.log(tol) / math.log(ratio)))


@dataclass(frozen=True, eq=False)
class EquilibriumPair:
    """Geometric pair and its mixture, renormalized over 0..n_max."""

    params: ModelParams
    r_bar: float
    p_bar_h: WealthPMF
    p_bar_c: WealthPMF
    p_bar_mix: WealthPMF
    tail_h: float
    tail_c: float

    @property
    def n_max(self) -> int:
        return self.p_bar_h.n_max

    @property
    def cheater_ratio(self) -> float:
        if self.params.n_h == 1.0:
            return self.r_bar
        return self.r_bar / (1.0 - self.params.gamma)

    @property
    def mean_honest(self) -> float:
        return self.r_bar / (1.0 - self.r_bar)

    @property
    def mean_cheater(self) -> float:
        ratio = self.cheater_ratio
        return ratio / (1.0 - ratio)


def solve_equilibrium(params: ModelParams, n_max: int | None = None) -> EquilibriumPair:
    """Equilibrium pair of the mean-field system, truncated at ``n_max``.

    Raises:
        InvalidParamsError: mu is not positive (possible via model_construct).
        TailTooHeavyError: truncation drops more than TAIL_TOLERANCE of mass
            from a sub-population with positive weight.
    """
    if params.mu <= 0.0:
        msg = f"mu must be positive, got {params.mu}"
        raise InvalidParamsError(msg)
    if n_max is None:
        n_max = default_n_max(params)

    r_bar = equilibrium_ratio(params)
    honest = geometric_pmf(r_bar, n_max)
    cheater = (
        honest
        if params.n_h == 1.0
        else geometric_pmf(r_bar / (1.0 - params.gamma), n_max)
    )
    groups = (("honest", params.n_h, honest), ("cheater", params.n_c, cheater))
    for name, weight, pmf in groups:
        if weight > 0.0 and pmf.tail_mass > TAIL_TOLERANCE:
            msg = (
                f"{name} geometric tail {pmf.tail_mass:.3e} exceeds "
                f"{TAIL_TOLERANCE:.0e} at n_max={n_max}"
            )
            raise TailTooHeavyError(msg)

    p_bar_h = honest.normalized()
    p_bar_c = cheater.normalized()
    return EquilibriumPair(
        params=params,
        r_bar=r_bar,
        p_bar_h=p_bar_h,
        p_bar_c=p_bar_c,
        p_bar_mix=mix(p_bar_c, p_bar_h, params),
        tail_h=honest.tail_mass,
        tail_c=cheater.tail_mass,
    )
