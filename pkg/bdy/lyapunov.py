"""Entropy functional, its production, and the linearized energy around equilibrium.

Perturbations live in the admissible set: zero mass per type and zero weighted
first moment.  All projections onto that set are oblique projections whose
correction is proportional to a weight vector, so ``project(v, weights=p_bar)``
is the orthogonal projection in the energy inner product.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import minimize_scalar
from scipy.special import entr

from bdy.core import EquilibriumPair, ModelParams, WealthPMF, solve_equilibrium
from bdy.errors import (
    ConfigError,
    InequalityViolatedError,
    LengthMismatchError,
    MaximalityViolatedError,
    WeightUnderflowError,
)
from bdy.meanfield import MeanFieldState, apply_operator, rate_r, rk4, vector_field

logger = logging.getLogger(__name__)

__all__ = [
    "HMaxReport",
    "HTraceObserver",
    "LinearizedTrace",
    "PerturbationPair",
    "ascend_h",
    "energy_dissipation_rate",
    "energy_e",
    "energy_rate_fd",
    "estimate_decay_rate",
    "h_functional",
    "h_max_check",
    "h_production",
    "integrate_linearized",
    "linearization_defect",
    "linearized_rhs",
    "poincare_extremal",
    "poincare_lambda",
    "project_admissible",
    "r_w",
    "r_w_tail",
    "random_admissible_pair",
    "random_poincare_sequence",
    "weighted_poincare_check",
]

PROB_FLOOR = 1e-300
MAXIMALITY_TOLERANCE = 1e-9

Vector = NDArray[np.float64]


@dataclass(frozen=True, eq=False)
class PerturbationPair:
    """Signed deviations of the cheater and honest laws."""

    wc: Vector
    wh: Vector

    def __post_init__(self) -> None:
        wc = np.array(self.wc, dtype=np.float64)
        wh = np.array(self.wh, dtype=np.float64)
        if wc.shape != wh.shape or wc.ndim != 1:
            msg = f"perturbation components differ: {wc.shape} vs {wh.shape}"
            raise LengthMismatchError(msg)
        object.__setattr__(self, "wc", wc)
        object.__setattr__(self, "wh", wh)

    @classmethod
    def zeros(cls, n_max: int) -> PerturbationPair:
        return cls(np.zeros(n_max + 1), np.zeros(n_max + 1))

    @classmethod
    def from_vector(cls, y: Vector) -> PerturbationPair:
        half = y.size // 2
        return cls(y[:half], y[half:])

    @property
    def n_max(self) -> int:
        return int(self.wc.size - 1)

    def vector(self) -> Vector:
        return np.concatenate((self.wc, self.wh))

    def scaled(self, factor: float) -> PerturbationPair:
        return PerturbationPair(factor * self.wc, factor * self.wh)

    def weighted_moment(self, params: ModelParams) -> float:
        n = np.arange(self.wc.size)
        return float(params.n_h * (n @ self.wh) + params.n_c * (n @ self.wc))

    def is_admissible(self, params: ModelParams, tol: float = 1e-8) -> bool:
        return (
            abs(self.wc.sum()) <= tol
            and abs(self.wh.sum()) <= tol
            and abs(self.weighted_moment(params)) <= tol
        )


# ---------------------------------------------------------------------------
# H functional


def _h_value(pc: Vector, ph: Vector, params: ModelParams) -> float:
    n = np.arange(pc.size)
    value = params.n_h * float(entr(ph).sum())
    if params.n_c > 0.0:
        value += params.n_c * float(entr(pc).sum())
        value -= params.n_c * math.log1p(-params.gamma) * float(n @ pc)
    return value


def h_functional(pc: WealthPMF, ph: WealthPMF, params: ModelParams) -> float:
    """Generalized entropy of a (cheater, honest) pair, with 0 log 0 = 0."""
    if pc.n_max != ph.n_max:
        msg = f"cheater/honest supports differ: {pc.n_max} vs {ph.n_max}"
        raise LengthMismatchError(msg)
    return _h_value(pc.probs, ph.probs, params)


def _flux_entropy(p: Vector, ratio: float) -> float:
    a = np.maximum(p[1:], PROB_FLOOR)
    b = np.maximum(ratio * p[:-1], PROB_FLOOR)
    return float(((a - b) * np.log(a / b)).sum())


def h_production(state: MeanFieldState) -> float:
    """Entropy production of the state; a sum of (a - b) log(a / b) terms.

    Probabilities are floored at ``PROB_FLOOR`` inside the logarithms.
    """
    params = state.params
    r = rate_r(state)
    value = params.n_h * _flux_entropy(state.ph.probs, r)
    if params.n_c > 0.0:
        down = 1.0 - params.gamma
        value += down * params.n_c * _flux_entropy(state.pc.probs, r / down)
    return value


@dataclass
class HTraceObserver:
    """Integration observer recording H, its distance to the plateau and production."""

    equilibrium: EquilibriumPair
    times: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    productions: list[float] = field(default_factory=list)
    h_equilibrium: float = field(init=False, default=0.0)

    def __post_init__(self) -> None:
        eq = self.equilibrium
        self.h_equilibrium = h_functional(eq.p_bar_c, eq.p_bar_h, eq.params)

    def __call__(self, state: MeanFieldState) -> None:
        self.times.append(state.time)
        self.values.append(h_functional(state.pc, state.ph, state.params))
        self.productions.append(h_production(state))

    def rows(self) -> list[dict[str, object]]:
        return [
            {
                "time": t,
                "H": h,
                "H_equilibrium_minus_H": self.h_equilibrium - h,
                "production_rate": prod,
            }
            for t, h, prod in zip(
                self.times, self.values, self.productions, strict=True
            )
        ]


# ---------------------------------------------------------------------------
# admissible set


def _constraint_rows(params: ModelParams, size: int) -> Vector:
    n = np.arange(size, dtype=np.float64)
    ones, zeros = np.ones(size), np.zeros(size)
    return np.array(
        [
            np.concatenate((ones, zeros)),
            np.concatenate((zeros, ones)),
            np.concatenate((params.n_c * n, params.n_h * n)),
        ]
    )


def _project(v: Vector, rows: Vector, weights: Vector) -> Vector:
    gram = (rows * weights) @ rows.T
    multipliers = np.linalg.lstsq(gram, rows @ v, rcond=None)[0]
    return v - weights * (rows.T @ multipliers)


def project_admissible(
    w: PerturbationPair,
    params: ModelParams,
    weights: tuple[ArrayLike, ArrayLike] | None = None,
) -> PerturbationPair:
    """Project onto the admissible set.

    Without ``weights`` this is the least-squares projection.  With
    ``weights=(p_bar_c, p_bar_h)`` the correction is proportional to the
    equilibrium, which keeps perturbed laws positive in the tails.
    """
    size = w.n_max + 1
    y = w.vector()
    d = np.ones_like(y) if weights is None else np.concatenate(
        [np.asarray(x, dtype=np.float64) for x in weights]
    )
    return PerturbationPair.from_vector(_project(y, _constraint_rows(params, size), d))


def random_admissible_pair(
    eq: EquilibriumPair, rng: np.random.Generator, scale: float = 1.0
) -> PerturbationPair:
    """Gaussian relative noise on the equilibrium, projected into the admissible set."""
    pc, ph = eq.p_bar_c.probs, eq.p_bar_h.probs
    raw = PerturbationPair(
        pc * rng.standard_normal(pc.size), ph * rng.standard_normal(ph.size)
    )
    return project_admissible(raw, eq.params, weights=(pc, ph)).scaled(scale)


def r_w(w: PerturbationPair, params: ModelParams) -> float:
    """Perturbation of the receiving rate, from the zero-dollar entries."""
    cheater = params.n_c * (1.0 - params.gamma) * float(w.wc[0])
    return -cheater - params.n_h * float(w.wh[0])


def r_w_tail(w: PerturbationPair, params: ModelParams) -> float:
    """Same quantity as :func:`r_w` from the tail sums; equal on the admissible set."""
    cheaters = params.n_c * (1.0 - params.gamma) * float(w.wc[1:].sum())
    return cheaters + params.n_h * float(w.wh[1:].sum())


# ---------------------------------------------------------------------------
# maximality


@dataclass(frozen=True)
class HMaxReport:
    samples: int
    rejected: int
    h_equilibrium: float
    max_gap: float
    ascent_gap: float | None = None


def _random_pmf(rng: np.random.Generator, n_max: int, mean_hint: float) -> Vector:
    top = min(n_max, max(2, int(4 * mean_hint) + 2))
    support = int(rng.integers(1, top + 1))
    alpha = 10.0 ** rng.uniform(-1.0, 1.0)
    probs = np.zeros(n_max + 1)
    probs[: support + 1] = rng.dirichlet(np.full(support + 1, alpha))
    return probs


def _random_pmf_pair(
    rng: np.random.Generator, params: ModelParams, n_max: int, target: float
) -> tuple[Vector, Vector]:
    """Random pair whose joint mean is ``target``, mixed with a Dirac at 0 or n_max."""
    n = np.arange(n_max + 1)
    f, g = _random_pmf(rng, n_max, target), _random_pmf(rng, n_max, target)
    joint = params.n_c * float(n @ f) + params.n_h * float(n @ g)
    anchor = np.zeros(n_max + 1)
    if joint > target:
        t = target / joint
        anchor[0] = 1.0
    elif joint < target:
        t = (n_max - target) / (n_max - joint)
        anchor[n_max] = 1.0
    else:
        return f, g
    return t * f + (1.0 - t) * anchor, t * g + (1.0 - t) * anchor


def _perturbed_pair(
    rng: np.random.Generator, eq: EquilibriumPair
) -> tuple[Vector, Vector] | None:
    w = random_admissible_pair(eq, rng)
    pc, ph = eq.p_bar_c.probs, eq.p_bar_h.probs
    relative = max(float(np.abs(w.wc / pc).max()), float(np.abs(w.wh / ph).max()))
    eps = rng.uniform(0.0, 0.9) / relative if relative > 0.0 else 0.0
    f, g = pc + eps * w.wc, ph + eps * w.wh
    if f.min() < 0.0 or g.min() < 0.0:
        return None
    return f, g


def ascend_h(
    eq: EquilibriumPair,
    rng: np.random.Generator,
    steps: int = 200,
    step_size: float = 0.5,
) -> float:
    """Projected-gradient ascent of H from a random admissible start.

    Returns the best H reached minus the equilibrium H.
    """
    params, n_max = eq.params, eq.n_max
    pc, ph = eq.p_bar_c.probs, eq.p_bar_h.probs
    f0, g0 = _random_pmf_pair(rng, params, n_max, eq.p_bar_mix.mean())
    y = np.concatenate((0.5 * (f0 + pc), 0.5 * (g0 + ph)))
    size = n_max + 1
    rows = _constraint_rows(params, size)
    ones = np.ones(2 * size)
    n = np.arange(size)
    h_eq = _h_value(pc, ph, params)

    best = _h_value(y[:size], y[size:], params)
    for _ in range(steps):
        f, g = y[:size], y[size:]
        grad_f = params.n_c * (-np.log(f) - 1.0 - math.log1p(-params.gamma) * n)
        grad_g = params.n_h * (-np.log(g) - 1.0)
        direction = _project(np.concatenate((grad_f, grad_g)), rows, ones)
        t = step_size
        while t > 1e-12:
            trial = y + t * direction
            if trial.min() > 0.0:
                value = _h_value(trial[:size], trial[size:], params)
                if value >= best:
                    y, best = trial, value
                    break
            t *= 0.5
        else:
            break
    return best - h_eq


def h_max_check(
    params: ModelParams,
    trials: int,
    rng: np.random.Generator,
    n_max: int | None = None,
    *,
    ascend: bool = False,
) -> HMaxReport:
    """Monte Carlo check that the equilibrium pair maximizes H at fixed joint mean.

    Even trials draw random PMF pairs, odd trials perturb the equilibrium.
    Perturbations leaving the nonnegative orthant are rejected and counted.

    Raises:
        MaximalityViolatedError: a sample beat the equilibrium by more than
            ``MAXIMALITY_TOLERANCE``; the offending pair is attached.
    """
    if trials < 1:
        msg = f"trials must be >= 1, got {trials}"
        raise ConfigError(msg)
    eq = solve_equilibrium(params, n_max)
    target = eq.p_bar_mix.mean()
    if eq.n_max <= target:
        msg = f"n_max={eq.n_max} must exceed the mean {target:.6g}"
        raise ConfigError(msg)
    h_eq = _h_value(eq.p_bar_c.probs, eq.p_bar_h.probs, params)

    max_gap = -math.inf
    rejected = 0
    for k in range(trials):
        pair = (
            _random_pmf_pair(rng, params, eq.n_max, target)
            if k % 2 == 0
            else _perturbed_pair(rng, eq)
        )
        if pair is None:
            rejected += 1
            continue
        gap = _h_value(*pair, params) - h_eq
        if gap > MAXIMALITY_TOLERANCE:
            msg = f"sample {k} exceeds equilibrium H by {gap:.3e}"
            raise MaximalityViolatedError(msg, pair=pair)
        max_gap = max(max_gap, gap)

    ascent_gap = None
    if ascend:
        ascent_gap = ascend_h(eq, rng)
        if ascent_gap > MAXIMALITY_TOLERANCE:
            msg = f"gradient ascent exceeded equilibrium H by {ascent_gap:.3e}"
            raise MaximalityViolatedError(msg)
    logger.debug(
        "h_max_check: %d samples, %d rejected, max gap %.3e", trials, rejected, max_gap
    )
    return HMaxReport(
        samples=trials,
        rejected=rejected,
        h_equilibrium=h_eq,
        max_gap=max_gap,
        ascent_gap=ascent_gap,
    )


# ---------------------------------------------------------------------------
# linearized flow and energy


def _rate_derivative(p: Vector) -> Vector:
    # d/dr of the generator at fixed p: upward flux only
    return apply_operator(p, 1.0, 0.0)


def linearized_rhs(
    w: PerturbationPair, eq: EquilibriumPair, params: ModelParams
) -> PerturbationPair:
    """Linearization of both mean-field systems at the equilibrium pair."""
    if w.n_max != eq.n_max:
        msg = f"perturbation support {w.n_max} != equilibrium support {eq.n_max}"
        raise LengthMismatchError(msg)
    r_bar = eq.r_bar
    rate = r_w(w, params)
    dwc = apply_operator(w.wc, r_bar, 1.0 - params.gamma) + rate * _rate_derivative(
        eq.p_bar_c.probs
    )
    dwh = apply_operator(w.wh, r_bar, 1.0) + rate * _rate_derivative(eq.p_bar_h.probs)
    return PerturbationPair(dwc, dwh)


def _linear_field(
    eq: EquilibriumPair, params: ModelParams
) -> Callable[[Vector], Vector]:
    def f(y: Vector) -> Vector:
        return linearized_rhs(PerturbationPair.from_vector(y), eq, params).vector()

    return f


def _active_groups(
    w: PerturbationPair, eq: EquilibriumPair, params: ModelParams
) -> list[tuple[float, float, float, Vector, Vector]]:
    """(weight, downward rate, ratio, p_bar, w) per type with positive weight."""
    groups = (
        (params.n_h, 1.0, eq.r_bar, eq.p_bar_h.probs, w.wh),
        (params.n_c, 1.0 - params.gamma, eq.cheater_ratio, eq.p_bar_c.probs, w.wc),
    )
    active = [group for group in groups if group[0] > 0.0]
    for _, _, _, p, _ in active:
        if p.min() < PROB_FLOOR:
            msg = f"equilibrium weight {p.min():.3e} underflows at n_max={eq.n_max}"
            raise WeightUnderflowError(msg)
    return active


def energy_e(w: PerturbationPair, eq: EquilibriumPair, params: ModelParams) -> float:
    """Quadratic energy weighted by the inverse equilibrium laws."""
    return sum(
        weight * float((v**2 / p).sum())
        for weight, _, _, p, v in _active_groups(w, eq, params)
    )


def energy_dissipation_rate(
    w: PerturbationPair, eq: EquilibriumPair, params: ModelParams
) -> float:
    """Exact dE/dt along the truncated linearized flow, for admissible ``w``.

    Per type, with ratio ``q`` and downward rate ``d``::

        d * (-sum (w[n+1] - w[n])**2 / p[n] + (1 - q) * w[0]**2 / p[0]
             - (1 - q) * w[M]**2 / p[M]) + rate * w[M]

    summed with the type weights, plus ``rate**2 / r_bar``; the total is
    doubled.  On the untruncated chain ``(1 - q) / p[0] = 1`` and the
    ``w[M]`` terms vanish.
    """
    rate = r_w(w, params)
    total = rate * rate / eq.r_bar
    for weight, down, ratio, p, v in _active_groups(w, eq, params):
        jumps = float((np.diff(v) ** 2 / p[:-1]).sum())
        edge = (1.0 - ratio) * (v[0] ** 2 / p[0] - v[-1] ** 2 / p[-1])
        total += weight * down * (edge - jumps) + weight * rate * float(v[-1])
    return 2.0 * total


def energy_rate_fd(
    w: PerturbationPair, eq: EquilibriumPair, params: ModelParams, h: float = 1e-4
) -> float:
    """Centered difference of E along the linearized flow, one RK4 step each way."""
    f = _linear_field(eq, params)
    y = w.vector()
    ahead = PerturbationPair.from_vector(rk4(f, y, h))
    behind = PerturbationPair.from_vector(rk4(f, y, -h))
    return (energy_e(ahead, eq, params) - energy_e(behind, eq, params)) / (2.0 * h)


def linearization_defect(
    w: PerturbationPair, eq: EquilibriumPair, params: ModelParams, eps: float
) -> float:
    """Max-norm of F(p_bar + eps w) - F(p_bar) - eps * linearized_rhs(w)."""
    f = vector_field(params, eq.n_max + 1)
    base = np.concatenate((eq.p_bar_c.probs, eq.p_bar_h.probs))
    linear = linearized_rhs(w, eq, params).vector()
    defect = f(base + eps * w.vector()) - f(base) - eps * linear
    return float(np.abs(defect).max())


@dataclass(frozen=True, eq=False)
class LinearizedTrace:
    times: Vector
    energies: Vector
    rates: Vector
    final: PerturbationPair

    def is_monotone(self, rtol: float = 1e-10) -> bool:
        """E never rises by more than ``rtol`` times its initial value."""
        if self.energies.size < 2:
            return True
        slack = rtol * float(np.abs(self.energies).max())
        return bool(np.diff(self.energies).max() <= slack)

    def fd_residuals(self) -> Vector:
        """Five-point derivative of E minus the closed-form rate, relative.

        NaN at the two points on each end.
        """
        out = np.full(self.energies.size, np.nan)
        if self.energies.size < 5:
            return out
        h = float(self.times[1] - self.times[0])
        e = self.energies
        derivative = (-e[4:] + 8.0 * e[3:-1] - 8.0 * e[1:-3] + e[:-4]) / (12.0 * h)
        rates = self.rates[2:-2]
        scale = np.maximum(np.abs(rates), np.finfo(float).tiny)
        out[2:-2] = np.abs(derivative - rates) / scale
        return out


def integrate_linearized(
    w0: PerturbationPair,
    eq: EquilibriumPair,
    params: ModelParams,
    t_end: float,
    dt: float,
    observe_every: int = 1,
) -> LinearizedTrace:
    """RK4 for the linearized flow; E and dE/dt every ``observe_every`` steps."""
    if t_end < 0.0 or dt <= 0.0 or observe_every < 1:
        msg = (
            "need t_end >= 0, dt > 0, observe_every >= 1 "
            f"(got {t_end}, {dt}, {observe_every})"
        )
        raise ConfigError(msg)
    f = _linear_field(eq, params)
    steps = math.ceil(t_end / dt - 1e-9) if t_end > 0.0 else 0
    h = t_end / steps if steps else dt
    y = w0.vector()
    times, energies, rates = [0.0], [energy_e(w0, eq, params)], [
        energy_dissipation_rate(w0, eq, params)
    ]
    for k in range(1, steps + 1):
        y = rk4(f, y, h)
        if k % observe_every == 0:
            w = PerturbationPair.from_vector(y)
            times.append(k * h)
            energies.append(energy_e(w, eq, params))
            rates.append(energy_dissipation_rate(w, eq, params))
    return LinearizedTrace(
        times=np.array(times),
        energies=np.array(energies),
        rates=np.array(rates),
        final=PerturbationPair.from_vector(y),
    )


def estimate_decay_rate(times: ArrayLike, energies: ArrayLike) -> float:
    """Least-squares slope of -log E; reported only, never asserted."""
    t = np.asarray(times, dtype=np.float64)
    e = np.asarray(energies, dtype=np.float64)
    keep = e > 0.0
    if keep.sum() < 2:
        return math.nan
    slope = np.polyfit(t[keep], np.log(e[keep]), 1)[0]
    return float(-slope)


# ---------------------------------------------------------------------------
# weighted inequality behind the dissipation estimate


def _geometric_weights(r: float, size: int) -> Vector:
    return (1.0 - r) * r ** np.arange(size, dtype=np.float64)


def weighted_poincare_check(r: float, y: ArrayLike, rtol: float = 1e-10) -> bool:
    """Check y[0]**2 <= (1 - r) * r**2 * sum y[n]**2 / p[n] with p[n] = (1 - r) r**n.

    ``y`` must have zero sum and zero first moment.

    Raises:
        InequalityViolatedError: the bound fails beyond ``rtol``.
    """
    if not 0.0 < r < 1.0:
        msg = f"r must lie in (0, 1), got {r}"
        raise ConfigError(msg)
    seq = np.asarray(y, dtype=np.float64)
    lhs = float(seq[0] ** 2)
    p = _geometric_weights(r, seq.size)
    if np.any((p == 0.0) & (seq != 0.0)):
        return True
    terms = np.divide(seq**2, p, out=np.zeros_like(seq), where=p > 0.0)
    rhs = (1.0 - r) * r * r * float(terms.sum())
    if lhs > rhs * (1.0 + rtol) + 1e-300:
        msg = f"y0^2 = {lhs:.6e} exceeds bound {rhs:.6e} at r={r}"
        raise InequalityViolatedError(msg)
    return True


def _moment_rows(size: int) -> Vector:
    return np.array([np.ones(size), np.arange(size, dtype=np.float64)])


def random_poincare_sequence(r: float, n_max: int, rng: np.random.Generator) -> Vector:
    """Random sequence with zero sum and zero first moment."""
    p = _geometric_weights(r, n_max + 1)
    return _project(p * rng.standard_normal(n_max + 1), _moment_rows(n_max + 1), p)


def poincare_lambda(r: float) -> tuple[float, float]:
    """Minimize the Cauchy-Schwarz factor over the multiplier.

    Returns ``(lambda, factor)``; analytically ``1 / (1 + 2m)`` and
    ``r**2 / (1 + r)`` with ``m = r / (1 - r)``.
    """
    m = r / (1.0 - r)
    second = m + 2.0 * m * m

    def factor(lam: float) -> float:
        return lam * lam * second - 2.0 * lam * m + r

    result = minimize_scalar(
        factor, bounds=(0.0, 1.0), method="bounded", options={"xatol": 1e-12}
    )
    return float(result.x), float(result.fun)


def poincare_extremal(r: float, n_max: int) -> Vector:
    """Sequence attaining the bound: y[n] ~ (lambda n - 1) p[n] for n >= 1."""
    lam = 1.0 / (1.0 + 2.0 * r / (1.0 - r))
    p = _geometric_weights(r, n_max + 1)
    n = np.arange(n_max + 1, dtype=np.float64)
    y = (lam * n - 1.0) * p
    y[0] = 0.0
    y[0] = -y.sum()
    return _project(y, _moment_rows(n_max + 1), p)
