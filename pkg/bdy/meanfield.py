"""Truncated mean-field system for the honest and cheater wealth laws.

Both generators are written as the divergence of a nearest-neighbour flux
``J[n] = r * p[n] - down * p[n + 1]`` between bins ``n`` and ``n + 1``, with
``J[-1] = J[n_max] = 0``.  Telescoping makes every output zero-sum, and the
upward flux out of ``n_max`` is suppressed by construction.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from numpy.typing import ArrayLike, NDArray

from bdy.core import MASS_TOLERANCE, EquilibriumPair, ModelParams, WealthPMF, mix
from bdy.errors import ConfigError, LengthMismatchError, NonFiniteStateError

logger = logging.getLogger(__name__)

__all__ = [
    "InvariantObserver",
    "MeanFieldState",
    "Observer",
    "SnapshotObserver",
    "Trajectory",
    "apply_lc",
    "apply_lh",
    "apply_operator",
    "integrate",
    "rate_r",
    "rk4",
    "rk4_step",
    "vector_field",
]

CLAMP_TOLERANCE = 1e-12

Vector = NDArray[np.float64]


@dataclass(frozen=True, eq=False)
class MeanFieldState:
    """Cheater law ``pc`` and honest law ``ph`` at time ``time``."""

    pc: WealthPMF
    ph: WealthPMF
    params: ModelParams
    time: float = 0.0

    def __post_init__(self) -> None:
        if self.pc.n_max != self.ph.n_max:
            msg = f"cheater/honest supports differ: {self.pc.n_max} vs {self.ph.n_max}"
            raise LengthMismatchError(msg)

    @classmethod
    def from_equilibrium(cls, eq: EquilibriumPair) -> MeanFieldState:
        return cls(eq.p_bar_c, eq.p_bar_h, eq.params)

    @property
    def n_max(self) -> int:
        return self.ph.n_max

    def mixture(self) -> WealthPMF:
        return mix(self.pc, self.ph, self.params)

    def weighted_mean(self) -> float:
        """n_h * mean(ph) + n_c * mean(pc); conserved up to boundary flux."""
        return self.params.n_h * self.ph.mean() + self.params.n_c * self.pc.mean()


def _rate(pc: Vector, ph: Vector, params: ModelParams) -> float:
    # 1 - p[0] rather than a tail sum
    rate_c = (1.0 - pc[0]) * (1.0 - params.gamma)
    return params.n_c * rate_c + params.n_h * (1.0 - ph[0])


def rate_r(state: MeanFieldState) -> float:
    """Rate at which a random agent receives a dollar."""
    return _rate(state.pc.probs, state.ph.probs, state.params)


def apply_operator(values: ArrayLike | WealthPMF, r: float, down: float) -> Vector:
    """Generator with upward rate ``r`` and downward rate ``down``.

    Accepts signed inputs; the linearized flow reuses it.
    """
    p = values.probs if isinstance(values, WealthPMF) else np.asarray(values, float)
    flux = r * p[:-1] - down * p[1:]
    out = np.zeros_like(p)
    out[:-1] -= flux
    out[1:] += flux
    return out


def apply_lh(ph: ArrayLike | WealthPMF, r: float) -> Vector:
    """Honest generator: every solvent honest agent gives at unit rate."""
    return apply_operator(ph, r, 1.0)


def apply_lc(pc: ArrayLike | WealthPMF, r: float, gamma: float) -> Vector:
    """Cheater generator: a solvent cheater gives at rate ``1 - gamma``."""
    return apply_operator(pc, r, 1.0 - gamma)


def rk4(f: Callable[[Vector], Vector], y: Vector, dt: float) -> Vector:
    """One classical fourth-order Runge-Kutta step of ``y' = f(y)``."""
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def vector_field(params: ModelParams, size: int) -> Callable[[Vector], Vector]:
    """Right-hand side on the concatenated (pc, ph) vector."""
    down_c = 1.0 - params.gamma

    def f(y: Vector) -> Vector:
        pc, ph = y[:size], y[size:]
        r = _rate(pc, ph, params)
        dpc = apply_operator(pc, r, down_c)
        return np.concatenate((dpc, apply_operator(ph, r, 1.0)))

    return f


def _sanitize(p: Vector, label: str, time: float) -> Vector:
    low = float(p.min())
    if low < 0.0:
        level = logging.DEBUG if low >= -CLAMP_TOLERANCE else logging.WARNING
        logger.log(level, "clamping %s entries to %.3e at t=%.6g", label, low, time)
        p = np.maximum(p, 0.0)
    mass = float(p.sum())
    if abs(mass - 1.0) > MASS_TOLERANCE:
        logger.warning("renormalizing %s: mass %.12f at t=%.6g", label, mass, time)
        p = p / mass
    return p


def rk4_step(state: MeanFieldState, dt: float) -> MeanFieldState:
    """Advance both laws by ``dt``; r is recomputed at every stage.

    Raises:
        NonFiniteStateError: the update produced NaN or Inf.
    """
    if dt <= 0.0:
        msg = f"dt must be positive, got {dt}"
        raise ConfigError(msg)
    size = state.n_max + 1
    y = np.concatenate((state.pc.probs, state.ph.probs))
    y_next = rk4(vector_field(state.params, size), y, dt)
    time = state.time + dt
    if not np.all(np.isfinite(y_next)):
        msg = f"non-finite mean-field state at t={time:.6g} (dt={dt})"
        raise NonFiniteStateError(msg)
    pc = _sanitize(y_next[:size], "cheater", time)
    ph = _sanitize(y_next[size:], "honest", time)
    return MeanFieldState(WealthPMF(pc), WealthPMF(ph), state.params, time)


class Observer(Protocol):
    def __call__(self, state: MeanFieldState) -> None: ...


@dataclass
class SnapshotObserver:
    """Keeps the cheater, honest and mixed laws at each observed time."""

    snapshots: list[MeanFieldState] = field(default_factory=list)

    def __call__(self, state: MeanFieldState) -> None:
        self.snapshots.append(state)

    def rows(self) -> list[dict[str, object]]:
        """Tidy rows: time, group (c/h/mix), n, probability."""
        out: list[dict[str, object]] = []
        for state in self.snapshots:
            laws = (("c", state.pc), ("h", state.ph), ("mix", state.mixture()))
            for group, pmf in laws:
                out.extend(
                    {"time": state.time, "group": group, "n": n, "probability": p}
                    for n, p in enumerate(pmf.probs.tolist())
                )
        return out


@dataclass
class InvariantObserver:
    """Records mass and weighted-mean drift relative to the first state seen."""

    times: list[float] = field(default_factory=list)
    mass_c: list[float] = field(default_factory=list)
    mass_h: list[float] = field(default_factory=list)
    mean_drift: list[float] = field(default_factory=list)
    _reference_mean: float | None = None

    def __call__(self, state: MeanFieldState) -> None:
        mean = state.weighted_mean()
        if self._reference_mean is None:
            self._reference_mean = mean
        self.times.append(state.time)
        self.mass_c.append(state.pc.total())
        self.mass_h.append(state.ph.total())
        self.mean_drift.append(mean - self._reference_mean)

    @property
    def max_mass_drift(self) -> float:
        drifts = [abs(m - 1.0) for m in (*self.mass_c, *self.mass_h)]
        return max(drifts, default=0.0)

    @property
    def max_mean_drift(self) -> float:
        return max((abs(d) for d in self.mean_drift), default=0.0)


@dataclass(frozen=True, eq=False)
class Trajectory:
    final: MeanFieldState
    steps: int
    dt: float


def integrate(
    initial: MeanFieldState,
    t_end: float,
    dt: float,
    observers: Sequence[Observer] = (),
    observe_every: int = 1,
) -> Trajectory:
    """Fixed-step RK4 from ``initial.time`` to ``initial.time + t_end``.

    Observers see the initial state, every ``observe_every``-th step and the
    final state.  When ``t_end`` is not a multiple of ``dt`` the step is
    shrunk so the horizon is hit exactly.
    """
    if t_end < 0.0:
        msg = f"t_end must be nonnegative, got {t_end}"
        raise ConfigError(msg)
    if dt <= 0.0 or observe_every < 1:
        msg = f"need dt > 0 and observe_every >= 1 (dt={dt}, every={observe_every})"
        raise ConfigError(msg)

    for observe in observers:
        observe(initial)
    if t_end == 0.0:
        return Trajectory(final=initial, steps=0, dt=dt)

    steps = max(1, math.ceil(t_end / dt - 1e-9))
    h = t_end / steps
    state = initial
    for k in range(1, steps + 1):
        state = rk4_step(state, h)
        # pin the clock to the grid instead of accumulating round-off
        state = MeanFieldState(state.pc, state.ph, state.params, initial.time + k * h)
        if k % observe_every == 0 or k == steps:
            for observe in observers:
                observe(state)
    logger.debug("integrated %d steps of %.3g to t=%.6g", steps, h, state.time)
    return Trajectory(final=state, steps=steps, dt=h)
