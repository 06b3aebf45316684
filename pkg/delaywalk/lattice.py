"""
Exact-law oracle for atomic integer-jump scenarios.

Integrates the delayed master equation

    duᵢ/dt = Σ_k w_k α(t, θ_k) u_{i-j_k}(t + θ_k) - λ(t) uᵢ(t)

on an integer window with classical RK4. Delayed states read cubic-Hermite
dense output of completed steps (method of steps); h divides every |θ_k|
and 1, so delayed stage times fall on grid points or interval midpoints.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Deque, List, Optional, Sequence, Tuple

import numpy as np

from delaywalk import settings
from delaywalk.exceptions import ConfigurationError, StepSizeError
from delaywalk.measures import StripMeasure
from delaywalk.rates import RatePolicy

logger = logging.getLogger(__name__)

MAX_LATTICE_DIMENSION = 2


@dataclass(frozen=True)
class LatticeInitial:
    """Probability vector on integer points, held constant on [-1, 0]."""
    offsets: np.ndarray
    masses: np.ndarray

    @classmethod
    def dirac(cls, point: Sequence[int]) -> "LatticeInitial":
        return cls(np.atleast_2d(np.asarray(point, dtype=np.int64)), np.array([1.0]))

    @classmethod
    def from_points(cls, points: Sequence[Sequence[float]], masses: Sequence[float]) -> "LatticeInitial":
        points = np.atleast_2d(np.asarray(points, dtype=float))
        masses = np.asarray(masses, dtype=float)
        if not np.allclose(points, np.rint(points), rtol=0.0, atol=1e-12):
            raise ConfigurationError("Lattice initial law must sit on integer points")
        if np.any(masses < 0) or abs(masses.sum() - 1.0) > settings.PROBABILITY_MASS_TOL:
            raise ConfigurationError("Lattice initial masses must be a probability vector")
        return cls(np.rint(points).astype(np.int64), masses)

    @property
    def dimension(self) -> int:
        return self.offsets.shape[1]


@dataclass(frozen=True)
class LatticeLaw:
    """
    Law of X(t) on integer offsets.

    Attributes:
        offsets: Integer points, shape (m, N)
        masses: Probabilities, summing to 1
        renormalization: Raw mass the state was divided by
        t: Time of the law
    """
    offsets: np.ndarray
    masses: np.ndarray
    renormalization: float
    t: float

    @property
    def dimension(self) -> int:
        return self.offsets.shape[1]

    def mean(self) -> np.ndarray:
        return self.masses @ self.offsets

    def covariance(self) -> np.ndarray:
        centred = self.offsets - self.mean()
        return np.einsum("k,ki,kj->ij", self.masses, centred, centred)

    def mass_at(self, point: Sequence[int]) -> float:
        hit = np.all(self.offsets == np.asarray(point, dtype=np.int64), axis=1)
        return float(self.masses[hit].sum())

    def support(self, threshold: float = 0.0) -> "LatticeLaw":
        """Copy restricted to points with mass above threshold."""
        keep = self.masses > threshold
        return LatticeLaw(self.offsets[keep], self.masses[keep], self.renormalization, self.t)


# ==================== WINDOW ARITHMETIC ====================

def _shift(u: np.ndarray, jump: np.ndarray) -> np.ndarray:
    """out[i] = u[i - jump]; mass leaving the window is dropped."""
    out = np.zeros_like(u)
    dst, src = [], []
    for s, size in zip(jump, u.shape):
        s = int(s)
        if abs(s) >= size:
            return out
        if s >= 0:
            dst.append(slice(s, size))
            src.append(slice(0, size - s))
        else:
            dst.append(slice(0, size + s))
            src.append(slice(-s, size))
    out[tuple(dst)] = u[tuple(src)]
    return out


def _pad(u: np.ndarray, low: np.ndarray, high: np.ndarray) -> np.ndarray:
    return np.pad(u, [(int(a), int(b)) for a, b in zip(low, high)])


def _edge_mass(u: np.ndarray, axis: int, width: int, upper: bool) -> float:
    width = min(width, u.shape[axis])
    index = [slice(None)] * u.ndim
    index[axis] = slice(u.shape[axis] - width, None) if upper else slice(0, width)
    return float(np.abs(u[tuple(index)]).sum())


# ==================== EVOLUTION ====================

class LatticeEvolution:
    """
    Grid states of the lattice system on [0, horizon].

    Each record keeps the window origin it was computed on, so window
    growth never rewrites earlier states.
    """

    def __init__(self, step: float, dimension: int):
        self.step = step
        self.dimension = dimension
        self.origins: List[np.ndarray] = []
        self.values: List[np.ndarray] = []
        self.slopes: List[np.ndarray] = []
        self.mass_errors: List[float] = []
        self.min_value = 0.0

    @property
    def horizon(self) -> float:
        return (len(self.values) - 1) * self.step

    @property
    def max_mass_error(self) -> float:
        return max(self.mass_errors) if self.mass_errors else 0.0

    def record(self, origin: np.ndarray, value: np.ndarray, slope: np.ndarray) -> None:
        self.origins.append(origin.copy())
        self.values.append(value)
        self.slopes.append(slope)
        self.mass_errors.append(abs(float(value.sum()) - 1.0))

    def state(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """(origin, state) at t, Hermite-interpolated between grid points."""
        if t < -1e-12 or t > self.horizon + 1e-9:
            raise ConfigurationError(f"t={t:g} outside the solved range [0, {self.horizon:g}]")
        position = max(t, 0.0) / self.step
        k = int(round(position))
        if abs(position - k) < 1e-9:
            return self.origins[k], self.values[k]
        k = min(int(position), len(self.values) - 2)
        u = position - k
        origin = self.origins[k + 1]
        left_value, left_slope = self.values[k], self.slopes[k]
        grow_low = self.origins[k] - origin
        if np.any(grow_low) or left_value.shape != self.values[k + 1].shape:
            high = np.array(self.values[k + 1].shape) - np.array(left_value.shape) - grow_low
            left_value = _pad(left_value, grow_low, high)
            left_slope = _pad(left_slope, grow_low, high)
        h = self.step
        u2, u3 = u * u, u * u * u
        value = (
            (2 * u3 - 3 * u2 + 1) * left_value
            + (u3 - 2 * u2 + u) * h * left_slope
            + (-2 * u3 + 3 * u2) * self.values[k + 1]
            + (u3 - u2) * h * self.slopes[k + 1]
        )
        return origin, value


class _Ring:
    """Last few grid states aligned with the current window."""

    def __init__(self, size: int):
        self.values: Deque[np.ndarray] = deque(maxlen=size)
        self.slopes: Deque[np.ndarray] = deque(maxlen=size)
        self.last = -1

    def push(self, value: np.ndarray) -> None:
        self.values.append(value)
        self.slopes.append(None)
        self.last += 1

    def set_slope(self, slope: np.ndarray) -> None:
        self.slopes[-1] = slope

    def get(self, index: int) -> Tuple[np.ndarray, np.ndarray]:
        offset = len(self.values) - 1 - (self.last - index)
        return self.values[offset], self.slopes[offset]

    def grow(self, low: np.ndarray, high: np.ndarray) -> None:
        self.values = deque((_pad(v, low, high) for v in self.values), maxlen=self.values.maxlen)
        self.slopes = deque(
            (None if s is None else _pad(s, low, high) for s in self.slopes),
            maxlen=self.slopes.maxlen,
        )


def solve_lattice(
    measure: StripMeasure,
    policy: RatePolicy,
    initial: LatticeInitial,
    horizon: float,
    step: float = settings.LATTICE_STEP,
) -> LatticeEvolution:
    """
    Integrate the lattice system up to the horizon.

    Args:
        measure: Atomic strip measure with integer jumps
        policy: Rate policy
        initial: Initial law, constant on [-1, 0]
        horizon: Final time T ≥ 0
        step: Step h dividing 1 and every |θ_k|

    Returns:
        LatticeEvolution

    Raises:
        ConfigurationError: Non-atomic Q, non-integer jumps, bad step
        StepSizeError: Mass leak above the configured bound
    """
    atoms = measure.atoms()
    if atoms is None:
        raise ConfigurationError("The lattice oracle needs an atomic strip measure")
    weights, thetas, points = atoms
    if not np.allclose(points, np.rint(points), rtol=0.0, atol=1e-12):
        raise ConfigurationError("The lattice oracle needs integer jump atoms")
    jumps = np.rint(points).astype(np.int64)
    dimension = jumps.shape[1]
    if dimension > MAX_LATTICE_DIMENSION:
        raise ConfigurationError(f"Lattice windows support N ≤ {MAX_LATTICE_DIMENSION}, got {dimension}")
    if initial.dimension != dimension:
        raise ConfigurationError(f"Initial law has dimension {initial.dimension}, Q has {dimension}")
    if horizon < 0:
        raise ConfigurationError(f"Horizon must be nonnegative, got {horizon}")
    if not policy.covers(horizon):
        raise ConfigurationError(f"Rate policy does not cover horizon {horizon:g}")
    if not step > 0 or abs(1.0 / step - round(1.0 / step)) > 1e-9:
        raise ConfigurationError(f"Lattice step must divide 1, got {step}")
    lags_exact = -np.asarray(thetas) / step
    lags = np.rint(lags_exact).astype(int)
    if np.any(np.abs(lags_exact - lags) > 1e-9):
        raise ConfigurationError(f"Lattice step {step:g} must divide every delay")

    h = step
    steps = int(math.ceil(horizon / h - 1e-9))
    weights = np.asarray(weights, dtype=float)
    thetas = np.asarray(thetas, dtype=float)

    # Window: initial support padded by a Poisson tail bound on the jump count
    bound = max(
        policy.envelope(measure, s, min(s + 1.0, max(horizon, s + 1e-12)))
        for s in np.arange(0.0, max(horizon, 1e-12), 1.0)
    )
    reach = bound * horizon + 6.0 * math.sqrt(bound * horizon)
    pad_low = np.ceil(reach * np.maximum(0, -jumps.min(axis=0))).astype(np.int64)
    pad_high = np.ceil(reach * np.maximum(0, jumps.max(axis=0))).astype(np.int64)
    origin = initial.offsets.min(axis=0) - pad_low
    shape = initial.offsets.max(axis=0) + pad_high - origin + 1
    state = np.zeros(tuple(shape))
    np.add.at(state, tuple((initial.offsets - origin).T), initial.masses)
    init_state = state.copy()
    logger.info(f"Lattice window {tuple(shape)} at origin {origin.tolist()}, {steps} steps of {h:g}")

    current = lags == 0
    lagged = np.flatnonzero(~current)
    instant = np.flatnonzero(current)
    layer = np.maximum(1, np.abs(jumps).max(axis=0))
    grows_low = jumps.min(axis=0) < 0
    grows_high = jumps.max(axis=0) > 0

    ring = _Ring(int(lags.max()) + 2)
    ring.push(state)

    def coefficients(s: float) -> np.ndarray:
        return weights * np.asarray(policy.evaluate(s, thetas), dtype=float)

    def delayed(n: int, lag: int, half: int) -> np.ndarray:
        """State at (n + half/2 - lag)·h for half in {0, 1, 2}."""
        if half == 1:
            left = n - lag
            if left + 1 <= 0:
                return init_state
            v0, s0 = ring.get(left)
            v1, s1 = ring.get(left + 1)
            return 0.5 * (v0 + v1) + h * (s0 - s1) / 8.0
        index = n + half // 2 - lag
        if index <= 0:
            return init_state
        return ring.get(index)[0]

    def rhs(s: float, v: np.ndarray, n: int, half: int) -> np.ndarray:
        c = coefficients(s)
        out = -c.sum() * v
        for k in instant:
            out += c[k] * _shift(v, jumps[k])
        for k in lagged:
            out += c[k] * _shift(delayed(n, lags[k], half), jumps[k])
        return out

    evolution = LatticeEvolution(h, dimension)
    for n in range(steps):
        t = n * h
        k1 = rhs(t, state, n, 0)
        ring.set_slope(k1)
        evolution.record(origin, state, k1)
        k2 = rhs(t + 0.5 * h, state + 0.5 * h * k1, n, 1)
        k3 = rhs(t + 0.5 * h, state + 0.5 * h * k2, n, 1)
        k4 = rhs(t + h, state + h * k3, n, 2)
        state = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

        low_value = float(state.min())
        evolution.min_value = min(evolution.min_value, low_value)
        if low_value < -settings.LATTICE_MASS_LEAK:
            raise StepSizeError(f"Lattice state turned negative ({low_value:.3e}) at t={t + h:g}")
        state = np.maximum(state, 0.0) if low_value < 0 else state
        leak = abs(float(state.sum()) - 1.0)
        if leak > settings.LATTICE_MASS_LEAK:
            raise StepSizeError(f"Lattice mass leak {leak:.3e} at t={t + h:g}; reduce the step")
        ring.push(state)

        grow_low = np.zeros(dimension, dtype=np.int64)
        grow_high = np.zeros(dimension, dtype=np.int64)
        for axis in range(dimension):
            if grows_low[axis] and _edge_mass(state, axis, layer[axis], False) > settings.LATTICE_BOUNDARY_MASS:
                grow_low[axis] = max(pad_low[axis], layer[axis])
            if grows_high[axis] and _edge_mass(state, axis, layer[axis], True) > settings.LATTICE_BOUNDARY_MASS:
                grow_high[axis] = max(pad_high[axis], layer[axis])
        if np.any(grow_low) or np.any(grow_high):
            logger.debug(f"Growing lattice window by {grow_low.tolist()} / {grow_high.tolist()} at t={t + h:g}")
            ring.grow(grow_low, grow_high)
            init_state = _pad(init_state, grow_low, grow_high)
            state = ring.values[-1]
            origin = origin - grow_low

    final_slope = rhs(steps * h, state, steps, 0)
    ring.set_slope(final_slope)
    evolution.record(origin, state, final_slope)
    logger.info(f"Lattice solved to t={steps * h:g}; max mass error {evolution.max_mass_error:.3e}")
    return evolution


def marginal_law(evolution: LatticeEvolution, t: float) -> LatticeLaw:
    """
    Normalized law of X(t) from the lattice evolution.

    Raises:
        StepSizeError: If the raw mass at t is off by more than LATTICE_MASS_TOL
    """
    origin, state = evolution.state(t)
    total = float(state.sum())
    if abs(total - 1.0) > settings.LATTICE_MASS_TOL:
        raise StepSizeError(f"Lattice mass at t={t:g} is {total:.15g}; reduce the step")
    grid = np.indices(state.shape).reshape(state.ndim, -1).T + origin
    masses = np.maximum(state.ravel(), 0.0)
    return LatticeLaw(grid.astype(np.int64), masses / masses.sum(), total, float(t))
