"""
Scalar linear delay differential equation y'(t) = ∫ y(t+θ) K(dθ).

Provides the fixed-step fourth-order solver with cubic-Hermite dense output
(method of steps), the characteristic function Δ(z) = z - ∫ e^{θz} K(dθ)
and its unique positive root γ, which drives the hyperbolic rate family.

Stored values are w(t) = e^{-g t} y(t) for a chosen growth rate g, so
horizons of several hundred time units never overflow.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Union

import numpy as np
from scipy.optimize import bisect, newton

from delaywalk import settings
from delaywalk.exceptions import ConfigurationError, DelayWalkError, NumericalError, StepSizeError
from delaywalk.measures import (
    ThetaMeasure,
    evaluate_theta_function,
    gauss_legendre,
)

logger = logging.getLogger(__name__)

Number = Union[float, complex]


# ==================== INITIAL HISTORIES ====================

class ConstantHistory:
    """y⁰(θ) = value on [-1, 0]."""

    def __init__(self, value: float = 1.0):
        self.value = float(value)

    def __call__(self, thetas):
        return np.full(np.shape(thetas), self.value) if np.ndim(thetas) else self.value


class LinearHistory:
    """y⁰(θ) = intercept + slope·θ on [-1, 0]."""

    def __init__(self, intercept: float, slope: float = 0.0):
        self.intercept = float(intercept)
        self.slope = float(slope)

    def __call__(self, thetas):
        return self.intercept + self.slope * np.asarray(thetas, dtype=float)


class TiltedDensity:
    """Normalized density proportional to η(θ) e^{-bθ}."""

    def __init__(self, base: Callable, b: float, norm: float):
        self.base = base
        self.b = float(b)
        self.norm = float(norm)

    def __call__(self, thetas):
        thetas = np.asarray(thetas, dtype=float)
        return self.base(thetas) * np.exp(-self.b * thetas) / self.norm


# ==================== DELAY KERNEL ====================

class DelayKernel:
    """
    Bounded positive measure K(dθ) on [-1, 0], stored as a probability
    measure scaled by its total mass.
    """

    def __init__(self, measure: ThetaMeasure, mass: float):
        if not mass > 0:
            raise ConfigurationError(f"Delay kernel mass must be positive, got {mass}")
        self.measure = measure
        self.mass = float(mass)

    @classmethod
    def dirac(cls, mass: float, theta: float = 0.0) -> "DelayKernel":
        return cls(ThetaMeasure.dirac(theta), mass)

    @classmethod
    def from_hyperbolic(cls, a: float, b: float, eta: ThetaMeasure) -> "DelayKernel":
        """K(dθ) = a e^{-bθ} η(dθ) for the transport equation with delay."""
        if not a > 0:
            raise ConfigurationError(f"Hyperbolic coefficient a must be positive, got {a}")
        if eta.is_atomic:
            raw = eta.weights * np.exp(-b * eta.thetas)
            return cls(ThetaMeasure.atomic(raw / raw.sum(), eta.thetas), a * raw.sum())
        norm = float(eta.integrate(lambda th: np.exp(-b * th)))
        density = TiltedDensity(eta.density, b, norm)
        return cls(ThetaMeasure.from_density(density, eta.nodes), a * norm)

    def integrate(self, fn: Callable) -> np.ndarray:
        return self.mass * self.measure.integrate(fn)

    def laplace(self, z: Number) -> Number:
        """∫ e^{θz} K(dθ) for real or complex z."""
        if isinstance(z, complex):
            x, y = z.real, z.imag
            re = self.integrate(lambda th: np.exp(th * x) * np.cos(th * y))
            im = self.integrate(lambda th: np.exp(th * x) * np.sin(th * y))
            return complex(float(re), float(im))
        return float(self.integrate(lambda th: np.exp(th * z)))

    def nodes(self):
        """(offsets, weights) used to evaluate ∫ y(t+θ) K(dθ) in the integrator."""
        if self.measure.is_atomic:
            return np.array(self.measure.thetas), self.mass * np.array(self.measure.weights)
        x, w = gauss_legendre(2 * self.measure.nodes)
        return x, self.mass * w * evaluate_theta_function(self.measure.density, x)


def characteristic_delta(z: Number, kernel: DelayKernel) -> Number:
    """Δ(z) = z - ∫ e^{θz} K(dθ)."""
    return z - kernel.laplace(z)


def characteristic_delta_prime(z: float, kernel: DelayKernel) -> float:
    """Δ'(z) = 1 - ∫ θ e^{θz} K(dθ) ≥ 1."""
    return 1.0 - float(kernel.integrate(lambda th: th * np.exp(th * z)))


def dominant_root(kernel: DelayKernel) -> float:
    """
    Unique positive zero γ of Δ.

    Δ is increasing with Δ(0) = -m < 0 ≤ Δ(m), so bisection on [0, m]
    brackets the root and Newton polishes it.

    Returns:
        γ with |Δ(γ)| ≤ 1e-12
    """
    m = kernel.mass
    lo = characteristic_delta(0.0, kernel)
    hi = characteristic_delta(m, kernel)
    if not lo < 0 <= hi:
        raise NumericalError(f"Root bracket failed: Δ(0)={lo:.6g}, Δ(m)={hi:.6g}")
    if hi == 0.0:
        return m

    delta = lambda z: characteristic_delta(z, kernel)
    try:
        rough = bisect(delta, 0.0, m, xtol=1e-10 * max(m, 1.0))
        gamma = newton(
            delta,
            rough,
            fprime=lambda z: characteristic_delta_prime(z, kernel),
            tol=1e-15,
            maxiter=50,
        )
    except DelayWalkError:
        raise
    except (ArithmeticError, RuntimeError, ValueError) as e:
        raise NumericalError(f"Dominant root search failed (mass {m:.6g}): {e}") from e
    residual = abs(delta(gamma))
    if residual > 1e-12:
        raise NumericalError(f"Dominant root residual {residual:.3e} above 1e-12")
    logger.debug(f"Dominant root γ={gamma:.15g} (mass {m:.6g})")
    return float(gamma)


# ==================== DENSE SOLUTION ====================

@dataclass(frozen=True)
class DenseSolution:
    """
    Grid solution on [0, T] with derivative values for cubic-Hermite
    evaluation; the history y⁰ is read directly on [-1, 0].

    Attributes:
        step: Grid step h
        horizon: Last grid time
        growth: Rate g factored out of the stored values
        values: w(kh) = e^{-g kh} y(kh)
        slopes: w'(kh)
        history: y⁰ on [-1, 0]
    """
    step: float
    horizon: float
    growth: float
    values: np.ndarray
    slopes: np.ndarray
    history: Callable

    def scaled(self, t):
        """w(t) = e^{-g t} y(t) for scalar or array t in [-1, horizon]."""
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < -1.0 - 1e-12) or np.any(t > self.horizon + 1e-9):
            raise ConfigurationError(
                f"Evaluation time outside the solved range [-1, {self.horizon:g}]"
            )
        out = np.empty(t.shape)
        past = t <= 0.0
        if np.any(past):
            out[past] = np.exp(-self.growth * t[past]) * self.history(t[past])
        future = ~past
        if np.any(future):
            out[future] = self._hermite(t[future])
        return float(out[0]) if scalar else out

    def _hermite(self, t: np.ndarray) -> np.ndarray:
        h = self.step
        k = np.minimum((t / h).astype(int), len(self.values) - 2)
        u = t / h - k
        u2, u3 = u * u, u * u * u
        return (
            (2 * u3 - 3 * u2 + 1) * self.values[k]
            + (u3 - 2 * u2 + u) * h * self.slopes[k]
            + (-2 * u3 + 3 * u2) * self.values[k + 1]
            + (u3 - u2) * h * self.slopes[k + 1]
        )

    def __call__(self, t):
        """y(t)."""
        return np.exp(self.growth * np.asarray(t, dtype=float)) * self.scaled(t)

    def log_y(self, t):
        return self.growth * np.asarray(t, dtype=float) + np.log(self.scaled(t))

    def ratio(self, t: float, theta):
        """y(t+θ) / y(t), computed without forming either factor."""
        base = self.scaled(t)
        if base <= 0:
            raise NumericalError(f"y({t:g}) is not positive; ratio undefined")
        theta = np.asarray(theta, dtype=float)
        return np.exp(self.growth * theta) * self.scaled(t + theta) / base


@dataclass(frozen=True)
class RatioProfile:
    """y(t+θ)/y(t) next to its limit e^{γθ}."""
    ratio: float
    limit: float

    @property
    def error(self) -> float:
        return abs(self.ratio - self.limit)


def ratio_profile(sol: DenseSolution, gamma: float, t: float, theta: float) -> RatioProfile:
    """Compare y(t+θ)/y(t) with its large-time limit e^{γθ}."""
    if t + theta < -1.0:
        raise ConfigurationError(f"t+θ={t + theta:g} lies before the history interval")
    return RatioProfile(float(sol.ratio(t, theta)), math.exp(gamma * theta))


def solve(
    kernel: DelayKernel,
    y0: Callable,
    horizon: float,
    step: float = settings.DDE_STEP,
    growth: float = 0.0,
) -> DenseSolution:
    """
    Integrate y'(t) = ∫ y(t+θ) K(dθ) on [0, horizon] with classical RK4.

    Delayed arguments read the dense output of already completed steps
    (method of steps); arguments in [-1, 0] read y⁰ directly.

    Args:
        kernel: Delay kernel K
        y0: Nonnegative history on [-1, 0], vectorized
        horizon: Final time T > 0 (rounded up to a grid point)
        step: Step h; 1/h must be an integer
        growth: Exponential rate factored out of the stored values

    Returns:
        DenseSolution on [0, T]

    Raises:
        ConfigurationError: Invalid horizon, step or history
        StepSizeError: If the solution turns negative
    """
    if not horizon > 0:
        raise ConfigurationError(f"DDE horizon must be positive, got {horizon}")
    if not step > 0 or abs(1.0 / step - round(1.0 / step)) > 1e-9:
        raise ConfigurationError(f"DDE step must divide 1, got {step}")
    history_grid = np.asarray(y0(np.linspace(-1.0, 0.0, 101)), dtype=float)
    if np.any(history_grid < 0):
        raise ConfigurationError("DDE history must be nonnegative")

    h = step
    g = float(growth)
    steps = int(math.ceil(horizon / h - 1e-9))
    offsets, weights = kernel.nodes()
    current = offsets == 0.0
    c_now = float(weights[current].sum()) - g
    lag_offsets = offsets[~current]
    lag_weights = weights[~current] * np.exp(g * lag_offsets)

    def past(s: float) -> float:
        return math.exp(-g * s) * float(y0(np.array([s]))[0])

    w0 = past(0.0)
    values: List[float] = [w0]
    slopes: List[float] = []

    lags = np.rint(-lag_offsets / h).astype(int)
    aligned = np.allclose(lags * h, -lag_offsets, atol=1e-12) and np.all(lags >= 1)

    if aligned:
        lag_list = [int(m) for m in lags]
        weight_list = [float(c) for c in lag_weights]

        def grid_value(k: int) -> float:
            return values[k] if k >= 0 else past(k * h)

        def mid_value(k: int) -> float:
            # w at (k + 1/2) h
            if k + 1 <= 0:
                return past((k + 0.5) * h)
            return 0.5 * (values[k] + values[k + 1]) + h * (slopes[k] - slopes[k + 1]) / 8.0

        def delayed(n: int, half: int) -> float:
            # ∫ over lags at time nh + half·h/2
            total = 0.0
            for m, c in zip(lag_list, weight_list):
                if half == 1:
                    total += c * mid_value(n - m)
                else:
                    total += c * grid_value(n + half // 2 - m)
            return total
    else:
        def delayed(n: int, half: int) -> float:
            s = (n + 0.5 * half) * h + lag_offsets
            return float(lag_weights @ _dense_lookup(s, n, h, values, slopes, past))

    slopes.append(c_now * w0 + delayed(0, 0))
    for n in range(steps):
        wn, k1 = values[n], slopes[n]
        mid = delayed(n, 1)
        k2 = c_now * (wn + 0.5 * h * k1) + mid
        k3 = c_now * (wn + 0.5 * h * k2) + mid
        end = delayed(n, 2)
        k4 = c_now * (wn + h * k3) + end
        w_next = wn + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        if w_next < -1e-12 * max(abs(wn), 1.0):
            raise StepSizeError(f"DDE solution turned negative at t={(n + 1) * h:g}; reduce the step")
        values.append(w_next)
        slopes.append(c_now * w_next + end)

    logger.info(f"Solved DDE on [0, {steps * h:g}] with {steps} steps (mass {kernel.mass:.6g})")
    return DenseSolution(
        step=h,
        horizon=steps * h,
        growth=g,
        values=np.asarray(values),
        slopes=np.asarray(slopes),
        history=y0,
    )


def _dense_lookup(s: np.ndarray, n: int, h: float, values, slopes, past) -> np.ndarray:
    """
    w at delayed times s while step n is in progress.

    Times beyond the last completed grid point nh come from the Hermite
    cubic of the last completed interval, extended past its end.
    """
    out = np.empty(len(s))
    for i, si in enumerate(s):
        if si <= 0.0:
            out[i] = past(si)
            continue
        k = min(int(si / h), n - 1) if n >= 1 else 0
        if n == 0:
            out[i] = values[0] + slopes[0] * si
            continue
        u = si / h - k
        u2, u3 = u * u, u * u * u
        out[i] = (
            (2 * u3 - 3 * u2 + 1) * values[k]
            + (u3 - 2 * u2 + u) * h * slopes[k]
            + (-2 * u3 + 3 * u2) * values[k + 1]
            + (u3 - u2) * h * slopes[k + 1]
        )
    return out
