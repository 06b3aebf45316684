"""
Rate policies - the jump-rate family α(t, θ) and its limit α∞(θ).

Provides an abstract base class and a registry so scenarios can build any
policy by kind. Every policy exposes the total intensity
λ(t) = ∫ α(t, θ) Q(dθ, dz), its limit λ∞ and upper envelopes used by
Poisson thinning.
"""

import logging
import math
from abc import ABC, abstractmethod
from enum import Enum
from typing import Callable, Dict, List, Optional, Type

import numpy as np

from delaywalk import settings
from delaywalk.dde import DelayKernel, DenseSolution, dominant_root, solve
from delaywalk.exceptions import ConfigurationError
from delaywalk.measures import StripMeasure, ThetaMeasure, UniformDensity

logger = logging.getLogger(__name__)


class RateKind(Enum):
    """Families of rate policies."""
    CONSTANT_ONE = "constant_one"
    SEPARABLE = "separable"
    HYPERBOLIC_DDE = "hyperbolic_dde"


class ExponentialRate:
    """α∞(θ) = scale · e^{rate·θ}."""

    def __init__(self, scale: float = 1.0, rate: float = 0.0):
        if not scale > 0:
            raise ConfigurationError(f"Rate scale must be positive, got {scale}")
        self.scale = float(scale)
        self.rate = float(rate)

    def __call__(self, thetas):
        return self.scale * np.exp(self.rate * np.asarray(thetas, dtype=float))


class RatePolicy(ABC):
    """
    Abstract base class for α(t, θ).

    Policies are immutable after construction and safe to share.
    """

    kind: RateKind

    # True when α(t, ·) does not depend on θ, so tilted sampling reduces to Q
    theta_uniform: bool = False

    @abstractmethod
    def evaluate(self, t: float, theta):
        """α(t, θ) for scalar t and scalar or array θ."""
        pass

    @abstractmethod
    def limit(self, theta):
        """α∞(θ)."""
        pass

    @abstractmethod
    def envelope(self, measure: StripMeasure, t0: float, t1: float) -> float:
        """
        Upper bound λ̄ ≥ λ(s) for every s in [t0, t1].

        Args:
            measure: Strip measure Q
            t0: Window start
            t1: Window end (t1 > t0)

        Returns:
            The envelope rate
        """
        pass

    def covers(self, horizon: float) -> bool:
        """Whether the policy can be evaluated on [0, horizon]."""
        return True

    def sup_theta(self, t: float, measure: Optional[StripMeasure] = None) -> float:
        """sup_θ α(t, θ) over Q's θ-support, or over [-1, 0] without Q."""
        theta = measure.theta_marginal() if measure is not None else _UNIFORM_THETA
        return theta.sup(lambda th: self.evaluate(t, th))

    def lambda_t(self, measure: StripMeasure, t: float) -> float:
        """λ(t) = ∫ α(t, θ) Q(dθ, dz)."""
        if t < 0:
            raise ConfigurationError(f"λ(t) needs t ≥ 0, got {t}")
        return float(measure.moment(lambda th: self.evaluate(t, th)))

    def lambda_inf(self, measure: StripMeasure) -> float:
        """λ∞ = ∫ α∞(θ) Q(dθ, dz)."""
        value = float(measure.moment(self.limit))
        if not value > 0:
            raise ConfigurationError(f"λ∞ must be positive, got {value}")
        return value

    def describe(self) -> Dict[str, object]:
        return {"kind": self.kind.value}


class ConstantOne(RatePolicy):
    """α ≡ 1."""

    kind = RateKind.CONSTANT_ONE
    theta_uniform = True

    def evaluate(self, t, theta):
        return np.ones_like(np.asarray(theta, dtype=float))

    def limit(self, theta):
        return np.ones_like(np.asarray(theta, dtype=float))

    def lambda_t(self, measure, t):
        return 1.0

    def lambda_inf(self, measure):
        return 1.0

    def sup_theta(self, t, measure=None):
        return 1.0

    def envelope(self, measure, t0, t1):
        return 1.0


class Separable(RatePolicy):
    """
    α(t, θ) = α∞(θ) + M e^{-βt} with M of either sign.

    The transient is the extremal case of |α(t, θ) - α∞(θ)| ≤ |M| e^{-βt}.
    A negative M approaches α∞ from below; it must keep α positive, i.e.
    min α∞ + M > 0 on [-1, 0].
    """

    kind = RateKind.SEPARABLE

    def __init__(self, base: Callable, amplitude: float = 0.0, decay: float = 1.0):
        if amplitude != 0 and not decay > 0:
            raise ConfigurationError(f"Perturbation decay must be positive, got {decay}")
        if amplitude < 0:
            floor = float(np.min(base(np.linspace(-1.0, 0.0, 1001))))
            if not floor + amplitude > 0:
                raise ConfigurationError(
                    f"Amplitude {amplitude} drives α below zero (min α∞ = {floor:.12g})"
                )
        self.base = base
        self.amplitude = float(amplitude)
        self.decay = float(decay)
        self.theta_uniform = isinstance(base, ExponentialRate) and base.rate == 0.0

    def _transient(self, t: float) -> float:
        return self.amplitude * math.exp(-self.decay * t) if self.amplitude else 0.0

    def evaluate(self, t, theta):
        return self.base(theta) + self._transient(t)

    def limit(self, theta):
        return self.base(theta)

    def envelope(self, measure, t0, t1):
        # Q has unit mass; a negative transient is increasing towards 0
        return self.lambda_inf(measure) + max(self._transient(t0), 0.0)

    def describe(self):
        return {
            "kind": self.kind.value,
            "amplitude": self.amplitude,
            "decay": self.decay,
        }


class HyperbolicDDE(RatePolicy):
    """
    α(t, θ) = a e^{-bθ} y(t+θ) / y(t), with y solving
    y'(t) = a ∫ e^{-bθ} y(t+θ) η(dθ) from the history y⁰.

    The delay equation is solved once, up to horizon + 1, at construction;
    α∞(θ) = a e^{(γ-b)θ} with γ the dominant characteristic root.
    """

    kind = RateKind.HYPERBOLIC_DDE

    def __init__(
        self,
        a: float,
        b: float,
        eta: ThetaMeasure,
        history: Callable,
        horizon: float,
        step: float = settings.DDE_STEP,
    ):
        self.a = float(a)
        self.b = float(b)
        self.eta = eta
        self.history = history
        self.kernel = DelayKernel.from_hyperbolic(self.a, self.b, eta)
        self.gamma = dominant_root(self.kernel)
        y_zero = float(np.asarray(history(np.array([0.0])))[0])
        if not y_zero > 0:
            raise ConfigurationError(f"Hyperbolic history needs y⁰(0) > 0, got {y_zero}")
        self.solution: DenseSolution = solve(
            self.kernel,
            history,
            horizon + settings.DDE_HORIZON_PAD,
            step,
            growth=self.gamma,
        )
        grid = np.asarray(history(np.linspace(-1.0, 0.0, 1001)), dtype=float)
        # Bound on y⁰(s)/y(t) while t < 1 reads the history
        self._history_factor = max(1.0, float(grid.max()) / y_zero) * (1.0 + 1e-9)
        logger.info(f"Hyperbolic rate ready: a={self.a}, b={self.b}, γ={self.gamma:.12g}")

    @property
    def horizon(self) -> float:
        return self.solution.horizon

    def covers(self, horizon: float) -> bool:
        return horizon <= self.solution.horizon

    def evaluate(self, t, theta):
        theta = np.asarray(theta, dtype=float)
        return self.a * np.exp(-self.b * theta) * self.solution.ratio(t, theta)

    def limit(self, theta):
        theta = np.asarray(theta, dtype=float)
        return self.a * np.exp((self.gamma - self.b) * theta)

    def envelope(self, measure, t0, t1):
        # y is nondecreasing on [0, ∞), so y(t+θ)/y(t) ≤ 1 once t+θ ≥ 0
        weight = measure.theta_marginal().sup(lambda th: self.a * np.exp(-self.b * th))
        factor = 1.0 if t0 >= 1.0 else self._history_factor
        return weight * factor * (1.0 + 1e-9)

    def log_y(self, t):
        return self.solution.log_y(t)

    def intensity_measure(self, s: float, t: float) -> float:
        """Λ((s, t]) = log(y(t)/y(s)), valid when Q's θ-marginal is η."""
        return float(self.log_y(t) - self.log_y(s))

    def describe(self):
        return {
            "kind": self.kind.value,
            "a": self.a,
            "b": self.b,
            "gamma": self.gamma,
            "dde_step": self.solution.step,
            "dde_horizon": self.solution.horizon,
        }


class RatePolicyRegistry:
    """
    Central registry of rate policy families.

    Maps a RateKind to the class that builds it.
    """

    def __init__(self):
        self._policies: Dict[RateKind, Type[RatePolicy]] = {}

    def register(self, policy_class: Type[RatePolicy]):
        """Register a policy class under its kind."""
        self._policies[policy_class.kind] = policy_class
        logger.debug(f"Registered rate policy: {policy_class.kind.value}")

    def create(self, kind: RateKind, **params) -> RatePolicy:
        """Build a policy of the given kind."""
        policy_class = self._policies.get(kind)
        if policy_class is None:
            raise ConfigurationError(f"Unknown rate policy: {kind}")
        return policy_class(**params)

    def get_kinds(self) -> List[RateKind]:
        return list(self._policies.keys())


_UNIFORM_THETA = ThetaMeasure.from_density(UniformDensity())

# Global registry instance (singleton)
_registry = None


def get_registry() -> RatePolicyRegistry:
    """Get the global rate policy registry."""
    global _registry
    if _registry is None:
        _registry = RatePolicyRegistry()
        for policy_class in (ConstantOne, Separable, HyperbolicDDE):
            _registry.register(policy_class)
    return _registry
