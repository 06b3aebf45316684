"""
Strip measures Q(dθ, dz) on S = [-1, 0] x R^N.

A strip measure jointly encodes the delay θ and the displacement z of a
jump. Two forms are supported:

- AtomicStripMeasure: finitely many weighted atoms (θ, z).
- ProductStripMeasure: a θ-marginal times either an independent jump law
  or a deterministic coupling z = qθ.

Moments are exact for atomic pieces and closed-form jump laws; density
θ-marginals use Gauss-Legendre quadrature on [-1, 0] with node doubling.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from delaywalk import settings
from delaywalk.exceptions import ConfigurationError, EnvelopeError, QuadratureError

logger = logging.getLogger(__name__)

ThetaFunction = Callable[[np.ndarray], np.ndarray]


class MomentOrder(Enum):
    """Tensor order of z in a moment integral."""
    SCALAR = "0"   # ∫ f(θ) Q
    FIRST = "z"    # ∫ f(θ) z Q
    SECOND = "zz"  # ∫ f(θ) z zᵀ Q


@dataclass
class SamplingStats:
    """Caller-owned counters for tilted sampling diagnostics."""
    proposals: int = 0
    acceptances: int = 0

    @property
    def acceptance_rate(self) -> float:
        return self.acceptances / self.proposals if self.proposals else 1.0


@lru_cache(maxsize=16)
def gauss_legendre(nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights mapped to [-1, 0]."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    return (x - 1.0) / 2.0, w / 2.0


def evaluate_theta_function(fn: ThetaFunction, thetas: np.ndarray) -> np.ndarray:
    """Evaluate fn on an array of offsets, broadcasting scalar results."""
    values = np.asarray(fn(thetas), dtype=float)
    if values.ndim == 0:
        values = np.full(thetas.shape, float(values))
    if values.shape[0] != thetas.shape[0]:
        raise ConfigurationError(
            f"θ-function returned leading shape {values.shape[0]}, expected {thetas.shape[0]}"
        )
    return values


def integrate_density(
    fn: ThetaFunction,
    density: ThetaFunction,
    nodes: int = settings.QUADRATURE_NODES,
) -> np.ndarray:
    """
    Integrate fn(θ) density(θ) dθ over [-1, 0].

    Nodes are doubled until two successive results agree within the
    configured relative tolerance.

    Args:
        fn: Integrand; may return scalars, vectors or matrices per node
        density: Nonnegative density on [-1, 0]
        nodes: Starting node count

    Returns:
        The integral with fn's trailing shape

    Raises:
        QuadratureError: If doubling reaches the node cap without converging
    """
    previous = None
    n = nodes
    while n <= settings.QUADRATURE_MAX_NODES:
        x, w = gauss_legendre(n)
        weights = w * evaluate_theta_function(density, x)
        result = np.tensordot(weights, evaluate_theta_function(fn, x), axes=(0, 0))
        if previous is not None:
            change = np.max(np.abs(result - previous))
            scale = np.max(np.abs(result))
            if change <= settings.QUADRATURE_RTOL * scale + 1e-14:
                return result
            logger.debug(f"Quadrature change {change:.3e} at {n} nodes, doubling")
        previous = result
        n *= 2
    raise QuadratureError(
        f"Gauss-Legendre quadrature did not converge with {settings.QUADRATURE_MAX_NODES} nodes"
    )


def bounded_maximum(fn: Callable[[float], float], grid_points: int = 257) -> float:
    """Maximum of a smooth scalar function on [-1, 0]: grid scan refined by Brent's method."""
    grid = np.linspace(-1.0, 0.0, grid_points)
    values = evaluate_theta_function(fn, grid)
    best = int(np.argmax(values))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, grid_points - 1)]
    refined = minimize_scalar(
        lambda th: -float(evaluate_theta_function(fn, np.array([th]))[0]),
        bounds=(lo, hi),
        method="bounded",
    )
    return max(float(values[best]), -float(refined.fun))


# ==================== θ-DENSITY FAMILIES ====================

class UniformDensity:
    """Uniform density on [-1, 0]."""

    def __call__(self, thetas: np.ndarray) -> np.ndarray:
        return np.ones_like(thetas, dtype=float)


class ExponentialDensity:
    """Normalized density proportional to e^{kθ} on [-1, 0]."""

    def __init__(self, rate: float):
        self.rate = float(rate)
        self._norm = 1.0 if self.rate == 0 else self.rate / (-np.expm1(-self.rate))

    def __call__(self, thetas: np.ndarray) -> np.ndarray:
        return self._norm * np.exp(self.rate * np.asarray(thetas, dtype=float))


class ThetaMeasure:
    """
    Probability measure on the delay interval [-1, 0].

    Either atomic (weights at offsets) or given by a density integrated with
    Gauss-Legendre quadrature.
    """

    def __init__(
        self,
        thetas: Optional[Sequence[float]] = None,
        weights: Optional[Sequence[float]] = None,
        density: Optional[ThetaFunction] = None,
        nodes: int = settings.QUADRATURE_NODES,
    ):
        if (density is None) == (thetas is None):
            raise ConfigurationError("ThetaMeasure needs either atoms or a density")
        self.nodes = int(nodes)
        self.density = density
        if density is None:
            self.thetas, self.weights = _validate_atoms(thetas, weights)
            self._cdf = np.cumsum(self.weights)
            self._density_bound = None
        else:
            self.thetas = self.weights = None
            mass = float(integrate_density(lambda th: np.ones_like(th), density, self.nodes))
            if abs(mass - 1.0) > 1e-8:
                raise ConfigurationError(f"θ-density has mass {mass:.12g}, expected 1")
            self._density_bound = bounded_maximum(density) * (1.0 + 1e-9)

    @classmethod
    def atomic(cls, weights: Sequence[float], thetas: Sequence[float]) -> "ThetaMeasure":
        return cls(thetas=thetas, weights=weights)

    @classmethod
    def dirac(cls, theta: float) -> "ThetaMeasure":
        return cls(thetas=[theta], weights=[1.0])

    @classmethod
    def from_density(cls, density: ThetaFunction, nodes: int = settings.QUADRATURE_NODES) -> "ThetaMeasure":
        return cls(density=density, nodes=nodes)

    @property
    def is_atomic(self) -> bool:
        return self.density is None

    def integrate(self, fn: ThetaFunction) -> np.ndarray:
        """∫ fn(θ) η(dθ); exact on atoms, quadrature for densities."""
        if self.is_atomic:
            return np.tensordot(self.weights, evaluate_theta_function(fn, self.thetas), axes=(0, 0))
        return integrate_density(fn, self.density, self.nodes)

    def sup(self, fn: ThetaFunction) -> float:
        """Supremum of a scalar θ-function over the support."""
        if self.is_atomic:
            return float(np.max(evaluate_theta_function(fn, self.thetas)))
        return bounded_maximum(fn)

    def sample(self, rng: np.random.Generator) -> float:
        if self.is_atomic:
            if len(self.thetas) == 1:
                return float(self.thetas[0])
            return float(self.thetas[_categorical(self._cdf, rng)])
        # Rejection from the uniform proposal on [-1, 0]
        while True:
            theta = -rng.random()
            value = float(self.density(np.array([theta]))[0])
            if value > self._density_bound:
                raise EnvelopeError(f"θ-density {value:.6g} exceeds its bound at θ={theta:.6g}")
            if rng.random() * self._density_bound < value:
                return theta


# ==================== JUMP MARGINALS ====================

class JumpMarginal(ABC):
    """Law of the displacement z on R^N with closed-form moments."""

    @property
    @abstractmethod
    def dimension(self) -> int:
        pass

    @abstractmethod
    def mean(self) -> np.ndarray:
        pass

    @abstractmethod
    def second_moment(self) -> np.ndarray:
        """E[z zᵀ]."""
        pass

    @abstractmethod
    def sample(self, rng: np.random.Generator) -> np.ndarray:
        pass

    def atoms(self) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """(weights, points) when the law is atomic, else None."""
        return None


class AtomicJumps(JumpMarginal):
    """Finitely many weighted displacement vectors."""

    def __init__(self, weights: Sequence[float], points: Sequence[Sequence[float]]):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.weights = _validate_weights(weights, len(self.points))
        self._cdf = np.cumsum(self.weights)

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def second_moment(self) -> np.ndarray:
        return np.einsum("k,ki,kj->ij", self.weights, self.points, self.points)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if len(self.weights) == 1:
            return self.points[0]
        return self.points[_categorical(self._cdf, rng)]

    def atoms(self) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        return self.weights, self.points


class UniformBox(JumpMarginal):
    """Independent uniform coordinates on [lower_i, upper_i]."""

    def __init__(self, lower: Sequence[float], upper: Sequence[float]):
        self.lower = np.asarray(lower, dtype=float).ravel()
        self.upper = np.asarray(upper, dtype=float).ravel()
        if self.lower.shape != self.upper.shape or np.any(self.upper <= self.lower):
            raise ConfigurationError("UniformBox needs lower < upper in every coordinate")

    @property
    def dimension(self) -> int:
        return len(self.lower)

    def mean(self) -> np.ndarray:
        return (self.lower + self.upper) / 2.0

    def second_moment(self) -> np.ndarray:
        mean = self.mean()
        variance = (self.upper - self.lower) ** 2 / 12.0
        return np.outer(mean, mean) + np.diag(variance)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lower, self.upper)


class GaussianJumps(JumpMarginal):
    """Gaussian displacement with given mean and covariance."""

    def __init__(self, mean: Sequence[float], covariance: Sequence[Sequence[float]]):
        self._mean = np.asarray(mean, dtype=float).ravel()
        self.covariance = np.atleast_2d(np.asarray(covariance, dtype=float))
        n = len(self._mean)
        if self.covariance.shape != (n, n):
            raise ConfigurationError(f"Covariance shape {self.covariance.shape} does not match mean of length {n}")
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-12):
            raise ConfigurationError("Covariance must be symmetric")
        eigenvalues, eigenvectors = np.linalg.eigh(self.covariance)
        if eigenvalues.min() < -1e-12 * max(1.0, eigenvalues.max()):
            raise ConfigurationError("Covariance must be positive semi-definite")
        # Factor tolerating singular covariances
        self._factor = eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))

    @property
    def dimension(self) -> int:
        return len(self._mean)

    def mean(self) -> np.ndarray:
        return self._mean

    def second_moment(self) -> np.ndarray:
        return self.covariance + np.outer(self._mean, self._mean)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self._mean + self._factor @ rng.standard_normal(self.dimension)


class LinearCoupling:
    """Deterministic displacement z = qθ, the transport coupling δ_{qθ}(dz)."""

    def __init__(self, q: Sequence[float]):
        self.q = np.asarray(q, dtype=float).ravel()

    @property
    def dimension(self) -> int:
        return len(self.q)

    def __call__(self, thetas: np.ndarray) -> np.ndarray:
        return np.multiply.outer(np.asarray(thetas, dtype=float), self.q)


# ==================== STRIP MEASURES ====================

class StripMeasure(ABC):
    """
    Probability measure Q(dθ, dz) on [-1, 0] x R^N.

    Instances are immutable after construction; sampling takes a
    caller-supplied random Generator.
    """

    @property
    @abstractmethod
    def dimension(self) -> int:
        pass

    @abstractmethod
    def theta_marginal(self) -> ThetaMeasure:
        pass

    @abstractmethod
    def moment(self, f: ThetaFunction, order: MomentOrder = MomentOrder.SCALAR) -> np.ndarray:
        """
        Return ∫_S f(θ) z^{⊗order} Q(dθ, dz).

        Args:
            f: Vectorized function of θ
            order: SCALAR, FIRST (vector) or SECOND (matrix)

        Returns:
            Scalar, vector of length N or N x N matrix
        """
        pass

    @abstractmethod
    def sample(self, rng: np.random.Generator) -> Tuple[float, np.ndarray]:
        pass

    @abstractmethod
    def sample_tilted(
        self,
        w: ThetaFunction,
        w_sup: float,
        rng: np.random.Generator,
        stats: Optional[SamplingStats] = None,
        force_rejection: bool = False,
    ) -> Tuple[float, np.ndarray]:
        """
        Draw from w(θ) Q(dθ, dz) / ∫ w dQ.

        Atomic θ-supports use exact categorical reweighting; otherwise
        proposals from Q are accepted with probability w(θ) / w_sup.

        Raises:
            EnvelopeError: If w(θ) > w_sup at an examined θ
        """
        pass

    def atoms(self) -> Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """(weights, thetas, points) when Q is fully atomic, else None."""
        return None

    def _check_second_moment(self) -> None:
        second = self.moment(_one, MomentOrder.SECOND)
        if not np.all(np.isfinite(second)):
            raise ConfigurationError("Strip measure must have a finite second moment")

    def _rejection_draw(self, w, w_sup, rng, stats) -> Tuple[float, np.ndarray]:
        while True:
            theta, z = self.sample(rng)
            value = float(evaluate_theta_function(w, np.array([theta]))[0])
            if stats is not None:
                stats.proposals += 1
            if value > w_sup * (1.0 + 1e-12):
                raise EnvelopeError(f"Tilt w(θ)={value:.12g} exceeds envelope {w_sup:.12g} at θ={theta:.6g}")
            if rng.random() * w_sup < value:
                if stats is not None:
                    stats.acceptances += 1
                return theta, z


class AtomicStripMeasure(StripMeasure):
    """Finite mixture of point masses at (θ_k, z_k)."""

    def __init__(
        self,
        weights: Sequence[float],
        thetas: Sequence[float],
        points: Sequence[Sequence[float]],
    ):
        self.thetas, self.weights = _validate_atoms(thetas, weights)
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.points.shape[0] != len(self.weights):
            raise ConfigurationError("Every atom needs a θ, a z and a weight")
        self.points.setflags(write=False)
        self._cdf = np.cumsum(self.weights)
        self._check_second_moment()

    @classmethod
    def dirac(cls, theta: float, z: Sequence[float]) -> "AtomicStripMeasure":
        return cls([1.0], [theta], [np.atleast_1d(z)])

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    def theta_marginal(self) -> ThetaMeasure:
        return ThetaMeasure.atomic(self.weights, self.thetas)

    def moment(self, f: ThetaFunction, order: MomentOrder = MomentOrder.SCALAR) -> np.ndarray:
        fw = self.weights * evaluate_theta_function(f, self.thetas)
        if order is MomentOrder.SCALAR:
            return float(np.sum(fw))
        if order is MomentOrder.FIRST:
            return fw @ self.points
        if order is MomentOrder.SECOND:
            return np.einsum("k,ki,kj->ij", fw, self.points, self.points)
        raise ConfigurationError(f"Unsupported moment order: {order}")

    def sample(self, rng: np.random.Generator) -> Tuple[float, np.ndarray]:
        k = 0 if len(self.weights) == 1 else _categorical(self._cdf, rng)
        return float(self.thetas[k]), self.points[k]

    def sample_tilted(self, w, w_sup, rng, stats=None, force_rejection=False):
        if force_rejection:
            return self._rejection_draw(w, w_sup, rng, stats)
        if len(self.weights) == 1:
            k = 0
        else:
            values = evaluate_theta_function(w, self.thetas)
            k = _categorical(np.cumsum(self.weights * values), rng)
        _check_tilt(w, w_sup, self.thetas[k])
        if stats is not None:
            stats.proposals += 1
            stats.acceptances += 1
        return float(self.thetas[k]), self.points[k]

    def atoms(self):
        return self.weights, self.thetas, self.points


class ProductStripMeasure(StripMeasure):
    """
    η(dθ) ⊗ J(dz), or η(dθ) ⊗ δ_{qθ}(dz) when a coupling is given.
    """

    def __init__(
        self,
        theta: ThetaMeasure,
        jumps: Optional[JumpMarginal] = None,
        coupling: Optional[LinearCoupling] = None,
    ):
        if (jumps is None) == (coupling is None):
            raise ConfigurationError("ProductStripMeasure needs exactly one of jumps or coupling")
        self.theta = theta
        self.jumps = jumps
        self.coupling = coupling
        self._check_second_moment()

    @property
    def dimension(self) -> int:
        return self.jumps.dimension if self.jumps is not None else self.coupling.dimension

    def theta_marginal(self) -> ThetaMeasure:
        return self.theta

    def moment(self, f: ThetaFunction, order: MomentOrder = MomentOrder.SCALAR) -> np.ndarray:
        if order not in (MomentOrder.SCALAR, MomentOrder.FIRST, MomentOrder.SECOND):
            raise ConfigurationError(f"Unsupported moment order: {order}")
        if self.jumps is not None:
            scalar = float(self.theta.integrate(f))
            if order is MomentOrder.SCALAR:
                return scalar
            if order is MomentOrder.FIRST:
                return scalar * self.jumps.mean()
            return scalar * self.jumps.second_moment()

        g = self.coupling
        if order is MomentOrder.SCALAR:
            return float(self.theta.integrate(f))
        if order is MomentOrder.FIRST:
            return self.theta.integrate(
                lambda th: evaluate_theta_function(f, th)[:, None] * g(th)
            )
        return self.theta.integrate(
            lambda th: evaluate_theta_function(f, th)[:, None, None]
            * np.einsum("ki,kj->kij", g(th), g(th))
        )

    def _displacement(self, theta: float, rng: np.random.Generator) -> np.ndarray:
        if self.jumps is not None:
            return self.jumps.sample(rng)
        return self.coupling(np.array([theta]))[0]

    def sample(self, rng: np.random.Generator) -> Tuple[float, np.ndarray]:
        theta = self.theta.sample(rng)
        return theta, self._displacement(theta, rng)

    def sample_tilted(self, w, w_sup, rng, stats=None, force_rejection=False):
        if force_rejection or not self.theta.is_atomic:
            return self._rejection_draw(w, w_sup, rng, stats)
        thetas = self.theta.thetas
        if len(thetas) == 1:
            theta = float(thetas[0])
        else:
            values = evaluate_theta_function(w, thetas)
            theta = float(thetas[_categorical(np.cumsum(self.theta.weights * values), rng)])
        _check_tilt(w, w_sup, theta)
        if stats is not None:
            stats.proposals += 1
            stats.acceptances += 1
        return theta, self._displacement(theta, rng)

    def atoms(self):
        if not self.theta.is_atomic:
            return None
        if self.coupling is not None:
            return self.theta.weights, self.theta.thetas, self.coupling(self.theta.thetas)
        jump_atoms = self.jumps.atoms()
        if jump_atoms is None:
            return None
        jump_weights, jump_points = jump_atoms
        weights = np.outer(self.theta.weights, jump_weights).ravel()
        thetas = np.repeat(self.theta.thetas, len(jump_weights))
        points = np.tile(jump_points, (len(self.theta.thetas), 1))
        return weights, thetas, points


# ==================== HELPERS ====================

def _one(thetas: np.ndarray) -> np.ndarray:
    return np.ones_like(thetas, dtype=float)


def _categorical(cdf: np.ndarray, rng: np.random.Generator) -> int:
    """Index drawn from an unnormalized cumulative weight table."""
    k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(k, len(cdf) - 1)


def _check_tilt(w: ThetaFunction, w_sup: float, theta: float) -> None:
    value = float(evaluate_theta_function(w, np.array([theta]))[0])
    if value > w_sup * (1.0 + 1e-12):
        raise EnvelopeError(f"Tilt w(θ)={value:.12g} exceeds envelope {w_sup:.12g} at θ={theta:.6g}")


def _validate_weights(weights: Sequence[float], count: int) -> np.ndarray:
    weights = np.asarray(weights, dtype=float).ravel()
    if len(weights) != count or count == 0:
        raise ConfigurationError(f"Expected {count} weights, got {len(weights)}")
    if np.any(weights < settings.ATOM_WEIGHT_FLOOR):
        raise ConfigurationError(
            f"Atomic weights must be at least {settings.ATOM_WEIGHT_FLOOR:g}"
        )
    if abs(weights.sum() - 1.0) > settings.PROBABILITY_MASS_TOL:
        raise ConfigurationError(f"Atomic weights sum to {weights.sum():.15g}, expected 1")
    weights.setflags(write=False)
    return weights


def _validate_atoms(thetas: Sequence[float], weights: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    thetas = np.asarray(thetas, dtype=float).ravel()
    if np.any(thetas < -1.0) or np.any(thetas > 0.0):
        raise ConfigurationError("Every θ must lie in [-1, 0]")
    thetas.setflags(write=False)
    return thetas, _validate_weights(weights, len(thetas))
