"""
Closed-form asymptotic constants and the Gaussian limit law.

Computes Γ, the drift K, λ∞, the diffusion matrix D₀ and the limit
covariance Σ = D₀ / (1 + Γ), the spectral description of the possibly
degenerate limit law π, the recentring path H(t) and the mean path
m(t) = E X(t) solved from its own delay equation.

Usage:
    from delaywalk.asymptotics import compute_constants, limit_law

    constants = compute_constants(measure, policy)
    law = limit_law(constants)
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.stats import norm

from delaywalk import settings
from delaywalk.dde import ConstantHistory
from delaywalk.exceptions import ConfigurationError, NumericalError
from delaywalk.measures import (
    LinearCoupling,
    MomentOrder,
    ProductStripMeasure,
    StripMeasure,
    ThetaMeasure,
    evaluate_theta_function,
    gauss_legendre,
)
from delaywalk.rates import HyperbolicDDE, RatePolicy

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SpectralForm:
    """
    Σ = Pᵀ diag(λ₁, …, λ_{N-k}, 0, …, 0) P.

    Rows of P are eigenvectors; positive eigenvalues come first in
    decreasing order, kernel axes last.
    """
    P: np.ndarray
    eigenvalues: np.ndarray
    kernel_dim: int

    @property
    def range_dim(self) -> int:
        return len(self.eigenvalues) - self.kernel_dim


@dataclass(frozen=True)
class AsymptoticConstants:
    """Γ, K, λ∞, D₀, Σ and the tilted-law moments E[Θ∞], E[Z∞]."""
    Gamma: float
    K: np.ndarray
    lambda_inf: float
    D0: np.ndarray
    Sigma: np.ndarray
    spectral: SpectralForm
    theta_mean: float
    z_mean: np.ndarray

    @property
    def dimension(self) -> int:
        return len(self.K)

    def to_dict(self) -> Dict[str, Any]:
        """Plain-data view used by the JSON export."""
        return {
            "Gamma": self.Gamma,
            "K": self.K.tolist(),
            "lambda_inf": self.lambda_inf,
            "D0": self.D0.tolist(),
            "Sigma": self.Sigma.tolist(),
            "sqrt_Sigma_diag": np.sqrt(np.diag(self.Sigma)).tolist(),
            "spectral": {
                "P": self.spectral.P.tolist(),
                "eigenvalues": self.spectral.eigenvalues.tolist(),
                "kernel_dim": self.spectral.kernel_dim,
            },
            "theta_mean_inf": self.theta_mean,
            "z_mean_inf": self.z_mean.tolist(),
        }


def spectral_form(sigma: np.ndarray, rtol: float = settings.KERNEL_EIGEN_RTOL) -> SpectralForm:
    """
    Symmetric eigendecomposition of Σ with kernel detection.

    Eigenvalues at or below rtol·trace(Σ) are treated as exact zeros.

    Raises:
        NumericalError: If Σ has an eigenvalue below -1e-12
    """
    values, vectors = np.linalg.eigh(sigma)
    if values.min() < -1e-12:
        raise NumericalError(f"Σ is not positive semi-definite (eigenvalue {values.min():.3e})")
    threshold = rtol * float(np.trace(sigma))
    order = np.argsort(-values)
    values, vectors = values[order], vectors[:, order]
    kernel = values <= threshold
    values = np.where(kernel, 0.0, values)
    return SpectralForm(P=vectors.T.copy(), eigenvalues=values, kernel_dim=int(kernel.sum()))


def compute_constants(measure: StripMeasure, policy: RatePolicy) -> AsymptoticConstants:
    """
    Compute the asymptotic constants from α∞ and Q.

    Args:
        measure: Strip measure Q
        policy: Rate policy exposing α∞

    Returns:
        AsymptoticConstants
    """
    limit = policy.limit
    lam = policy.lambda_inf(measure)
    gamma = float(measure.moment(lambda th: -th * limit(th)))
    first = np.atleast_1d(measure.moment(limit, MomentOrder.FIRST))
    drift = first / (1.0 + gamma)

    theta_z = np.atleast_1d(measure.moment(lambda th: th * limit(th), MomentOrder.FIRST))
    theta_sq = float(measure.moment(lambda th: th * th * limit(th)))
    second = np.atleast_2d(measure.moment(limit, MomentOrder.SECOND))
    d0 = (
        second
        + np.outer(theta_z, drift)
        + np.outer(drift, theta_z)
        + theta_sq * np.outer(drift, drift)
    )
    d0 = 0.5 * (d0 + d0.T)
    sigma = d0 / (1.0 + gamma)

    constants = AsymptoticConstants(
        Gamma=gamma,
        K=drift,
        lambda_inf=lam,
        D0=d0,
        Sigma=sigma,
        spectral=spectral_form(sigma),
        theta_mean=float(measure.moment(lambda th: th * limit(th))) / lam,
        z_mean=first / lam,
    )
    logger.info(f"Constants: Γ={gamma:.12g}, K={drift.tolist()}, λ∞={lam:.12g}")
    return constants


def identity_residual(measure: StripMeasure, policy: RatePolicy, constants: AsymptoticConstants) -> float:
    """max |∫ α∞(θ)[z + θK] Q(dθ, dz) - K|, zero when K is the fixed point."""
    limit = policy.limit
    lhs = (
        np.atleast_1d(measure.moment(limit, MomentOrder.FIRST))
        + float(measure.moment(lambda th: th * limit(th))) * constants.K
    )
    return float(np.max(np.abs(lhs - constants.K)))


def tilted_covariance(measure: StripMeasure, policy: RatePolicy, constants: AsymptoticConstants) -> np.ndarray:
    """
    λ∞ / (1 - λ∞E[Θ∞]) · E[(Z∞ + Θ∞K)(Z∞ + Θ∞K)ᵀ], moments taken under
    the tilted law α∞Q/λ∞.
    """
    limit = policy.limit
    lam = constants.lambda_inf
    k = constants.K
    e_theta = float(measure.moment(lambda th: th * limit(th))) / lam
    e_zz = np.atleast_2d(measure.moment(limit, MomentOrder.SECOND)) / lam
    e_theta_z = np.atleast_1d(measure.moment(lambda th: th * limit(th), MomentOrder.FIRST)) / lam
    e_theta_sq = float(measure.moment(lambda th: th * th * limit(th))) / lam
    centred = e_zz + np.outer(e_theta_z, k) + np.outer(k, e_theta_z) + e_theta_sq * np.outer(k, k)
    return lam / (1.0 - lam * e_theta) * centred


def slln_drift(constants: AsymptoticConstants) -> np.ndarray:
    """K written as λ∞E[Z∞] / (1 - λ∞E[Θ∞])."""
    lam = constants.lambda_inf
    return lam * constants.z_mean / (1.0 - lam * constants.theta_mean)


# ==================== LIMIT LAW ====================

class LimitLaw:
    """
    Centred Gaussian law with covariance Σ, possibly degenerate.

    Rotated coordinates y = P x are independent: N(0, λᵢ) on range axes
    and a point mass at 0 on kernel axes.
    """

    def __init__(self, spectral: SpectralForm):
        self.spectral = spectral
        self.P = spectral.P
        self.variances = spectral.eigenvalues
        self.range_dim = spectral.range_dim

    @property
    def dimension(self) -> int:
        return len(self.variances)

    def rotate(self, x: np.ndarray) -> np.ndarray:
        """Rows x ↦ rows y = P x."""
        return np.atleast_2d(x) @ self.P.T

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        y = np.zeros((size, self.dimension))
        r = self.range_dim
        if r:
            y[:, :r] = rng.standard_normal((size, r)) * np.sqrt(self.variances[:r])
        return y @ self.P

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        """Log-density with respect to Lebesgue measure on the range subspace."""
        y = self.rotate(x)
        r = self.range_dim
        return np.sum(norm.logpdf(y[:, :r], scale=np.sqrt(self.variances[:r])), axis=1)

    def axis_cdf(self, axis: int, values: np.ndarray) -> np.ndarray:
        """CDF of the rotated coordinate y_axis."""
        values = np.asarray(values, dtype=float)
        if axis < self.range_dim:
            return norm.cdf(values, scale=math.sqrt(self.variances[axis]))
        return (values >= 0.0).astype(float)

    def peak_density(self, axis: int) -> float:
        """Gaussian density at 0 on a range axis; kernel axes carry a point mass."""
        if axis >= self.range_dim or not self.variances[axis] > 0:
            raise NumericalError(f"Axis {axis} is a kernel axis of Σ and has no peak density")
        return 1.0 / math.sqrt(2.0 * math.pi * self.variances[axis])


def limit_law(constants: AsymptoticConstants) -> LimitLaw:
    return LimitLaw(constants.spectral)


# ==================== RECENTRING PATH ====================

class RecentringPath:
    """
    H(t) = -(1/(1+Γ)) ∫_0^t ∫ α(s, θ) z Q(dθ, dz) ds on a grid, linearly
    interpolated; H vanishes on [-1, 0].
    """

    def __init__(self, times: np.ndarray, values: np.ndarray, gamma: float):
        self.times = times
        self.values = values
        self.gamma = gamma

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def __call__(self, t: float) -> np.ndarray:
        if t > self.horizon + 1e-9:
            raise ConfigurationError(f"H(t) requested at t={t:g} beyond horizon {self.horizon:g}")
        if t <= 0.0:
            return np.zeros(self.values.shape[1])
        return np.array([np.interp(t, self.times, column) for column in self.values.T])

    def shift(self, t: float, theta: float) -> np.ndarray:
        """G(t, θ) = H(t) - H(t+θ)."""
        return self(t) - self(t + theta)


def recentring_path(
    measure: StripMeasure,
    policy: RatePolicy,
    horizon: float,
    grid_step: Optional[float] = None,
    constants: Optional[AsymptoticConstants] = None,
) -> RecentringPath:
    """
    Tabulate H on [0, horizon] by cumulative trapezoidal quadrature.

    Args:
        measure: Strip measure Q
        policy: Rate policy (must cover the horizon)
        horizon: Final time
        grid_step: Grid spacing; defaults to min(0.01, horizon/1e4)
        constants: Precomputed constants (Γ is reused)

    Returns:
        RecentringPath
    """
    if not horizon > 0:
        raise ConfigurationError(f"Recentring horizon must be positive, got {horizon}")
    if grid_step is None:
        grid_step = min(settings.RECENTRING_MAX_STEP, horizon / settings.RECENTRING_GRID_POINTS)
    if not grid_step > 0:
        raise ConfigurationError(f"Recentring grid step must be positive, got {grid_step}")
    if constants is None:
        constants = compute_constants(measure, policy)

    count = int(math.ceil(horizon / grid_step - 1e-9))
    times = np.arange(count + 1) * grid_step
    scale = 1.0 / (1.0 + constants.Gamma)
    drift = np.array([
        np.atleast_1d(measure.moment(lambda th, s=s: policy.evaluate(s, th), MomentOrder.FIRST))
        for s in times
    ]) * scale
    values = -cumulative_trapezoid(drift, times, axis=0, initial=0.0)
    logger.info(f"Recentring path tabulated on {count + 1} points up to t={times[-1]:g}")
    return RecentringPath(times, values, constants.Gamma)


# ==================== MEAN PATH ====================

def _hermite(values: np.ndarray, slopes: np.ndarray, h: float, k: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Cubic Hermite interpolant on grid interval k at fraction u (rows)."""
    u = u[:, None]
    u2, u3 = u * u, u * u * u
    return (
        (2 * u3 - 3 * u2 + 1) * values[k]
        + (u3 - 2 * u2 + u) * h * slopes[k]
        + (-2 * u3 + 3 * u2) * values[k + 1]
        + (u3 - u2) * h * slopes[k + 1]
    )


class MeanPath:
    """
    m(t) = E X(t) on a uniform grid over [0, horizon], with Hermite dense
    output; m is the initial mean on [-1, 0].

    Calling the path returns y(t) = E(X(t)/t) = m(t)/t, the deterministic
    counterpart of the ensemble mean of X(t)/t.
    """

    def __init__(self, times: np.ndarray, values: np.ndarray, slopes: np.ndarray, initial_mean: np.ndarray):
        self.times = times
        self.values = values
        self.slopes = slopes
        self.initial_mean = initial_mean

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def mean(self, t: float) -> np.ndarray:
        if t > self.horizon + 1e-9:
            raise ConfigurationError(f"E X(t) requested at t={t:g} beyond horizon {self.horizon:g}")
        if t <= 0.0:
            return self.initial_mean.copy()
        h = self.step
        k = min(int(t / h), len(self.times) - 2)
        return _hermite(self.values, self.slopes, h, np.array([k]), np.array([t / h - k]))[0]

    def __call__(self, t: float) -> np.ndarray:
        if not t > 0:
            raise ConfigurationError(f"E(X(t)/t) needs t > 0, got {t}")
        return self.mean(t) / t


def mean_path(
    measure: StripMeasure,
    policy: RatePolicy,
    initial_mean: Sequence[float],
    horizon: float,
    step: float = settings.MEAN_PATH_STEP,
) -> MeanPath:
    """
    Integrate the delay equation of the mean,

        m'(t) = ∫ α(t, θ) (m(t+θ) - m(t) + z) Q(dθ, dz),

    with classical RK4. Delayed values read the Hermite dense output of
    completed steps, extended over the step in progress.

    Args:
        measure: Strip measure Q
        policy: Rate policy (must cover the horizon)
        initial_mean: E X(0), held on [-1, 0]
        horizon: Final time (rounded up to a grid point)
        step: Step h; 1/h must be an integer

    Returns:
        MeanPath

    Raises:
        ConfigurationError: Invalid horizon, step, initial mean or policy range
        NumericalError: Non-finite values
    """
    if not horizon > 0:
        raise ConfigurationError(f"Mean path horizon must be positive, got {horizon}")
    if not step > 0 or abs(1.0 / step - round(1.0 / step)) > 1e-9:
        raise ConfigurationError(f"Mean path step must divide 1, got {step}")
    if not policy.covers(horizon):
        raise ConfigurationError(f"Rate policy does not cover t={horizon:g}")
    m0 = np.atleast_1d(np.asarray(initial_mean, dtype=float))
    if m0.shape != (measure.dimension,):
        raise ConfigurationError(f"Initial mean has shape {m0.shape}, expected ({measure.dimension},)")

    theta = measure.theta_marginal()
    if theta.is_atomic:
        offsets, masses = np.asarray(theta.thetas, dtype=float), np.asarray(theta.weights, dtype=float)
    else:
        offsets, masses = gauss_legendre(2 * theta.nodes)
        masses = masses * evaluate_theta_function(theta.density, offsets)
    # θ = 0 contributes m(t) - m(t) to the delayed part
    lagged = offsets < 0.0
    offsets, masses = offsets[lagged], masses[lagged]

    h = step
    steps = int(math.ceil(horizon / h - 1e-9))
    values = np.empty((steps + 1, m0.size))
    slopes = np.empty_like(values)
    values[0] = m0

    def lookup(s: np.ndarray, n: int) -> np.ndarray:
        out = np.tile(m0, (len(s), 1))
        ahead = s > 0.0
        if not np.any(ahead):
            return out
        sa = s[ahead]
        if n == 0:
            out[ahead] = values[0] + np.outer(sa, slopes[0])
            return out
        k = np.minimum((sa / h).astype(int), n - 1)
        out[ahead] = _hermite(values, slopes, h, k, sa / h - k)
        return out

    def coefficients(s: float) -> np.ndarray:
        if not len(offsets):
            return masses
        return masses * np.asarray(policy.evaluate(s, offsets), dtype=float)

    def forcing(s: float) -> np.ndarray:
        return np.atleast_1d(measure.moment(lambda th: policy.evaluate(s, th), MomentOrder.FIRST))

    def delayed(s: float, n: int, c: np.ndarray) -> np.ndarray:
        if not len(offsets):
            return np.zeros(m0.size)
        return c @ lookup(s + offsets, n)

    c_now, f_now = coefficients(0.0), forcing(0.0)
    slopes[0] = delayed(0.0, 0, c_now) - c_now.sum() * m0 + f_now
    for n in range(steps):
        t = n * h
        mn, k1 = values[n], slopes[n]
        c_mid, f_mid = coefficients(t + 0.5 * h), forcing(t + 0.5 * h)
        mid = delayed(t + 0.5 * h, n, c_mid) + f_mid
        k2 = mid - c_mid.sum() * (mn + 0.5 * h * k1)
        k3 = mid - c_mid.sum() * (mn + 0.5 * h * k2)
        c_now, f_now = coefficients(t + h), forcing(t + h)
        end = delayed(t + h, n, c_now) + f_now
        k4 = end - c_now.sum() * (mn + h * k3)
        values[n + 1] = mn + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        slopes[n + 1] = end - c_now.sum() * values[n + 1]

    if not np.all(np.isfinite(values)):
        raise NumericalError("Mean path diverged; reduce the step")
    times = np.arange(steps + 1) * h
    logger.info(f"Mean path integrated on {steps + 1} points up to t={times[-1]:g}")
    return MeanPath(times, values, slopes, m0)


# ==================== TRANSPORT SPEED COMPARISON ====================

def speed_comparison(
    a: float,
    b: float,
    eta: ThetaMeasure,
    speeds: Sequence[float] = (1.0, 0.5),
) -> List[Dict[str, float]]:
    """
    Drift and limit standard deviation of the hyperbolic model for several
    transport speeds q, with Q = η ⊗ δ_{qθ}.

    Only α∞ is needed, so the delay equation is solved over a single unit.
    """
    policy = HyperbolicDDE(a, b, eta, ConstantHistory(1.0), horizon=0.0)
    rows = []
    for q in speeds:
        measure = ProductStripMeasure(eta, coupling=LinearCoupling([q]))
        constants = compute_constants(measure, policy)
        rows.append({
            "q": float(q),
            "gamma": policy.gamma,
            "Gamma": constants.Gamma,
            "K": float(constants.K[0]),
            "Sigma": float(constants.Sigma[0, 0]),
            "sqrt_Sigma": math.sqrt(constants.Sigma[0, 0]),
        })
    return rows
