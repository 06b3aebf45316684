"""
Statistical checks of ensembles against the asymptotic theory.

Covers the law of large numbers for X(t)/t and its finite-time mean,
Gaussian goodness of fit of rescaled samples against the limit law,
total-variation agreement with the lattice oracle and the self-similar
profile across growing probe times.
Reports are pydantic models so they serialize straight to JSON; pass flags
are pure functions of the stored statistics and the tolerances.
"""

import logging
import math
from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field
from scipy import stats

from delaywalk import settings
from delaywalk.asymptotics import AsymptoticConstants, LimitLaw, MeanPath, RecentringPath
from delaywalk.exceptions import ConfigurationError
from delaywalk.lattice import LatticeLaw
from delaywalk.simulator import EnsembleResult

logger = logging.getLogger(__name__)

MIN_GOF_SAMPLES = 100


class Tolerances(BaseModel):
    """Significance levels and slack factors applied by the checks."""
    ks_alpha: float = Field(settings.KS_ALPHA, gt=0, lt=1, description="KS significance level")
    ks_slack: float = Field(settings.KS_SLACK, ge=1, description="Multiplier on KS critical values")
    kernel_axis_tol: float = Field(settings.KERNEL_AXIS_TOL, ge=0, description="Max |y| on kernel axes")
    ks_trend_slack: float = Field(settings.KS_TREND_SLACK, ge=0, description="Allowed KS increase between probes")
    ci_sigmas: float = Field(settings.CI_SIGMAS, gt=0, description="Half-width of LLN intervals in standard errors")
    require_chi2: bool = Field(False, description="Whether the χ² test gates the pass flag")

    class Config:
        """Pydantic configuration."""
        extra = "forbid"


class Recentring(Enum):
    """Centring used before the √t rescaling."""
    DRIFT = "drift"  # X(t) - Kt
    PATH = "path"    # X(t) + H(t)


# ==================== RESCALING ====================

def rescale(samples: np.ndarray, t: float, drift: np.ndarray) -> np.ndarray:
    """Z = √t (X(t)/t - K), row-wise."""
    if not t > 0:
        raise ConfigurationError(f"Rescaling needs t > 0, got {t}")
    samples = np.asarray(samples, dtype=float)
    return math.sqrt(t) * (samples / t - np.asarray(drift, dtype=float))


def inverse_rescale(z: np.ndarray, t: float, drift: np.ndarray) -> np.ndarray:
    """X = √t Z + K t."""
    if not t > 0:
        raise ConfigurationError(f"Rescaling needs t > 0, got {t}")
    return math.sqrt(t) * np.asarray(z, dtype=float) + t * np.asarray(drift, dtype=float)


def recentre(samples: np.ndarray, t: float, shift: np.ndarray) -> np.ndarray:
    """(X(t) + H(t)) / √t for a recentring value H(t)."""
    if not t > 0:
        raise ConfigurationError(f"Rescaling needs t > 0, got {t}")
    return (np.asarray(samples, dtype=float) + np.asarray(shift, dtype=float)) / math.sqrt(t)


def lattice_discretization(law: LimitLaw, t: float, spacing: float = 1.0) -> List[float]:
    """
    KS inflation from lattice-valued X, per rotated axis:
    spacing · max_j |P_ij| / √t times the Gaussian peak density.
    """
    terms = []
    for axis in range(law.dimension):
        if axis >= law.range_dim:
            terms.append(0.0)
            continue
        width = spacing * float(np.max(np.abs(law.P[axis]))) / math.sqrt(t)
        terms.append(width * law.peak_density(axis))
    return terms


# ==================== LAW OF LARGE NUMBERS ====================

class LlnProbe(BaseModel):
    t: float
    estimate: List[float] = Field(..., description="mean of X(t)/t")
    error: float = Field(..., description="max |mean(X/t) - K|")
    half_width: float = Field(..., description="confidence half-width on the worst coordinate")
    covers: bool


class LlnReport(BaseModel):
    n: int
    drift: List[float]
    probes: List[LlnProbe]
    non_increasing: bool
    passed: bool


def check_lln(
    ensemble: EnsembleResult,
    drift: np.ndarray,
    tolerances: Optional[Tolerances] = None,
    sigma: Optional[np.ndarray] = None,
) -> LlnReport:
    """
    Per-probe error of mean(X(t)/t) against K.

    The confidence half-width uses Σ when given (ci_sigmas · √(Σᵢᵢ/(t n))),
    otherwise the empirical standard error. Passes when the last probe's
    interval covers K and errors do not grow by more than the previous
    half-width between probes.
    """
    tolerances = tolerances or Tolerances()
    drift = np.asarray(drift, dtype=float)
    probes = []
    for index, t in enumerate(ensemble.probes):
        t = float(t)
        ratios = ensemble.values[:, index, :] / t if t > 0 else np.zeros_like(ensemble.values[:, index, :])
        estimate = ratios.mean(axis=0)
        deviation = np.abs(estimate - drift)
        if sigma is not None:
            scale = np.sqrt(np.maximum(np.diag(np.atleast_2d(sigma)), 0.0) / (max(t, 1e-300) * ensemble.n))
        elif ensemble.n > 1:
            scale = ratios.std(axis=0, ddof=1) / math.sqrt(ensemble.n)
        else:
            scale = np.zeros_like(estimate)
        half_width = tolerances.ci_sigmas * scale
        worst = int(np.argmax(deviation - half_width))
        probes.append(LlnProbe(
            t=t,
            estimate=estimate.tolist(),
            error=float(deviation.max()),
            half_width=float(half_width[worst]),
            covers=bool(np.all(deviation <= half_width + 1e-15)),
        ))

    non_increasing = all(
        later.error <= earlier.error + earlier.half_width
        for earlier, later in zip(probes, probes[1:])
    )
    report = LlnReport(
        n=ensemble.n,
        drift=drift.tolist(),
        probes=probes,
        non_increasing=non_increasing,
        passed=probes[-1].covers and non_increasing,
    )
    logger.info(f"LLN check: final error {probes[-1].error:.6g} (passed={report.passed})")
    return report


class MeanPathPoint(BaseModel):
    t: float
    estimate: List[float] = Field(..., description="mean of X(t)/t")
    expected: List[float] = Field(..., description="E(X(t)/t) from the mean path")
    error: float = Field(..., description="max |mean(X/t) - E(X(t)/t)|")
    half_width: float = Field(..., description="confidence half-width on the worst coordinate")
    covers: bool


class MeanPathReport(BaseModel):
    n: int
    points: List[MeanPathPoint]
    passed: bool


def compare_mean_path(
    ensemble: EnsembleResult,
    path: MeanPath,
    tolerances: Optional[Tolerances] = None,
) -> MeanPathReport:
    """
    Ensemble mean of X(t)/t against the deterministic E(X(t)/t) at every
    recorded time t > 0, within ci_sigmas empirical standard errors.

    Unlike check_lln this carries no O(1/t) bias, so it also holds at
    early times.
    """
    tolerances = tolerances or Tolerances()
    if ensemble.n < 2:
        raise ConfigurationError("Mean path comparison needs at least two trajectories")
    points = []
    for index, t in enumerate(ensemble.probes):
        t = float(t)
        if not t > 0:
            continue
        ratios = ensemble.values[:, index, :] / t
        estimate = ratios.mean(axis=0)
        expected = path(t)
        deviation = np.abs(estimate - expected)
        half_width = tolerances.ci_sigmas * ratios.std(axis=0, ddof=1) / math.sqrt(ensemble.n)
        worst = int(np.argmax(deviation - half_width))
        points.append(MeanPathPoint(
            t=t,
            estimate=estimate.tolist(),
            expected=expected.tolist(),
            error=float(deviation.max()),
            half_width=float(half_width[worst]),
            # Floor for coordinates with zero sample variance
            covers=bool(np.all(deviation <= half_width + 1e-9)),
        ))
    if not points:
        raise ConfigurationError("Mean path comparison needs a recorded time t > 0")
    report = MeanPathReport(n=ensemble.n, points=points, passed=all(p.covers for p in points))
    logger.info(f"Mean path check: worst error {max(p.error for p in points):.6g} (passed={report.passed})")
    return report


# ==================== GAUSSIAN FIT ====================

class GofReport(BaseModel):
    """Goodness of fit of Z-samples against the limit law."""
    n: int
    mean: List[float]
    covariance: List[List[float]]
    std: List[float]
    range_dim: int
    ks_statistics: List[float] = Field(..., description="per range axis")
    ks_pvalues: List[float]
    ks_tolerances: List[float] = Field(..., description="critical value × slack + discretization")
    discretization: List[float]
    skewness: List[float]
    excess_kurtosis: List[float]
    kernel_max_abs: float
    chi2_statistic: float
    chi2_dof: int
    chi2_pvalue: float
    sample_covariance_singular: bool
    ks_pass: bool
    kernel_pass: bool
    chi2_pass: bool
    passed: bool

    @property
    def max_ks(self) -> float:
        return max(self.ks_statistics) if self.ks_statistics else 0.0


def ks_critical(n: int, alpha: float) -> float:
    """One-sample KS critical value at level alpha."""
    return float(stats.kstwo.ppf(1.0 - alpha, n))


def gof_gaussian(
    z_samples: np.ndarray,
    law: LimitLaw,
    tolerances: Optional[Tolerances] = None,
    discretization: Optional[List[float]] = None,
) -> GofReport:
    """
    Compare rescaled samples with the (possibly degenerate) Gaussian law.

    Samples are rotated by P; range axes get a KS test against N(0, λᵢ),
    kernel axes must stay within the kernel tolerance, and the Mahalanobis
    sum over range axes is compared with χ² quantiles.
    """
    tolerances = tolerances or Tolerances()
    z = np.asarray(z_samples, dtype=float)
    if z.ndim == 1:
        z = z.reshape(-1, 1)
    n = z.shape[0]
    if n < MIN_GOF_SAMPLES:
        raise ConfigurationError(f"Goodness of fit needs at least {MIN_GOF_SAMPLES} samples, got {n}")
    if z.shape[1] != law.dimension:
        raise ConfigurationError(f"Samples have dimension {z.shape[1]}, law has {law.dimension}")
    discretization = list(discretization) if discretization is not None else [0.0] * law.dimension

    covariance = np.atleast_2d(np.cov(z, rowvar=False, ddof=1))
    singular = False
    if law.range_dim == law.dimension and np.linalg.matrix_rank(covariance) < law.dimension:
        singular = True
        logger.warning("Sample covariance is singular although the limit law is not")

    y = law.rotate(z)
    r = law.range_dim
    critical = ks_critical(n, tolerances.ks_alpha) * tolerances.ks_slack
    ks_statistics, ks_pvalues, ks_tolerances = [], [], []
    for axis in range(r):
        result = stats.kstest(y[:, axis], "norm", args=(0.0, math.sqrt(law.variances[axis])))
        ks_statistics.append(float(result.statistic))
        ks_pvalues.append(float(result.pvalue))
        ks_tolerances.append(critical + discretization[axis])

    kernel_max = float(np.max(np.abs(y[:, r:]))) if r < law.dimension else 0.0

    if r:
        chi2_statistic = float(np.sum(y[:, :r] ** 2 / law.variances[:r]))
        dof = n * r
        tail = min(stats.chi2.cdf(chi2_statistic, dof), stats.chi2.sf(chi2_statistic, dof))
        chi2_pvalue = float(min(1.0, 2.0 * tail))
    else:
        chi2_statistic, dof, chi2_pvalue = 0.0, 0, 1.0

    ks_pass = all(s <= tol for s, tol in zip(ks_statistics, ks_tolerances))
    kernel_pass = kernel_max <= tolerances.kernel_axis_tol
    chi2_pass = chi2_pvalue > tolerances.ks_alpha
    passed = ks_pass and kernel_pass and (chi2_pass or not tolerances.require_chi2)

    return GofReport(
        n=n,
        mean=z.mean(axis=0).tolist(),
        covariance=covariance.tolist(),
        std=np.sqrt(np.diag(covariance)).tolist(),
        range_dim=r,
        ks_statistics=ks_statistics,
        ks_pvalues=ks_pvalues,
        ks_tolerances=ks_tolerances,
        discretization=discretization,
        skewness=np.atleast_1d(stats.skew(y[:, :r], axis=0)).tolist() if r else [],
        excess_kurtosis=np.atleast_1d(stats.kurtosis(y[:, :r], axis=0, fisher=True)).tolist() if r else [],
        kernel_max_abs=kernel_max,
        chi2_statistic=chi2_statistic,
        chi2_dof=dof,
        chi2_pvalue=chi2_pvalue,
        sample_covariance_singular=singular,
        ks_pass=ks_pass,
        kernel_pass=kernel_pass,
        chi2_pass=chi2_pass,
        passed=passed,
    )


# ==================== LATTICE ORACLE ====================

class TvReport(BaseModel):
    """Monte Carlo histogram against the lattice law."""
    n: int
    t: float
    total_variation: float
    noise_bound: float = Field(..., description="Σ √(pᵢ/n) over the oracle law")
    max_abs_difference: float
    passed: bool


def compare_lattice(samples: np.ndarray, law: LatticeLaw) -> TvReport:
    """TV distance ½ Σ |p̂ᵢ - pᵢ| over the union of supports."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n = samples.shape[0]
    if samples.shape[1] != law.dimension:
        raise ConfigurationError(f"Samples have dimension {samples.shape[1]}, law has {law.dimension}")
    points, counts = np.unique(np.rint(samples).astype(np.int64), axis=0, return_counts=True)
    table = {tuple(p): [c / n, 0.0] for p, c in zip(points.tolist(), counts)}
    for point, mass in zip(law.offsets.tolist(), law.masses):
        table.setdefault(tuple(point), [0.0, 0.0])[1] += float(mass)
    differences = np.array([abs(a - b) for a, b in table.values()])
    tv = 0.5 * float(differences.sum())
    bound = float(np.sum(np.sqrt(law.masses / n)))
    logger.info(f"TV distance at t={law.t:g}: {tv:.6g} (bound {bound:.6g})")
    return TvReport(
        n=n,
        t=law.t,
        total_variation=tv,
        noise_bound=bound,
        max_abs_difference=float(differences.max()),
        passed=tv <= bound,
    )


class MomentComparison(BaseModel):
    """Ensemble mean against the oracle mean, in standard errors."""
    sample_mean: List[float]
    oracle_mean: List[float]
    z_scores: List[float]
    passed: bool


def compare_moments(samples: np.ndarray, law: LatticeLaw, sigmas: float = settings.CI_SIGMAS) -> MomentComparison:
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n = samples.shape[0]
    oracle_mean = law.mean()
    oracle_var = np.diag(law.covariance())
    sample_mean = samples.mean(axis=0)
    z_scores = []
    for k in range(law.dimension):
        if oracle_var[k] > 0:
            z_scores.append(float(abs(sample_mean[k] - oracle_mean[k]) / math.sqrt(oracle_var[k] / n)))
        else:
            z_scores.append(0.0 if abs(sample_mean[k] - oracle_mean[k]) < 1e-12 else math.inf)
    return MomentComparison(
        sample_mean=sample_mean.tolist(),
        oracle_mean=oracle_mean.tolist(),
        z_scores=z_scores,
        passed=all(z <= sigmas for z in z_scores),
    )


# ==================== SELF-SIMILAR PROFILE ====================

class ProfileReport(BaseModel):
    recentring: str
    probes: List[float]
    reports: List[GofReport]
    ks_trend: List[float]
    trend_pass: bool
    passed: bool


def profile_samples(
    ensemble: EnsembleResult,
    t: float,
    constants: AsymptoticConstants,
    recentring: Recentring = Recentring.DRIFT,
    path: Optional[RecentringPath] = None,
) -> np.ndarray:
    """Samples of p^{√t}(1, ·) at probe t."""
    samples = ensemble.at(t)
    if recentring is Recentring.PATH:
        if path is None:
            raise ConfigurationError("Recentring by H(t) needs a recentring path")
        return recentre(samples, t, path(t))
    return rescale(samples, t, constants.K)


def selfsimilar_profile(
    ensemble: EnsembleResult,
    constants: AsymptoticConstants,
    law: LimitLaw,
    recentring: Recentring = Recentring.DRIFT,
    path: Optional[RecentringPath] = None,
    tolerances: Optional[Tolerances] = None,
    lattice_spacing: Optional[float] = None,
) -> ProfileReport:
    """
    Goodness of fit at every positive probe and the KS trend across them.

    With lattice_spacing set, each probe's KS tolerance includes the
    discretization term of that probe.
    """
    tolerances = tolerances or Tolerances()
    probes = [float(t) for t in ensemble.probes if t > 0]
    if not probes:
        raise ConfigurationError("The self-similar profile needs a positive probe time")
    reports = []
    for t in probes:
        z = profile_samples(ensemble, t, constants, recentring, path)
        extra = lattice_discretization(law, t, lattice_spacing) if lattice_spacing else None
        reports.append(gof_gaussian(z, law, tolerances, extra))
    trend = [report.max_ks for report in reports]
    trend_pass = all(b <= a + tolerances.ks_trend_slack for a, b in zip(trend, trend[1:]))
    return ProfileReport(
        recentring=recentring.value,
        probes=probes,
        reports=reports,
        ks_trend=trend,
        trend_pass=trend_pass,
        passed=trend_pass and all(report.passed for report in reports),
    )
