"""
Unit tests for the statistical harness

Synthetic samples exercise each check; runs marked slow reproduce the
desk-scale acceptance numbers from full ensembles.
"""

import math

import numpy as np
import pytest

from delaywalk.asymptotics import compute_constants, limit_law, mean_path
from delaywalk.dde import ConstantHistory
from delaywalk.exceptions import ConfigurationError
from delaywalk.lattice import LatticeInitial, marginal_law, solve_lattice
from delaywalk.measures import AtomicJumps, AtomicStripMeasure, ProductStripMeasure, ThetaMeasure, UniformBox
from delaywalk.rates import ConstantOne, HyperbolicDDE
from delaywalk.simulator import EnsembleResult, InitialCondition, simulate_ensemble
from delaywalk.verify import (
    Recentring,
    Tolerances,
    check_lln,
    compare_lattice,
    compare_mean_path,
    compare_moments,
    gof_gaussian,
    inverse_rescale,
    ks_critical,
    lattice_discretization,
    rescale,
    selfsimilar_profile,
)


@pytest.fixture
def delayed_poisson():
    return AtomicStripMeasure.dirac(-1.0, [1.0])


@pytest.fixture
def constants(delayed_poisson):
    return compute_constants(delayed_poisson, ConstantOne())


@pytest.fixture
def law(constants):
    return limit_law(constants)


@pytest.fixture
def origin():
    return InitialCondition(AtomicJumps([1.0], [[0.0]]))


def synthetic_ensemble(drift, sigma, probes, n, seed, bias=0.0):
    """X(t) = Kt + √(Σt)·ξ (+ bias·t) at every probe."""
    rng = np.random.default_rng(seed)
    probes = np.asarray(probes, dtype=float)
    noise = rng.standard_normal((n, len(probes), 1))
    values = (drift + bias) * probes[None, :, None] + math.sqrt(sigma) * np.sqrt(probes)[None, :, None] * noise
    return EnsembleResult(
        probes=probes,
        values=values,
        counts=np.zeros(n, dtype=np.int64),
        master_seed=seed,
        n=n,
        horizon=float(probes[-1]),
    )


class TestRescaling:

    def test_inverse(self):
        z = np.array([[0.3], [-1.2]])
        x = inverse_rescale(z, 400.0, np.array([0.5]))
        assert rescale(x, 400.0, np.array([0.5])) == pytest.approx(z)

    def test_discretization_term(self, law):
        assert lattice_discretization(law, 400.0)[0] == pytest.approx(0.05 * 1.1284, abs=1e-4)

    def test_ks_critical(self):
        assert ks_critical(20000, 0.01) == pytest.approx(1.628 / math.sqrt(20000), rel=0.02)


# ==================== GAUSSIAN FIT ====================

class TestGofGaussian:

    def test_samples_from_limit_pass(self, law):
        z = law.sample(np.random.default_rng(17), 5000)
        report = gof_gaussian(z, law)
        assert report.passed
        assert report.std[0] == pytest.approx(math.sqrt(0.125), rel=0.05)

    def test_shifted_samples_fail(self, law):
        z = law.sample(np.random.default_rng(17), 5000) + 0.2
        assert not gof_gaussian(z, law).passed

    def test_too_few_samples(self, law):
        with pytest.raises(ConfigurationError):
            gof_gaussian(np.zeros((10, 1)), law)

    def test_kernel_axis(self):
        degenerate = limit_law(compute_constants(AtomicStripMeasure.dirac(-1.0, [1.0, 0.0]), ConstantOne()))
        z = degenerate.sample(np.random.default_rng(2), 2000)
        report = gof_gaussian(z, degenerate)
        assert report.range_dim == 1
        assert report.kernel_max_abs == 0.0
        assert report.kernel_pass
        z[:, 1] += 1e-6
        assert not gof_gaussian(z, degenerate).kernel_pass

    def test_chi2_gate_is_optional(self, law):
        z = 1.2 * law.sample(np.random.default_rng(4), 20000)
        gated = gof_gaussian(z, law, Tolerances(require_chi2=True, ks_slack=100.0))
        assert not gated.chi2_pass
        assert not gated.passed
        assert gof_gaussian(z, law, Tolerances(ks_slack=100.0)).passed


# ==================== LLN ====================

class TestLln:

    def test_unbiased_ensemble_passes(self, constants):
        ensemble = synthetic_ensemble(0.5, 0.125, [100.0, 400.0], 2000, seed=31)
        report = check_lln(ensemble, constants.K, sigma=constants.Sigma)
        assert report.passed
        assert report.probes[-1].half_width == pytest.approx(3.0 * math.sqrt(0.125 / (400.0 * 2000)))

    def test_biased_ensemble_fails(self, constants):
        ensemble = synthetic_ensemble(0.5, 0.125, [100.0, 400.0], 2000, seed=31, bias=0.01)
        assert not check_lln(ensemble, constants.K, sigma=constants.Sigma).passed

    def test_empirical_half_width(self, constants):
        ensemble = synthetic_ensemble(0.5, 0.125, [100.0], 500, seed=3)
        report = check_lln(ensemble, constants.K)
        assert report.probes[0].half_width > 0.0


class TestMeanPathComparison:

    @pytest.fixture
    def path(self, delayed_poisson):
        return mean_path(delayed_poisson, ConstantOne(), [0.0], horizon=100.0)

    @staticmethod
    def around_path(path, probes, n, seed, bias=0.0):
        """X(t) = m(t) + √(t/8)·ξ (+ bias·t)."""
        rng = np.random.default_rng(seed)
        probes = np.asarray(probes, dtype=float)
        centre = np.array([path.mean(t)[0] + bias * t for t in probes])
        noise = rng.standard_normal((n, len(probes), 1))
        values = centre[None, :, None] + np.sqrt(probes / 8.0)[None, :, None] * noise
        return EnsembleResult(probes, values, np.zeros(n, dtype=np.int64), seed, n, float(probes[-1]))

    def test_centred_ensemble_passes(self, path):
        ensemble = self.around_path(path, [2.0, 10.0, 100.0], 2000, seed=41)
        report = compare_mean_path(ensemble, path, Tolerances(ci_sigmas=5.0))
        assert report.passed
        assert report.points[-1].expected == pytest.approx([0.50125], abs=1e-9)

    def test_biased_ensemble_fails(self, path):
        ensemble = self.around_path(path, [2.0, 10.0, 100.0], 2000, seed=41, bias=0.05)
        assert not compare_mean_path(ensemble, path).passed

    def test_zero_time_skipped(self, path):
        ensemble = self.around_path(path, [0.0, 5.0], 100, seed=2)
        assert [p.t for p in compare_mean_path(ensemble, path).points] == [5.0]

    def test_single_trajectory_rejected(self, path):
        with pytest.raises(ConfigurationError):
            compare_mean_path(self.around_path(path, [5.0], 1, seed=2), path)

    def test_early_time_ensemble(self, delayed_poisson, origin):
        # Before the drift settles mean(X/t) is far from K but tracks m(t)/t
        result = simulate_ensemble(
            delayed_poisson, ConstantOne(), origin, 5.0, [0.5, 1.0, 2.0, 5.0], 4000, master_seed=12
        )
        path = mean_path(delayed_poisson, ConstantOne(), [0.0], horizon=5.0)
        report = compare_mean_path(result, path, Tolerances(ci_sigmas=5.0))
        assert report.passed
        assert report.points[0].expected[0] == pytest.approx((1.0 - math.exp(-0.5)) / 0.5, abs=1e-9)



# ==================== LATTICE ORACLE ====================

class TestLatticeComparison:

    @pytest.fixture
    def oracle(self, delayed_poisson):
        evolution = solve_lattice(delayed_poisson, ConstantOne(), LatticeInitial.dirac([0]), 5.0)
        return marginal_law(evolution, 5.0).support(1e-14)

    def test_draws_from_oracle_pass(self, oracle):
        rng = np.random.default_rng(8)
        samples = oracle.offsets[rng.choice(len(oracle.masses), size=20000, p=oracle.masses)]
        report = compare_lattice(samples, oracle)
        assert report.passed
        assert compare_moments(samples, oracle).passed

    def test_shifted_draws_fail(self, oracle):
        rng = np.random.default_rng(8)
        samples = oracle.offsets[rng.choice(len(oracle.masses), size=20000, p=oracle.masses)] + 1
        assert not compare_lattice(samples, oracle).passed
        assert not compare_moments(samples, oracle).passed

    def test_ensemble_mean_matches_oracle(self, delayed_poisson, origin, oracle):
        result = simulate_ensemble(delayed_poisson, ConstantOne(), origin, 5.0, [5.0], 4000, master_seed=12)
        assert compare_moments(result.at(5.0), oracle).passed

    @pytest.mark.slow
    def test_total_variation_at_desk_scale(self, delayed_poisson, origin, oracle):
        result = simulate_ensemble(
            delayed_poisson, ConstantOne(), origin, 5.0, [1.0, 5.0], 100000, master_seed=6, workers=4
        )
        assert compare_lattice(result.at(5.0), oracle).total_variation <= 0.02
        assert np.mean(result.at(1.0)[:, 0] == 1.0) == pytest.approx(1.0 - math.exp(-1.0), abs=0.015)


# ==================== SELF-SIMILAR PROFILE ====================

class TestSelfSimilarProfile:

    def test_synthetic_profile(self, constants, law):
        ensemble = synthetic_ensemble(0.5, 0.125, [100.0, 400.0], 3000, seed=44)
        report = selfsimilar_profile(ensemble, constants, law)
        assert report.recentring == "drift"
        assert report.probes == [100.0, 400.0]
        assert report.passed

    def test_zero_probe_skipped(self, constants, law):
        ensemble = synthetic_ensemble(0.5, 0.125, [0.0, 100.0], 500, seed=1)
        assert selfsimilar_profile(ensemble, constants, law).probes == [100.0]

    def test_path_recentring_needs_path(self, constants, law):
        ensemble = synthetic_ensemble(0.5, 0.125, [100.0], 500, seed=1)
        with pytest.raises(ConfigurationError):
            selfsimilar_profile(ensemble, constants, law, Recentring.PATH)

    @pytest.mark.slow
    def test_delayed_poisson_clt(self, delayed_poisson, origin, constants, law):
        result = simulate_ensemble(
            delayed_poisson, ConstantOne(), origin, 400.0, [100.0, 400.0], 20000, master_seed=2, workers=8
        )
        report = selfsimilar_profile(result, constants, law, lattice_spacing=1.0)
        final = report.reports[-1]
        assert abs(final.mean[0]) <= 0.02
        assert final.covariance[0][0] == pytest.approx(0.125, abs=0.01)
        assert final.ks_statistics[0] <= 0.08
        assert report.trend_pass

    @pytest.mark.slow
    def test_uniform_jump_hyperbolic_std(self):
        eta = ThetaMeasure.dirac(-1.0)
        measure = ProductStripMeasure(eta, jumps=UniformBox([-0.5], [0.5]))
        policy = HyperbolicDDE(1.01, 1.0, eta, ConstantHistory(1.0), horizon=100.0)
        constants = compute_constants(measure, policy)
        initial = InitialCondition(UniformBox([-0.5], [0.5]))
        result = simulate_ensemble(measure, policy, initial, 100.0, [100.0], 1000, master_seed=6, workers=4)
        report = selfsimilar_profile(result, constants, limit_law(constants))
        assert 0.17 <= report.reports[0].std[0] <= 0.23
        assert math.sqrt(constants.Sigma[0, 0]) == pytest.approx(0.204, abs=1e-3)
