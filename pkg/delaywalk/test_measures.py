"""
Unit tests for strip measures

Exact moments, quadrature, plain and tilted sampling.
"""

import numpy as np
import pytest
from scipy.stats import ks_2samp

from delaywalk.exceptions import ConfigurationError, EnvelopeError
from delaywalk.measures import (
    AtomicJumps,
    AtomicStripMeasure,
    ExponentialDensity,
    GaussianJumps,
    LinearCoupling,
    MomentOrder,
    ProductStripMeasure,
    SamplingStats,
    ThetaMeasure,
    UniformBox,
    UniformDensity,
    integrate_density,
)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class TestThetaMeasure:
    """θ-marginals on [-1, 0]."""

    def test_atomic_integral_is_exact(self):
        eta = ThetaMeasure.atomic([0.25, 0.75], [-1.0, -0.5])
        assert eta.integrate(lambda th: th) == pytest.approx(-0.625, abs=1e-15)

    def test_uniform_density_moments(self):
        eta = ThetaMeasure.from_density(UniformDensity())
        assert eta.integrate(lambda th: th) == pytest.approx(-0.5, abs=1e-12)
        assert eta.integrate(lambda th: th ** 2) == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_exponential_density_is_normalized(self):
        density = ExponentialDensity(2.0)
        mass = integrate_density(lambda th: np.ones_like(th), density)
        assert float(mass) == pytest.approx(1.0, abs=1e-12)

    def test_density_with_wrong_mass_rejected(self):
        with pytest.raises(ConfigurationError):
            ThetaMeasure.from_density(lambda th: 2.0 * np.ones_like(th))

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ConfigurationError):
            ThetaMeasure.atomic([0.5, 0.6], [-1.0, 0.0])

    def test_theta_outside_strip_rejected(self):
        with pytest.raises(ConfigurationError):
            ThetaMeasure.atomic([1.0], [-1.5])

    def test_sup_on_density(self):
        eta = ThetaMeasure.from_density(UniformDensity())
        assert eta.sup(lambda th: -(th + 0.3) ** 2) == pytest.approx(0.0, abs=1e-8)

    def test_density_sample_mean(self, rng):
        eta = ThetaMeasure.from_density(ExponentialDensity(1.0))
        draws = np.array([eta.sample(rng) for _ in range(20000)])
        expected = float(eta.integrate(lambda th: th))
        assert draws.mean() == pytest.approx(expected, abs=4 * draws.std() / np.sqrt(len(draws)))


# ==================== JUMP LAWS ====================

class TestJumpMarginals:
    """Closed-form moments of displacement laws."""

    def test_atomic_jumps(self):
        law = AtomicJumps([0.5, 0.5], [[1.0], [-1.0]])
        assert law.mean() == pytest.approx([0.0])
        assert law.second_moment() == pytest.approx([[1.0]])

    def test_uniform_box(self):
        law = UniformBox([-0.5], [0.5])
        assert law.mean() == pytest.approx([0.0])
        assert law.second_moment()[0, 0] == pytest.approx(1.0 / 12.0)

    def test_uniform_box_bounds(self):
        with pytest.raises(ConfigurationError):
            UniformBox([1.0], [0.0])

    def test_gaussian_needs_symmetric_covariance(self):
        with pytest.raises(ConfigurationError):
            GaussianJumps([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])

    def test_singular_gaussian_samples_stay_on_line(self, rng):
        law = GaussianJumps([0.0, 0.0], [[1.0, 1.0], [1.0, 1.0]])
        draws = np.array([law.sample(rng) for _ in range(100)])
        assert np.allclose(draws[:, 0], draws[:, 1], atol=1e-12)


# ==================== STRIP MEASURES ====================

class TestStripMeasure:
    """Moments and sampling of Q."""

    def test_delayed_poisson_moments(self):
        q = AtomicStripMeasure.dirac(-1.0, [1.0])
        assert q.moment(lambda th: th) == pytest.approx(-1.0)
        assert q.moment(lambda th: np.ones_like(th), MomentOrder.FIRST) == pytest.approx([1.0])
        assert q.moment(lambda th: np.ones_like(th), MomentOrder.SECOND) == pytest.approx([[1.0]])

    def test_coupled_product_moments(self):
        q = ProductStripMeasure(ThetaMeasure.dirac(-1.0), coupling=LinearCoupling([0.5]))
        assert q.moment(lambda th: np.ones_like(th), MomentOrder.FIRST) == pytest.approx([-0.5])
        assert q.moment(lambda th: np.ones_like(th), MomentOrder.SECOND) == pytest.approx([[0.25]])

    def test_uniform_theta_coupling_moment(self):
        q = ProductStripMeasure(ThetaMeasure.from_density(UniformDensity()), coupling=LinearCoupling([1.0]))
        # ∫ θ · θ dθ over [-1, 0]
        assert q.moment(lambda th: th, MomentOrder.FIRST) == pytest.approx([1.0 / 3.0], abs=1e-12)

    def test_product_needs_one_factor(self):
        with pytest.raises(ConfigurationError):
            ProductStripMeasure(ThetaMeasure.dirac(-1.0))

    def test_atoms_of_product_with_atomic_jumps(self):
        q = ProductStripMeasure(
            ThetaMeasure.atomic([0.5, 0.5], [-1.0, 0.0]),
            jumps=AtomicJumps([0.5, 0.5], [[1.0], [-1.0]]),
        )
        weights, thetas, points = q.atoms()
        assert weights.sum() == pytest.approx(1.0)
        assert len(thetas) == 4
        assert set(points.ravel().tolist()) == {1.0, -1.0}

    def test_sampler_matches_quadrature_moments(self, rng):
        q = ProductStripMeasure(
            ThetaMeasure.from_density(ExponentialDensity(1.5)),
            jumps=GaussianJumps([0.3], [[0.5]]),
        )
        draws = [q.sample(rng) for _ in range(20000)]
        thetas = np.array([d[0] for d in draws])
        zs = np.array([d[1][0] for d in draws])
        theta_mean = q.moment(lambda th: th)
        z_mean = q.moment(lambda th: np.ones_like(th), MomentOrder.FIRST)[0]
        assert thetas.mean() == pytest.approx(theta_mean, abs=4 * thetas.std() / np.sqrt(len(thetas)))
        assert zs.mean() == pytest.approx(z_mean, abs=4 * zs.std() / np.sqrt(len(zs)))

    def test_uniform_jump_second_moment(self):
        q = ProductStripMeasure(ThetaMeasure.dirac(-1.0), jumps=UniformBox([-0.5], [0.5]))
        assert q.moment(lambda th: np.ones_like(th), MomentOrder.SECOND) == pytest.approx([[1.0 / 12.0]], abs=1e-14)
        assert q.moment(lambda th: np.ones_like(th), MomentOrder.FIRST) == pytest.approx([0.0], abs=1e-15)

    def test_sampler_second_moment_matches_quadrature(self, rng):
        q = ProductStripMeasure(ThetaMeasure.from_density(UniformDensity()), coupling=LinearCoupling([1.0]))
        squares = np.array([q.sample(rng)[1][0] ** 2 for _ in range(20000)])
        exact = q.moment(lambda th: np.ones_like(th), MomentOrder.SECOND)[0, 0]
        assert exact == pytest.approx(1.0 / 3.0, abs=1e-12)
        assert squares.mean() == pytest.approx(exact, abs=4 * squares.std() / np.sqrt(len(squares)))


class TestTiltedSampling:
    """Draws from w(θ)Q / ∫w dQ."""

    @pytest.fixture
    def two_atoms(self):
        return AtomicStripMeasure([0.5, 0.5], [0.0, -1.0], [[0.0], [1.0]])

    def test_categorical_reweighting(self, two_atoms, rng):
        hits = sum(two_atoms.sample_tilted(np.exp, 1.0, rng)[0] == -1.0 for _ in range(100000))
        expected = np.exp(-1.0) / (1.0 + np.exp(-1.0))
        assert hits / 100000 == pytest.approx(expected, abs=0.01)

    def test_rejection_agrees_with_reweighting(self, two_atoms, rng):
        stats = SamplingStats()
        hits = sum(
            two_atoms.sample_tilted(np.exp, 1.0, rng, stats, force_rejection=True)[0] == -1.0
            for _ in range(50000)
        )
        expected = np.exp(-1.0) / (1.0 + np.exp(-1.0))
        assert hits / 50000 == pytest.approx(expected, abs=0.01)
        assert stats.acceptances == 50000
        assert 0.0 < stats.acceptance_rate < 1.0

    def test_envelope_violation_raises(self, two_atoms, rng):
        with pytest.raises(EnvelopeError):
            for _ in range(100):
                two_atoms.sample_tilted(lambda th: 2.0 * np.ones_like(th), 1.0, rng, force_rejection=True)

    def test_tilted_density_marginal(self, rng):
        q = ProductStripMeasure(ThetaMeasure.from_density(UniformDensity()), jumps=AtomicJumps([1.0], [[1.0]]))
        draws = np.array([q.sample_tilted(lambda th: np.exp(2.0 * th), 1.0, rng)[0] for _ in range(20000)])
        # Tilted law ∝ e^{2θ} on [-1, 0]
        expected = float(ThetaMeasure.from_density(ExponentialDensity(2.0)).integrate(lambda th: th))
        assert draws.mean() == pytest.approx(expected, abs=4 * draws.std() / np.sqrt(len(draws)))

    def test_constant_tilt_keeps_atom_frequencies(self, rng):
        q = AtomicStripMeasure([0.25, 0.75], [0.0, -1.0], [[0.0], [1.0]])
        one = lambda th: np.ones_like(th)
        hits = sum(q.sample_tilted(one, 1.0, rng)[0] == -1.0 for _ in range(100000))
        assert hits / 100000 == pytest.approx(0.75, abs=0.01)

    def test_constant_tilt_leaves_density_unchanged(self, rng):
        theta = ThetaMeasure.from_density(UniformDensity())
        q = ProductStripMeasure(theta, jumps=AtomicJumps([1.0], [[1.0]]))
        flat = lambda th: 2.0 * np.ones_like(th)
        tilted = np.array([q.sample_tilted(flat, 2.0, rng)[0] for _ in range(100000)])
        plain = np.array([theta.sample(rng) for _ in range(100000)])
        assert ks_2samp(tilted, plain).statistic <= 0.02
