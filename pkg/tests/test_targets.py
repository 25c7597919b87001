"""Target densities, heat semigroup oracles, and point-cloud validation."""

import io
import math

import numpy as np
import pytest

from driftsim import (PointCloud, RngStream, build_point_cloud,
                      cloud_radius_limit, cloud_sup_error, density_ratio,
                      gaussian_mixture, gibbs_target, heat_semigroup,
                      parse_target, shifted_gaussian)
from driftsim.errors import (ApproximationFailure, ConfigurationError,
                             DomainError, UnsupportedOracleError)


def mc_semigroup(target, x, t, n=1_000_000, seed=321):
    """Monte Carlo quadrature oracle for Q_t f(x): mean of f(x + sqrt(t) Z)."""
    gen = RngStream(seed, 0).generator()
    z = gen.standard_normal((n, target.dim))
    vals, _ = density_ratio(target, x[None, :] + math.sqrt(t) * z)
    return vals.mean(), vals.std(ddof=1) / math.sqrt(n)


class TestDensityRatio:
    def test_shifted_gaussian_closed_form(self):
        target = shifted_gaussian([1.0, 0.0])
        value, grad = density_ratio(target, np.zeros(2))
        assert value == pytest.approx(math.exp(-0.5), rel=1e-14)
        np.testing.assert_allclose(grad, [math.exp(-0.5), 0.0], atol=1e-14)

    def test_flat_gibbs_is_unit(self):
        target = gibbs_target(0.0, [0.0, 0.0])
        for x in (np.zeros(2), np.array([3.0, -2.0])):
            value, grad = density_ratio(target, x)
            assert value == 1.0
            np.testing.assert_array_equal(grad, np.zeros(2))

    def test_lower_bound_on_certified_ball(self):
        target = shifted_gaussian([1.0])
        gen = RngStream(5, 0).generator()
        x = gen.standard_normal((2000, 1))
        x = x[np.abs(x[:, 0]) <= target.certified_radius]
        vals, grads = density_ratio(target, x)
        assert np.all(vals >= target.lower_c - 1e-12)
        assert np.all(np.abs(grads) <= target.lipschitz_L + 1e-9)

    def test_gibbs_global_bounds(self):
        target = gibbs_target(2.0, [0.5])
        gen = RngStream(6, 0).generator()
        x = 20.0 * gen.standard_normal((2000, 1))
        vals, grads = density_ratio(target, x)
        assert np.all(vals >= target.lower_c - 1e-12)
        assert np.all(np.linalg.norm(grads, axis=1) <= target.lipschitz_L)

    def test_normalization_by_quadrature(self):
        """f integrates to 1 against the standard Gaussian, all kinds."""
        targets = [shifted_gaussian([0.8]),
                   gaussian_mixture([0.3, 0.7], [[1.0], [-0.5]]),
                   gibbs_target(1.5, [0.25])]
        gen = RngStream(77, 0).generator()
        z = gen.standard_normal((400_000, 1))
        for target in targets:
            vals, _ = density_ratio(target, z)
            se = vals.std(ddof=1) / math.sqrt(vals.size)
            assert abs(vals.mean() - 1.0) <= 4 * se + 1e-3

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            density_ratio(shifted_gaussian([1.0, 0.0]), np.zeros(3))

    def test_nonfinite_state(self):
        with pytest.raises(DomainError):
            density_ratio(shifted_gaussian([1.0]), np.array([np.nan]))


class TestHeatSemigroup:
    def test_shifted_gaussian_closed_form(self):
        """Q_t f(x) = exp(m.x + (t-1)|m|^2/2) from the Gaussian MGF."""
        m = np.array([1.0, 0.0])
        target = shifted_gaussian(m)
        value, grad = heat_semigroup(target, np.zeros(2), 1.0)
        assert value == pytest.approx(1.0, rel=1e-14)
        x = np.array([0.3, -0.4])
        for t in (0.25, 0.5, 0.9):
            value, grad = heat_semigroup(target, x, t)
            expect = math.exp(m @ x + (t - 1.0) * (m @ m) / 2.0)
            assert value == pytest.approx(expect, rel=1e-13)
            np.testing.assert_allclose(grad, m * expect, rtol=1e-13, atol=1e-15)

    def test_t_zero_is_identity(self):
        target = gaussian_mixture([0.5, 0.5], [[1.0, 0.0], [-1.0, 0.0]])
        x = np.array([0.2, 0.1])
        v0, g0 = heat_semigroup(target, x, 0.0)
        v1, g1 = density_ratio(target, x)
        assert v0 == v1
        assert np.array_equal(g0, g1)

    def test_mixture_matches_mc_quadrature(self):
        """Closed form vs 1e6-sample Monte Carlo quadrature within 3 stderr."""
        target = gaussian_mixture([0.4, 0.6], [[1.0, 0.5], [-0.5, 0.0]])
        x = np.array([0.5, -0.25])
        for t in (0.3, 1.0):
            value, _ = heat_semigroup(target, x, t)
            est, se = mc_semigroup(target, x, t)
            assert abs(value - est) <= 3 * se

    def test_gradient_commutation_finite_difference(self):
        """Semigroup gradient matches central differences of x -> Q_t f."""
        target = gaussian_mixture([0.5, 0.5], [[1.0, 0.0], [-1.0, 0.5]])
        x = np.array([0.4, -0.3])
        t = 0.7
        _, grad = heat_semigroup(target, x, t)
        h = 1e-4
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            up, _ = heat_semigroup(target, x + e, t)
            dn, _ = heat_semigroup(target, x - e, t)
            fd = (up - dn) / (2 * h)
            assert fd == pytest.approx(grad[i], rel=1e-5)

    def test_positivity_on_sampled_inputs(self):
        target = gaussian_mixture([0.5, 0.5], [[1.0], [-1.0]])
        gen = RngStream(9, 0).generator()
        x = gen.standard_normal((500, 1))
        x = x[np.abs(x[:, 0]) <= target.certified_radius]
        for t in (0.0, 0.3, 1.0):
            vals, _ = heat_semigroup(target, x, t)
            assert np.all(vals >= target.lower_c - 1e-12)

    def test_t_domain(self):
        with pytest.raises(DomainError):
            heat_semigroup(shifted_gaussian([1.0]), np.zeros(1), 1.5)
        with pytest.raises(DomainError):
            heat_semigroup(shifted_gaussian([1.0]), np.zeros(1), -0.1)

    def test_gibbs_needs_cloud(self):
        target = gibbs_target(1.0, [0.0])
        with pytest.raises(UnsupportedOracleError):
            heat_semigroup(target, np.zeros(1), 0.5)
        with_cloud = target.with_cloud(PointCloud.draw(1, 4000, seed=3))
        value, grad = heat_semigroup(with_cloud, np.zeros(1), 0.5)
        assert value > 0
        assert grad.shape == (1,)


class TestMixtureConsistency:
    def test_single_component_equals_shifted_gaussian(self):
        m = [0.75, -0.25]
        mix = gaussian_mixture([1.0], [m])
        single = shifted_gaussian(m)
        gen = RngStream(13, 0).generator()
        x = gen.standard_normal((50, 2))
        v1, g1 = density_ratio(mix, x)
        v2, g2 = density_ratio(single, x)
        np.testing.assert_array_equal(v1, v2)
        np.testing.assert_array_equal(g1, g2)

    def test_weights_validated(self):
        with pytest.raises(ConfigurationError):
            gaussian_mixture([0.5, -0.5], [[1.0], [-1.0]])


class TestPointCloud:
    def test_flat_target_any_cloud_is_exact(self):
        """For constant f the cloud average is exact: sup errors are 0."""
        target = shifted_gaussian([0.0, 0.0])
        cloud = PointCloud.draw(2, 50, seed=1)
        val_err, grad_err = cloud_sup_error(cloud, target, 2.0)
        assert val_err == pytest.approx(0.0, abs=1e-14)
        assert grad_err == pytest.approx(0.0, abs=1e-14)

    def test_single_origin_point_oracle(self):
        """A one-point cloud at 0 turns Q_t f into f: the sup error equals
        the closed-form max of |f(x) - Q_t f(x)| over the same grid."""
        target = shifted_gaussian([1.0])
        cloud = PointCloud(points=np.zeros((1, 1)), radius_bound=0.0,
                           target_eps=math.inf, valid_radius=0.0)
        val_err, _ = cloud_sup_error(cloud, target, 1.0, grid_resolution=9)
        xs = np.linspace(-1.0, 1.0, 9)
        ts = np.linspace(0.0, 1.0, 11)
        expect = max(abs(math.exp(x - 0.5) - math.exp(x + (t - 1.0) / 2.0))
                     for x in xs for t in ts)
        assert val_err == pytest.approx(expect, rel=1e-12)

    def test_degenerate_grid(self):
        target = shifted_gaussian([1.0])
        cloud = PointCloud.draw(1, 10, seed=2)
        val_err, grad_err = cloud_sup_error(cloud, target, 0.0,
                                            grid_resolution=1)
        assert np.isfinite(val_err) and np.isfinite(grad_err)

    def test_build_validates_and_respects_radius(self):
        target = shifted_gaussian([1.0, 0.0])
        cloud = build_point_cloud(target, eps=0.15, radius=2.0, seed=10)
        val_err, grad_err = cloud_sup_error(cloud, target, 2.0)
        assert val_err <= 0.15 and grad_err <= 0.15
        assert cloud.radius_bound <= cloud_radius_limit(cloud.n_points, 2)
        assert cloud.target_eps == 0.15
        assert cloud.valid_radius == 2.0

    def test_build_rejects_bad_inputs(self):
        target = shifted_gaussian([1.0])
        with pytest.raises(DomainError):
            build_point_cloud(target, eps=0.0, radius=1.0, seed=1)
        with pytest.raises(DomainError):
            build_point_cloud(target, eps=0.1, radius=0.0, seed=1)
        with pytest.raises(UnsupportedOracleError):
            build_point_cloud(gibbs_target(1.0, [0.0]), eps=0.1, radius=1.0,
                              seed=1)

    def test_retry_budget_exhaustion(self):
        """An unreachable accuracy fails loudly with the measured errors."""
        target = shifted_gaussian([2.0])
        with pytest.raises(ApproximationFailure) as err:
            build_point_cloud(target, eps=1e-5, radius=3.0, seed=4,
                              max_retries=1)
        assert err.value.sup_value_err > 1e-5

    def test_csv_round_trip(self):
        cloud = PointCloud.draw(3, 25, seed=8)
        buf = io.StringIO()
        cloud.to_csv(buf)
        text = buf.getvalue()
        assert text.splitlines()[0] == "z_0,z_1,z_2"
        loaded = PointCloud.from_csv(io.StringIO(text))
        np.testing.assert_array_equal(loaded.points, cloud.points)

    def test_oracle_required_for_validation(self):
        cloud = PointCloud.draw(1, 10, seed=5)
        with pytest.raises(UnsupportedOracleError):
            cloud_sup_error(cloud, gibbs_target(1.0, [0.0]), 1.0)


class TestGibbsNormalization:
    def test_derived_seed_is_stable(self):
        a = gibbs_target(2.0, [0.0, 0.0])
        b = gibbs_target(2.0, [0.0, 0.0])
        assert a.normalization == b.normalization
        z, se = a.normalization
        assert 0.0 < z <= 1.0
        assert se > 0.0

    def test_constants_from_amplitude(self):
        target = gibbs_target(2.0, [0.0])
        assert target.lower_c == pytest.approx(math.exp(-2.0))
        assert target.lipschitz_L == pytest.approx(math.exp(2.0) * (4.0 + 16.0))


class TestParseTarget:
    def test_round_trips(self):
        t = parse_target("gauss:m=1.0,0.0")
        assert t.kind == "shifted-gaussian" and t.dim == 2
        t = parse_target("mix:w=0.5,0.5;m1=1,0;m2=-1,0")
        assert t.kind == "gaussian-mixture" and t.means.shape == (2, 2)
        t = parse_target("gibbs:A=2.0;x0=0,0")
        assert t.kind == "gibbs" and t.amplitude == 2.0

    @pytest.mark.parametrize("bad", [
        "gauss:mu=1", "mix:w=0.5,0.5;m1=1,0", "gibbs:A=1", "pareto:a=1",
        "gauss:m=one", "mix:w=0.5,0.5;m1=1;m2=2;m3=3",
    ])
    def test_rejects_malformed(self, bad):
        with pytest.raises(ConfigurationError):
            parse_target(bad)
