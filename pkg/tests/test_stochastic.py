"""Q-Wiener sampling, Ito integration, BDG moment bound, Monte Carlo."""

import math

import numpy as np
import pytest

from fracns.errors import GridMismatchError, NumericalError, ParameterError
from fracns.stochastic import (
    NoiseSpec,
    bdg_check,
    bdg_constant,
    hs_norm_sq,
    ito_integral,
    mc_expect,
    power_law_spectrum,
    sample_wiener,
)


@pytest.fixture
def grid():
    return np.linspace(0.0, 1.0, 17)


@pytest.fixture
def noise():
    return power_law_spectrum(8)


class TestNoiseSpec:
    def test_power_law_trace(self):
        spec = power_law_spectrum(12, decay=2.0, trace=1.0)
        assert spec.trace == pytest.approx(1.0, rel=1e-14)
        assert np.all(np.diff(spec.q_eigenvalues) < 0)

    def test_rejects_divergent_decay(self):
        with pytest.raises(ParameterError):
            power_law_spectrum(8, decay=1.0)

    def test_rejects_negative_eigenvalues(self):
        with pytest.raises(ParameterError):
            NoiseSpec(np.array([0.5, -0.1]))


class TestSampleWiener:
    def test_degenerate_covariance(self, grid):
        spec = NoiseSpec(np.zeros(4))
        path = sample_wiener(grid, spec, seed=1, sample_index=0)
        assert np.all(path.increments == 0.0)

    def test_determinism(self, grid, noise):
        a = sample_wiener(grid, noise, seed=11, sample_index=3)
        b = sample_wiener(grid, noise, seed=11, sample_index=3)
        assert np.array_equal(a.increments, b.increments)
        c = sample_wiener(grid, noise, seed=11, sample_index=4)
        assert not np.array_equal(a.increments, c.increments)

    def test_empirical_variance(self, grid, noise):
        # Var(dW_m over step k) = nu_m dt_k within 3 standard errors.
        n = 20000
        k, m = 3, 2
        dt = grid[k + 1] - grid[k]
        vals = np.array([sample_wiener(grid, noise, 5, i).increments[k, m]
                         for i in range(n)])
        var = np.var(vals, ddof=1)
        target = noise.q_eigenvalues[m] * dt
        se_var = target * math.sqrt(2.0 / (n - 1))
        assert abs(var - target) <= 3.0 * se_var
        assert abs(np.mean(vals)) <= 3.0 * math.sqrt(target / n)

    def test_disjoint_increment_independence(self, grid, noise):
        n = 4000
        a = np.empty(n)
        b = np.empty(n)
        for i in range(n):
            inc = sample_wiener(grid, noise, 17, i).increments
            a[i], b[i] = inc[2, 1], inc[9, 1]
        corr = np.corrcoef(a, b)[0, 1]
        assert abs(corr) <= 3.0 / math.sqrt(n)

    def test_grid_validation(self, noise):
        with pytest.raises(ParameterError):
            sample_wiener(np.array([0.5, 1.0]), noise, 0, 0)
        with pytest.raises(ParameterError):
            sample_wiener(np.array([0.0, 0.5, 0.5]), noise, 0, 0)


class TestItoIntegral:
    def test_identity_telescopes_to_total(self, grid, noise):
        path = sample_wiener(grid, noise, 2, 7)
        got = ito_integral(np.ones(noise.n_modes), path)
        np.testing.assert_allclose(got, path.total(), atol=1e-15)

    def test_martingale_zero_mean(self, grid, noise):
        phi = np.full(noise.n_modes, 1.7)
        n = 20000

        def fn(seed, i):
            return float(np.sum(ito_integral(phi, sample_wiener(grid, noise, seed, i))))

        mean, stderr = mc_expect(fn, n, seed=23)
        assert abs(mean) <= 3.0 * stderr

    def test_isometry(self, grid, noise):
        # E || int Phi dW ||^2 = int ||Phi||^2_{L02} dt for deterministic Phi.
        rng = np.random.default_rng(0)
        phi = rng.standard_normal((len(grid) - 1, noise.n_modes))
        dt = np.diff(grid)
        exact = float(np.sum(hs_norm_sq(phi, noise) * dt))

        def fn(seed, i):
            return float(np.sum(ito_integral(phi, sample_wiener(grid, noise, seed, i)) ** 2))

        mean, stderr = mc_expect(fn, 100000, seed=29)
        assert abs(mean - exact) <= 3.0 * stderr

    def test_shape_mismatch(self, grid, noise):
        path = sample_wiener(grid, noise, 2, 7)
        with pytest.raises(GridMismatchError):
            ito_integral(np.ones((3, noise.n_modes)), path)


class TestMcExpect:
    def test_constant_functional(self):
        mean, stderr = mc_expect(lambda s, i: 2.5, 100, seed=1)
        assert mean == pytest.approx(2.5) and stderr == 0.0

    def test_stderr_scaling(self, grid, noise):
        def fn(seed, i):
            return float(sample_wiener(grid, noise, seed, i).increments[0, 0])

        _, se1 = mc_expect(fn, 4000, seed=3)
        _, se2 = mc_expect(fn, 8000, seed=3)
        # doubling n halves the standard error within 20 percent
        assert abs(se2 / se1 - 1.0 / math.sqrt(2.0)) < 0.2 / math.sqrt(2.0)

    def test_worker_count_invariance(self, grid, noise):
        def fn(seed, i):
            return float(np.sum(sample_wiener(grid, noise, seed, i).increments ** 2))

        m1, s1 = mc_expect(fn, 500, seed=9, workers=1)
        m4, s4 = mc_expect(fn, 500, seed=9, workers=4)
        assert m1 == m4 and s1 == s4

    def test_nonfinite_sample_named(self):
        def fn(seed, i):
            return math.nan if i == 37 else 1.0

        with pytest.raises(NumericalError) as exc:
            mc_expect(fn, 50, seed=0)
        assert "37" in str(exc.value)

    def test_needs_two_samples(self):
        with pytest.raises(ParameterError):
            mc_expect(lambda s, i: 0.0, 1, seed=0)


class TestBdg:
    def test_constant_values(self):
        # kappa(2) = 1 exactly; kappa(4) = 36 (4/3)^4.
        assert bdg_constant(2.0) == 1.0
        assert bdg_constant(4.0) == pytest.approx(36.0 * (4.0 / 3.0) ** 4, rel=1e-14)
        assert bdg_constant(4.0) == pytest.approx(113.7778, abs=1e-4)
        with pytest.raises(ParameterError):
            bdg_constant(1.5)

    def test_zero_integrand_ratio_zero(self, grid, noise):
        reports = bdg_check(2.0, {"zero": np.zeros(noise.n_modes)}, grid, noise,
                            n_samples=100, seed=5)
        assert reports[0].ratio == 0.0 and reports[0].holds

    @pytest.mark.parametrize("p", [2.0, 4.0])
    def test_bound_holds_for_family(self, grid, noise, p):
        rng = np.random.default_rng(1)
        family = {
            "constant": np.ones(noise.n_modes),
            "single_mode_ramp": np.outer(np.linspace(0.0, 1.0, len(grid) - 1),
                                         np.eye(noise.n_modes)[0]),
            "random_smooth": rng.standard_normal((len(grid) - 1, noise.n_modes)),
        }
        reports = bdg_check(p, family, grid, noise, n_samples=20000, seed=41)
        for r in reports:
            assert r.holds, (r.label, r.ratio, r.ratio_stderr)

    def test_isometry_at_p2(self, grid, noise):
        # p = 2 is an equality: ratio = 1 within Monte Carlo error.
        reports = bdg_check(2.0, {"constant": np.ones(noise.n_modes)}, grid, noise,
                            n_samples=50000, seed=43)
        r = reports[0]
        assert abs(r.ratio - 1.0) <= 3.0 * r.ratio_stderr
