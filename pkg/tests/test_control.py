"""Grammian, resolvent feedback, closed-loop exactness and the lambda sweep."""

import math

import numpy as np
import pytest
from scipy.special import rgamma

from fracns.control import (
    ControlSetup,
    FeedbackControl,
    apply_LT,
    control_lipschitz_probe,
    control_value,
    controllability_sweep,
    grammian_diag,
    resolvent_apply,
    simulate_controlled,
)
from fracns.dynamics import ModelParams, NoiseCoeffSpec, NonlinearitySpec, assemble
from fracns.errors import ParameterError
from fracns.stochastic import WienerPath, power_law_spectrum, sample_wiener


def scalar_problem(eta=0.8, alpha=1.6, nu=1e-12, T=1.0, K=512, p=4.0, sigma=0.0,
                   kind="zero", R=math.inf, N=1, noise_kind="additive"):
    mp = ModelParams(eta=eta, alpha=alpha, beta=0.0, p=p, nu=nu, T=T, N=N, K=K)
    return assemble(mp, NonlinearitySpec(kind, R), NoiseCoeffSpec(noise_kind, sigma),
                    power_law_spectrum(N))


def normalized_gain(eta, T):
    """Gain making gamma = 1 exactly in the negligible-dissipation limit.

    gamma = c^2 T^eta / (eta Gamma(eta)^2) when mu ~ 0.
    """
    return math.sqrt(eta / (T ** eta) ) * (1.0 / rgamma(eta))


class TestGrammian:
    def test_classical_zero_mu(self):
        g = grammian_diag(1.0, np.array([0.0]), 2.5, np.array([1.0]))
        assert g.gamma[0] == pytest.approx(2.5, rel=1e-12)

    def test_classical_closed_form(self):
        mu, T, c = 3.0, 1.2, 0.7
        g = grammian_diag(1.0, np.array([mu]), T, np.array([c]))
        expected = c * c * (1.0 - math.exp(-2.0 * mu * T)) / (2.0 * mu)
        assert g.gamma[0] == pytest.approx(expected, rel=1e-11)

    def test_zero_gain_mode(self):
        g = grammian_diag(0.7, np.array([1.0, 2.0]), 1.0, np.array([1.0, 0.0]))
        assert g.gamma[1] == 0.0
        assert g.gamma[0] > 0.0

    def test_positivity_iff_gain(self):
        for eta in (0.6, 0.75, 0.9):
            for alpha in (1.5, 2.0):
                mu = 0.3 * (np.arange(1, 5) * math.pi) ** alpha
                c = np.array([1.0, 0.0, 0.5, 2.0])
                g = grammian_diag(eta, mu, 0.8, c)
                assert np.all((g.gamma > 0.0) == (c != 0.0))

    def test_node_count_contract(self):
        with pytest.raises(ParameterError):
            grammian_diag(0.8, np.array([1.0]), 1.0, np.array([1.0]), n_quad=4)

    def test_normalized_gain_gives_unit_grammian(self):
        eta, T = 0.8, 1.0
        c = normalized_gain(eta, T)
        g = grammian_diag(eta, np.array([1e-12]), T, np.array([c]))
        assert g.gamma[0] == pytest.approx(1.0, rel=1e-9)


class TestResolvent:
    def test_zero_grammian_scales(self):
        g = grammian_diag(0.8, np.array([1.0, 1.0]), 1.0, np.array([0.0, 0.0]))
        out = resolvent_apply(g, 0.5, np.array([1.0, 2.0]))
        np.testing.assert_allclose(out, [2.0, 4.0])

    def test_large_lambda_limit(self):
        g = grammian_diag(0.8, np.array([1.0]), 1.0, np.array([1.0]))
        f = np.array([3.0])
        lam = 1e9
        np.testing.assert_allclose(lam * resolvent_apply(g, lam, f), f, rtol=1e-8)

    def test_contraction_factor(self):
        g = grammian_diag(0.8, np.array([2.0, 4.0]), 1.0, np.array([1.0, 0.3]))
        for lam in (1.0, 0.1, 1e-4):
            factor = lam / (lam + g.gamma)
            assert np.all(factor > 0.0) and np.all(factor <= 1.0)
        # lambda -> 0 kills controllable components
        assert 1e-6 / (1e-6 + g.gamma[0]) < 1e-4


class TestApplyLT:
    def test_zero_control(self):
        prob = scalar_problem()
        out = apply_LT(np.zeros((prob.mp.K, 1)), prob, np.array([1.0]))
        np.testing.assert_array_equal(out, np.zeros(1))

    def test_classical_constant_control(self):
        mu_target, c, T = 2.0, 1.3, 1.0
        K = 4096
        mp = ModelParams(eta=1.0, alpha=2.0, beta=0.0, p=4.0,
                         nu=mu_target / math.pi ** 2, T=T, N=1, K=K)
        prob = assemble(mp, NonlinearitySpec("zero"), NoiseCoeffSpec("additive", 0.0),
                        power_law_spectrum(1))
        v = np.ones((K, 1)) * 0.8
        got = apply_LT(v, prob, np.array([c]))[0]
        expected = c * (1.0 - math.exp(-mu_target * T)) / mu_target * 0.8
        assert got == pytest.approx(expected, rel=5e-4)

    def test_resolvent_feedback_identity(self):
        # Discrete identity: L_T of the linear deterministic feedback equals
        # gamma_disc (lambda + gamma)^-1 d, with gamma_disc the discrete sum.
        prob = scalar_problem(K=2048)
        eta = prob.mp.eta
        c = normalized_gain(eta, prob.mp.T)
        setup = ControlSetup(np.array([c]), 0.1, np.array([1.0]))
        g = grammian_diag(eta, prob.basis.frac_eigenvalues, prob.mp.T, setup.c_diag)
        fb = FeedbackControl(prob, setup, g)
        z_path = prob.tables.E1 * setup.initial_state(1)[None, :]
        v = fb.control_path(z_path, None)
        lt = apply_LT(v, prob, setup.c_diag)
        tab = prob.tables
        gaps = np.arange(prob.mp.K, 0, -1)
        gamma_disc = np.sum(tab.w[gaps] * (c * tab.EE[gaps, 0]) ** 2)
        d = 1.0
        expected = gamma_disc / (0.1 + g.gamma[0]) * d
        assert lt[0] == pytest.approx(expected, rel=1e-12)
        # and the discrete Grammian agrees with the Gauss one at grid accuracy
        assert gamma_disc == pytest.approx(g.gamma[0], rel=2e-3)


class TestControlValue:
    def test_zero_data_zero_control(self):
        prob = scalar_problem(sigma=0.0)
        setup = ControlSetup(np.array([1.0]), 0.5, np.array([0.0]))
        g = grammian_diag(prob.mp.eta, prob.basis.frac_eigenvalues, prob.mp.T,
                          setup.c_diag)
        z_path = np.zeros((prob.mp.K + 1, 1))
        for k in (0, 10, prob.mp.K - 1):
            v = control_value(k, z_path, None, g, prob, setup)
            assert v[0] == 0.0

    def test_linear_deterministic_closed_form(self):
        prob = scalar_problem()
        eta, T = prob.mp.eta, prob.mp.T
        mu = prob.basis.frac_eigenvalues[0]
        c = normalized_gain(eta, T)
        lam = 0.25
        setup = ControlSetup(np.array([c]), lam, np.array([1.0]))
        g = grammian_diag(eta, prob.basis.frac_eigenvalues, T, setup.c_diag)
        z_path = prob.tables.E1 * np.array([0.0])[None, :]
        t = prob.mp.t_grid()
        from fracns.specfun import MLQuery, mittag_leffler
        for k in (0, 100, 400):
            got = control_value(k, z_path, None, g, prob, setup)[0]
            expected = (c * mittag_leffler(MLQuery(eta, eta, -mu * (T - t[k]) ** eta))
                        / (lam + g.gamma[0]) * 1.0)
            assert got == pytest.approx(expected, rel=1e-9)

    def test_adaptedness_future_noise_invariance(self):
        prob = scalar_problem(sigma=0.4, N=4, K=64, nu=0.05)
        rngpath = sample_wiener(prob.mp.t_grid(), prob.noise, 7, 0)
        setup = ControlSetup(np.ones(4), 0.3, np.ones(4) * 0.2,
                             phi=np.ones((64, 4)) * 0.1)
        g = grammian_diag(prob.mp.eta, prob.basis.frac_eigenvalues, prob.mp.T,
                          setup.c_diag)
        rng = np.random.default_rng(1)
        z_path = rng.standard_normal((65, 4)) * 0.1
        k = 20
        v_ref = control_value(k, z_path, rngpath, g, prob, setup)
        tampered = rngpath.increments.copy()
        tampered[k:] += 100.0
        W2 = WienerPath(t_grid=rngpath.t_grid, increments=tampered)
        v_tampered = control_value(k, z_path, W2, g, prob, setup)
        assert np.array_equal(v_ref, v_tampered)

    def test_range_check(self):
        prob = scalar_problem()
        setup = ControlSetup(np.array([1.0]), 0.5, np.array([0.0]))
        g = grammian_diag(prob.mp.eta, prob.basis.frac_eigenvalues, prob.mp.T,
                          setup.c_diag)
        with pytest.raises(ParameterError):
            control_value(prob.mp.K, np.zeros((prob.mp.K + 1, 1)), None, g, prob, setup)


class TestClosedLoop:
    def test_linear_terminal_error_law(self):
        # Single controllable mode: error = lambda/(lambda+gamma) |d| exactly
        # up to quadrature, with gamma = 1 and d = 1 by normalization.
        prob = scalar_problem(K=2048)
        eta, T = prob.mp.eta, prob.mp.T
        c = normalized_gain(eta, T)
        g = grammian_diag(eta, prob.basis.frac_eigenvalues, T, np.array([c]))
        for lam in (1.0, 0.1, 0.01):
            setup = ControlSetup(np.array([c]), lam, np.array([1.0]))
            sample = simulate_controlled(prob, setup, g, seed=0, sample_index=0,
                                         deterministic=True, tol=1e-13)
            expected = lam / (lam + g.gamma[0])
            assert sample.terminal_error == pytest.approx(expected, rel=1e-6)

    def test_uncontrollable_mode_keeps_discrepancy(self):
        prob = scalar_problem(N=2, nu=1e-12, K=256)
        c = np.array([normalized_gain(prob.mp.eta, prob.mp.T), 0.0])
        target = np.array([0.7, 0.4])
        setup = ControlSetup(c, 0.01, target)
        g = grammian_diag(prob.mp.eta, prob.basis.frac_eigenvalues, prob.mp.T, c)
        sample = simulate_controlled(prob, setup, g, 0, 0, deterministic=True, tol=1e-13)
        # z0 = 0 and mu ~ 0: the uncontrolled mode stays at 0, error = target
        err2 = abs(sample.terminal_state[1] - target[1])
        assert err2 == pytest.approx(0.4, abs=1e-9)

    def test_lambda_monotonicity_per_mode(self):
        prob = scalar_problem(K=512)
        c = normalized_gain(prob.mp.eta, prob.mp.T)
        g = grammian_diag(prob.mp.eta, prob.basis.frac_eigenvalues, prob.mp.T,
                          np.array([c]))
        errs = []
        for lam in (0.05, 0.1, 0.2, 0.4):
            setup = ControlSetup(np.array([c]), lam, np.array([1.0]))
            errs.append(simulate_controlled(prob, setup, g, 0, 0,
                                            deterministic=True, tol=1e-13).terminal_error)
        assert all(b > a for a, b in zip(errs, errs[1:]))

    def test_unbounded_specs_rejected(self):
        prob = scalar_problem(kind="burgers_1d", R=math.inf, N=4, nu=0.05, K=64)
        setup = ControlSetup(np.ones(4), 0.5, np.zeros(4))
        g = grammian_diag(prob.mp.eta, prob.basis.frac_eigenvalues, prob.mp.T,
                          setup.c_diag)
        with pytest.raises(ParameterError):
            simulate_controlled(prob, setup, g, 0, 0)


class TestSweep:
    def test_linear_deterministic_exact_values(self):
        # gamma = T = 1, d = 1, p = 2: errors are (lambda/(lambda+1))^2.
        prob = scalar_problem(K=2048, p=4.0)
        c = normalized_gain(prob.mp.eta, prob.mp.T)
        setup = ControlSetup(np.array([c]), 1.0, np.array([1.0]))
        res = controllability_sweep(prob, setup, [1.0, 0.1, 0.01], n_samples=1,
                                    seed=0, p=2.0, deterministic=True, tol=1e-13)
        vals = [r.estimate for r in res.rows]
        assert vals[0] == pytest.approx(0.25, rel=1e-6)
        assert vals[1] == pytest.approx(0.008264, abs=5e-7)
        assert vals[2] == pytest.approx(0.000098, abs=5e-7)
        assert res.monotone_within_tolerance
        assert res.fitted_slope > 0.0

    def test_zero_discrepancy_target(self):
        # Target equals the uncontrolled terminal mean: error 0 for all lambda.
        prob = scalar_problem(N=2, nu=0.3, K=256)
        mu = prob.basis.frac_eigenvalues
        z0 = np.array([0.5, -0.2])
        from fracns.specfun import ml_neg_array
        target = z0 * ml_neg_array(prob.mp.eta, 1.0, mu * prob.mp.T ** prob.mp.eta)
        setup = ControlSetup(np.ones(2), 1.0, target, z0=z0)
        res = controllability_sweep(prob, setup, [1.0, 0.1], n_samples=1, seed=0,
                                    p=2.0, deterministic=True, tol=1e-13)
        for row in res.rows:
            assert row.estimate <= 1e-16

    def test_rejects_bad_lambda_lists(self):
        prob = scalar_problem(K=64)
        setup = ControlSetup(np.array([1.0]), 1.0, np.array([1.0]))
        with pytest.raises(ParameterError):
            controllability_sweep(prob, setup, [0.1, 1.0], 1, 0, deterministic=True)
        with pytest.raises(ParameterError):
            controllability_sweep(prob, setup, [1.0, -0.5], 1, 0, deterministic=True)

    def test_stochastic_sweep_monotone(self):
        prob = scalar_problem(N=4, nu=0.05, K=64, sigma=0.05, p=4.0,
                              kind="burgers_1d", R=1.0,
                              noise_kind="saturating_diagonal")
        c = np.full(4, 1.0)
        setup = ControlSetup(c, 1.0, np.full(4, 0.1))
        res = controllability_sweep(prob, setup, [1.0, 0.3, 0.1], n_samples=40,
                                    seed=11, p=2.0)
        assert res.monotone_within_tolerance
        assert res.fitted_slope > 0.0


class TestLipschitzProbe:
    def test_lambda_power_scaling(self):
        # Tiny gains make gamma << lambda: the fitted power is close to -p.
        prob = scalar_problem(N=4, nu=0.05, K=64, sigma=0.1, p=2.0,
                              kind="burgers_1d", R=2.0)
        setup = ControlSetup(np.full(4, 0.05), 1.0, np.zeros(4))
        ratios, slope = control_lipschitz_probe(prob, setup, [1.0, 0.5, 0.25], p=2.0)
        assert all(r > 0 for r in ratios)
        assert -2.0 * 2.0 <= slope <= -2.0 / 2.0
