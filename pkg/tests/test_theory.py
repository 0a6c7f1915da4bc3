import math

import numpy as np
import pytest

from urqsim.theory import (RULES, SAFETY, TheoryInputs, ciag_gamma_bar, ciag_nsc_gamma_bounds,
                           evaluate, qiag_gamma_bar, thm_ciag_nsc, thm_ciag_sc, thm_dqgd,
                           thm_qgd_cvx, thm_qgd_sc, thm_qiag, with_eps)


def exact(a, b):
    """Equal up to the rounding of the literal (a couple of ulps)."""
    return math.isclose(a, b, rel_tol=1e-15, abs_tol=0.0)


class TestSubstitutions:
    def test_qgd_sc(self):
        r = thm_qgd_sc(TheoryInputs(mu=1, L_bar=9))
        assert exact(r.gamma, 0.2) and exact(r.rate_factor, 0.64)
        r2 = thm_qgd_sc(TheoryInputs(mu=1, L_bar=9, alpha=2))
        assert exact(r2.gamma, 0.1) and exact(r2.rate_factor, 0.82)

    def test_qgd_sc_alpha_one_is_gd_step(self):
        for mu, Lb in ((0.5, 3.0), (2.0, 2.0), (1e-3, 7.0)):
            assert exact(thm_qgd_sc(TheoryInputs(mu=mu, L_bar=Lb)).gamma, 2 / (mu + Lb))

    def test_qgd_sc_needs_mu(self):
        r = thm_qgd_sc(TheoryInputs(mu=0, L_bar=1))
        assert not r.applicable and "strongly convex" in r.reason

    def test_qgd_cvx(self):
        r = thm_qgd_cvx(TheoryInputs(L_bar=2, eps0=100, eps=1))
        assert r.k_star == 100 and r.gamma == 0.5 and r.rate_factor is None
        ks = [thm_qgd_cvx(TheoryInputs(L_bar=2, alpha=a, eps0=100, eps=1)).k_star for a in (1, 2, 4)]
        assert ks == [100, 200, 400]
        r = thm_qgd_cvx(TheoryInputs(L_bar=2, eps0=100, eps=1, d=1024, B=3, c=5))
        assert r.B_star == 6500
        assert thm_qgd_cvx(TheoryInputs(L_bar=2, eps0=3.0), T=2).extras["bound"] == 1.0

    def test_ciag_branches(self):
        inp = TheoryInputs(mu=1, L_bar=2, tau=1, alpha=1)
        assert ciag_gamma_bar(inp) == min(1 / 4, 1 / 2) == 0.25
        # second branch active: large mu relative to tau L_bar^2
        big = TheoryInputs(mu=10, L_bar=2, tau=1, alpha=1)
        assert ciag_gamma_bar(big) == 0.5
        assert ciag_gamma_bar(TheoryInputs(mu=1, L_bar=2, tau=0, alpha=3)) == 1 / 6

    def test_ciag_zero_delay_delegates(self):
        r = thm_ciag_sc(TheoryInputs(mu=1, L_bar=9, tau=0))
        assert r.name == "qgd_sc" and r.extras["delegated_from"] == "ciag_sc"

    def test_ciag_rejects_large_gamma(self):
        inp = TheoryInputs(mu=1, L_bar=2, tau=1)
        assert not thm_ciag_sc(inp, gamma=0.25).applicable
        assert thm_ciag_sc(inp, gamma=0.2499).applicable

    def test_ciag_nsc_identity_no_delay(self):
        r = thm_ciag_nsc(TheoryInputs(L_bar=4, alpha=1, theta=1, tau=0), gamma=0.3, K=9)
        assert r.gamma_max == 0.5 and r.extras["a"] == 0.15
        assert not thm_ciag_nsc(TheoryInputs(L_bar=4, tau=0), gamma=0.5).applicable

    def test_ciag_nsc_gate(self):
        assert thm_ciag_nsc(TheoryInputs(L_bar=1, alpha=1.2499, theta=1)).applicable
        r = thm_ciag_nsc(TheoryInputs(L_bar=1, alpha=1.25, theta=1))
        assert not r.applicable and "too coarse" in r.reason

    def test_ciag_nsc_auto_uses_smaller_bound(self):
        inp = TheoryInputs(L_bar=3, alpha=1.1, theta=1, tau=2)
        printed, derived = ciag_nsc_gamma_bounds(inp)
        assert derived < printed
        assert thm_ciag_nsc(inp).gamma == SAFETY * derived

    def test_dqgd(self):
        g1 = thm_dqgd(TheoryInputs(mu=0.1, L=2, theta=1, sigma=2, alpha=1.5)).gamma
        g3 = thm_dqgd(TheoryInputs(mu=0.1, L=2, theta=3, sigma=2, alpha=1.5)).gamma
        assert g3 == g1 / 2
        r = thm_dqgd(TheoryInputs(mu=0.1, L=2, grad_star_sq=0.0))
        assert r.residual == 0.0 and 0 < r.rate_factor < 1
        assert thm_dqgd(TheoryInputs(mu=0.1, L=2, theta=1e-12)).gamma == pytest.approx(0.5, rel=1e-11)
        assert thm_dqgd(TheoryInputs(mu=0.1, L=2), convex_only=True).rate_factor is None

    def test_dqgd_residual(self):
        r = thm_dqgd(TheoryInputs(mu=0.5, L=2, theta=2, grad_star_sq=3.0))
        assert exact(r.residual, 3.0 / (0.5 * 2 * 2))

    def test_qiag_nsc_identity_no_residual(self):
        r = thm_qiag(TheoryInputs(L=1, L_bar=2, alpha=1, C=5.0, m=3, sigma=2), bounded_grad=True)
        assert r.residual == 0.0 and r.applicable
        assert thm_qiag(TheoryInputs(L=1, L_bar=2, alpha=1), bounded_grad=True).reason == "missing C"

    def test_qiag_nsc_residual(self):
        r = thm_qiag(TheoryInputs(L=1, L_bar=2, alpha=1.5, C=2.0, m=3, sigma=2), bounded_grad=True)
        assert exact(r.residual, 2 * 0.5 * 2 * 3 * 4)

    def test_complexity_bits(self):
        inp = TheoryInputs(mu=0.5, L_bar=4, alpha=1.7, d=1000, B=3, c=12.5, eps0=10, eps=1e-3)
        r = thm_qgd_sc(inp)
        assert r.B_star == (10 + 3) * 12.5 * r.k_star
        assert r.k_star == 1.7 * 4.5**2 / (4 * 0.5 * 4) * math.log(1e4)

    def test_unknown_rule(self):
        with pytest.raises(ValueError):
            evaluate("nope", TheoryInputs())

    @pytest.mark.parametrize("kw", [dict(alpha=0.5), dict(theta=0), dict(tau=-1)])
    def test_input_validation(self, kw):
        with pytest.raises(ValueError):
            TheoryInputs(**kw)

    def test_with_eps(self):
        inp = with_eps(TheoryInputs(mu=1, L_bar=2), 4.0, 1.0)
        assert inp.log_ratio == math.log(4.0)
        with pytest.raises(ValueError):
            with_eps(inp, 0.0, 1.0).log_ratio


class TestPublishedDisplays:
    def test_ciag_identity_half_step_factor(self):
        gen = np.random.default_rng(0)
        for _ in range(1000):
            Lb = gen.uniform(0.5, 50)
            tau = int(gen.integers(1, 20))
            mu = gen.uniform(1e-4, 1.0) * min(Lb, tau * Lb)
            inp = TheoryInputs(mu=mu, L_bar=Lb, tau=tau, alpha=1)
            r = thm_ciag_sc(inp, fraction=0.5)
            bound = 1 - (1 / 8) * (1 / (1 + 2 * tau)) * mu**2 / (tau * Lb**2)
            assert r.rate_factor <= bound * (1 + 1e-15)

    def test_qiag_half_step_factor(self):
        gen = np.random.default_rng(1)
        for _ in range(1000):
            m = int(gen.integers(1, 10))
            L = gen.uniform(0.5, 5)
            Lb = L * math.sqrt(m * gen.uniform(1, m))
            sigma = gen.uniform(1, m)
            alpha = gen.uniform(1, 5)
            tau = int(gen.integers(0, 6))
            mu = gen.uniform(1e-3, 1) * L
            inp = TheoryInputs(mu=mu, L=L, L_bar=Lb, m=m, sigma=sigma, alpha=alpha, tau=tau, theta=1,
                               grad_star_sq=1.0)
            r = thm_qiag(inp, fraction=0.5)
            D = 1 + 2 * m * sigma * alpha * L**2 * (Lb**2 * tau**2 + 1)
            block = r.extras["p"] + r.extras["q"]
            assert block == pytest.approx(1 - mu**2 / D, rel=1e-12)
            # the displayed residual carries an extra factor mu; ours is the derivation's e/(1-p-q)
            assert r.residual == pytest.approx(2 * alpha * (m * Lb**2 * tau**2 + sigma) / D, rel=1e-9)

    def test_qiag_no_delay_step_below_stated(self):
        gen = np.random.default_rng(2)
        for _ in range(1000):
            m, L, sigma, alpha = int(gen.integers(1, 10)), gen.uniform(0.1, 5), gen.uniform(1, 5), gen.uniform(1, 5)
            mu = gen.uniform(1e-3, 1) * L
            g = qiag_gamma_bar(TheoryInputs(mu=mu, L=L, L_bar=L * m, m=m, sigma=sigma, alpha=alpha, tau=0))
            assert g <= mu / (m * sigma * alpha * L**2)


def _random_inputs(gen):
    m = int(gen.integers(1, 10))
    L = gen.uniform(0.1, 10)
    Lb = L * math.sqrt(m * (1 + gen.uniform(0, m - 1)))
    mu = gen.uniform(1e-4, 1) * L
    return TheoryInputs(mu=mu, L=L, L_bar=Lb, m=m, d=int(gen.integers(1, 10**5)),
                        alpha=gen.uniform(1, 20), c=gen.uniform(1, 100), B=int(gen.integers(1, 65)),
                        sigma=gen.uniform(1, m), tau=int(gen.integers(0, 10)), theta=gen.uniform(0.1, 5),
                        C=gen.uniform(0, 10), grad_star_sq=gen.uniform(0, 10), eps0=gen.uniform(1, 100),
                        eps=gen.uniform(1e-8, 1e-2))


class TestSweeps:
    def test_rate_factor_in_unit_interval(self):
        gen = np.random.default_rng(3)
        seen = 0
        for _ in range(1000):
            inp = _random_inputs(gen)
            for rule in RULES:
                r = evaluate(rule, inp)
                if r.applicable and r.rate_factor is not None:
                    assert 0 < r.rate_factor < 1, (rule, inp)
                    seen += 1
                if r.applicable and r.gamma_max is not None and r.gamma != r.gamma_max:
                    assert r.gamma < r.gamma_max
        assert seen > 1000

    def test_k_star_increasing_in_alpha(self):
        gen = np.random.default_rng(4)
        for _ in range(1000):
            inp = _random_inputs(gen)
            a2 = inp.alpha * gen.uniform(1.001, 3)
            from dataclasses import replace
            assert thm_qgd_sc(replace(inp, alpha=a2, beta=None)).k_star > thm_qgd_sc(inp).k_star

    def test_ciag_gamma_bar_monotone(self):
        from dataclasses import replace
        gen = np.random.default_rng(5)
        for _ in range(1000):
            inp = _random_inputs(gen)
            more_tau = replace(inp, tau=inp.tau + int(gen.integers(1, 5)))
            more_alpha = replace(inp, alpha=inp.alpha * gen.uniform(1, 3), beta=None)
            assert ciag_gamma_bar(more_tau) <= ciag_gamma_bar(inp)
            assert ciag_gamma_bar(more_alpha) <= ciag_gamma_bar(inp)

    def test_ciag_contracts_below_gamma_bar(self):
        gen = np.random.default_rng(6)
        for _ in range(1000):
            inp = _random_inputs(gen)
            if inp.tau == 0:
                continue
            g = gen.uniform(1e-6, 1 - 1e-9) * ciag_gamma_bar(inp)
            r = thm_ciag_sc(inp, gamma=g)
            assert r.extras["p"] + r.extras["q"] < 1

    def test_ciag_nsc_a_positive(self):
        gen = np.random.default_rng(7)
        for _ in range(1000):
            theta = gen.uniform(0.01, 10)
            beta = gen.uniform(0, 1) / (2 * (1 + 1 / theta))
            inp = TheoryInputs(L_bar=gen.uniform(0.1, 10), alpha=1 + beta, beta=beta, theta=theta,
                               tau=int(gen.integers(0, 10)))
            r = thm_ciag_nsc(inp, fraction=gen.uniform(0.01, 0.999))
            assert r.applicable and r.extras["a"] > 0

    def test_dqgd_residual_decreasing_in_theta(self):
        from dataclasses import replace
        gen = np.random.default_rng(8)
        for _ in range(1000):
            inp = replace(_random_inputs(gen), grad_star_sq=gen.uniform(0.01, 10))
            bigger = replace(inp, theta=inp.theta * gen.uniform(1.01, 4))
            assert thm_dqgd(bigger).residual < thm_dqgd(inp).residual
