"""Objective/gradient correctness, the maximizer, brackets, and bounds."""

import warnings

import numpy as np
import pytest

from ellrisk.ensembles import gram_ensemble, gram_only_ensemble
from ellrisk.functional import (
    dicker_cd,
    gradient,
    maximize_phi,
    objective,
    objective_stderr,
    population_functional,
    risk_bracket,
    sharp_lower,
    sharp_lower_constant,
    singular_split,
    to_population_sandwich,
)
from ellrisk.problem import PriorCovariance, feasible_project, new_problem


def rand_spd(rng, d, lo=0.5, hi=2.0):
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return q @ np.diag(rng.uniform(lo, hi, d)) @ q.T


def small_instance(seed, d=3, n=8, n_grams=15, rho=1.4, sigma=1.0, ke=None, kc=None):
    rng = np.random.default_rng(seed)
    ke = rand_spd(rng, d) if ke is None else ke
    kc = rand_spd(rng, d) if kc is None else kc
    prob = new_problem(ke, kc, rho, sigma)
    ens = gram_ensemble({"kind": "gaussian", "n": n, "d": d}, n_grams, sigma, seed=seed + 1)
    return prob, ens, rng


class TestObjective:
    def test_zero_gram_gives_trace(self):
        prob = new_problem(np.eye(3), np.eye(3), 2.0, 1.0)
        prior = feasible_project(prob, np.diag([1.0, 0.5, 0.25]))
        ens = gram_only_ensemble(np.zeros((3, 3)))
        assert np.isclose(objective(ens, prob, prior), np.trace(prior.matrix), atol=1e-8)

    def test_scalar_formula(self):
        prob = new_problem(np.eye(1), np.eye(1), 3.0, 1.0)
        g = 0.7
        omega = 2.0
        ens = gram_only_ensemble(np.array([[g]]))
        prior = PriorCovariance(np.array([[omega]]), prob.floor)
        assert np.isclose(objective(ens, prob, prior), omega / (1 + omega * g), atol=1e-12)

    def test_matches_dense_inverse_oracle(self):
        prob, ens, rng = small_instance(11, d=2)
        prior = feasible_project(prob, rand_spd(rng, 2, 0.1, 0.4))
        expected = 0.0
        for g in ens.grams:
            s = np.linalg.inv(prior.matrix) + g
            expected += np.trace(prob.ke_half @ np.linalg.inv(s) @ prob.ke_half)
        expected /= ens.size
        assert np.isclose(objective(ens, prob, prior), expected, rtol=1e-12)


class TestGradient:
    def test_zero_gram_identity(self):
        prob = new_problem(np.eye(2), np.eye(2), 2.0, 1.0)
        prior = feasible_project(prob, np.diag([0.5, 1.0]))
        ens = gram_only_ensemble(np.zeros((2, 2)))
        assert np.allclose(gradient(ens, prob, prior), np.eye(2), atol=1e-8)

    def test_scalar_derivative(self):
        prob = new_problem(np.eye(1), np.eye(1), 3.0, 1.0)
        g, omega = 0.9, 1.7
        ens = gram_only_ensemble(np.array([[g]]))
        prior = PriorCovariance(np.array([[omega]]), prob.floor)
        assert np.isclose(gradient(ens, prob, prior)[0, 0], (1 + omega * g) ** -2, rtol=1e-12)

    def test_finite_differences(self):
        # Central differences along random symmetric directions.
        prob, ens, rng = small_instance(21, d=3)
        prior = feasible_project(prob, 0.15 * prob.constraint_metric)
        grad = gradient(ens, prob, prior)
        for _ in range(5):
            h = rng.standard_normal((3, 3))
            h = 0.5 * (h + h.T)
            h /= np.linalg.norm(h)
            step = 1e-5
            fp = objective(ens, prob, PriorCovariance(prior.matrix + step * h, prior.floor))
            fm = objective(ens, prob, PriorCovariance(prior.matrix - step * h, prior.floor))
            fd = (fp - fm) / (2 * step)
            ip = float(np.tensordot(grad, h))
            assert abs(fd - ip) < 1e-4 * max(abs(ip), 1e-8)

    def test_gradient_is_psd(self):
        prob, ens, rng = small_instance(31, d=3)
        prior = feasible_project(prob, rand_spd(rng, 3, 0.05, 0.3))
        g = gradient(ens, prob, prior)
        assert np.linalg.eigvalsh(g)[0] >= -1e-10


class TestMaximizePhi:
    def test_zero_gram_value_is_radius_squared(self):
        prob = new_problem(np.eye(3), np.eye(3), 1.5, 1.0)
        ens = gram_only_ensemble(np.zeros((3, 3)))
        res = maximize_phi(prob, ens)
        assert np.isclose(res.value, 1.5**2, rtol=1e-6)

    def test_scalar_monotone_optimum(self):
        prob = new_problem(np.eye(1), np.eye(1), 2.0, 1.0)
        rng = np.random.default_rng(0)
        gs = rng.uniform(0.2, 2.0, 40).reshape(-1, 1, 1)
        ens = gram_only_ensemble(gs)
        res = maximize_phi(prob, ens)
        rho2 = 4.0
        assert np.isclose(res.maximizer.matrix[0, 0], rho2, rtol=1e-6)
        assert np.isclose(res.value, np.mean(rho2 / (1 + rho2 * gs)), rtol=1e-9)

    def test_isotropic_optimum_effective_dimension(self):
        # Effective-dimension normalization: grams Sigma_hat, radius n rho^2/sigma^2.
        n, d = 8, 4
        prob = new_problem(np.eye(d), np.eye(d), np.sqrt(n), 1.0)
        ens = gram_ensemble({"kind": "gaussian", "n": n, "d": d}, 200, np.sqrt(n), seed=11)
        res = maximize_phi(prob, ens, {"max_iter": 20000, "tol": 1e-12})
        om = res.maximizer.matrix
        diag = np.diag(om)
        off = np.abs(om - np.diag(diag)).max()
        assert abs(diag.mean() - n / d) < 0.05 * n / d
        assert off < 0.05 * diag.mean()

    def test_monotone_ascent_history(self):
        prob, ens, _ = small_instance(41)
        res = maximize_phi(prob, ens)
        assert res.converged
        assert np.all(np.diff(res.history) >= -1e-15)
        assert res.value >= res.history[0]

    def test_radius_monotonicity(self):
        prob, ens, _ = small_instance(51)
        small = new_problem(prob.error_metric, prob.constraint_metric, 0.7, prob.sigma)
        v_small = maximize_phi(small, ens).value
        v_big = maximize_phi(prob, ens).value
        assert v_small <= v_big + 1e-10

    def test_jensen_bound_against_mean_gram(self):
        prob, ens, _ = small_instance(61)
        full = maximize_phi(prob, ens).value
        mean_ens = gram_only_ensemble(ens.grams.mean(axis=0))
        averaged = maximize_phi(prob, mean_ens).value
        assert full >= averaged - 1e-9

    def test_concavity_midpoints(self):
        prob, ens, rng = small_instance(71)
        for _ in range(20):
            a = feasible_project(prob, rand_spd(rng, 3, 0.05, 0.8)).matrix
            b = feasible_project(prob, rand_spd(rng, 3, 0.05, 0.8)).matrix
            mid = PriorCovariance(0.5 * (a + b), prob.floor)
            fa = objective(ens, prob, PriorCovariance(a, prob.floor))
            fb = objective(ens, prob, PriorCovariance(b, prob.floor))
            assert objective(ens, prob, mid) >= 0.5 * (fa + fb) - 1e-10

    def test_non_convergence_flagged(self):
        prob, ens, _ = small_instance(81)
        res = maximize_phi(prob, ens, {"max_iter": 2, "tol": 1e-16})
        assert not res.converged
        assert res.iterations == 2


class TestRiskBracket:
    def test_scalar_deterministic_endpoints(self):
        g = 11.0 / 10.0
        prob = new_problem(np.eye(1), np.eye(1), 2.0, 1.0)
        ens = gram_only_ensemble(np.array([[g]]))
        br = risk_bracket(prob, ens)
        assert np.isclose(br.upper, 4.0 / (1 + 4.0 * g), rtol=1e-8)
        assert np.isclose(br.lower, 1.0 / (1 + 1.0 * g), rtol=1e-8)

    def test_quarter_bound_chain(self):
        prob, ens, _ = small_instance(91)
        br = risk_bracket(prob, ens)
        assert br.lower >= br.weak_lower - 1e-9
        assert br.upper / br.lower <= 4.0 + 1e-6

    def test_large_radius_tight_bracket(self):
        prob = new_problem(np.eye(3), np.eye(3), 1e3, 1.0)
        ens = gram_only_ensemble(np.eye(3))
        br = risk_bracket(prob, ens)
        assert br.upper / br.lower <= 1.05


class TestSharpLower:
    def test_vanishing_tail_recovers_objective(self):
        # Tiny error metric sends the quadratic-form eigenvalues to zero.
        prob = new_problem(1e-8 * np.eye(2), np.eye(2), 1.0, 1.0)
        ens = gram_ensemble({"kind": "gaussian", "n": 6, "d": 2}, 30, 1.0, seed=5)
        omega = PriorCovariance(0.5 * np.eye(2), prob.floor)  # trace = rho^2
        bound, _ = sharp_lower(prob, ens, 1.0, omega, 20_000, seed=6)
        obj = objective(ens, prob, omega)
        assert np.isclose(bound, obj, rtol=1e-3)

    def test_scalar_constant_near_quarter(self):
        prob = new_problem(np.eye(1), np.eye(1), 1.0, 1.0)
        omega = PriorCovariance(np.eye(1), prob.floor)
        c, se = sharp_lower_constant(prob, omega, 0.5, 400_000, seed=7)
        # Exact value 0.25 * P{chi2_1 <= 4} = 0.238616; the closed-form
        # convention for d = 1 is 1/4.
        assert abs(c - 0.23862) < 0.004

    def test_dominates_quarter_bound_d2(self):
        prob = new_problem(np.eye(2), np.eye(2), 1.5, 1.0)
        ens = gram_ensemble({"kind": "gaussian", "n": 8, "d": 2}, 100, 1.0, seed=12)
        res = maximize_phi(prob, ens)
        tr = prob.constraint_trace(res.maximizer.matrix)
        omega = PriorCovariance(res.maximizer.matrix * prob.radius**2 / tr, prob.floor)
        tau = np.sqrt(1 - 1.0 / 3.0)
        bound, se = sharp_lower(prob, ens, tau, omega, 100_000, seed=13)
        assert bound >= res.value / 4.0 - 2 * se

    def test_tau_out_of_range(self):
        prob = new_problem(np.eye(2), np.eye(2), 1.0, 1.0)
        omega = PriorCovariance(0.5 * np.eye(2), prob.floor)
        ens = gram_only_ensemble(np.eye(2))
        with pytest.raises(ValueError, match="tau"):
            sharp_lower(prob, ens, 1.5, omega, 100, seed=0)

    def test_inactive_trace_warns(self):
        prob = new_problem(np.eye(2), np.eye(2), 1.0, 1.0)
        omega = PriorCovariance(0.1 * np.eye(2), prob.floor)
        ens = gram_only_ensemble(np.eye(2))
        with pytest.warns(UserWarning, match="active trace"):
            sharp_lower(prob, ens, 1.0, omega, 100, seed=0)


class TestDickerConstant:
    def test_endpoint_values(self):
        assert dicker_cd(1) == 0.25
        assert np.isclose(dicker_cd(2), 0.33795420573650686, rtol=1e-12)

    def test_monotone_to_one(self):
        vals = [dicker_cd(d) for d in range(1, 40)]
        assert np.all(np.diff(vals) > 0)
        assert vals[-1] < 1.0
        assert dicker_cd(200) > 0.995

    def test_invalid_dimension(self):
        with pytest.raises(ValueError):
            dicker_cd(0)


class TestPopulationFunctional:
    def test_zero_population_gram(self):
        n = 20
        prob = new_problem(np.eye(3), np.eye(3), 0.8, 0.5)
        res = population_functional(prob, np.zeros((3, 3)), n)
        assert np.isclose(res.value, n * 0.8**2 / 0.25, rtol=1e-6)

    def test_identity_matches_waterfill(self):
        from ellrisk.closed_form import kernel_waterfill

        n, d = 12, 4
        prob = new_problem(np.eye(d), np.eye(d), 0.9, 1.0)
        res = population_functional(prob, np.eye(d), n)
        wf = kernel_waterfill(np.ones(d), n, 0.9, 1.0)
        assert np.isclose(res.value, wf.value, rtol=1e-8)

    def test_jensen_ordering_on_gaussian(self):
        n, d = 10, 3
        prob = new_problem(np.eye(d), np.eye(d), 0.6, 1.0)
        ens = gram_ensemble({"kind": "gaussian", "n": n, "d": d}, 300, 1.0, seed=17)
        pop = population_functional(prob, np.eye(d), n).value
        saa = maximize_phi(prob, ens)
        dn = n * saa.value
        assert pop <= dn + 2 * n * saa.mc_stderr


class TestSandwich:
    def test_fixed_design_collapses(self):
        rng = np.random.default_rng(23)
        x = rng.standard_normal((10, 3))
        from ellrisk.ensembles import fixed_ensemble

        prob = new_problem(np.eye(3), np.eye(3), 0.5, 1.0)
        ens = fixed_ensemble(x, 1.0)
        lhs, mid, rhs, holds = to_population_sandwich(prob, ens, x.T @ x / 10.0, kappa=5.0)
        assert np.isclose(lhs, mid, rtol=1e-7)
        assert holds

    def test_bounded_fourier_design(self):
        from ellrisk.ensembles import sobolev_eigenvalues

        k, n = 5, 30
        mu = sobolev_eigenvalues(1.0, k)
        prob = new_problem(np.diag(mu), np.eye(k), 0.4, 1.0)
        ens = gram_ensemble({"kind": "rkhs", "n": n, "mu": {"power": 2.0, "k": k}}, 400, 1.0, seed=14)
        kappa = float(np.sqrt(2 * mu.sum()))
        lhs, mid, rhs, holds = to_population_sandwich(prob, ens, np.diag(mu), kappa)
        assert holds
        # A larger kappa only loosens the right side.
        _, _, rhs_big, holds_big = to_population_sandwich(prob, ens, np.diag(mu), 100 * kappa)
        assert holds_big and rhs_big > rhs

    def test_invalid_kappa(self):
        prob = new_problem(np.eye(2), np.eye(2), 1.0, 1.0)
        ens = gram_ensemble({"kind": "gaussian", "n": 5, "d": 2}, 5, 1.0, seed=1)
        with pytest.raises(ValueError, match="kappa"):
            to_population_sandwich(prob, ens, np.eye(2), kappa=0.0)


class TestSingularSplit:
    def test_zero_eigenvalue_contribution(self):
        # Rank-one design: d-1 zero eigenvalues contribute rho^2/d each.
        d, n = 4, 5
        x = np.zeros((n, d))
        x[:, 0] = 1.0
        from ellrisk.ensembles import fixed_ensemble

        prob = new_problem(np.eye(d), np.eye(d), 1.0, 1.0)
        ens = fixed_ensemble(x, 1.0)
        est_t, app_t = singular_split(ens, prob)
        assert np.isclose(app_t, (d - 1) / d, atol=1e-12)

    def test_no_small_eigenvalues(self):
        d, n = 2, 400
        prob = new_problem(np.eye(d), np.eye(d), 10.0, 1.0)
        ens = gram_ensemble({"kind": "gaussian", "n": n, "d": d}, 20, 1.0, seed=19)
        _, app_t = singular_split(ens, prob)
        assert app_t == 0.0

    def test_rank_deficiency_floor(self):
        d, n = 6, 4
        prob = new_problem(np.eye(d), np.eye(d), 1.0, 1.0)
        ens = gram_ensemble({"kind": "gaussian", "n": n, "d": d}, 40, 1.0, seed=20)
        _, app_t = singular_split(ens, prob)
        assert app_t >= (d - n) / d - 1e-12

    def test_factor_two_equivalence(self):
        d, n = 5, 8
        prob = new_problem(np.eye(d), np.eye(d), 1.0, 1.0)
        ens = gram_ensemble({"kind": "gaussian", "n": n, "d": d}, 60, 1.0, seed=21)
        est_t, app_t = singular_split(ens, prob)
        # Benchmark: risk-units objective at the isotropic prior.
        prob_dn = new_problem(np.eye(d), np.eye(d), np.sqrt(n), 1.0)
        sig_hats = gram_only_ensemble(ens.grams / n, n=n)
        prior = PriorCovariance((n / d) * np.eye(d), prob_dn.floor)
        benchmark = objective(sig_hats, prob_dn, prior) / n
        ratio = (est_t + app_t) / benchmark
        assert 0.5 <= ratio <= 2.0


class TestMatrixInequality:
    def test_harmonic_mean_lower_bound(self):
        # (I-D) A (I-D)^T + D B^+ D^T >= (A^{-1} + B)^{-1} when range(D^T)
        # is within range(B); equality at D = (A^{-1}+B)^{-1} B.
        rng = np.random.default_rng(29)
        for _ in range(50):
            d = int(rng.integers(2, 7))
            a = rand_spd(rng, d, 0.3, 3.0)
            rank = int(rng.integers(1, d + 1))
            u = rng.standard_normal((d, rank))
            b = u @ u.T
            dmat = rng.standard_normal((d, d)) @ b
            target = np.linalg.inv(np.linalg.inv(a) + b)
            lhs = (np.eye(d) - dmat) @ a @ (np.eye(d) - dmat).T + dmat @ np.linalg.pinv(b) @ dmat.T
            assert np.linalg.eigvalsh(0.5 * (lhs + lhs.T) - target)[0] >= -1e-8
            d_opt = target @ b
            lhs_opt = (np.eye(d) - d_opt) @ a @ (np.eye(d) - d_opt).T + d_opt @ np.linalg.pinv(
                b
            ) @ d_opt.T
            assert np.abs(lhs_opt - target).max() < 1e-10


def test_objective_stderr_single_gram_is_zero():
    prob = new_problem(np.eye(2), np.eye(2), 1.0, 1.0)
    ens = gram_only_ensemble(np.eye(2))
    prior = feasible_project(prob, 0.3 * np.eye(2))
    _, se = objective_stderr(ens, prob, prior)
    assert se == 0.0
