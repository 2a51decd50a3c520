"""Sampler determinism, moment checks, and the Markov quadratic identity."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ellrisk.ensembles import (
    KernelSpec,
    gram_ensemble,
    fixed_ensemble,
    markov_chain,
    markov_coefficient_matrix,
    markov_m_matrix,
    markov_r_from_psi,
    mix_seed,
    rkhs_features,
    sample_gaussian_design,
    sample_mixture_design,
    sample_shift_design,
    sobolev_eigenvalues,
)


class TestGaussianDesign:
    def test_deterministic_per_seed(self):
        a = sample_gaussian_design(3, 2, seed=7)
        b = sample_gaussian_design(3, 2, seed=7)
        assert np.array_equal(a.X, b.X)

    def test_clt_moments(self):
        x = sample_gaussian_design(10_000, 1, seed=1).X.ravel()
        assert abs(x.mean()) < 0.05
        assert 0.94 <= x.var() <= 1.06

    def test_zero_size_rejected(self):
        with pytest.raises(ValueError):
            sample_gaussian_design(0, 2, seed=1)


class TestMixtureDesign:
    def test_degenerate_mixture_has_no_atoms(self):
        x = sample_mixture_design(2000, 2, 0.0, seed=5).X
        assert np.all(np.abs(x).sum(axis=1) > 0)
        assert 0.9 < x.var() < 1.1

    def test_zero_fraction_and_second_moment(self):
        x = sample_mixture_design(100_000, 1, 0.9, seed=2).X.ravel()
        zero_frac = np.mean(x == 0.0)
        assert 0.897 <= zero_frac <= 0.903
        assert 0.97 <= np.mean(x**2) <= 1.03

    def test_conditional_norm_inflation(self):
        d, lam = 3, 0.99
        x = sample_mixture_design(200_000, d, lam, seed=3).X
        nonzero = x[np.abs(x).sum(axis=1) > 0]
        mean_sq = (nonzero**2).sum(axis=1).mean()
        assert abs(mean_sq - d / (1 - lam)) < 0.03 * d / (1 - lam)

    def test_lambda_one_rejected(self):
        with pytest.raises(ValueError):
            sample_mixture_design(10, 2, 1.0, seed=0)


class TestMarkovChain:
    def test_iid_mode_is_innovations(self):
        path = markov_chain("iid", 50, seed=4)
        assert np.array_equal(path.x, path.z)

    def test_geometric_scaling_r(self):
        r = markov_r_from_psi(lambda t: 5.0**t, 3)
        assert np.allclose(r, [0.2, 0.2, 0.2])

    def test_decreasing_psi_rejected(self):
        with pytest.raises(ValueError, match="nondecreasing"):
            markov_r_from_psi(lambda t: 1.0 if t == 0 else 0.5, 3)

    def test_psi_zero_anchor(self):
        with pytest.raises(ValueError, match="psi\\(0\\)"):
            markov_r_from_psi(lambda t: 2.0 + t, 3)

    def test_reconstruction_from_coefficients(self):
        # x equals S^T z exactly, any seed.
        for seed in range(5):
            path = markov_chain(lambda t: (t + 1.0) ** 2, 40, seed=seed)
            s = markov_coefficient_matrix(path.r)
            assert np.abs(path.x - s.T @ path.z).max() < 1e-12

    def test_marginal_variance_identity(self):
        # Column sums of squared coefficients are 1 - 1/psi(t), exactly.
        vals = [1.0, 2.0, 5.0, 5.0, 8.0, 13.0]
        r = markov_r_from_psi(lambda t: vals[t], 5)
        s = markov_coefficient_matrix(r)
        expected = [1.0 - 1.0 / vals[t] for t in range(1, 6)]
        assert np.allclose((s**2).sum(axis=0), expected, atol=1e-12)


class TestMarkovMatrix:
    def test_identity_at_r_zero(self):
        assert np.allclose(markov_m_matrix(np.zeros(6)), np.eye(6))

    def test_t2_closed_form(self):
        alpha = 0.37
        m = markov_m_matrix(np.array([alpha, alpha]))
        expected = np.array(
            [
                [1 - alpha**2, (1 - alpha) * np.sqrt(alpha)],
                [(1 - alpha) * np.sqrt(alpha), 1 - alpha],
            ]
        )
        assert np.allclose(m, expected, atol=1e-12)

    def test_constant_r_reverse_permutation_form(self):
        alpha, big_t = 0.6, 7
        m = markov_m_matrix(np.full(big_t, alpha))
        rev = m[::-1, ::-1]
        s_idx = np.arange(1, big_t + 1)
        expected = np.sqrt(alpha) ** np.abs(s_idx[:, None] - s_idx[None, :]) - np.sqrt(
            alpha
        ) ** (s_idx[:, None] + s_idx[None, :])
        assert np.allclose(rev, expected, atol=1e-10)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_psd_random_r(self, seed):
        rng = np.random.default_rng(seed)
        big_t = int(rng.integers(1, 65))
        r = rng.uniform(0.0, 1.0, big_t)
        m = markov_m_matrix(r)
        assert np.linalg.eigvalsh(m)[0] >= -1e-10

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_quadratic_identity(self, seed):
        rng = np.random.default_rng(seed)
        big_t = int(rng.integers(1, 65))
        r = rng.uniform(0.0, 1.0, big_t)
        z = rng.standard_normal(big_t)
        from ellrisk.ensembles import markov_path_from_r

        x = markov_path_from_r(r, z)
        m = markov_m_matrix(r)
        lhs, rhs = x @ x, z @ m @ z
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)


class TestKernelFeatures:
    def test_flat_spectrum_at_zero(self):
        spec = KernelSpec(mu=np.ones(3), k=3)
        assert np.allclose(rkhs_features(spec, 0.0), [1.0, np.sqrt(2.0), 0.0])

    def test_decaying_spectrum_entry(self):
        # mu_j = j^(-2): second entry sqrt(1/4) * sqrt(2) cos(0) = sqrt(2)/2.
        spec = KernelSpec(mu=np.array([1.0, 0.25]), k=2)
        assert np.allclose(rkhs_features(spec, 0.0), [1.0, np.sqrt(2.0) / 2.0])

    def test_orthonormal_on_uniform_grid(self):
        spec = KernelSpec(mu=np.ones(7), k=7)
        m = 10_000
        feats = rkhs_features(spec, np.arange(m) / m)
        gram = feats.T @ feats / m
        assert np.abs(gram - np.eye(7)).max() < 1e-3

    def test_out_of_range_rejected(self):
        spec = KernelSpec(mu=np.ones(2), k=2)
        with pytest.raises(ValueError):
            rkhs_features(spec, 1.5)

    def test_spectrum_convention(self):
        mu = sobolev_eigenvalues(1.0, 5)
        assert np.allclose(mu, [1.0, 1.0, 0.25, 0.25, 1.0 / 9.0])


class TestShiftDesign:
    def test_no_shift_all_uniform(self):
        spec = KernelSpec(mu=np.ones(3), k=3)
        x = sample_shift_design(1.0, spec, 5000, seed=6)
        feats0 = rkhs_features(spec, 0.0)
        atoms = np.all(np.abs(x.X - feats0) < 1e-12, axis=1)
        assert atoms.mean() < 0.01

    def test_atom_fraction(self):
        spec = KernelSpec(mu=np.ones(3), k=3)
        x = sample_shift_design(4.0, spec, 100_000, seed=7)
        feats0 = rkhs_features(spec, 0.0)
        atoms = np.all(np.abs(x.X - feats0) < 1e-12, axis=1)
        assert 0.745 <= atoms.mean() <= 0.755
        # Sine coordinate (index 2) vanishes exactly on atom rows.
        assert np.all(x.X[atoms, 2] == 0.0)

    def test_b_below_one_rejected(self):
        spec = KernelSpec(mu=np.ones(2), k=2)
        with pytest.raises(ValueError):
            sample_shift_design(0.5, spec, 10, seed=0)


class TestGramEnsemble:
    def test_fixed_design_exact(self):
        x = np.array([[1.0, 2.0], [0.0, 1.0], [1.0, 0.0]])
        ens = fixed_ensemble(x, sigma=2.0)
        assert ens.size == 1
        assert np.allclose(ens.grams[0], x.T @ x / 4.0)

    def test_law_of_large_numbers(self):
        n = 8
        ens = gram_ensemble({"kind": "gaussian", "n": n, "d": 2}, 500, 1.0, seed=3)
        mean_g = ens.grams.mean(axis=0) / n
        assert np.abs(mean_g - np.eye(2)).max() < 0.1

    def test_deterministic(self):
        spec = {"kind": "mixture", "n": 6, "d": 2, "lam": 0.5}
        a = gram_ensemble(spec, 20, 1.0, seed=9)
        b = gram_ensemble(spec, 20, 1.0, seed=9)
        assert np.array_equal(a.grams, b.grams)

    def test_meta_records_sampler(self):
        ens = gram_ensemble({"kind": "gaussian", "n": 4, "d": 2}, 3, 1.5, seed=1)
        assert ens.meta["n"] == 4 and ens.meta["sigma"] == 1.5
        assert len(ens.designs) == 3


def test_mix_seed_distinct_streams():
    seeds = {mix_seed(42, i) for i in range(1000)}
    assert len(seeds) == 1000
    assert mix_seed(42, 3) != mix_seed(43, 3)
