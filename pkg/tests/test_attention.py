import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lencollapse.attention import (
    AttentionConfig,
    ScoreStats,
    estimate_score_stats,
    fenton_monte_carlo,
    fenton_params,
    norm_lemma_check,
    sample_attention,
    sigma_a,
    sigma_a_sweep,
    softmax_attention,
    theorem2_check,
    theorem3_bound,
)
from lencollapse.rng import derive_seed, make_rng
from lencollapse.spectral import hc_project
from oracles import jacobi_top_singular_value


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [dict(n=0), dict(n=4, d=0), dict(n=4, sigma_q=0.0), dict(n=4, sigma_k=-1.0),
         dict(n=4, tau=0.0), dict(n=4, tau=1.5), dict(n=4, seed=-1)],
    )
    def test_invalid(self, kwargs):
        with pytest.raises((ValueError, TypeError)):
            AttentionConfig(**kwargs)


class TestSampling:
    def test_single_token(self):
        a = sample_attention(AttentionConfig(n=1, seed=5))
        np.testing.assert_array_equal(a.data, [[1.0]])

    def test_equal_logits_give_uniform_rows(self):
        a = softmax_attention(np.full((6, 6), 0.37))
        np.testing.assert_array_equal(a, np.full((6, 6), 1 / 6))

    def test_two_way_softmax_at_low_temperature(self):
        row = softmax_attention([[1.0, 0.0]], tau=0.1)[0]
        e = math.exp(-10)
        np.testing.assert_allclose(row, [1 / (1 + e), e / (1 + e)], rtol=1e-15)
        np.testing.assert_allclose(row, [0.99995460, 0.00004540], atol=5e-9)

    def test_large_logits_stay_finite(self):
        a = softmax_attention(np.array([[1000.0, 0.0], [0.0, -1000.0]]))
        assert np.all(np.isfinite(a))

    @pytest.mark.parametrize("seed", range(10))
    def test_row_stochastic_and_positive(self, seed):
        g = make_rng(seed)
        cfg = AttentionConfig(n=int(g.integers(1, 200)), d=int(g.integers(1, 64)),
                              tau=float(g.uniform(0.2, 1.0)), seed=seed)
        a = sample_attention(cfg).data
        assert np.all(a > 0)
        np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-10)

    def test_deterministic(self):
        cfg = AttentionConfig(n=33, d=8, tau=0.7, seed=123)
        assert np.array_equal(sample_attention(cfg).data, sample_attention(cfg).data)
        other = AttentionConfig(n=33, d=8, tau=0.7, seed=124)
        assert not np.array_equal(sample_attention(cfg).data, sample_attention(other).data)

    @settings(max_examples=100, deadline=None)
    @given(
        arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 12)),
               elements=st.floats(-20, 20)),
        st.floats(0.05, 1.0), st.floats(0.05, 1.0),
    )
    def test_row_max_grows_as_tau_falls(self, logits, t1, t2):
        hi, lo = max(t1, t2), min(t1, t2)
        a_hi = softmax_attention(logits, hi).max(axis=1)
        a_lo = softmax_attention(logits, lo).max(axis=1)
        assert np.all(a_lo >= a_hi * (1 - 1e-12))


class TestSigmaA:
    def test_uniform(self):
        assert sigma_a(np.full((8, 8), 1 / 8)) == pytest.approx(0.0, abs=1e-12)

    def test_identity(self):
        assert sigma_a(np.eye(8)) == pytest.approx(1.0, rel=1e-10)

    def test_permutation(self):
        p = np.eye(5)[[2, 0, 4, 1, 3]]
        assert sigma_a(p) == pytest.approx(1.0, rel=1e-10)

    def test_frozen_gaussian_n64(self):
        # Jacobi oracle on HC[A]^T HC[A]: 0.36596662103906097
        a = sample_attention(AttentionConfig(n=64, d=32, seed=7)).data
        assert sigma_a(a) == pytest.approx(0.36596662103906097, rel=1e-9)

    def test_matches_jacobi_live(self):
        a = sample_attention(AttentionConfig(n=20, d=16, tau=0.5, seed=3)).data
        assert sigma_a(a) == pytest.approx(jacobi_top_singular_value(hc_project(a)), rel=1e-9)

    def test_rejects_non_stochastic(self):
        with pytest.raises(ValueError):
            sigma_a(np.ones((3, 3)))


class TestTheorem2:
    def test_identical_rows(self, rng):
        x = np.tile(rng.standard_normal(5), (7, 1))
        a = sample_attention(AttentionConfig(n=7, seed=1)).data
        rep = theorem2_check(x, a, rng.standard_normal((5, 5)))
        assert rep.rhs == pytest.approx(0.0, abs=1e-12)
        assert rep.lhs == pytest.approx(0.0, abs=1e-12)
        assert rep.holds

    def test_zero_value_map(self, rng):
        a = sample_attention(AttentionConfig(n=7, seed=1)).data
        rep = theorem2_check(rng.standard_normal((7, 4)), a, np.zeros((4, 4)))
        assert rep.lhs == 0 and rep.rhs == 0 and rep.holds

    def test_shape_mismatch(self, rng):
        a = sample_attention(AttentionConfig(n=7, seed=1)).data
        with pytest.raises(ValueError):
            theorem2_check(rng.standard_normal((6, 4)), a, np.eye(4))
        with pytest.raises(ValueError):
            theorem2_check(rng.standard_normal((7, 4)), a, np.eye(3))

    def test_report_fields(self, rng):
        a = sample_attention(AttentionConfig(n=9, seed=2)).data
        rep = theorem2_check(rng.standard_normal((9, 3)), a, rng.standard_normal((3, 2)))
        assert rep.slack == pytest.approx(rep.rhs - rep.lhs)
        assert rep.tolerance == 1e-9

    def test_randomized(self):
        g = make_rng(99)
        for trial in range(200):
            n, d = int(g.integers(4, 129)), int(g.integers(4, 65))
            a = sample_attention(AttentionConfig(n=n, d=d, tau=float(g.uniform(0.1, 1)),
                                                 seed=trial)).data
            rep = theorem2_check(g.standard_normal((n, d)) + 3.0, a,
                                 g.standard_normal((d, d)))
            assert rep.holds, (trial, rep)

    def test_tight_case_holds(self):
        # identity attention, identity value map: lhs equals rhs exactly in theory
        x = make_rng(5).standard_normal((6, 3))
        rep = theorem2_check(x, np.eye(6), np.eye(3))
        assert rep.lhs == pytest.approx(rep.rhs, rel=1e-12)
        assert rep.holds


class TestTheorem3Bound:
    def test_single_token(self):
        assert theorem3_bound(1, 0.3) == 1.0
        assert theorem3_bound(1, 5.0) == 1.0

    def test_n2_sigma0(self):
        assert theorem3_bound(2, 0.0) == pytest.approx(math.sqrt(2 / (2 * math.sqrt(2) + 1)))
        assert theorem3_bound(2, 0.0) == pytest.approx(0.72278, abs=1e-5)

    def test_n100_sigma1(self):
        expected = math.sqrt(100 / (2 * math.sqrt(1 + math.exp(-2)) * 99**1.5 + 1))
        assert theorem3_bound(100, 1.0) == pytest.approx(expected, rel=1e-14)
        assert theorem3_bound(100, 1.0) == pytest.approx(0.21821, abs=1e-5)

    def test_monotone_on_grid(self):
        sigmas = np.linspace(0.05, 4, 40)
        ns = list(range(2, 400, 7))
        for s in sigmas:
            vals = [theorem3_bound(n, s) for n in ns]
            assert np.all(np.diff(vals) < 0)
        for n in ns:
            vals = [theorem3_bound(n, s) for s in sigmas]
            assert np.all(np.diff(vals) > 0)

    def test_invalid(self):
        with pytest.raises(ValueError):
            theorem3_bound(5, -1.0)
        with pytest.raises(ValueError):
            theorem3_bound(0, 1.0)

    def test_bound_is_below_one_while_frobenius_is_not(self):
        # the bound drops below 1 at n>=3, but ||A||_F >= 1 for any
        # row-stochastic matrix, which is where the derivation overreaches
        a = sample_attention(AttentionConfig(n=64, seed=0)).data
        assert np.linalg.norm(a) >= 1.0
        assert theorem3_bound(64, 10.0) < 1.0


class TestScoreStats:
    def test_product_of_stds(self):
        stats = estimate_score_stats(AttentionConfig(n=100, d=64, seed=11), trials=100)
        assert stats.samples == 10**6
        assert stats.sigma_s == pytest.approx(1.0, abs=0.02)
        assert abs(stats.c_cross) <= 0.04
        assert stats.tau_s * stats.sigma_s == pytest.approx(1.0, rel=1e-12)

    def test_product_invariance(self):
        stats = estimate_score_stats(
            AttentionConfig(n=100, d=64, sigma_q=2.0, sigma_k=0.5, seed=12), trials=100)
        assert stats.sigma_s == pytest.approx(1.0, abs=0.02)

    def test_type(self):
        s = ScoreStats(sigma_s=2.0, c_cross=0.0, samples=1)
        assert s.tau_s == 0.5


class TestFenton:
    def test_single_variable(self):
        mu, var = fenton_params(1, 0.8)
        assert mu == pytest.approx(0.0, abs=1e-15)
        assert var == pytest.approx(0.64, rel=1e-14)

    def test_n10_sigma1(self):
        mu, var = fenton_params(10, 1.0)
        assert var == pytest.approx(math.log((math.e - 1) / 10 + 1), rel=1e-14)
        assert var == pytest.approx(0.15856, abs=1e-5)
        assert mu == pytest.approx(2.72331, abs=1e-5)

    def test_against_direct_monte_carlo(self):
        # independent sampler: plain numpy, not the package routine
        x = np.random.default_rng(777).normal(0.0, 0.5, size=(100_000, 100))
        logs = np.log(np.exp(x).sum(axis=1))
        mu, var = fenton_params(100, 0.5)
        assert logs.mean() == pytest.approx(mu, rel=0.10)
        assert logs.var() == pytest.approx(var, rel=0.10)

    def test_package_sampler_agrees_with_direct(self):
        mc_mu, mc_var = fenton_monte_carlo(10, 0.5, samples=50_000, seed=3)
        x = np.random.default_rng(4).normal(0.0, 0.5, size=(50_000, 10))
        logs = np.log(np.exp(x).sum(axis=1))
        assert mc_mu == pytest.approx(logs.mean(), abs=0.01)
        assert mc_var == pytest.approx(logs.var(), rel=0.05)

    def test_invalid(self):
        with pytest.raises(ValueError):
            fenton_params(0, 1.0)
        with pytest.raises(ValueError):
            fenton_params(3, 0.0)


class TestNormLemma:
    def test_random_pairs(self):
        g = make_rng(500)
        for _ in range(500):
            m, k, p = (int(v) for v in g.integers(1, 33, size=3))
            left, right = norm_lemma_check(g.standard_normal((m, k)), g.standard_normal((k, p)))
            assert left.holds and right.holds

    def test_rank_one_is_tight(self):
        u = np.arange(1.0, 5.0)[:, None]
        v = np.arange(1.0, 4.0)[None, :]
        left, right = norm_lemma_check(u, v)
        # ||u||*||v|| on every side for a rank-one product of vectors
        assert left.lhs == pytest.approx(left.rhs) == pytest.approx(right.rhs)


class TestSweep:
    def test_n2_row_bounded_by_one(self):
        rows = sigma_a_sweep([2], AttentionConfig(n=2, seed=3), trials=50)
        assert rows[0].sigma_a_mean <= 1.0
        assert max(rows[0].sigma_a_values) <= 1.0 + 1e-12

    def test_lower_tau_gives_larger_sigma_a(self):
        rows = sigma_a_sweep([128], AttentionConfig(n=2, seed=4), trials=30, taus=[1.0, 0.5])
        by_tau = {r.tau: r.sigma_a_mean for r in rows}
        assert by_tau[0.5] > by_tau[1.0]

    def test_row_fields_and_order(self):
        rows = sigma_a_sweep([8, 16], AttentionConfig(n=2, seed=5), trials=4, taus=[1.0, 0.5])
        assert [(r.n, r.tau) for r in rows] == [(8, 1.0), (16, 1.0), (8, 0.5), (16, 0.5)]
        r = rows[0]
        assert r.trials == 4 and r.seed == 5
        assert r.theorem3_bound == pytest.approx(theorem3_bound(8, r.sigma_s_hat))
        assert set(r.as_record()) == {"n", "tau", "sigma_s_hat", "sigma_a_mean",
                                      "sigma_a_std", "theorem3_bound", "trials", "seed"}
        # tau only rescales logits, so the effective spread doubles at tau=0.5
        assert rows[2].sigma_s_hat == pytest.approx(2 * rows[0].sigma_s_hat, rel=1e-12)

    def test_trials_use_derived_seeds(self):
        rows = sigma_a_sweep([10], AttentionConfig(n=2, seed=6), trials=3)
        direct = [sigma_a(sample_attention(AttentionConfig(n=10, seed=derive_seed(6, t))).data)
                  for t in range(3)]
        assert list(rows[0].sigma_a_values) == direct

    def test_threads_do_not_change_results(self):
        a = sigma_a_sweep([8, 32], AttentionConfig(n=2, seed=9), trials=6)
        b = sigma_a_sweep([8, 32], AttentionConfig(n=2, seed=9), trials=6, threads=3)
        assert a == b and [r.sigma_a_values for r in a] == [r.sigma_a_values for r in b]

    def test_rejects_n1(self):
        with pytest.raises(ValueError):
            sigma_a_sweep([1, 4], AttentionConfig(n=2), trials=2)
