"""GP conditioning tests against dense-linear-algebra oracles."""

import numpy as np
import pytest

from probgrad.errors import InputError, SingularInformationError
from probgrad.gp import (
    FiniteGaussian,
    LinearFunctional,
    chol_append,
    condition,
    empty_state,
    gram,
    log_marginal_likelihood,
    posterior_functional,
    posterior_mean,
    posterior_cov,
    trace_metric,
)
from probgrad.kernels import KernelHyper, Matern52, CoupledKernel, matern52_deriv

HYP = KernelHyper(1.0, 1.0, 1.0)


def plain_kernel(dim=1, sigma=1.0, ell=1.0):
    return CoupledKernel(Matern52(sigma, [ell] * dim))


def ev(x, w=1.0):
    return LinearFunctional.evaluation(np.atleast_1d(x), weight=w)


def dense_posterior(kernel, obs_fs, f, query_fs, jitter=0.0):
    """Direct dense-formula reference implementation (oracle)."""
    G = gram(obs_fs, kernel) + jitter * np.eye(len(obs_fs))
    Kq = gram(obs_fs, kernel, query_fs)
    Pq = gram(query_fs, kernel)
    Gi = np.linalg.inv(G)
    mean = Kq.T @ Gi @ f
    cov = Pq - Kq.T @ Gi @ Kq
    return mean, cov


class TestGram:
    def test_duplicate_functionals_rank_one(self):
        k = plain_kernel()
        G = gram([ev(0.3), ev(0.3)], k)
        assert G.shape == (2, 2)
        np.testing.assert_allclose(G, G[0, 0] * np.ones((2, 2)), rtol=1e-14)

    def test_single_evaluation(self):
        k = plain_kernel(sigma=1.5)
        G = gram([ev(0.7)], k)
        np.testing.assert_allclose(G, [[1.5**2]], rtol=1e-14)

    def test_mixed_derivative_functionals_entrywise(self):
        # oracle: compose matern52_deriv by hand, term pair by term pair
        k = plain_kernel()
        f1 = ev(0.0)
        f2 = LinearFunctional.from_parts([[0.5]], [0], [(0,)], [1.0])
        f3 = LinearFunctional.from_parts(
            [[1.0], [0.2]], [0, 0], [(0, 0), ()], [0.7, -0.4]
        )
        fs = [f1, f2, f3]
        G = gram(fs, k)
        want = np.zeros((3, 3))
        for i, a in enumerate(fs):
            for j, b in enumerate(fs):
                want[i, j] = sum(
                    ta.weight
                    * tb.weight
                    * matern52_deriv(ta.loc, tb.loc, HYP, ta.deriv, tb.deriv)
                    for ta in a.terms
                    for tb in b.terms
                )
        np.testing.assert_allclose(G, want, rtol=1e-12)


class TestCholAppend:
    def test_append_to_empty(self):
        B = np.array([[4.0, 1.0], [1.0, 3.0]])
        L = chol_append(np.zeros((0, 0)), np.zeros((0, 2)), B)
        np.testing.assert_allclose(L @ L.T, B, rtol=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_full_refactorization(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 180))
        b = int(rng.integers(1, 20))
        A = rng.normal(size=(n + b, n + b))
        G = A @ A.T + (n + b) * np.eye(n + b)
        L0 = np.linalg.cholesky(G[:n, :n])
        L = chol_append(L0, G[:n, n:], G[n:, n:])
        Lref = np.linalg.cholesky(G)
        err = np.linalg.norm(L - Lref) / np.linalg.norm(Lref)
        assert err < 1e-10

    def test_duplicate_row_without_jitter_fails(self):
        k = plain_kernel()
        G = gram([ev(0.1), ev(0.1)], k)
        L0 = np.linalg.cholesky(G[:1, :1])
        with pytest.raises(SingularInformationError):
            chol_append(L0, G[:1, 1:], G[1:, 1:], jitter=0.0)


class TestCondition:
    def test_interpolation_at_observed_point(self):
        k = plain_kernel()
        s = condition(empty_state(k), [ev(0.4)], [2.5])
        mean, var = posterior_functional(s, ev(0.4))
        assert mean == pytest.approx(2.5, abs=1e-8)
        assert var <= 1e-8

    def test_empty_conditioning_is_identity(self):
        k = plain_kernel()
        s = condition(empty_state(k), [ev(0.0)], [1.0])
        s2 = condition(s, [], [])
        assert s2 is s

    def test_two_observations_match_hand_rolled_2x2(self):
        k = plain_kernel()
        x1, x2, xq = 0.0, 1.0, 0.4
        f = np.array([1.0, -0.5])
        s = condition(empty_state(k), [ev(x1), ev(x2)], f)
        mean, var = posterior_functional(s, ev(xq))
        jit = s.jitter_diag[0]
        # hand-rolled 2x2 solve
        kk = lambda a, b: gram([ev(a)], k, [ev(b)])[0, 0]
        G = np.array([[kk(x1, x1) + jit, kk(x1, x2)], [kk(x1, x2), kk(x2, x2) + jit]])
        kq = np.array([kk(x1, xq), kk(x2, xq)])
        sol = np.linalg.solve(G, f)
        assert mean == pytest.approx(kq @ sol, rel=1e-10)
        want_var = kk(xq, xq) - kq @ np.linalg.solve(G, kq)
        assert var == pytest.approx(want_var, rel=1e-9, abs=1e-12)

    def test_value_semantics(self):
        k = plain_kernel()
        s0 = condition(empty_state(k), [ev(0.0)], [1.0])
        n0, chol0 = s0.n, s0.chol.copy()
        condition(s0, [ev(0.5)], [2.0])
        assert s0.n == n0
        np.testing.assert_array_equal(s0.chol, chol0)

    def test_duplicate_dropped_with_warning(self):
        k = plain_kernel()
        s = condition(empty_state(k), [ev(0.2)], [1.0])
        with pytest.warns(UserWarning):
            s2 = condition(s, [ev(0.2), ev(0.9)], [1.0, 0.3])
        assert s2.n == 2  # duplicate dropped, fresh point kept

    def test_multi_rhs_columns(self):
        k = plain_kernel()
        s = empty_state(k, n_rhs=3)
        F = np.array([[1.0, 2.0, 3.0], [0.5, -1.0, 0.0]])
        s = condition(s, [ev(0.0), ev(1.0)], F)
        mean, _ = posterior_functional(s, ev(0.0))
        np.testing.assert_allclose(mean, F[0], atol=1e-7)


class TestPosterior:
    def test_unconditioned_returns_prior(self):
        k = plain_kernel(sigma=2.0)
        s = empty_state(k)
        mean, cov = posterior_functional(s, ev(0.3), ev(0.8))
        assert mean == 0.0
        assert cov == pytest.approx(gram([ev(0.3)], k, [ev(0.8)])[0, 0])

    def test_generic_query_against_dense_oracle(self):
        rng = np.random.default_rng(10)
        k = plain_kernel(sigma=1.3, ell=0.7)
        xs = rng.uniform(-2, 2, 6)
        f = rng.normal(size=6)
        s = condition(empty_state(k), [ev(x) for x in xs], f)
        L = LinearFunctional.from_parts(
            [[0.1], [1.3]], [0, 0], [(), (0,)], [1.0, 0.5]
        )
        L2 = ev(-0.7)
        mean, cov = posterior_functional(s, L, L2)
        m_ref, C_ref = dense_posterior(
            k, [ev(x) for x in xs], f, [L, L2], jitter=s.jitter_diag[0]
        )
        assert mean == pytest.approx(m_ref[0], rel=1e-9)
        assert cov == pytest.approx(C_ref[0, 1], rel=1e-9, abs=1e-12)

    def test_posterior_contraction(self):
        rng = np.random.default_rng(11)
        k = plain_kernel()
        Lq = ev(0.25)
        prior_var = gram([Lq], k)[0, 0]
        s = empty_state(k)
        last = prior_var
        for x in rng.uniform(0, 1, 5):
            s = condition(s, [ev(x)], [rng.normal()])
            _, var = posterior_functional(s, Lq)
            assert var <= last + 1e-10
            last = var

    def test_incremental_equals_batch(self):
        rng = np.random.default_rng(12)
        k = plain_kernel(ell=0.5)
        xs = rng.uniform(-1, 1, 8)
        f = rng.normal(size=8)
        s_batch = condition(empty_state(k), [ev(x) for x in xs], f)
        s_inc = empty_state(k)
        for i in range(0, 8, 2):
            s_inc = condition(s_inc, [ev(x) for x in xs[i : i + 2]], f[i : i + 2])
        queries = [ev(x) for x in rng.uniform(-1.5, 1.5, 20)]
        m1 = posterior_mean(s_batch, queries)
        m2 = posterior_mean(s_inc, queries)
        np.testing.assert_allclose(m1, m2, atol=1e-8)
        C1 = posterior_cov(s_batch, queries)
        C2 = posterior_cov(s_inc, queries)
        np.testing.assert_allclose(C1, C2, atol=1e-8)


class TestTraceMetric:
    def test_observed_query_near_zero(self):
        k = plain_kernel()
        xs = [0.0, 0.5, 1.0]
        s = condition(empty_state(k), [ev(x) for x in xs], [1.0, 2.0, 3.0])
        tm = trace_metric(s, [ev(x) for x in xs])
        assert tm <= np.sqrt(3 * 10 * s.jitter_diag.max())

    def test_unconditioned_single_point(self):
        k = plain_kernel(sigma=1.0)
        assert trace_metric(empty_state(k), [ev(0.3)]) == pytest.approx(1.0)

    def test_monotone_decrease_vs_dense_oracle(self):
        rng = np.random.default_rng(13)
        k = plain_kernel()
        query = [ev(x) for x in np.linspace(0, 1, 7)]
        s = empty_state(k)
        prev = trace_metric(s, query)
        obs = []
        vals = []
        for x in rng.uniform(0, 1, 6):
            obs.append(ev(x))
            vals.append(rng.normal())
            s = condition(s, [obs[-1]], [vals[-1]])
            tm = trace_metric(s, query)
            assert tm <= prev + 1e-12
            # dense recomputation oracle
            _, C = dense_posterior(k, obs, np.array(vals), query, jitter=s.jitter_diag[0])
            want = np.sqrt(np.clip(np.diag(C), 0, None).sum())
            assert tm == pytest.approx(want, rel=1e-6, abs=1e-9)
            prev = tm

    def test_empty_query_rejected(self):
        k = plain_kernel()
        with pytest.raises(InputError):
            trace_metric(empty_state(k), [])


class TestLogMarginalLikelihood:
    def test_single_zero_observation(self):
        k = plain_kernel(sigma=1.7)
        s = condition(empty_state(k), [ev(0.2)], [0.0])
        kxx = 1.7**2 + s.jitter_diag[0]
        want = -0.5 * np.log(kxx) - 0.5 * np.log(2 * np.pi)
        assert log_marginal_likelihood(s) == pytest.approx(want, rel=1e-12)

    def test_permutation_invariance(self):
        k = plain_kernel()
        xs = [0.1, 0.6, 0.9]
        f = [1.0, -2.0, 0.5]
        s1 = condition(empty_state(k), [ev(x) for x in xs], f)
        s2 = condition(
            empty_state(k), [ev(xs[i]) for i in (2, 0, 1)], [f[i] for i in (2, 0, 1)]
        )
        assert log_marginal_likelihood(s1) == pytest.approx(
            log_marginal_likelihood(s2), rel=1e-10
        )

    def test_three_observations_dense_oracle(self):
        rng = np.random.default_rng(14)
        k = plain_kernel(ell=0.8)
        xs = [0.0, 0.4, 1.1]
        f = rng.normal(size=3)
        s = condition(empty_state(k), [ev(x) for x in xs], f)
        G = gram([ev(x) for x in xs], k) + s.jitter_diag[0] * np.eye(3)
        want = (
            -0.5 * f @ np.linalg.solve(G, f)
            - 0.5 * np.linalg.slogdet(G)[1]
            - 1.5 * np.log(2 * np.pi)
        )
        assert log_marginal_likelihood(s) == pytest.approx(want, rel=1e-10)

    def test_requires_observations(self):
        with pytest.raises(InputError):
            log_marginal_likelihood(empty_state(plain_kernel()))


class TestInvariants:
    def test_interpolation_residuals(self):
        # separated locations: the regime the maximin selection guarantees
        rng = np.random.default_rng(15)
        k = plain_kernel(ell=0.6)
        xs = np.linspace(0, 3, 12) + rng.uniform(-0.08, 0.08, 12)
        f = rng.normal(size=12)
        fs = [ev(x) for x in xs]
        s = condition(empty_state(k), fs, f)
        m = posterior_mean(s, fs)[:, 0]
        assert np.abs(m - f).max() <= 1e-6

    def test_chol_append_random_borderings_200(self):
        rng = np.random.default_rng(16)
        for _ in range(10):
            n = int(rng.integers(10, 180))
            b = int(rng.integers(1, 21))
            A = rng.normal(size=(n + b, n + b))
            G = A @ A.T + (n + b) * np.eye(n + b)
            L = chol_append(np.linalg.cholesky(G[:n, :n]), G[:n, n:], G[n:, n:])
            err = np.linalg.norm(L - np.linalg.cholesky(G)) / np.linalg.norm(G) ** 0.5
            assert err < 1e-10


class TestFiniteGaussian:
    def test_asymmetric_cov_rejected(self):
        with pytest.raises(InputError):
            FiniteGaussian([0.0, 0.0], [[1.0, 0.5], [0.2, 1.0]])

    def test_negative_eigenvalue_rejected(self):
        with pytest.raises(InputError):
            FiniteGaussian([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])

    def test_trace_sqrt(self):
        g = FiniteGaussian([1.0, 2.0], np.diag([4.0, 5.0]))
        assert g.trace_sqrt() == pytest.approx(3.0)
