import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import logm

from conftest import random_hermitian
from macrostate.errors import DimensionError, InvariantError
from macrostate.gibbs import (
    MacrostateParams,
    cumulant_expectation,
    entropy,
    gibbs_state,
    kubo_covariance,
    kubo_inner,
    log_partition,
    state_from_exponent,
)
from macrostate.hilbert import check_density, frob
from oracles import exact_perturbed_mean, gibbs_expm, kubo_quadrature


def two_level(eps=1.0):
    return [np.diag([0.0, eps]).astype(complex)]


class TestGibbsState:
    def test_identity_only(self):
        g = gibbs_state([np.eye(3)], [2.5])
        assert np.allclose(g.state, np.eye(3) / 3)

    def test_two_level_canonical(self):
        beta, eps = 1.3, 0.8
        g = gibbs_state(two_level(eps), [beta])
        p = np.array([1, np.exp(-beta * eps)]) / (1 + np.exp(-beta * eps))
        assert np.allclose(np.diag(g.state).real, p)

    def test_zero_multipliers(self, xxz4):
        h, obs = xxz4
        g = gibbs_state(list(obs.observables) + [h], np.zeros(5))
        assert np.allclose(g.state, np.eye(16) / 16)
        assert np.isclose(g.params.zeta0, np.log(16))

    def test_matches_expm_and_normalization(self, xxz4, rng):
        h, obs = xxz4
        ops = list(obs.observables) + [h]
        zeta = rng.normal(size=5)
        g = gibbs_state(ops, zeta)
        check_density(g.state)
        ref = gibbs_expm(ops, zeta)
        assert frob(g.state - ref) <= 1e-10 * frob(ref)
        assert np.isclose(g.params.zeta0, log_partition(ops, zeta), atol=1e-10)
        # state = exp(-zeta0 - sum zeta A)
        assert frob(g.log_state - logm(ref)) <= 1e-8

    def test_large_beta_no_overflow(self):
        g = gibbs_state(two_level(1.0), [2000.0])
        assert np.all(np.isfinite(g.state))
        assert g.state[0, 0].real == pytest.approx(1.0)

    def test_non_finite_rejected(self):
        with pytest.raises(InvariantError):
            gibbs_state(two_level(), [np.nan])
        with pytest.raises(InvariantError):
            MacrostateParams(np.inf, np.zeros(1))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            gibbs_state(two_level(), [1.0, 2.0])


class TestLogPartition:
    def test_examples(self):
        assert np.isclose(log_partition([np.eye(4)], [0.0]), np.log(4))
        assert np.isclose(log_partition([np.eye(4)], [0.7]), np.log(4) - 0.7)
        assert np.isclose(log_partition(two_level(1.0), [1.0]), np.log(1 + np.exp(-1)))


class TestEntropy:
    def test_examples(self):
        assert np.isclose(entropy(gibbs_state([np.eye(5)], [0.0])), np.log(5))
        cold = entropy(gibbs_state(two_level(1.0), [60.0]))
        assert 0 <= cold < 1e-20
        p = 1 / (1 + np.exp(-1))
        assert np.isclose(entropy(gibbs_state(two_level(1.0), [1.0])), -p * np.log(p) - (1 - p) * np.log(1 - p))

    @given(st.integers(0, 2**31 - 1))
    def test_formula_matches_spectral(self, seed):
        rng = np.random.default_rng(seed)
        ops = [random_hermitian(rng, 6) for _ in range(3)]
        g = gibbs_state(ops, rng.normal(size=3))
        means = np.array([g.mean(a) for a in ops])
        p = np.linalg.eigvalsh(g.state)
        p = p[p > 0]
        assert abs(entropy(g) - (g.params.zeta0 + g.params.zeta @ means)) <= 1e-8
        assert abs(entropy(g) + np.sum(p * np.log(p))) <= 1e-8


def _random_gibbs(rng, d=6, k=3, scale=1.0):
    ops = [random_hermitian(rng, d) for _ in range(k)]
    return ops, gibbs_state(ops, scale * rng.normal(size=k))


class TestKubo:
    def test_identity_is_null(self, rng):
        _, g = _random_gibbs(rng)
        b = random_hermitian(rng, 6)
        assert abs(kubo_inner(np.eye(6), b, g)) <= 1e-12

    def test_commuting_case_is_classical_covariance(self, rng):
        h = np.diag(rng.normal(size=6)).astype(complex)
        g = gibbs_state([h], [0.9])
        a = np.diag(rng.normal(size=6)).astype(complex)
        b = np.diag(rng.normal(size=6)).astype(complex)
        w = g.state
        classical = np.trace(a @ b @ w).real - np.trace(a @ w).real * np.trace(b @ w).real
        assert np.isclose(kubo_inner(a, b, g), classical, atol=1e-12)

    def test_positive(self, rng):
        _, g = _random_gibbs(rng)
        a = random_hermitian(rng, 6)
        assert kubo_inner(a, a, g) > 0

    def test_matches_quadrature(self, rng):
        _, g = _random_gibbs(rng, d=5)
        a, b = random_hermitian(rng, 5), random_hermitian(rng, 5)
        assert abs(kubo_inner(a, b, g) - kubo_quadrature(a, b, g.log_state)) <= 1e-7

    def test_normalization_absorbed(self, rng):
        x = random_hermitian(rng, 5)
        a, b = random_hermitian(rng, 5), random_hermitian(rng, 5)
        g1 = state_from_exponent(x)
        g2 = state_from_exponent(x + 7.5 * np.eye(5))
        assert abs(kubo_inner(a, b, g1) - kubo_inner(a, b, g2)) <= 1e-12

    def test_degenerate_spectrum_series_branch(self, rng):
        # exact degeneracies in C exercise the series limit of the kernel
        h = np.diag([0.0, 0.0, 1.0, 1.0, 1.0 + 1e-10]).astype(complex)
        g = gibbs_state([h], [0.8])
        a, b = random_hermitian(rng, 5), random_hermitian(rng, 5)
        assert abs(kubo_inner(a, b, g) - kubo_quadrature(a, b, g.log_state)) <= 1e-7

    @given(st.integers(0, 2**31 - 1))
    def test_symmetry_linearity_positivity(self, seed):
        rng = np.random.default_rng(seed)
        _, g = _random_gibbs(rng, scale=2.0)
        a, b, c = (random_hermitian(rng, 6) for _ in range(3))
        x, y = rng.normal(size=2)
        assert abs(kubo_inner(a, b, g) - kubo_inner(b, a, g)) <= 1e-10
        lin = kubo_inner(x * a + y * c, b, g) - x * kubo_inner(a, b, g) - y * kubo_inner(c, b, g)
        assert abs(lin) <= 1e-10
        assert kubo_inner(a, a, g) >= -1e-12
        assert kubo_inner(a, a, g) > 0

    def test_derivative_of_means(self, xxz4, rng):
        h, obs = xxz4
        ops = list(obs.observables) + [h]
        zeta = 0.5 * rng.normal(size=5)
        k = kubo_covariance(ops, gibbs_state(ops, zeta))
        step = 1e-5
        for l in range(5):
            dz = np.zeros(5)
            dz[l] = step
            up, down = gibbs_state(ops, zeta + dz), gibbs_state(ops, zeta - dz)
            deriv = np.array([(up.mean(a) - down.mean(a)) / (2 * step) for a in ops])
            assert np.allclose(deriv, -k[:, l], rtol=1e-6, atol=1e-6 * np.abs(k).max())


class TestKuboCovariance:
    def test_single_observable(self, rng):
        ops, g = _random_gibbs(rng)
        assert np.isclose(kubo_covariance(ops[:1], g)[0, 0], kubo_inner(ops[0], ops[0], g))

    def test_commuting_set(self, rng):
        ops = [np.diag(rng.normal(size=5)).astype(complex) for _ in range(3)]
        g = gibbs_state(ops, rng.normal(size=3))
        p = np.diag(g.state).real
        vals = np.array([np.diag(a).real for a in ops])
        ref = (vals * p) @ vals.T - np.outer(vals @ p, vals @ p)
        assert np.allclose(kubo_covariance(ops, g), ref, atol=1e-12)

    def test_identity_row_vanishes(self, rng):
        ops, g = _random_gibbs(rng)
        k = kubo_covariance([np.eye(6)] + ops, g)
        assert np.allclose(k[0], 0, atol=1e-12)
        assert np.allclose(k[:, 0], 0, atol=1e-12)

    def test_psd_and_rectangular_block(self, rng):
        ops, g = _random_gibbs(rng, k=4)
        k = kubo_covariance(ops, g)
        assert np.allclose(k, k.T)
        assert np.linalg.eigvalsh(k).min() > 0
        block = kubo_covariance(ops[:2], g, others=ops)
        assert np.allclose(block, k[:2], atol=1e-12)


class TestCumulant:
    def test_zeroth_order(self, rng):
        a, c = random_hermitian(rng, 6), random_hermitian(rng, 6)
        zero = np.zeros((6, 6))
        assert np.isclose(cumulant_expectation(a, zero, c), exact_perturbed_mean(a, zero, c), atol=1e-12)
        shifted = cumulant_expectation(a, 0.3 * np.eye(6), c)
        assert np.isclose(shifted, cumulant_expectation(a, zero, c), atol=1e-12)

    def test_second_order_error(self, rng):
        a, b, c = (random_hermitian(rng, 6) for _ in range(3))
        errs = [abs(cumulant_expectation(a, lam * b, c) - exact_perturbed_mean(a, lam * b, c)) for lam in (0.02, 0.01)]
        assert 3.5 <= errs[0] / errs[1] <= 4.5
