import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from macrostate.errors import InvariantError
from macrostate.evolution import ModeBasis, exact_macrostate_trajectory, mode_relevant_set
from macrostate.gibbs import gibbs_state, kubo_inner
from macrostate.hilbert import ModelSpec, build_model, frob, heisenberg_dot
from macrostate.semigroup import (
    coarse_grained_generator,
    decompose,
    decompose_relevant,
    reduced_dynamics_step,
    small_tau_limit,
    tau_independence_diagnostic,
)


@pytest.fixture(scope="module")
def chain():
    h, obs = build_model(ModelSpec("xxz_chain", 5, {"J": 1.0, "delta": 0.6}))
    rel = mode_relevant_set(obs, ModeBasis.build(5, 3, "cosine"))
    return h, rel


def state(rel, lam=0.2, seed=0):
    rng = np.random.default_rng(seed)
    z = np.zeros(len(rel))
    z[0], z[-1] = 0.3, 0.5
    z[1:-1] += lam * rng.normal(size=len(rel) - 2)
    return gibbs_state(rel.ops, z)


def cons(rel):
    return [a for a, c in zip(rel.ops, rel.conserved) if c]


class TestDecompose:
    def test_orthogonality_and_sum(self, chain):
        h, rel = chain
        g = state(rel)
        dec = decompose_relevant(rel, g)
        for a, par, perp in zip(dec.modes, dec.parallel, dec.orthogonal):
            assert frob(a - par - perp) <= 1e-12
            for c in cons(rel) + [np.eye(rel.dim)]:
                assert abs(kubo_inner(perp, c, g)) <= 1e-10
            assert abs(g.mean(perp)) <= 1e-10

    def test_examples(self, chain):
        h, rel = chain
        g = state(rel)
        dec = decompose([rel.ops[0], np.eye(rel.dim)], cons(rel), g)
        assert kubo_inner(dec.orthogonal[0], dec.orthogonal[0], g) <= 1e-10
        assert frob(dec.orthogonal[1]) <= 1e-10
        perp = decompose([rel.ops[1]], cons(rel), g).orthogonal[0]
        again = decompose([perp], cons(rel), g)
        assert kubo_inner(again.parallel[0], again.parallel[0], g) <= 1e-10
        assert frob(again.orthogonal[0] - perp) <= 1e-10

    def test_dependent_conserved_dropped(self, chain):
        h, rel = chain
        g = state(rel)
        dec = decompose([rel.ops[1]], cons(rel) + [2 * h], g)
        assert dec.dropped == [2]

    def test_degenerate_span(self):
        g = gibbs_state([np.diag([1.0, 0.0]).astype(complex)], [0.3])
        with pytest.raises(InvariantError):
            decompose([], [], g)

    @given(st.integers(0, 2**31 - 1))
    def test_projection_properties(self, seed):
        h, obs = build_model(ModelSpec("xxz_chain", 4, {"J": 1.0, "delta": 0.8}))
        rel = mode_relevant_set(obs, ModeBasis.build(4, 2, "cosine"))
        rng = np.random.default_rng(seed)
        g = state(rel, lam=0.5, seed=seed)
        x = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        a = sum(c * op for c, op in zip(rng.normal(size=len(rel)), rel.ops)) + 0.3 * np.kron(np.kron(x + x.conj().T, np.eye(2)), np.eye(2))
        dec = decompose([a], cons(rel), g)
        n_a = kubo_inner(a, a, g)
        n_par = kubo_inner(dec.parallel[0], dec.parallel[0], g)
        n_perp = kubo_inner(dec.orthogonal[0], dec.orthogonal[0], g)
        assert abs(n_a - n_par - n_perp) <= 1e-9 * max(1.0, n_a)
        assert n_perp <= n_a + 1e-12
        again = decompose([dec.orthogonal[0]], cons(rel), g)
        assert frob(again.orthogonal[0] - dec.orthogonal[0]) <= 1e-10


class TestGenerator:
    def test_conserved_is_zero(self, chain):
        h, rel = chain
        assert frob(coarse_grained_generator(rel.ops[0], h, 0.7)) <= 1e-12

    def test_small_tau_and_trace(self, chain):
        h, rel = chain
        a = rel.ops[1]
        lp = coarse_grained_generator(a, h, 1e-4)
        assert frob(lp - heisenberg_dot(a, h)) <= 1e-3 * frob(heisenberg_dot(a, h))
        assert abs(np.trace(coarse_grained_generator(a, h, 0.9))) <= 1e-10
        assert frob(lp - lp.conj().T) <= 1e-12

    def test_linear(self, chain):
        h, rel = chain
        a, b = rel.ops[1], rel.ops[2]
        lhs = coarse_grained_generator(0.7 * a - 1.3 * b, h, 0.5)
        rhs = 0.7 * coarse_grained_generator(a, h, 0.5) - 1.3 * coarse_grained_generator(b, h, 0.5)
        assert frob(lhs - rhs) <= 1e-12

    def test_tau_must_be_positive(self, chain):
        h, rel = chain
        with pytest.raises(InvariantError):
            coarse_grained_generator(rel.ops[1], h, 0.0)

    def test_small_tau_first_order(self, chain):
        h, rel = chain
        g = state(rel, lam=0.4)
        a = decompose_relevant(rel, g).orthogonal[0]
        ref = small_tau_limit(a, h, g)
        d1, d2 = (g.mean(coarse_grained_generator(a, h, t)) - ref for t in (1e-3, 5e-4))
        assert 1.8 <= d1 / d2 <= 2.2


class TestReducedStep:
    def test_equilibrium_fixed_point(self, chain):
        h, rel = chain
        g = state(rel, lam=0.0)
        step = reduced_dynamics_step(decompose_relevant(rel, g), g, h, 0.5, 0.1)
        assert np.abs(step.state.params.zeta - g.params.zeta).max() <= 1e-8

    def test_conserved_held_and_matches_exact_step(self, chain):
        h, rel = chain
        g = state(rel, lam=0.3)
        dt = 0.05
        out = reduced_dynamics_step(decompose_relevant(rel, g), g, h, dt, dt)
        exact = exact_macrostate_trajectory(g.state, rel, h, [0.0, dt])
        new = np.array([out.state.mean(a) for a in rel.ops])
        assert np.abs(new - exact.expectations[1]).max() <= 1e-8
        for j, c in enumerate(rel.conserved):
            if c:
                assert abs(new[j] - g.mean(rel.ops[j])) <= 1e-12 * max(1.0, abs(g.mean(rel.ops[j]))) + 1e-13

    def test_many_steps_keep_conserved(self, chain):
        h, rel = chain
        g = state(rel, lam=0.3)
        start = [g.mean(a) for a, c in zip(rel.ops, rel.conserved) if c]
        for _ in range(10):
            g = reduced_dynamics_step(decompose_relevant(rel, g), g, h, 0.8, 0.1).state
        end = [g.mean(a) for a, c in zip(rel.ops, rel.conserved) if c]
        assert np.allclose(start, end, atol=1e-10)

    def test_needs_indices(self, chain):
        h, rel = chain
        g = state(rel)
        with pytest.raises(InvariantError):
            reduced_dynamics_step(decompose([rel.ops[1]], cons(rel), g), g, h, 0.5, 0.1)


class TestTauDiagnostic:
    def test_conserved_and_stationary(self, chain):
        h, rel = chain
        g = state(rel)
        grid = np.linspace(0.1, 2.0, 10)
        assert np.abs(tau_independence_diagnostic(rel.ops[0], h, g, grid).values).max() <= 1e-12
        eq = state(rel, lam=0.0)
        assert np.abs(tau_independence_diagnostic(rel.ops[1], h, eq, grid).values).max() <= 1e-10

    def test_matches_exact_slope(self, chain):
        h, rel = chain
        g = state(rel, lam=0.3)
        a = decompose_relevant(rel, g).orthogonal[0]
        grid = np.linspace(0.05, 1.0, 20)
        diag = tau_independence_diagnostic(a, h, g, grid, threshold=0.2)
        exact = exact_macrostate_trajectory(g.state, rel, h, np.concatenate([[0.0], grid]))
        j = rel.driven[0]
        # a differs from a_1 by a conserved combination, so its slope equals that of <a_1>
        slope = (exact.expectations[1:, j] - exact.expectations[0, j]) / grid
        assert np.allclose(diag.values, slope, atol=1e-8)
        assert diag.plateau is None or diag.plateau[0] < diag.plateau[1]
        assert len(diag.rows()) == grid.size

    def test_bad_grid(self, chain):
        h, rel = chain
        with pytest.raises(InvariantError):
            tau_independence_diagnostic(rel.ops[1], h, state(rel), [0.5, 0.1])
