"""Reduced dynamics of slow observables on a coarse time scale tau.

Observables are split, in the Kubo metric of the current Gibbs state, into a
part along the constants of motion (plus the identity) and an orthogonal
remainder.  The remainder evolves with the finite-difference generator

    L'_tau a = (a(tau) - a) / tau,

while parallel expectations stay fixed; the state is re-solved as a Gibbs
state after every step.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import InvariantError, NumericalError
from .gibbs import GibbsState, kubo_covariance
from .hilbert import Eigensystem, RelevantSet, heisenberg_dot, heisenberg_evolve
from .maxent import InversionSettings, invert_macrostate

DROP_TOL = 1e-10


def _bkm(a_eb, b_eb, w):
    """Uncentered Kubo-Mori product Tr a int e^{uC} b e^{(1-u)C} (eigenbasis of C)."""
    return kernels.kubo_pair_sum(a_eb, b_eb, w)


@dataclass
class OrthogonalDecomposition:
    """Kubo-orthogonal split of observables against the constants of motion.

    ``basis_parallel`` is an orthonormal basis (uncentered Kubo-Mori product)
    of span{1, conserved}; in the centered Kubo form this makes every
    ``orthogonal[i]`` orthogonal to each conserved operator and centered in
    the Gibbs state.  ``indices[i]`` locates ``modes[i]`` in the Gibbs state's
    operator list when known.
    """

    basis_parallel: list
    modes: list
    parallel: list
    orthogonal: list
    gram_parallel: np.ndarray
    dropped: list = field(default_factory=list)
    indices: list | None = None


def decompose(obs_modes: Sequence, conserved: Sequence, g: GibbsState, indices=None) -> OrthogonalDecomposition:
    """Gram-Schmidt split of ``obs_modes`` against span{1, ``conserved``}.

    Conserved operators that are Kubo-dependent on earlier ones (norm below
    1e-10 after projection) are dropped and listed in ``dropped``.
    """
    if not len(conserved) and not len(obs_modes):
        raise InvariantError("nothing to decompose")
    w = g.kubo_weights()
    eye = np.eye(g.dim, dtype=complex)
    cands = [eye] + [np.asarray(c, dtype=complex) for c in conserved]
    cands_eb = [g.to_eigenbasis(c) for c in cands]
    basis_eb = []
    dropped = []
    for i, c in enumerate(cands_eb):
        v = c.copy()
        norm0 = np.sqrt(max(_bkm(v, v, w), 0.0))
        for _ in range(2):
            for e in basis_eb:
                v = v - _bkm(e, v, w) * e
        norm = np.sqrt(max(_bkm(v, v, w), 0.0))
        if norm < max(DROP_TOL, DROP_TOL * norm0):
            dropped.append(i - 1)
            continue
        basis_eb.append(v / norm)
    if not basis_eb:
        raise InvariantError("parallel span is fully degenerate")

    parallel, orthogonal = [], []
    for a in obs_modes:
        a = np.asarray(a, dtype=complex)
        a_eb = g.to_eigenbasis(a)
        par_eb = sum(_bkm(e, a_eb, w) * e for e in basis_eb)
        par = g.basis @ par_eb @ g.basis.conj().T
        par = (par + par.conj().T) / 2
        parallel.append(par)
        orthogonal.append(a - par)

    conserved = [np.asarray(c, dtype=complex) for c in conserved]
    gram = kubo_covariance(conserved, g) if conserved else np.zeros((0, 0))
    basis = [g.basis @ e @ g.basis.conj().T for e in basis_eb]
    return OrthogonalDecomposition(
        basis_parallel=basis,
        modes=[np.asarray(a, dtype=complex) for a in obs_modes],
        parallel=parallel,
        orthogonal=orthogonal,
        gram_parallel=gram,
        dropped=dropped,
        indices=None if indices is None else list(indices),
    )


def decompose_relevant(rel: RelevantSet, g: GibbsState) -> OrthogonalDecomposition:
    """Split the driven operators of ``rel`` against its conserved ones."""
    driven = rel.driven
    cons = [a for a, c in zip(rel.ops, rel.conserved) if c]
    return decompose([rel.ops[j] for j in driven], cons, g, indices=driven)


def coarse_grained_generator(a_perp, h, tau: float, eig: Eigensystem | None = None) -> np.ndarray:
    """``(a(tau) - a) / tau`` with ``a(tau) = exp(iH tau) a exp(-iH tau)``."""
    if not tau > 0:
        raise InvariantError("tau must be positive")
    a = np.asarray(a_perp, dtype=complex)
    return (heisenberg_evolve(a, h, tau, eig=eig) - a) / tau


@dataclass
class ReducedStep:
    targets: np.ndarray
    rates: np.ndarray
    state: GibbsState


def reduced_dynamics_step(
    dec: OrthogonalDecomposition,
    g: GibbsState,
    h,
    tau: float,
    dt: float,
    settings: InversionSettings | None = None,
    eig: Eigensystem | None = None,
) -> ReducedStep:
    """Advance the macrostate by ``dt`` under the coarse-grained generator.

    Orthogonal components move by ``dt * Tr[(L'_tau a_perp) w]``; parallel
    expectations are held; the new Gibbs state is re-solved from the
    updated targets.  Leaving the realizable set raises
    ``NumericalError`` (model-validity breakdown).
    """
    if dec.indices is None:
        raise InvariantError("decomposition lacks operator indices; use decompose_relevant")
    ops = list(g.ops)
    targets = np.array([g.mean(a) for a in ops])
    rates = np.zeros(len(ops))
    for idx, a_perp in zip(dec.indices, dec.orthogonal):
        rates[idx] = g.mean(coarse_grained_generator(a_perp, h, tau, eig=eig))
    new_targets = targets + dt * rates
    try:
        g_new = invert_macrostate(ops, new_targets, init=g.params, settings=settings)
    except NumericalError as exc:
        raise NumericalError(f"reduced dynamics left the realizable set: {exc}") from exc
    return ReducedStep(new_targets, rates, g_new)


@dataclass
class TauDiagnostic:
    taus: np.ndarray
    values: np.ndarray
    relative_spread: float
    plateau: tuple | None
    threshold: float

    def rows(self):
        return list(zip(self.taus.tolist(), self.values.tolist()))


def _spread(v):
    top = np.max(np.abs(v))
    if top < 1e-14:
        return 0.0
    return float((np.max(v) - np.min(v)) / top)


def tau_independence_diagnostic(a_perp, h, g: GibbsState, tau_grid, threshold: float = 0.05) -> TauDiagnostic:
    """Tabulate ``Tr[(L'_tau a) w]`` over ``tau_grid``.

    ``plateau`` is the widest contiguous ``(tau_lo, tau_hi)`` window whose
    relative spread is below ``threshold``, or ``None``.
    """
    taus = np.asarray(tau_grid, dtype=float)
    if taus.size == 0 or np.any(taus <= 0) or np.any(np.diff(taus) <= 0):
        raise InvariantError("tau_grid must be positive and increasing")
    eig = Eigensystem.of(h)
    a = np.asarray(a_perp, dtype=complex)
    base = g.mean(a)
    vals = np.array([(g.mean(eig.evolve(a, t)) - base) / t for t in taus])
    best = None
    n = taus.size
    for i in range(n):
        for j in range(n - 1, i, -1):
            if best is not None and j - i <= best[1] - best[0]:
                break
            if _spread(vals[i : j + 1]) < threshold:
                best = (i, j)
                break
    plateau = None if best is None else (float(taus[best[0]]), float(taus[best[1]]))
    return TauDiagnostic(taus, vals, _spread(vals), plateau, threshold)


def small_tau_limit(a, h, g: GibbsState) -> float:
    """``Tr(i[H, a] w)``: the tau -> 0 value of the generator expectation."""
    return g.mean(heisenberg_dot(np.asarray(a, dtype=complex), h))
