"""Generalized Gibbs states and the Kubo correlation form.

A Gibbs state of operators ``A_j`` with multipliers ``zeta_j`` is

    w = exp(-zeta_0 - sum_j zeta_j A_j),   zeta_0 = log Tr exp(-sum_j zeta_j A_j).

Its logarithm ``C = -zeta_0 - sum_j zeta_j A_j`` is diagonalized once and the
eigensystem is cached; every Kubo integral

    int_0^1 du exp(u C) B exp((1 - u) C)

is then evaluated exactly in that basis with divided differences of
``exp(c_m)``, never by quadrature in ``u``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import DimensionError, InvariantError, NumericalError

ENTROPY_AGREEMENT = 1e-8


@dataclass(frozen=True)
class MacrostateParams:
    """Multipliers ``zeta`` and the log-partition value ``zeta0``."""

    zeta0: float
    zeta: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.zeta, dtype=float).reshape(-1)
        object.__setattr__(self, "zeta", z)
        if not (np.isfinite(self.zeta0) and np.all(np.isfinite(z))):
            raise InvariantError("macrostate parameters must be finite")


def _as_ops(ops) -> list[np.ndarray]:
    return [np.asarray(a, dtype=complex) for a in ops]


def exponent(ops: Sequence, zeta) -> np.ndarray:
    """``-sum_j zeta_j A_j`` (without the normalization term)."""
    ops = _as_ops(ops)
    zeta = np.asarray(zeta, dtype=float).reshape(-1)
    if len(ops) != zeta.shape[0]:
        raise DimensionError(f"{len(ops)} operators but {zeta.shape[0]} multipliers")
    if not np.all(np.isfinite(zeta)):
        raise InvariantError("multipliers must be finite")
    if not ops:
        raise DimensionError("need at least one operator")
    shapes = {a.shape for a in ops}
    if len(shapes) != 1:
        raise DimensionError(f"dimension mismatch: {sorted(shapes)}")
    return -np.tensordot(zeta, np.array(ops), axes=1)


@dataclass(frozen=True)
class GibbsState:
    """Normalized Gibbs state with its cached log-eigensystem.

    ``log_eigs`` are the eigenvalues ``c_m`` of ``C = log w`` (so the
    populations are ``exp(c_m)``), ``basis`` the eigenvectors.
    """

    params: MacrostateParams
    state: np.ndarray
    log_eigs: np.ndarray
    basis: np.ndarray
    ops: tuple = ()

    @property
    def dim(self) -> int:
        return self.state.shape[0]

    @property
    def populations(self) -> np.ndarray:
        return np.exp(self.log_eigs)

    @property
    def log_state(self) -> np.ndarray:
        """``C = -zeta_0 - sum_j zeta_j A_j``."""
        return (self.basis * self.log_eigs) @ self.basis.conj().T

    def to_eigenbasis(self, a) -> np.ndarray:
        return self.basis.conj().T @ a @ self.basis

    def kubo_weights(self) -> np.ndarray:
        w = getattr(self, "_weights", None)
        if w is None:
            w = kernels.divided_difference_weights(self.log_eigs)
            object.__setattr__(self, "_weights", w)
        return w

    def mean(self, a) -> float:
        a_eb = self.to_eigenbasis(np.asarray(a))
        return float(np.real(np.diag(a_eb) @ self.populations))


def state_from_exponent(x, params=None, ops=()) -> GibbsState:
    """Normalize ``exp(x)`` for a Hermitian exponent ``x``.

    The largest eigenvalue is subtracted before exponentiating.
    """
    x = np.asarray(x, dtype=complex)
    x = (x + x.conj().T) / 2
    e, v = np.linalg.eigh(x)
    top = e.max()
    log_z = top + np.log(np.sum(np.exp(e - top)))
    c = e - log_z
    state = (v * np.exp(c)) @ v.conj().T
    if params is None:
        params = MacrostateParams(log_z, np.zeros(0))
    return GibbsState(params=params, state=state, log_eigs=c, basis=v, ops=tuple(ops))


def gibbs_state(ops: Sequence, zeta) -> GibbsState:
    """Gibbs state ``exp(-sum_j zeta_j A_j) / Z`` of the operators ``ops``."""
    x = exponent(ops, zeta)
    g = state_from_exponent(x, ops=ops)
    params = MacrostateParams(g.params.zeta0, np.asarray(zeta, dtype=float))
    return GibbsState(params=params, state=g.state, log_eigs=g.log_eigs, basis=g.basis, ops=tuple(_as_ops(ops)))


def log_partition(ops: Sequence, zeta) -> float:
    """``log Tr exp(-sum_j zeta_j A_j)`` with a max-eigenvalue shift."""
    e = np.linalg.eigvalsh(exponent(ops, zeta))
    top = e.max()
    return float(top + np.log(np.sum(np.exp(e - top))))


def entropy(g: GibbsState) -> float:
    """Entropy of a Gibbs state in nats.

    Evaluated both as ``zeta_0 + sum_j zeta_j <A_j>`` and spectrally as
    ``-sum p log p``; the two must agree within 1e-8.
    """
    p = g.populations
    spectral = float(-np.sum(p * g.log_eigs))
    if g.ops and g.params.zeta.size == len(g.ops):
        means = np.array([g.mean(a) for a in g.ops])
        formula = g.params.zeta0 + float(g.params.zeta @ means)
        if abs(formula - spectral) > ENTROPY_AGREEMENT * max(1.0, abs(spectral)):
            raise NumericalError(f"entropy mismatch: {formula!r} vs {spectral!r}")
    return spectral


def kubo_inner(a, b, g: GibbsState) -> float:
    """Kubo correlation ``<a, b>`` in the Gibbs state ``g``.

    ``Tr a int_0^1 du e^{uC} b e^{(1-u)C} - Tr(a w) Tr(b w)``.
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != g.state.shape or b.shape != g.state.shape:
        raise DimensionError("operator and state dimensions differ")
    a_eb = g.to_eigenbasis(a)
    b_eb = g.to_eigenbasis(b)
    p = g.populations
    raw = kernels.kubo_pair_sum(a_eb, b_eb, g.kubo_weights())
    mean_a = float(np.real(np.diag(a_eb) @ p))
    mean_b = float(np.real(np.diag(b_eb) @ p))
    return raw - mean_a * mean_b


def kubo_covariance(ops: Sequence, g: GibbsState, others: Sequence | None = None) -> np.ndarray:
    """Matrix of Kubo correlations ``K[j, l] = <ops_j, ops_l>``.

    With ``others`` the rectangular block ``<ops_j, others_l>`` is returned.
    """
    ops = _as_ops(ops)
    if not ops:
        return np.zeros((0, 0 if others is None else len(others)))
    for a in ops:
        if a.shape != g.state.shape:
            raise DimensionError("operator and state dimensions differ")
    p = g.populations
    w = g.kubo_weights()
    left = np.array([g.to_eigenbasis(a) for a in ops])
    mean_l = np.real(np.einsum("kii,i->k", left, p))
    if others is None:
        gram = kernels.kubo_gram(left, w)
        k = gram - np.outer(mean_l, mean_l)
        return (k + k.T) / 2
    right = np.array([g.to_eigenbasis(np.asarray(b, dtype=complex)) for b in others])
    mean_r = np.real(np.einsum("kii,i->k", right, p))
    k = len(ops)
    flat_l = left.reshape(k, -1)
    flat_r = right.reshape(len(right), -1)
    raw = np.real(flat_l @ (np.conj(flat_r) * w.T.reshape(1, -1)).T)
    return raw - np.outer(mean_l, mean_r)


def cumulant_expectation(c_op, perturbation, probe) -> float:
    """First-order cumulant estimate of ``Tr probe e^{A+B} / Tr e^{A+B}``.

    ``c_op`` is the exponent ``A``, ``perturbation`` is ``B``.  Returns

        <probe>_A + Tr probe int_0^1 e^{uA} B e^{(1-u)A} du / Tr e^A - <probe>_A <B>_A

    i.e. the zeroth-order mean plus the Kubo correlation of ``probe`` and
    ``B`` in the normalized state ``e^A / Tr e^A``.
    """
    a = np.asarray(c_op, dtype=complex)
    b = np.asarray(perturbation, dtype=complex)
    c = np.asarray(probe, dtype=complex)
    if not (a.shape == b.shape == c.shape):
        raise DimensionError("dimension mismatch")
    g = state_from_exponent(a)
    return g.mean(c) + kubo_inner(c, b, g)
