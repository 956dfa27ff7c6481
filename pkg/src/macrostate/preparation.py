"""Preparation operators built from a finite control interval [T, t0].

The prepared state is ``exp(X) / Tr exp(X)`` with exponent

    X = - sum_j zeta_j(t0) A_j
        + sum_c g_c int_T^t0 dt' A_{j_c}(-(t0 - t')) h_c(t')
        + sum_c g_c int_T^t0 dt' J_{b_c}(-(t0 - t')) h_c(t')
        - sum_j gamma_j(T) A_j(-(t0 - T))

where ``A(s) = exp(iHs) A exp(-iHs)``.  The first multipliers are fixed to
the macrostate at ``t0`` (suitable preparation), so a schedule without
controls reproduces the Gibbs state ``w_zeta(t0)``.  Time integrals use the
composite trapezoid rule.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DimensionError, InvariantError, NumericalError
from .gibbs import MacrostateParams, state_from_exponent
from .hilbert import Eigensystem, RelevantSet, frob, unitary_evolve_state

ROUTE_AGREEMENT = 1e-10


class TestFunctionKind(str, enum.Enum):
    COSINE = "cosine"
    CONSTANT = "constant"
    GAUSSIAN_WINDOW = "gaussian_window"


@dataclass(frozen=True)
class TestFunction:
    """Bounded control profile ``h(t)``.

    cosine: ``cos(omega t + phase)``; constant: ``value`` (|value| <= bound);
    gaussian_window: ``exp(-(t - center)^2 / (2 width^2))``.
    """

    __test__ = False  # not a pytest class

    kind: TestFunctionKind | str
    parameters: dict = field(default_factory=dict)
    bound: float = 1.0

    def __post_init__(self):
        kind = TestFunctionKind(self.kind)
        object.__setattr__(self, "kind", kind)
        p = self.parameters
        if kind is TestFunctionKind.CONSTANT and abs(float(p.get("value", 1.0))) > self.bound:
            raise InvariantError("constant test function exceeds its bound")
        if kind is TestFunctionKind.GAUSSIAN_WINDOW and float(p.get("width", 1.0)) <= 0:
            raise InvariantError("gaussian_window needs a positive width")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        p = self.parameters
        if self.kind is TestFunctionKind.COSINE:
            return np.cos(float(p.get("omega", 1.0)) * t + float(p.get("phase", 0.0)))
        if self.kind is TestFunctionKind.CONSTANT:
            return np.full_like(t, float(p.get("value", 1.0)))
        center = float(p.get("center", 0.0))
        width = float(p.get("width", 1.0))
        return np.exp(-((t - center) ** 2) / (2 * width**2))


@dataclass(frozen=True)
class Control:
    """One control term: operator index, scalar coefficient, profile."""

    index: int
    coefficient: float
    profile: TestFunction


@dataclass(frozen=True)
class PreparationSchedule:
    T: float
    t0: float
    zeta_t0: MacrostateParams
    gamma_T: np.ndarray | None = None
    gamma_density: tuple = ()
    gamma_current: tuple = ()
    quadrature_step: float | None = None

    def __post_init__(self):
        if not self.T <= self.t0:
            raise InvariantError("schedule needs T <= t0")
        if self.zeta_t0 is None:
            raise InvariantError("schedule must carry zeta_t0 (suitable preparation)")
        k = self.zeta_t0.zeta.size
        g = np.zeros(k) if self.gamma_T is None else np.asarray(self.gamma_T, dtype=float).reshape(-1)
        if g.size != k:
            raise InvariantError("gamma_T must match zeta_t0 in length")
        object.__setattr__(self, "gamma_T", g)
        object.__setattr__(self, "gamma_density", tuple(self.gamma_density))
        object.__setattr__(self, "gamma_current", tuple(self.gamma_current))
        if self.quadrature_step is not None and not self.quadrature_step > 0:
            raise InvariantError("quadrature_step must be positive")

    @property
    def step(self) -> float:
        return self.quadrature_step if self.quadrature_step is not None else (self.t0 - self.T) / 64

    def with_step(self, step: float) -> "PreparationSchedule":
        return PreparationSchedule(
            self.T, self.t0, self.zeta_t0, self.gamma_T, self.gamma_density, self.gamma_current, step
        )

    @property
    def has_history(self) -> bool:
        return bool(self.gamma_density or self.gamma_current or np.any(self.gamma_T))


def trapezoid_nodes(a: float, b: float, step: float):
    """Nodes and weights of the composite trapezoid rule on [a, b].

    The number of panels is ``ceil((b - a) / step)``; the panel width is
    shrunk to fit.  Empty arrays for ``a == b``.
    """
    if b <= a:
        return np.zeros(0), np.zeros(0)
    n = max(1, math.ceil((b - a) / step - 1e-9))
    t = np.linspace(a, b, n + 1)
    w = np.full(n + 1, (b - a) / n)
    w[0] = w[-1] = (b - a) / (2 * n)
    return t, w


class _Frame:
    """H eigensystem plus relevant operators rotated into it."""

    def __init__(self, rel: RelevantSet, h, eig: Eigensystem | None = None):
        self.rel = rel
        self.h = np.asarray(h, dtype=complex)
        if self.h.shape != (rel.dim, rel.dim):
            raise DimensionError("Hamiltonian and observables differ in dimension")
        self.eig = eig or Eigensystem.of(self.h)
        self.ops = np.array([self.eig.to_eigenbasis(a) for a in rel.ops])
        self.dots = np.array([self.eig.to_eigenbasis(a) for a in rel.dots])
        cur = [self.eig.to_eigenbasis(a) for a in rel.currents]
        self.currents = np.array(cur) if cur else np.zeros((0, rel.dim, rel.dim), dtype=complex)

    def combo(self, coeffs, which="ops"):
        return np.tensordot(np.asarray(coeffs, dtype=float), getattr(self, which), axes=1)

    def shift(self, a_eb, lag):
        """``a(-lag)`` in the eigenbasis."""
        return kernels.heisenberg_phase(a_eb, self.eig.energies, -lag)

    def back(self, a_eb):
        out = self.eig.from_eigenbasis(a_eb)
        return (out + out.conj().T) / 2


def control_nodes(sched: PreparationSchedule, frame: _Frame):
    """Quadrature nodes on [T, t0] and the unshifted integrand at each node.

    Returns ``(times, weights, ops)`` with ``ops[i]`` the eigenbasis operator
    ``sum_c g_c h_c(t_i) O_c`` (O_c a density or a current).
    """
    times, weights = trapezoid_nodes(sched.T, sched.t0, sched.step)
    d = frame.rel.dim
    ops = np.zeros((times.size, d, d), dtype=complex)
    for ctl in sched.gamma_density:
        if not 0 <= ctl.index < len(frame.rel):
            raise InvariantError(f"density control index {ctl.index} out of range")
        ops += ctl.coefficient * ctl.profile(times)[:, None, None] * frame.ops[ctl.index][None]
    for ctl in sched.gamma_current:
        if not 0 <= ctl.index < frame.currents.shape[0]:
            raise InvariantError(f"current control index {ctl.index} out of range")
        ops += ctl.coefficient * ctl.profile(times)[:, None, None] * frame.currents[ctl.index][None]
    return times, weights, ops


def _exponent_eb(sched: PreparationSchedule, frame: _Frame, t: float) -> np.ndarray:
    """Exponent at time ``t >= t0`` in the H eigenbasis, every term shifted by its own lag."""
    if sched.zeta_t0.zeta.size != len(frame.rel):
        raise DimensionError("zeta_t0 does not match the relevant observables")
    x = -frame.shift(frame.combo(sched.zeta_t0.zeta), t - sched.t0)
    if sched.gamma_density or sched.gamma_current:
        times, weights, ops = control_nodes(sched, frame)
        x = x + kernels.phase_accumulate(ops, frame.eig.energies, t - times, weights)
    if np.any(sched.gamma_T):
        x = x - frame.shift(frame.combo(sched.gamma_T), t - sched.T)
    return x


def preparation_exponent(sched: PreparationSchedule, rel: RelevantSet, h) -> np.ndarray:
    """Hermitian exponent ``X`` with ``rho_t0 = exp(X) / Tr exp(X)``."""
    frame = _Frame(rel, h)
    return frame.back(_exponent_eb(sched, frame, sched.t0))


def evolved_exponent(sched: PreparationSchedule, rel: RelevantSet, h, t: float) -> np.ndarray:
    """Exponent of ``rho_t`` with each term carried to time ``t`` by its own lag."""
    if t < sched.t0:
        raise InvariantError("t must not precede t0")
    frame = _Frame(rel, h)
    return frame.back(_exponent_eb(sched, frame, t))


def prepared_state(sched: PreparationSchedule, rel: RelevantSet, h) -> np.ndarray:
    return state_from_exponent(preparation_exponent(sched, rel, h)).state


def evolved_prepared_state(sched: PreparationSchedule, rel: RelevantSet, h, t: float) -> np.ndarray:
    """``rho_t`` for ``t >= t0``.

    Computed by unitary evolution of ``rho_t0`` and, independently, as the
    normalized exponential of the lag-shifted exponent; raises
    ``NumericalError`` if the two disagree beyond 1e-10 (Frobenius).
    """
    if t < sched.t0:
        raise InvariantError("t must not precede t0")
    frame = _Frame(rel, h)
    rho0 = state_from_exponent(frame.back(_exponent_eb(sched, frame, sched.t0))).state
    rho = unitary_evolve_state(rho0, frame.h, t - sched.t0, eig=frame.eig)
    other = state_from_exponent(frame.back(_exponent_eb(sched, frame, t))).state
    gap = frob(rho - other)
    if gap > ROUTE_AGREEMENT:
        raise NumericalError(f"evolution routes disagree by {gap:.3e} at t={t}")
    return rho


def rewriting_identity_residual(sched: PreparationSchedule, rel: RelevantSet, h, t: float, zeta_traj) -> float:
    """Frobenius gap between the two forms of the exponent at time ``t``.

    The first form carries ``zeta(t0) . A`` to time ``t`` by a Heisenberg
    shift; the second replaces it by

        zeta(t) . A - int_t0^t [zeta'(t') . A(-(t - t')) + zeta(t') . A'(-(t - t'))] dt'

    using the sampled trajectory ``zeta_traj`` (attributes ``times``,
    ``zeta``, ``zeta_dot``), whose grid must contain every trapezoid node
    on [t0, t] at ``sched.quadrature_step``.  Preparation terms are common
    to both forms.  The gap vanishes at second order in the step, provided
    ``zeta_traj`` starts at ``sched.zeta_t0``.
    """
    if t < sched.t0:
        raise InvariantError("t must not precede t0")
    frame = _Frame(rel, h)
    x4 = _exponent_eb(sched, frame, t)

    times, weights = trapezoid_nodes(sched.t0, t, sched.step)
    if times.size == 0:
        times = np.array([sched.t0])
        weights = np.zeros(1)
    idx = _lookup(zeta_traj.times, times)
    zeta = np.asarray(zeta_traj.zeta)[idx]
    zeta_dot = np.asarray(zeta_traj.zeta_dot)[idx]
    zeta_t = zeta[-1]

    x6 = -frame.combo(zeta_t)
    nodes = np.tensordot(zeta_dot, frame.ops, axes=1) + np.tensordot(zeta, frame.dots, axes=1)
    x6 = x6 + kernels.phase_accumulate(nodes, frame.eig.energies, t - times, weights)
    # preparation terms are identical in both forms
    x6 = x6 + (x4 + frame.shift(frame.combo(sched.zeta_t0.zeta), t - sched.t0))
    return frob(x4 - x6)


def _lookup(grid, times, tol=1e-9):
    grid = np.asarray(grid, dtype=float)
    idx = np.searchsorted(grid, times - tol)
    idx = np.clip(idx, 0, grid.size - 1)
    scale = max(1.0, float(np.max(np.abs(grid))))
    if np.any(np.abs(grid[idx] - times) > tol * scale):
        raise InvariantError("trajectory grid does not cover the quadrature nodes")
    return idx
