"""Macrostate trajectories: exact projection and first-order memory equations.

Two routes produce ``zeta(t)``:

* ``exact_macrostate_trajectory`` evolves the full density operator and
  projects onto the Gibbs family at each grid time (the oracle).
* ``integrate_zeta`` integrates the first-order cumulant equations

      -sum_l <a_j, A_l> zeta_l' = Tr(a_j' w) + int <a_j', S(t')> dt'
                                  - <a_j', gamma(T) . A(-(t - T))>

  for every driven operator ``a_j`` (``a_j' = i[H, a_j]``), with the rows of
  constants of motion replaced by ``sum_l <c, A_l> zeta_l' = 0``.  The memory
  operator ``S(t')`` is ``zeta'(t') . A(-(t - t')) + zeta(t') . A'(-(t - t'))``
  on the dynamical interval and the control integrand on the preparation
  interval.  All Kubo brackets are taken in ``w_zeta(t)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import DimensionError, InvariantError, NumericalError, SingularMatrixError
from .gibbs import GibbsState, MacrostateParams, entropy, gibbs_state, kubo_covariance, kubo_inner
from .hilbert import Eigensystem, ObservableSet, RelevantSet, unitary_evolve_state
from .maxent import InversionSettings, invert_macrostate, project_macrostate
from .preparation import PreparationSchedule, _Frame, control_nodes
from .semigroup import decompose

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# modes


@dataclass(frozen=True)
class ModeBasis:
    """Real orthonormal functions over lattice sites, ``u[n, site]``.

    ``kind="fourier"`` pairs the +-k plane waves into cosine/sine rows (plus
    the alternating row for even L); ``kind="cosine"`` is the DCT-II set
    natural for open chains.  Row 0 is always constant.
    """

    functions: np.ndarray
    kind: str = "fourier"

    @classmethod
    def build(cls, num_sites: int, n_max: int | None = None, kind: str = "fourier") -> "ModeBasis":
        L = num_sites
        x = np.arange(L)
        rows = [np.full(L, 1 / np.sqrt(L))]
        if kind == "fourier":
            for k in range(1, (L - 1) // 2 + 1):
                rows.append(np.sqrt(2 / L) * np.cos(2 * np.pi * k * x / L))
                rows.append(np.sqrt(2 / L) * np.sin(2 * np.pi * k * x / L))
            if L % 2 == 0 and L > 1:
                rows.append((-1.0) ** x / np.sqrt(L))
        elif kind == "cosine":
            for n in range(1, L):
                rows.append(np.sqrt(2 / L) * np.cos(np.pi * n * (x + 0.5) / L))
        else:
            raise InvariantError(f"unknown mode basis kind {kind!r}")
        u = np.array(rows)
        if n_max is not None:
            if n_max < 0:
                raise InvariantError("n_max must be non-negative")
            u = u[: n_max + 1]
        return cls(u, kind)

    @property
    def n_max(self) -> int:
        return self.functions.shape[0] - 1

    @property
    def num_sites(self) -> int:
        return self.functions.shape[1]


def mode_transform(obs: ObservableSet | Sequence, basis: ModeBasis) -> list[np.ndarray]:
    """``a_n = sum_site u_n(site) A(site)`` for n = 0 .. n_max."""
    dens = obs.observables if isinstance(obs, ObservableSet) else list(obs)
    if len(dens) != basis.num_sites:
        raise DimensionError(f"basis has {basis.num_sites} sites, observables {len(dens)}")
    stack = np.array(dens, dtype=complex)
    return [np.tensordot(u, stack, axes=1) for u in basis.functions]


def mode_relevant_set(obs: ObservableSet, basis: ModeBasis, include_h: bool = True, include_h2: bool | None = None) -> RelevantSet:
    """Relevant set of modes ``a_0 .. a_N`` plus H (and H^2) when independent."""
    modes = mode_transform(obs, basis)
    return extend_relevant(obs, modes, [f"a[{n}]" for n in range(len(modes))], include_h, include_h2)


def site_relevant_set(obs: ObservableSet, sites, include_h: bool = True, include_h2: bool | None = None) -> RelevantSet:
    """Relevant set of selected site densities plus independent conserved operators."""
    sites = list(sites)
    return extend_relevant(obs, [obs.observables[s] for s in sites], [obs.labels[s] for s in sites], include_h, include_h2)


def extend_relevant(obs: ObservableSet, ops, labels, include_h=True, include_h2=None) -> RelevantSet:
    """Append the conserved operators of ``obs`` that lie outside span{1, ops}."""
    ops = [np.asarray(a, dtype=complex) for a in ops]
    labels = list(labels)
    vecs = [np.eye(obs.dim).ravel()] + [m.ravel() for m in ops]
    for c, lab in zip(obs.conserved[1:], obs.conserved_labels[1:]):
        if lab == "H" and not include_h:
            continue
        if lab == "H^2" and include_h2 is False:
            continue
        m = np.array(vecs).T
        coef, *_ = np.linalg.lstsq(m, c.ravel(), rcond=None)
        if np.linalg.norm(m @ coef - c.ravel()) <= 1e-9 * max(np.linalg.norm(c), 1e-300):
            continue
        ops.append(c)
        labels.append(lab)
        vecs.append(c.ravel())
    return RelevantSet.build(ops, labels, obs.hamiltonian, obs.currents)


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    """Time series of a macrostate on a uniform grid."""

    times: np.ndarray
    zeta: np.ndarray
    zeta0: np.ndarray
    expectations: np.ndarray
    entropy: np.ndarray
    labels: tuple
    zeta_dot: np.ndarray | None = None
    kubo_min_eig: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.size > 1:
            d = np.diff(self.times)
            if np.any(d <= 0):
                raise InvariantError("trajectory times must increase")
            if np.max(np.abs(d - d[0])) > 1e-9 * max(1.0, abs(d[0])):
                raise InvariantError("trajectory times must be uniformly spaced")
        if not np.all(np.isfinite(self.entropy)):
            raise InvariantError("trajectory entropy must be finite")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    def params(self, i: int) -> MacrostateParams:
        return MacrostateParams(float(self.zeta0[i]), self.zeta[i])


def central_difference(values, dt: float) -> np.ndarray:
    """Second-order derivative along axis 0 (one-sided three-point at the ends)."""
    v = np.asarray(values, dtype=float)
    if v.shape[0] < 3:
        raise InvariantError("need at least three samples")
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2 * dt)
    out[0] = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * dt)
    out[-1] = (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * dt)
    return out


def exact_macrostate_trajectory(
    rho0,
    rel: RelevantSet,
    h,
    t_grid,
    settings: InversionSettings | None = None,
    init: MacrostateParams | None = None,
) -> Trajectory:
    """Evolve ``rho0`` exactly and project onto the Gibbs family at each time.

    Projections are warm-started from the previous multipliers.  ``zeta_dot``
    is filled by finite differences when the grid has three or more points.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    eig = Eigensystem.of(h)
    ops = list(rel.ops)
    zetas, zeta0s, means, ents = [], [], [], []
    prev = init
    for t in t_grid:
        rho = unitary_evolve_state(rho0, h, t - t_grid[0], eig=eig)
        try:
            g = project_macrostate(rho, ops, init=prev, settings=settings)
        except NumericalError as exc:
            err = NumericalError(f"projection failed at t={t:.6g}: {exc}")
            err.time = float(t)
            raise err from exc
        prev = g.params
        zetas.append(g.params.zeta)
        zeta0s.append(g.params.zeta0)
        means.append([g.mean(a) for a in ops])
        ents.append(entropy(g))
    zeta = np.array(zetas)
    traj = Trajectory(
        times=t_grid,
        zeta=zeta,
        zeta0=np.array(zeta0s),
        expectations=np.array(means),
        entropy=np.array(ents),
        labels=tuple(rel.labels),
    )
    if t_grid.size >= 3:
        traj.zeta_dot = central_difference(zeta, traj.dt)
    return traj


# ---------------------------------------------------------------------------
# memory equations


@dataclass(frozen=True)
class MemorySettings:
    """Integrator settings.

    ``quadrature`` selects the history rule: ``"gregory"`` (fourth-order
    end-corrected trapezoid, default) or ``"trapezoid"``.
    """

    tau: float
    dt: float
    truncate_history: bool = False
    order: int = 1
    quadrature: str = "gregory"
    max_step_change: float = 1.0

    def __post_init__(self):
        if not (0 < self.dt <= self.tau):
            raise InvariantError("MemorySettings needs 0 < dt <= tau")
        if self.order != 1:
            raise InvariantError("only the first cumulant order is implemented")
        if self.quadrature not in ("gregory", "trapezoid"):
            raise InvariantError(f"unknown quadrature {self.quadrature!r}")


_GREGORY_END = np.array([3 / 8, 7 / 6, 23 / 24])
_NEWTON_COTES = {
    1: [1 / 2, 1 / 2],
    2: [1 / 3, 4 / 3, 1 / 3],
    3: [3 / 8, 9 / 8, 9 / 8, 3 / 8],
    4: [1 / 3, 4 / 3, 2 / 3, 4 / 3, 1 / 3],
}


def uniform_weights(m: int, rule: str = "gregory") -> np.ndarray:
    """Unit-spacing weights for ``m`` panels (``m + 1`` nodes)."""
    if m <= 0:
        return np.zeros(max(m + 1, 1))
    if rule == "trapezoid" or m == 1:
        w = np.ones(m + 1)
        w[0] = w[-1] = 0.5
        return w
    if m in _NEWTON_COTES:
        return np.array(_NEWTON_COTES[m])
    w = np.ones(m + 1)
    w[:3] = _GREGORY_END
    w[-3:] = _GREGORY_END[::-1]
    return w


def history_weights(grid, a: float, b: float, rule: str = "gregory"):
    """Weights for ``int_a^b f`` from samples on a uniform ``grid`` plus ``f(b)``.

    ``grid`` holds the known sample times (uniform spacing ``h``) and
    ``b - grid[-1]`` lies in ``[0, h]``.  If ``b`` is one spacing past the
    last sample it joins the uniform block; otherwise the gap
    ``[grid[-1], b]`` is a trapezoid panel.  A start ``a`` between samples
    is handled with linear interpolation.  Returns ``(w_grid, w_b)``.
    """
    grid = np.asarray(grid, dtype=float)
    n = grid.size
    w = np.zeros(n)
    if b <= a or n == 0:
        if n == 0 and b > a:
            raise InvariantError("history grid is empty")
        return w, 0.0
    h = grid[1] - grid[0] if n > 1 else b - grid[0]
    eps = 1e-9 * max(h, 1e-300)
    if b - grid[-1] < -eps or b - grid[-1] > h + eps or a < grid[0] - eps:
        raise InvariantError("history grid does not cover the integration interval")

    aligned_end = abs(b - grid[-1] - h) <= eps
    nodes = np.append(grid, b) if aligned_end else grid
    i0 = int(np.searchsorted(nodes, a - eps))
    wb = 0.0
    full = np.zeros(nodes.size)
    m = nodes.size - 1 - i0
    if m > 0:
        full[i0:] += h * uniform_weights(m, rule)
    if nodes[i0] - a > eps:
        theta = (nodes[i0] - a) / h
        half = theta * h / 2
        full[i0] += half * (2 - theta)
        full[i0 - 1] += half * theta
    if aligned_end:
        wb = full[-1]
        w = full[:-1]
    else:
        w = full
        gap = b - grid[-1]
        if gap > eps:
            w[-1] += gap / 2
            wb = gap / 2
    return w, wb


class MemoryIntegrator:
    """Shared state for ``zeta_dot_solve`` and ``integrate_zeta``.

    Operators are held in the Hamiltonian eigenbasis; Gibbs states are
    built there too, so Kubo brackets never leave it.
    """

    def __init__(self, rel: RelevantSet, h, mem: MemorySettings, sched: PreparationSchedule | None = None):
        self.rel = rel
        self.mem = mem
        self.sched = sched
        self.frame = _Frame(rel, h)
        self.energies = self.frame.eig.energies
        self.ops = list(self.frame.ops)
        self.dots = list(self.frame.dots)
        self.driven = rel.driven
        self.cons = [j for j, c in enumerate(rel.conserved) if c]
        if sched is not None:
            if sched.zeta_t0.zeta.size != len(rel):
                raise DimensionError("schedule multipliers do not match the relevant set")
            self.t0 = sched.t0
            self.T = sched.T
            self.prep_times, self.prep_weights, self.prep_ops = control_nodes(sched, self.frame)
            self.gamma_T = sched.gamma_T
        else:
            self.t0 = self.T = None
            self.prep_times = np.zeros(0)
            self.prep_weights = np.zeros(0)
            self.prep_ops = np.zeros((0, rel.dim, rel.dim), dtype=complex)
            self.gamma_T = np.zeros(len(rel))
        self.reset()

    def reset(self):
        self.hist_t: list[float] = []
        self.hist_zeta: list[np.ndarray] = []
        self.hist_zeta_dot: list[np.ndarray] = []
        self.hist_nodes: list[np.ndarray] = []

    def push(self, t, zeta, zeta_dot):
        zeta = np.asarray(zeta, dtype=float)
        zeta_dot = np.asarray(zeta_dot, dtype=float)
        self.hist_t.append(float(t))
        self.hist_zeta.append(zeta)
        self.hist_zeta_dot.append(zeta_dot)
        self.hist_nodes.append(self._node(zeta, zeta_dot))

    def _node(self, zeta, zeta_dot):
        return np.tensordot(zeta_dot, self.frame.ops, axes=1) + np.tensordot(zeta, self.frame.dots, axes=1)

    def window_start(self, t):
        if self.mem.truncate_history:
            return t - self.mem.tau
        return self.T if self.T is not None else self.t0

    def gibbs(self, zeta) -> GibbsState:
        return gibbs_state(self.ops, zeta)

    def solve(self, t: float, zeta) -> tuple[np.ndarray, GibbsState, float]:
        """``zeta'(t)`` given ``zeta(t)`` and the stored history before ``t``.

        Returns ``(zeta_dot, gibbs_state, min_eig_driven_kubo)``.
        """
        zeta = np.asarray(zeta, dtype=float)
        g = self.gibbs(zeta)
        k = len(self.ops)
        a = self.window_start(t)
        start = self.t0 if self.t0 is not None else (self.hist_t[0] if self.hist_t else t)

        hist = np.zeros((self.rel.dim, self.rel.dim), dtype=complex)
        wb = 0.0
        dyn_a = max(a, start)
        if t > dyn_a:
            if not self.hist_t:
                raise InvariantError("missing history before t")
            w_grid, wb = history_weights(self.hist_t, dyn_a, t, self.mem.quadrature)
            sel = np.nonzero(w_grid)[0]
            if sel.size:
                nodes = np.array([self.hist_nodes[i] for i in sel])
                lags = t - np.asarray(self.hist_t)[sel]
                hist = hist + kernels.phase_accumulate(nodes, self.energies, lags, w_grid[sel])
        # preparation branch on [T, t0]
        if self.prep_times.size and a < start:
            pw = self._prep_weights(a)
            sel = np.nonzero(pw)[0]
            if sel.size:
                hist = hist + kernels.phase_accumulate(self.prep_ops[sel], self.energies, t - self.prep_times[sel], pw[sel])
        boundary = None
        if not self.mem.truncate_history and np.any(self.gamma_T):
            boundary = self.frame.shift(self.frame.combo(self.gamma_T), t - self.T)

        driven_dots = [self.dots[j] for j in self.driven]
        rhs_ops = list(self.ops) + [hist, self.frame.combo(zeta, "dots")]
        if boundary is not None:
            rhs_ops.append(boundary)
        brackets = kubo_covariance(driven_dots, g, others=rhs_ops) if driven_dots else np.zeros((0, len(rhs_ops)))
        kmat = kubo_covariance(self.ops, g)

        q = brackets[:, :k]
        drift = np.array([g.mean(d) for d in driven_dots])
        rhs_driven = drift + brackets[:, k] + wb * brackets[:, k + 1]
        if boundary is not None:
            rhs_driven = rhs_driven - brackets[:, k + 2]

        lhs = np.zeros((k, k))
        rhs = np.zeros(k)
        lhs[self.cons] = kmat[self.cons]
        lhs[self.driven] = -kmat[self.driven] - wb * q
        rhs[self.driven] = rhs_driven
        try:
            zeta_dot = np.linalg.solve(lhs, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularMatrixError(f"degenerate macrostate at t={t:.6g}") from exc
        if self.driven:
            kd = kmat[np.ix_(self.driven, self.driven)]
            min_eig = float(np.linalg.eigvalsh(kd).min())
        else:
            min_eig = float("nan")
        return zeta_dot, g, min_eig

    def _prep_weights(self, a):
        if a <= self.T:
            return self.prep_weights
        # clip the trapezoid rule to [a, t0]
        times = self.prep_times
        w = np.zeros(times.size)
        inside = times >= a
        if inside.sum() < 2:
            return w
        idx = np.nonzero(inside)[0]
        h = times[1] - times[0]
        w[idx] = h
        w[idx[0]] = w[idx[-1]] = h / 2
        gap = times[idx[0]] - a
        if gap > 1e-12 and idx[0] > 0:
            theta = gap / h
            w[idx[0]] += gap / 2 * (2 - theta)
            w[idx[0] - 1] += gap / 2 * theta
        return w


def zeta_dot_solve(t: float, traj: Trajectory, sched: PreparationSchedule | None, rel: RelevantSet, h, mem: MemorySettings) -> np.ndarray:
    """``zeta'(t)`` from the memory equations, using ``traj`` as stored history.

    ``traj`` must contain ``t`` on its grid with ``zeta_dot`` filled for all
    earlier grid times; ``zeta(t)`` is read from it.
    """
    times = np.asarray(traj.times)
    i = int(np.argmin(np.abs(times - t)))
    if abs(times[i] - t) > 1e-9 * max(1.0, abs(t)):
        raise InvariantError("t is not on the trajectory grid")
    if i > 0 and traj.zeta_dot is None:
        raise InvariantError("missing history: trajectory has no zeta_dot")
    integ = MemoryIntegrator(rel, h, mem, sched)
    if integ.t0 is None:
        integ.t0 = float(times[0])
    for j in range(i):
        integ.push(times[j], traj.zeta[j], traj.zeta_dot[j])
    zeta_dot, _, _ = integ.solve(float(times[i]), traj.zeta[i])
    return zeta_dot


def integrate_zeta(
    zeta0: MacrostateParams,
    sched: PreparationSchedule | None,
    rel: RelevantSet,
    h,
    mem: MemorySettings,
    t_end: float,
    t_start: float | None = None,
) -> Trajectory:
    """Fixed-step RK4 for the memory equations from ``t0`` to ``t_end``.

    Every stage re-evaluates the history integral up to the stage time; the
    unknown ``zeta'`` at that time enters the trapezoid end panel and is
    solved for jointly.  ``zeta'`` at grid times (the first stage of each
    step) is stored for later history integrals.
    """
    t0 = sched.t0 if sched is not None else (0.0 if t_start is None else float(t_start))
    if not t_end > t0:
        raise InvariantError("t_end must exceed t0")
    n = int(round((t_end - t0) / mem.dt))
    if n < 1 or abs(t0 + n * mem.dt - t_end) > 1e-9 * max(1.0, abs(t_end)):
        raise InvariantError("t_end - t0 must be a multiple of dt")
    dt = mem.dt
    integ = MemoryIntegrator(rel, h, mem, sched)
    integ.t0 = t0
    if sched is None:
        integ.T = t0

    y = np.asarray(zeta0.zeta, dtype=float)
    times = t0 + dt * np.arange(n + 1)
    zetas, zeta0s, zdots, means, ents, mins = [], [], [], [], [], []

    def record(zeta, zdot, g, kmin):
        zetas.append(zeta.copy())
        zeta0s.append(g.params.zeta0)
        zdots.append(zdot)
        means.append([g.mean(a) for a in integ.ops])
        ents.append(entropy(g))
        mins.append(kmin)

    for step in range(n + 1):
        t = times[step]
        try:
            k1, g, kmin = integ.solve(t, y)
            record(y, k1, g, kmin)
            if step == n:
                break
            _check_step(k1, dt, mem, t)
            integ.push(t, y, k1)
            k2, _, _ = integ.solve(t + dt / 2, y + dt / 2 * k1)
            k3, _, _ = integ.solve(t + dt / 2, y + dt / 2 * k2)
            k4, _, _ = integ.solve(t + dt, y + dt * k3)
        except NumericalError as exc:
            if getattr(exc, "time", None) is None:
                exc.time = float(t)
            raise
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            err = NumericalError(f"multipliers became non-finite after t={t:.6g}")
            err.time = float(t)
            raise err

    return Trajectory(
        times=times,
        zeta=np.array(zetas),
        zeta0=np.array(zeta0s),
        expectations=np.array(means),
        entropy=np.array(ents),
        labels=tuple(rel.labels),
        zeta_dot=np.array(zdots),
        kubo_min_eig=np.array(mins),
    )


def _check_step(zeta_dot, dt, mem, t):
    change = float(np.linalg.norm(zeta_dot)) * dt
    if change > mem.max_step_change:
        raise NumericalError(f"step rejected at t={t:.6g}: |zeta'| dt = {change:.3g} exceeds {mem.max_step_change:g}")


# ---------------------------------------------------------------------------
# memory kernel operator (diagnostic form)


def memory_kernel_term(
    t: float,
    t_prime: float,
    sched: PreparationSchedule,
    traj: Trajectory,
    rel: RelevantSet,
    h,
) -> np.ndarray:
    """The operator ``S(t')`` carried to time ``t``.

    On ``[T, t0]``: ``sum_c g_c h_c(t') O_c(-(t - t'))`` for the controls.
    On ``[t0, t]``: ``zeta'(t') . A(-(t - t')) + zeta(t') . A'(-(t - t'))``
    with ``zeta``, ``zeta'`` read from ``traj`` at ``t'`` (linear
    interpolation between grid points).
    """
    if not (sched.T - 1e-12 <= t_prime <= t + 1e-12):
        raise InvariantError("t_prime must lie in [T, t]")
    frame = _Frame(rel, h)
    lag = t - t_prime
    if t_prime < sched.t0:
        d = rel.dim
        op = np.zeros((d, d), dtype=complex)
        for ctl in sched.gamma_density:
            op += ctl.coefficient * float(ctl.profile(t_prime)) * frame.ops[ctl.index]
        for ctl in sched.gamma_current:
            op += ctl.coefficient * float(ctl.profile(t_prime)) * frame.currents[ctl.index]
        return frame.back(frame.shift(op, lag))
    if traj is None or traj.zeta_dot is None:
        raise InvariantError("trajectory with zeta_dot needed on the dynamical interval")
    zeta = np.array([np.interp(t_prime, traj.times, traj.zeta[:, j]) for j in range(traj.zeta.shape[1])])
    zdot = np.array([np.interp(t_prime, traj.times, traj.zeta_dot[:, j]) for j in range(traj.zeta.shape[1])])
    op = frame.combo(zdot) + frame.combo(zeta, "dots")
    return frame.back(frame.shift(op, lag))


# ---------------------------------------------------------------------------
# entropy and timescales


@dataclass
class EntropyReport:
    times: np.ndarray
    steps: np.ndarray
    negative_steps: int
    equilibrium_entropy: float | None
    equilibrium_gap: np.ndarray | None
    tolerance: float = 1e-8

    @property
    def monotone(self) -> bool:
        return self.negative_steps == 0


def entropy_report(traj: Trajectory, tau: float, rel: RelevantSet | None = None, tol: float = 1e-8) -> EntropyReport:
    """Stepwise entropy changes ``S(t) - S(t - tau)`` and the equilibrium gap.

    ``tau`` is rounded to a whole number of grid steps.  With ``rel`` the
    equilibrium entropy is that of the Gibbs state of the conserved
    operators alone, matched to their (constant) expectations.
    """
    dt = traj.dt
    lag = max(1, int(round(tau / dt))) if dt > 0 else 0
    if lag == 0 or traj.times.size <= lag:
        steps = np.zeros(0)
        times = np.zeros(0)
    else:
        steps = traj.entropy[lag:] - traj.entropy[:-lag]
        times = traj.times[lag:]
    negative = int(np.sum(steps < -tol))
    s_eq = gap = None
    if rel is not None:
        cons = [j for j, c in enumerate(rel.conserved) if c]
        if cons:
            ops = [rel.ops[j] for j in cons]
            targets = traj.expectations[0, cons]
            s_eq = entropy(invert_macrostate(ops, targets))
        else:
            s_eq = float(np.log(rel.dim))
        gap = s_eq - traj.entropy
    return EntropyReport(times, steps, negative, s_eq, gap, tol)


@dataclass
class TauEstimate:
    """Result of the decay-time estimator.

    ``tau`` is the largest first 1/e crossing over driven modes (``None``
    if some mode never crosses), ``recurrence`` the earliest return above
    1/e after a crossing.  ``certified`` is False when ``tau`` is missing or
    not below the recurrence time.
    """

    times: np.ndarray
    correlations: dict
    crossings: dict
    recurrences: dict
    tau: float | None
    recurrence: float | None
    certified: bool
    note: str = ""


def normalized_autocorrelation(a_perp, g: GibbsState, eig: Eigensystem, times) -> np.ndarray:
    """``<a, a(-s)> / <a, a>`` in ``g`` for each ``s`` in ``times``."""
    a = np.asarray(a_perp, dtype=complex)
    norm = kubo_inner(a, a, g)
    if norm <= 1e-14:
        return np.ones(len(times))
    a_eb = eig.to_eigenbasis(a)
    out = []
    for s in times:
        shifted = eig.from_eigenbasis(kernels.heisenberg_phase(a_eb, eig.energies, -s))
        out.append(kubo_inner(a, shifted, g) / norm)
    return np.array(out)


def estimate_tau(rel: RelevantSet, h, g_eq: GibbsState, times) -> TauEstimate:
    """Decay time of the driven modes' normalized Kubo autocorrelations."""
    times = np.asarray(times, dtype=float)
    eig = Eigensystem.of(h)
    driven = rel.driven
    threshold = np.exp(-1.0)
    corr, cross, recur = {}, {}, {}
    if not driven:
        return TauEstimate(times, corr, cross, recur, None, None, False, "no driven modes")
    cons = [rel.ops[j] for j, c in enumerate(rel.conserved) if c]
    dec = decompose([rel.ops[j] for j in driven], cons, g_eq)
    for j, a_perp in zip(driven, dec.orthogonal):
        label = rel.labels[j]
        c = normalized_autocorrelation(a_perp, g_eq, eig, times)
        corr[label] = c
        below = np.nonzero(c < threshold)[0]
        if below.size == 0:
            cross[label] = None
            recur[label] = None
            continue
        i = below[0]
        cross[label] = _interp_crossing(times, c, i, threshold)
        back = np.nonzero(c[i:] >= threshold)[0]
        recur[label] = float(times[i + back[0]]) if back.size else None
    crossings = list(cross.values())
    tau = None if any(x is None for x in crossings) else max(crossings)
    recs = [r for r in recur.values() if r is not None]
    recurrence = min(recs) if recs else None
    certified = tau is not None and (recurrence is None or tau < recurrence)
    note = ""
    if tau is None:
        note = "no 1/e crossing within the time window for at least one mode"
    elif not certified:
        note = "1/e crossing lies beyond the first recurrence"
    return TauEstimate(times, corr, cross, recur, tau, recurrence, certified, note)


def _interp_crossing(times, c, i, level):
    if i == 0:
        return float(times[0])
    t0, t1 = times[i - 1], times[i]
    c0, c1 = c[i - 1], c[i]
    return float(t0 + (c0 - level) * (t1 - t0) / (c0 - c1))


def equilibrium_state(rel: RelevantSet, rho, settings: InversionSettings | None = None) -> GibbsState:
    """Gibbs state of the conserved operators of ``rel`` matched to ``rho``."""
    cons = [rel.ops[j] for j, c in enumerate(rel.conserved) if c]
    if not cons:
        d = rel.dim
        return gibbs_state([np.eye(d)], [0.0])
    return project_macrostate(rho, cons, settings=settings)
