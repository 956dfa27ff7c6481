"""Operator algebra, lattice models and exact unitary evolution.

Operators are plain complex ``numpy`` arrays.  ``check_hermitian`` and
``check_density`` enforce the invariants at the boundaries where user data
enters; internal code trusts its own outputs.

Units: hbar = 1, k_B = 1.  Site densities of a 1-D lattice stand in for the
continuum density fields, so integrals over configuration space become site
sums and the divergence of a current becomes a difference of bond currents.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from . import kernels
from .errors import DimensionError, InvariantError

DEFAULT_DIM_CAP = 4096
HERMITIAN_TOL = 1e-12
DENSITY_EIG_TOL = 1e-10
DENSITY_TRACE_TOL = 1e-10
COMMUTE_TOL = 1e-10
GRAM_COND_MAX = 1e10

SX = np.array([[0, 1], [1, 0]], dtype=complex) / 2
SY = np.array([[0, -1j], [1j, 0]], dtype=complex) / 2
SZ = np.array([[1, 0], [0, -1]], dtype=complex) / 2


class ModelKind(str, enum.Enum):
    XXZ_CHAIN = "xxz_chain"
    TRANSVERSE_ISING_CHAIN = "transverse_ising_chain"
    CUSTOM_MATRICES = "custom_matrices"


@dataclass(frozen=True)
class ModelSpec:
    """Description of a lattice model.

    ``couplings`` keys by kind:

    * ``xxz_chain``: ``J`` (exchange, default 1), ``delta`` (anisotropy,
      default 1), ``field`` (uniform z field, default 0), ``fields``
      (per-site z fields, optional list).
    * ``transverse_ising_chain``: ``J`` (ZZ coupling, default 1), ``g``
      (transverse field, default 1), ``hz`` (longitudinal field, default 0).
    * ``custom_matrices``: ``hamiltonian`` (d x d) and ``densities`` (list
      of d x d); optional ``currents`` (list, one per bond) and
      ``conserved`` (list).  Missing currents are derived from continuity.
    """

    model_kind: ModelKind | str
    num_sites: int
    couplings: dict = field(default_factory=dict)
    local_dim: int = 2
    periodic: bool = False
    dim_cap: int = DEFAULT_DIM_CAP
    include_h2: bool = False

    @property
    def kind(self) -> ModelKind:
        return ModelKind(self.model_kind)

    @property
    def dim(self) -> int:
        return self.local_dim ** self.num_sites


@dataclass(frozen=True)
class ObservableSet:
    """Relevant observables of a model.

    ``observables`` are the site densities of one conserved field,
    ``conserved`` always starts with the identity and the Hamiltonian,
    ``currents[b]`` is the current on bond ``b`` (from site ``b`` to
    ``b + 1``, cyclically for periodic chains).
    """

    observables: tuple
    conserved: tuple
    currents: tuple
    labels: tuple
    conserved_labels: tuple
    periodic: bool = False

    @property
    def num_sites(self) -> int:
        return len(self.observables)

    @property
    def dim(self) -> int:
        return self.observables[0].shape[0]

    def divergence(self, site: int) -> np.ndarray:
        """Discrete divergence of the current at ``site``: J_site - J_(site-1)."""
        n = self.num_sites
        out = np.zeros((self.dim, self.dim), dtype=complex)
        if site < len(self.currents):
            out += self.currents[site]
        left = site - 1
        if left < 0 and self.periodic:
            left = n - 1
        if 0 <= left < len(self.currents):
            out -= self.currents[left]
        return out

    @property
    def hamiltonian(self) -> np.ndarray:
        return self.conserved[1]

    def relevant(self, include_h2: bool = True) -> "RelevantSet":
        """Site densities plus conserved operators outside their span.

        The identity and any conserved operator linearly dependent on the
        densities (e.g. the total magnetization) are dropped, so the
        returned operators together with the identity are linearly
        independent.
        """
        ops = list(self.observables)
        labels = list(self.labels)
        basis = [np.eye(self.dim).ravel()] + [o.ravel() for o in ops]
        for c, lab in zip(self.conserved, self.conserved_labels):
            if lab == "H^2" and not include_h2:
                continue
            if _in_span(basis, c.ravel()):
                continue
            ops.append(c)
            labels.append(lab)
            basis.append(c.ravel())
        return RelevantSet.build(ops, labels, self.hamiltonian, self.currents)


@dataclass(frozen=True)
class RelevantSet:
    """Operators paired one-to-one with the multipliers zeta.

    ``dots[j] = i[H, ops[j]]``; ``conserved[j]`` flags constants of motion.
    ``currents`` are the bond currents available to preparation controls.
    """

    ops: tuple
    labels: tuple
    conserved: tuple
    dots: tuple
    currents: tuple = ()

    @classmethod
    def build(cls, ops, labels, h, currents=()) -> "RelevantSet":
        ops = tuple(np.asarray(a, dtype=complex) for a in ops)
        dots = tuple(heisenberg_dot(a, h) for a in ops)
        hn = frob(h)
        conserved = tuple(
            bool(frob(d) <= COMMUTE_TOL * max(hn * frob(a), 1e-300)) for a, d in zip(ops, dots)
        )
        return cls(ops, tuple(labels), conserved, dots, tuple(currents))

    def __len__(self) -> int:
        return len(self.ops)

    @property
    def dim(self) -> int:
        return self.ops[0].shape[0]

    @property
    def driven(self) -> list[int]:
        return [j for j, c in enumerate(self.conserved) if not c]


def _in_span(vectors, v, rtol=1e-9):
    m = np.array(vectors).T
    coef, *_ = np.linalg.lstsq(m, v, rcond=None)
    return np.linalg.norm(m @ coef - v) <= rtol * max(np.linalg.norm(v), 1e-300)


# ---------------------------------------------------------------------------
# invariants


def frob(a) -> float:
    return float(np.linalg.norm(a))


def check_hermitian(a, name="operator") -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise DimensionError(f"{name} must be a non-empty square matrix, got shape {a.shape}")
    scale = max(np.max(np.abs(a)), 1e-300)
    if np.max(np.abs(a - a.conj().T)) > HERMITIAN_TOL * scale:
        raise InvariantError(f"{name} is not Hermitian")
    return a


def check_density(rho, name="rho") -> np.ndarray:
    rho = check_hermitian(rho, name)
    tr = np.trace(rho).real
    if abs(tr - 1.0) > DENSITY_TRACE_TOL:
        raise InvariantError(f"{name} has trace {tr!r}, expected 1")
    if np.linalg.eigvalsh(rho).min() < -DENSITY_EIG_TOL:
        raise InvariantError(f"{name} has a negative eigenvalue")
    return rho


def _same_dim(*ops):
    dims = {o.shape for o in ops}
    if len(dims) != 1:
        raise DimensionError(f"dimension mismatch: {sorted(dims)}")


# ---------------------------------------------------------------------------
# algebra


def commutator(a, b) -> np.ndarray:
    """``a b - b a``."""
    a = np.asarray(a)
    b = np.asarray(b)
    _same_dim(a, b)
    return a @ b - b @ a


def heisenberg_dot(a, h) -> np.ndarray:
    """Time derivative ``i [h, a]`` of ``a`` in the Heisenberg picture."""
    return 1j * commutator(h, a)


@dataclass(frozen=True)
class Eigensystem:
    """Cached eigendecomposition ``h = V diag(E) V^dagger``."""

    energies: np.ndarray
    vectors: np.ndarray

    @classmethod
    def of(cls, h) -> "Eigensystem":
        e, v = np.linalg.eigh(np.asarray(h, dtype=complex))
        return cls(e, v)

    @property
    def dim(self) -> int:
        return self.energies.shape[0]

    def to_eigenbasis(self, a) -> np.ndarray:
        return self.vectors.conj().T @ a @ self.vectors

    def from_eigenbasis(self, a) -> np.ndarray:
        return self.vectors @ a @ self.vectors.conj().T

    def evolve(self, a, t) -> np.ndarray:
        """``exp(+i h t) a exp(-i h t)``."""
        shifted = kernels.heisenberg_phase(self.to_eigenbasis(a), self.energies, t)
        return self.from_eigenbasis(shifted)

    def propagator(self, t) -> np.ndarray:
        """``exp(-i h t)``."""
        return (self.vectors * np.exp(-1j * self.energies * t)) @ self.vectors.conj().T


def heisenberg_evolve(a, h, t, eig: Eigensystem | None = None) -> np.ndarray:
    """Heisenberg-picture operator ``exp(+i h t) a exp(-i h t)``."""
    a = np.asarray(a, dtype=complex)
    h = np.asarray(h, dtype=complex)
    _same_dim(a, h)
    if t == 0:
        return a.copy()
    eig = eig or Eigensystem.of(h)
    out = eig.evolve(a, t)
    return (out + out.conj().T) / 2


def unitary_evolve_state(rho, h, dt, eig: Eigensystem | None = None) -> np.ndarray:
    """Schroedinger-picture state ``exp(-i h dt) rho exp(+i h dt)``."""
    rho = np.asarray(rho, dtype=complex)
    h = np.asarray(h, dtype=complex)
    _same_dim(rho, h)
    if dt == 0:
        return rho.copy()
    eig = eig or Eigensystem.of(h)
    out = eig.evolve(rho, -dt)
    return (out + out.conj().T) / 2


def expectation(a, rho) -> float:
    """``Tr(a rho)``; raises if the imaginary part exceeds 1e-10."""
    a = np.asarray(a)
    rho = np.asarray(rho)
    _same_dim(a, rho)
    val = np.einsum("ij,ji->", a, rho)
    if abs(val.imag) > 1e-10:
        raise InvariantError(f"expectation has imaginary part {val.imag:.3e}")
    return float(val.real)


def von_neumann_entropy(rho) -> float:
    p = np.linalg.eigvalsh(np.asarray(rho))
    p = p[p > 1e-300]
    return float(-np.sum(p * np.log(p)))


def continuity_residual(obs: ObservableSet, h) -> list[float]:
    """Per-site Frobenius norm of ``i[h, A_site] + div J_site``."""
    return [frob(heisenberg_dot(a, h) + obs.divergence(i)) for i, a in enumerate(obs.observables)]


# ---------------------------------------------------------------------------
# model construction


def site_operator(op, site, num_sites, local_dim=2) -> np.ndarray:
    eye = np.eye(local_dim, dtype=complex)
    factors = [op if k == site else eye for k in range(num_sites)]
    return reduce(np.kron, factors)


def _bonds(n, periodic):
    bonds = [(i, i + 1) for i in range(n - 1)]
    if periodic and n > 2:
        bonds.append((n - 1, 0))
    return bonds


def _xxz(spec: ModelSpec):
    n = spec.num_sites
    c = spec.couplings
    j = float(c.get("J", 1.0))
    delta = float(c.get("delta", 1.0))
    fields = c.get("fields")
    fields = [float(c.get("field", 0.0))] * n if fields is None else [float(f) for f in fields]
    if len(fields) != n:
        raise InvariantError(f"couplings.fields must have {n} entries")
    sx = [site_operator(SX, i, n) for i in range(n)]
    sy = [site_operator(SY, i, n) for i in range(n)]
    sz = [site_operator(SZ, i, n) for i in range(n)]
    d = 2 ** n
    h = np.zeros((d, d), dtype=complex)
    for f, z in zip(fields, sz):
        h += f * z
    currents = []
    for a, b in _bonds(n, spec.periodic):
        h += j * (sx[a] @ sx[b] + sy[a] @ sy[b] + delta * sz[a] @ sz[b])
        # magnetization current from a to b
        currents.append(j * (sx[a] @ sy[b] - sy[a] @ sx[b]))
    labels = [f"Sz[{i}]" for i in range(n)]
    total = sum(sz)
    return h, sz, currents, labels, [(total, "Sz_total")]


def _tfi(spec: ModelSpec):
    n = spec.num_sites
    c = spec.couplings
    j = float(c.get("J", 1.0))
    g = float(c.get("g", 1.0))
    hz = float(c.get("hz", 0.0))
    x = [2 * site_operator(SX, i, n) for i in range(n)]
    z = [2 * site_operator(SZ, i, n) for i in range(n)]
    d = 2 ** n
    dens = [-g * x[i] - hz * z[i] for i in range(n)]
    for a, b in _bonds(n, spec.periodic):
        bond = -j * z[a] @ z[b]
        dens[a] = dens[a] + bond / 2
        dens[b] = dens[b] + bond / 2
    h = sum(dens) if n else np.zeros((d, d), dtype=complex)
    labels = [f"e[{i}]" for i in range(n)]
    return h, dens, None, labels, []


def _custom(spec: ModelSpec):
    c = spec.couplings
    if "hamiltonian" not in c or "densities" not in c:
        raise InvariantError("custom_matrices needs 'hamiltonian' and 'densities'")
    h = check_hermitian(c["hamiltonian"], "hamiltonian")
    dens = [check_hermitian(a, f"densities[{i}]") for i, a in enumerate(c["densities"])]
    _same_dim(h, *dens)
    currents = c.get("currents")
    if currents is not None:
        currents = [check_hermitian(a, f"currents[{i}]") for i, a in enumerate(currents)]
    labels = [f"A[{i}]" for i in range(len(dens))]
    extra = [(check_hermitian(a, f"conserved[{i}]"), f"C[{i}]") for i, a in enumerate(c.get("conserved", []))]
    return h, dens, currents, labels, extra


def continuity_currents(densities, h) -> list[np.ndarray]:
    """Bond currents satisfying the discrete continuity equation exactly.

    ``J_b = -sum_{k <= b} i[h, A_k]`` for ``b = 0 .. n-2``; the sum of all
    densities must be conserved.  For local Hamiltonians each ``J_b`` is
    supported near bond ``b``.
    """
    dots = [heisenberg_dot(a, h) for a in densities]
    out = []
    acc = np.zeros_like(dots[0])
    for k in range(len(densities) - 1):
        acc = acc - dots[k]
        out.append(acc.copy())
    return out


def build_model(spec: ModelSpec) -> tuple[np.ndarray, ObservableSet]:
    """Build the Hamiltonian and the relevant observables of ``spec``."""
    try:
        kind = spec.kind
    except ValueError:
        raise InvariantError(f"unknown model kind {spec.model_kind!r}") from None
    if spec.num_sites < 1:
        raise InvariantError("num_sites must be positive")
    if kind is not ModelKind.CUSTOM_MATRICES and spec.dim > spec.dim_cap:
        raise DimensionError(f"Hilbert dimension {spec.dim} exceeds cap {spec.dim_cap}")

    builder = {
        ModelKind.XXZ_CHAIN: _xxz,
        ModelKind.TRANSVERSE_ISING_CHAIN: _tfi,
        ModelKind.CUSTOM_MATRICES: _custom,
    }[kind]
    h, dens, currents, labels, extra = builder(spec)
    if h.shape[0] > spec.dim_cap:
        raise DimensionError(f"Hilbert dimension {h.shape[0]} exceeds cap {spec.dim_cap}")
    periodic = spec.periodic and kind is not ModelKind.CUSTOM_MATRICES
    if currents is None:
        currents = continuity_currents(dens, h)
        periodic = False

    dim = h.shape[0]
    conserved = [np.eye(dim, dtype=complex), h]
    conserved_labels = ["1", "H"]
    if spec.include_h2:
        conserved.append(h @ h)
        conserved_labels.append("H^2")
    for op, lab in extra:
        conserved.append(op)
        conserved_labels.append(lab)

    obs = ObservableSet(
        observables=tuple(dens),
        conserved=tuple(conserved),
        currents=tuple(currents),
        labels=tuple(labels),
        conserved_labels=tuple(conserved_labels),
        periodic=periodic,
    )
    validate_observables(obs, h)
    return h, obs


def validate_observables(obs: ObservableSet, h, cond_max=GRAM_COND_MAX):
    """Check conservation of ``obs.conserved`` and independence of densities."""
    hn = frob(h)
    for c, lab in zip(obs.conserved, obs.conserved_labels):
        if frob(commutator(h, c)) > COMMUTE_TOL * max(hn * frob(c), 1e-300):
            raise InvariantError(f"conserved operator {lab} does not commute with H")
    vecs = np.array([a.ravel() for a in obs.observables])
    gram = np.real(vecs.conj() @ vecs.T)
    if np.linalg.cond(gram) > cond_max:
        raise InvariantError("observables are (nearly) linearly dependent")
