"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Every kernel exists twice: ``np_<name>`` (vectorized numpy) and
``nb_<name>`` (numba ``@njit``).  The public ``<name>`` binding picks one at
import time.  Set ``MACROSTATE_DISABLE_NUMBA=1`` to force the numpy path, e.g.
when numba is unavailable or to cross-check results.

All kernels work in an eigenbasis: operators are passed as dense complex
matrices already rotated into the eigenbasis of the relevant Hermitian
generator, together with its eigenvalues.
"""
from __future__ import annotations

import os

import numpy as np

#: below this eigenvalue gap the divided difference switches to its series
SERIES_GAP = 1e-8

_FLAG = os.environ.get("MACROSTATE_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG not in ("", "0", "false", "no")

try:  # pragma: no cover - exercised implicitly
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED
BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy implementations


def np_divided_difference_weights(c):
    """Matrix ``W[m, n] = (exp(c_m) - exp(c_n)) / (c_m - c_n)``.

    The diagonal and near-degenerate pairs use the continuous limit, so ``W``
    is smooth in ``c``.  Evaluated as ``exp(hi) * (1 - exp(-d)) / d`` with
    ``hi = max(c_m, c_n)`` and ``d = |c_m - c_n|`` to avoid overflow.
    """
    c = np.asarray(c, dtype=np.float64)
    hi = np.maximum(c[:, None], c[None, :])
    d = np.abs(c[:, None] - c[None, :])
    small = d < SERIES_GAP
    safe = np.where(small, 1.0, d)
    ratio = np.where(small, 1.0 - d / 2.0 + d * d / 6.0, -np.expm1(-safe) / safe)
    return np.exp(hi) * ratio


def np_kubo_pair_sum(a, b, w):
    """``Re sum_mn a[n, m] b[m, n] w[m, n]`` for eigenbasis matrices."""
    return float(np.real(np.sum(a.T * b * w)))


def np_kubo_gram(ops, w):
    """Gram matrix ``G[j, l] = kubo_pair_sum(ops[j], ops[l], w)``.

    ``ops`` has shape (k, d, d); each slice must be Hermitian.
    """
    k = ops.shape[0]
    flat = ops.reshape(k, -1)
    # a_j[n, m] b_l[m, n] = a_j[n, m] conj(b_l[n, m]) for Hermitian b_l
    weighted = np.conj(flat) * w.T.reshape(1, -1)
    return np.real(flat @ weighted.T)


def np_heisenberg_phase(a, energies, t):
    """``a[m, n] * exp(i (E_m - E_n) t)``: Heisenberg shift in the eigenbasis."""
    u = np.exp(1j * energies * t)
    return (u[:, None] * a) * np.conj(u)[None, :]


def np_phase_accumulate(x, energies, lags, weights):
    """``sum_i weights[i] x[i] * exp(-i (E_m - E_n) lags[i])``.

    This is the lagged history sum ``sum_i w_i X_i(-lag_i)`` in the
    eigenbasis of the Hamiltonian.
    """
    u = np.exp(-1j * np.outer(lags, energies))
    return np.einsum("i,im,imn,in->mn", weights, u, x, np.conj(u), optimize=True)


# ---------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:

    @numba.njit(cache=True, fastmath=False)
    def nb_divided_difference_weights(c):
        n = c.shape[0]
        out = np.empty((n, n), dtype=np.float64)
        for m in range(n):
            for k in range(m, n):
                hi = c[m] if c[m] > c[k] else c[k]
                d = abs(c[m] - c[k])
                if d < SERIES_GAP:
                    r = 1.0 - d / 2.0 + d * d / 6.0
                else:
                    r = -np.expm1(-d) / d
                v = np.exp(hi) * r
                out[m, k] = v
                out[k, m] = v
        return out

    @numba.njit(cache=True)
    def nb_kubo_pair_sum(a, b, w):
        n = a.shape[0]
        acc = 0.0
        for m in range(n):
            for k in range(n):
                z = a[k, m] * b[m, k]
                acc += z.real * w[m, k]
        return acc

    @numba.njit(cache=True)
    def nb_kubo_gram(ops, w):
        k = ops.shape[0]
        n = ops.shape[1]
        # transposes once so both operands stream row-major
        opt = np.empty_like(ops)
        for j in range(k):
            opt[j] = ops[j].T
        out = np.zeros((k, k), dtype=np.float64)
        for j in range(k):
            for l in range(j, k):
                acc = 0.0
                for m in range(n):
                    for q in range(n):
                        z = opt[j, m, q] * ops[l, m, q]
                        acc += z.real * w[m, q]
                out[j, l] = acc
                out[l, j] = acc
        return out

    @numba.njit(cache=True)
    def nb_heisenberg_phase(a, energies, t):
        n = a.shape[0]
        u = np.exp(1j * energies * t)
        uc = np.conj(u)
        out = np.empty_like(a)
        for m in range(n):
            for k in range(n):
                out[m, k] = u[m] * a[m, k] * uc[k]
        return out

    @numba.njit(cache=True)
    def nb_phase_accumulate(x, energies, lags, weights):
        nt = x.shape[0]
        n = x.shape[1]
        out = np.zeros((n, n), dtype=np.complex128)
        for i in range(nt):
            w = weights[i]
            if w == 0.0:
                continue
            u = np.exp(-1j * energies * lags[i])
            uc = np.conj(u)
            for m in range(n):
                um = w * u[m]
                for k in range(n):
                    out[m, k] += um * x[i, m, k] * uc[k]
        return out


_NAMES = (
    "divided_difference_weights",
    "kubo_pair_sum",
    "kubo_gram",
    "heisenberg_phase",
    "phase_accumulate",
)


def implementations(backend):
    """Return ``{name: callable}`` for ``backend`` in {"numpy", "numba"}."""
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    prefix = {"numpy": "np_", "numba": "nb_"}[backend]
    return {name: globals()[prefix + name] for name in _NAMES}


def _bind(name):
    return globals()[("nb_" if USE_NUMBA else "np_") + name]


def divided_difference_weights(c):
    return _bind("divided_difference_weights")(np.ascontiguousarray(c, dtype=np.float64))


def kubo_pair_sum(a, b, w):
    return float(_bind("kubo_pair_sum")(
        np.ascontiguousarray(a, dtype=np.complex128),
        np.ascontiguousarray(b, dtype=np.complex128),
        np.ascontiguousarray(w, dtype=np.float64),
    ))


def kubo_gram(ops, w):
    return _bind("kubo_gram")(
        np.ascontiguousarray(ops, dtype=np.complex128),
        np.ascontiguousarray(w, dtype=np.float64),
    )


def heisenberg_phase(a, energies, t):
    return _bind("heisenberg_phase")(
        np.ascontiguousarray(a, dtype=np.complex128),
        np.ascontiguousarray(energies, dtype=np.float64),
        float(t),
    )


def phase_accumulate(x, energies, lags, weights):
    return _bind("phase_accumulate")(
        np.ascontiguousarray(x, dtype=np.complex128),
        np.ascontiguousarray(energies, dtype=np.float64),
        np.ascontiguousarray(lags, dtype=np.float64),
        np.ascontiguousarray(weights, dtype=np.float64),
    )
