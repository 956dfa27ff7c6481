"""Maximum-entropy inversion: expectations -> Gibbs multipliers.

The multipliers minimize the convex dual

    F(zeta) = log Z[zeta] + sum_j zeta_j t_j

whose gradient is ``t_j - <A_j>_zeta`` and whose Hessian is the Kubo
covariance matrix.  We run damped Newton with step halving.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConvergenceError, DimensionError, NonRealizableError, SingularMatrixError
from .gibbs import GibbsState, MacrostateParams, gibbs_state, kubo_covariance
from .hilbert import expectation

log = logging.getLogger(__name__)

_FLAT = 16 * np.finfo(float).eps


@dataclass(frozen=True)
class InversionSettings:
    tol: float = 1e-10
    max_iters: int = 200
    damping: float = 1.0
    regularization: float = 1e-12
    cond_limit: float = 1e12
    zeta_bound: float = 1e6
    max_halvings: int = 60

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.damping > 0:
            raise ValueError("damping must be positive")


@dataclass
class InversionReport:
    """Diagnostics of one inversion; ``objective`` holds F per accepted iterate."""

    iterations: int = 0
    objective: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    regularized: bool = False


def _residual_ok(means, targets, tol):
    return bool(np.all(np.abs(means - targets) <= tol * (1.0 + np.abs(targets))))


def _check_realizable(ops, targets):
    for j, (a, t) in enumerate(zip(ops, targets)):
        e = np.linalg.eigvalsh(a)
        span = max(e[-1] - e[0], 1.0)
        if not (e[0] + 1e-12 * span < t < e[-1] - 1e-12 * span):
            raise NonRealizableError(
                f"target {t!r} for observable {j} is outside the open interval "
                f"({e[0]!r}, {e[-1]!r}) of its spectrum"
            )


def invert_macrostate(
    ops: Sequence,
    targets,
    init: MacrostateParams | None = None,
    settings: InversionSettings | None = None,
    report: InversionReport | None = None,
) -> GibbsState:
    """Gibbs state of ``ops`` whose expectations equal ``targets``.

    Raises ``NonRealizableError`` when a target sits on or beyond the
    spectral bounds of its observable or when the multipliers blow up,
    ``ConvergenceError`` when ``max_iters`` is exhausted.
    """
    settings = settings or InversionSettings()
    report = report if report is not None else InversionReport()
    ops = [np.asarray(a, dtype=complex) for a in ops]
    targets = np.asarray(targets, dtype=float).reshape(-1)
    if len(ops) != targets.size:
        raise DimensionError(f"{len(ops)} observables but {targets.size} targets")
    if not np.all(np.isfinite(targets)):
        raise NonRealizableError("targets must be finite")
    _check_realizable(ops, targets)

    zeta = np.zeros(len(ops)) if init is None else np.array(init.zeta, dtype=float)
    if zeta.size != len(ops):
        raise DimensionError("initial multipliers do not match the observables")

    g = gibbs_state(ops, zeta)
    f = g.params.zeta0 + zeta @ targets
    for it in range(settings.max_iters + 1):
        means = np.array([g.mean(a) for a in ops])
        grad = targets - means
        report.iterations = it
        report.objective.append(float(f))
        report.residual.append(float(np.max(np.abs(grad))))
        if _residual_ok(means, targets, settings.tol):
            return g
        if it == settings.max_iters:
            break

        hess = kubo_covariance(ops, g)
        step = _newton_step(hess, grad, settings, report)
        scale = settings.damping
        for _ in range(settings.max_halvings):
            trial = zeta + scale * step
            if np.linalg.norm(trial) > settings.zeta_bound:
                raise NonRealizableError(
                    f"multipliers diverge (|zeta| > {settings.zeta_bound:g}); targets not realizable"
                )
            g_trial = gibbs_state(ops, trial)
            f_trial = g_trial.params.zeta0 + trial @ targets
            if f_trial < f:
                break
            # near the optimum F is flat to rounding; accept if the residual shrinks
            if f_trial <= f + _FLAT * max(1.0, abs(f)):
                trial_grad = targets - np.array([g_trial.mean(a) for a in ops])
                if np.max(np.abs(trial_grad)) < np.max(np.abs(grad)):
                    break
            scale /= 2
        else:
            raise ConvergenceError(
                f"line search stalled at iteration {it} with residual {report.residual[-1]:.3e}"
            )
        zeta, g, f = trial, g_trial, f_trial

    raise ConvergenceError(
        f"no convergence in {settings.max_iters} Newton iterations (residual {report.residual[-1]:.3e})"
    )


def _newton_step(hess, grad, settings, report):
    # grad is dF/dzeta = targets - <A>; hess is the Kubo covariance
    n = hess.shape[0]
    cond = np.linalg.cond(hess) if n else 1.0
    if not np.isfinite(cond) or cond > settings.cond_limit:
        scale = max(np.trace(hess) / max(n, 1), 1.0)
        hess = hess + settings.regularization * scale * np.eye(n)
        report.regularized = True
        log.warning("Kubo Hessian ill-conditioned (cond=%.3e); ridge %.1e applied", cond, settings.regularization)
        if np.linalg.cond(hess) > 1.0 / np.finfo(float).eps:
            raise SingularMatrixError("Kubo Hessian singular beyond regularization")
    try:
        return np.linalg.solve(hess, -grad)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(str(exc)) from exc


def project_macrostate(
    rho,
    ops: Sequence,
    init: MacrostateParams | None = None,
    settings: InversionSettings | None = None,
    report: InversionReport | None = None,
) -> GibbsState:
    """Maximum-entropy Gibbs state sharing the expectations of ``ops`` with ``rho``."""
    targets = np.array([expectation(a, rho) for a in ops])
    return invert_macrostate(ops, targets, init=init, settings=settings, report=report)
