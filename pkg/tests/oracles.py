"""Independent reference computations used by the tests (dense expm, quadrature)."""
import numpy as np
from scipy.integrate import simpson
from scipy.linalg import expm


def kubo_quadrature(a, b, c, points=129):
    """Kubo form in the normalized state e^C (C = log w) by Simpson's rule in u."""
    us = np.linspace(0.0, 1.0, points)
    vals = [np.trace(a @ expm(u * c) @ b @ expm((1 - u) * c)).real for u in us]
    w = expm(c)
    return simpson(vals, x=us) - np.trace(a @ w).real * np.trace(b @ w).real


def gibbs_expm(ops, zeta):
    x = -sum(z * a for z, a in zip(zeta, ops))
    e = expm(x)
    return e / np.trace(e).real


def exact_perturbed_mean(a, b, probe):
    e = expm(a + b)
    return float(np.trace(probe @ e).real / np.trace(e).real)
