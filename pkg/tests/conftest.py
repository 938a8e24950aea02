import numpy as np


def crandn(rng, shape):
    """Random complex array with unit-variance components."""
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def adjoint_error(ax, y, x, aty):
    """Relative error of <A x, y> - <x, A^T y> (complex-safe)."""
    lhs = np.vdot(np.asarray(y).ravel(), np.asarray(ax).ravel())
    rhs = np.vdot(np.asarray(aty).ravel(), np.asarray(x).ravel())
    scale = max(abs(lhs), abs(rhs), 1e-30)
    return abs(lhs - rhs) / scale
