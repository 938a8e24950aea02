"""Proximal operators and projections used by the subsolvers."""

import numpy as np

from .errors import ShapeMismatch

# relative band inside which a point counts as already on the ball; it
# absorbs the rounding of a previous projection and makes the operator
# exactly idempotent
_BALL_SLACK = 1e-12


def project_ball(y, radius, channel_axes=None):
    """Pointwise projection onto the ball of the given radius.

    With ``channel_axes=None`` each scalar entry is clamped to modulus
    ``radius`` (the 1-D case, valid for complex entries). Otherwise the
    joint Euclidean norm over ``channel_axes`` is limited, leaving points
    already inside untouched. ``radius == 0`` maps everything to zero.
    """
    y = np.asarray(y)
    if radius <= 0.0:
        return np.zeros_like(y)
    if channel_axes is None:
        norm = np.abs(y)
    else:
        norm = np.sqrt((np.abs(y) ** 2).sum(axis=channel_axes, keepdims=True))
    scale = norm / radius
    return y / np.where(scale > 1.0 + _BALL_SLACK, scale, 1.0)


def prox_l1_dual(y, lam):
    """Resolvent of the conjugate of ``lam * ||.||_1``: clamp to [-lam, lam].

    Equals :func:`project_ball` with channel dimension one; complex
    entries are clamped in modulus.
    """
    return project_ball(y, lam)


def resolvent_l2_fidelity(y0, f, sigma):
    """Closed-form dual update for the quadratic fidelity term,
    ``(y0 - sigma * f) / (sigma + 1)`` elementwise."""
    y0 = np.asarray(y0)
    f = np.asarray(f)
    if y0.shape != f.shape:
        raise ShapeMismatch(f"{y0.shape} vs {f.shape}")
    return (y0 - sigma * f) / (sigma + 1.0)


def prox_flow_data(u, grad_m, dt_m, backproj, coverage, tau, lam3, lam5):
    """Resolvent of the flow data + patch-coupling term.

    Solves, pointwise over pixels and transitions,

        argmin_v ||v - u||^2 / (2 tau) + lam3 |dt_m + v . grad_m|
                 + lam5 (coverage |v|^2 - 2 <v, backproj> + const)

    by the exact three-case thresholding: with the diagonal weight
    ``A = 1 + 2 tau lam5 coverage`` and ``q = (u + 2 tau lam5 backproj)/A``,
    the residual ``rho(q) = dt_m + q . grad_m`` is compared against
    ``tau lam3 |grad_m|^2 / A`` and the output moves along ``grad_m``
    accordingly; where ``grad_m`` vanishes the data term is constant and
    ``q`` is returned unchanged.

    Parameters
    ----------
    u : (Nx, Ny, T, 2) array, the resolvent argument.
    grad_m : (Nx, Ny, T, 2) array, spatial brightness gradient per transition.
    dt_m : (Nx, Ny, T) array, temporal brightness derivative.
    backproj : (Nx, Ny, T, 2) array, aggregated dictionary code field R^T D a.
    coverage : (Nx, Ny) array of per-pixel patch counts.
    tau, lam3, lam5 : scalars.
    """
    u = np.asarray(u, dtype=np.float64)
    grad_m = np.asarray(grad_m, dtype=np.float64)
    dt_m = np.asarray(dt_m, dtype=np.float64)
    if u.shape != grad_m.shape or u.shape[:-1] != dt_m.shape or u.shape[-1] != 2:
        raise ShapeMismatch(
            f"u {u.shape}, grad_m {grad_m.shape}, dt_m {dt_m.shape}")

    if lam5 > 0.0:
        backproj = np.asarray(backproj, dtype=np.float64)
        coverage = np.asarray(coverage, dtype=np.float64)
        if backproj.shape != u.shape:
            raise ShapeMismatch(f"backproj {backproj.shape} vs u {u.shape}")
        if coverage.shape != u.shape[:2]:
            raise ShapeMismatch(f"coverage {coverage.shape} vs grid {u.shape[:2]}")
        diag = 1.0 + 2.0 * tau * lam5 * coverage[:, :, None]     # (Nx, Ny, 1)
        q = (u + 2.0 * tau * lam5 * backproj) / diag[..., None]
    else:
        diag = np.ones(u.shape[:2] + (1,))
        q = u

    gnorm2 = (grad_m ** 2).sum(axis=-1)                          # (Nx, Ny, T)
    rho_q = dt_m + (q * grad_m).sum(axis=-1)
    thresh = tau * lam3 * gnorm2 / diag

    mid = np.where(gnorm2 > 0.0, rho_q / np.where(gnorm2 > 0.0, gnorm2, 1.0), 0.0)
    step = np.where(rho_q > thresh, tau * lam3 / diag,
                    np.where(rho_q < -thresh, -tau * lam3 / diag, mid))
    return q - step[..., None] * grad_m
