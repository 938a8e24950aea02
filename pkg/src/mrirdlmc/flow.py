"""Optical-flow subproblem: l1 brightness-transport data term, isotropic
TV of the field, and the quadratic patch-coupling to the dictionary
codes. The TV-L1 baseline is the same solve with the coupling switched
off.

Brightness terms are computed on the magnitude image; the flow is a real
field one frame shorter than the image sequence.
"""

import numpy as np

from .config import SolverConfig
from .cp import SaddleProblem, chambolle_pock
from .errors import ShapeMismatch
from .operators import (aggregate_patches, divergence_flow, dt_forward,
                        extract_patches, grad_flow_forward,
                        grad_spatial_central, make_patch_geometry)
from .prox import project_ball, prox_flow_data

FLOW_GRAD_NORM_BOUND = np.sqrt(8.0)


def brightness_derivatives(m):
    """Magnitude-image gradient and temporal derivative restricted to the
    Nt-1 transitions: (grad (Nx,Ny,T,2), dt (Nx,Ny,T))."""
    mag = np.abs(np.asarray(m))
    t = mag.shape[2] - 1
    mx, my = grad_spatial_central(mag)
    grad = np.stack((mx[:, :, :t], my[:, :, :t]), axis=-1)
    return grad, dt_forward(mag)[:, :, :t]


def code_backprojection(dictionary, codes, geom):
    """Aggregate the per-direction dictionary reconstructions back onto
    the grid: the field sum_p R_p^T D a_p, shape (Nx, Ny, T, 2)."""
    bx = aggregate_patches(np.einsum("ij,jpt->ipt", dictionary.dx, codes.ax), geom)
    by = aggregate_patches(np.einsum("ij,jpt->ipt", dictionary.dy, codes.ay), geom)
    return np.stack((bx, by), axis=-1)


def flow_energy(u, m, dictionary, codes, lam3, lam4, lam5, lam6, geom=None):
    """lam3 ||dt m + grad m . u||_1 + lam4 TV(u)
    + sum_p lam5 ||R_p u - D a_p||_F^2 + lam6 ||a_p||_1."""
    u = np.asarray(u, dtype=np.float64)
    m = np.asarray(m)
    if u.ndim != 4 or u.shape[-1] != 2:
        raise ShapeMismatch(f"flow shape {u.shape}")
    if u.shape[:2] != m.shape[:2] or u.shape[2] != m.shape[2] - 1:
        raise ShapeMismatch(f"flow {u.shape} vs image {m.shape}")
    grad_m, dt_m = brightness_derivatives(m)
    data = float(np.abs(dt_m + (u * grad_m).sum(axis=-1)).sum())
    g = grad_flow_forward(u)
    tv = float(np.sqrt((g * g).sum(axis=(-2, -1))).sum())
    total = lam3 * data + lam4 * tv
    if dictionary is not None and codes is not None:
        if geom is None:
            raise ValueError("geom is required with a dictionary")
        for comp, d, a in ((0, dictionary.dx, codes.ax),
                           (1, dictionary.dy, codes.ay)):
            resid = extract_patches(u[..., comp], geom) - \
                np.einsum("ij,jpt->ipt", d, a)
            total += lam5 * float((resid * resid).sum())
            total += lam6 * float(np.abs(a).sum())
    return total


def solve_flow(m, dictionary, codes, cfg: SolverConfig, u0=None, geom=None,
               tol=None, max_iter=None):
    """Primal-dual flow solve with the image, dictionary and codes fixed.

    ``dictionary=None`` (or ``codes=None``) drops the patch coupling,
    which is the TV-L1 baseline. The flow energy at the output never
    exceeds the energy at ``u0``.
    """
    m = np.asarray(m)
    if m.ndim != 3:
        raise ShapeMismatch(f"expected (Nx, Ny, Nt), got {m.shape}")
    nx, ny, nt = m.shape
    t = nt - 1
    if u0 is None:
        u0 = np.zeros((nx, ny, t, 2))
    u0 = np.asarray(u0, dtype=np.float64)
    if u0.shape != (nx, ny, t, 2):
        raise ShapeMismatch(f"u0 {u0.shape} vs expected {(nx, ny, t, 2)}")
    if tol is None:
        tol = 0.1 * cfg.eps_outer
    if max_iter is None:
        max_iter = cfg.max_inner

    coupled = dictionary is not None and codes is not None and cfg.lambda5 > 0.0
    lam5 = cfg.lambda5 if coupled else 0.0
    if coupled and geom is None:
        geom = make_patch_geometry(nx, ny, cfg.patch_size, cfg.patch_stride)

    grad_m, dt_m = brightness_derivatives(m)
    if coupled:
        backproj = code_backprojection(dictionary, codes, geom)
        coverage = geom.coverage
    else:
        backproj = None
        coverage = None

    def resolvent_g(u, tau):
        return prox_flow_data(u, grad_m, dt_m, backproj, coverage,
                              tau, cfg.lambda3, lam5)

    problem = SaddleProblem(
        apply_C=grad_flow_forward,
        apply_C_adjoint=lambda y: -divergence_flow(y),
        resolvent_Fstar=lambda y, sigma: project_ball(
            y, cfg.lambda4, channel_axes=(-2, -1)),
        resolvent_G=resolvent_g,
        norm_bound_C=FLOW_GRAD_NORM_BOUND,
    )
    result = chambolle_pock(problem, u0, cfg.sigma_flow, cfg.tau_flow,
                            1.0, tol, max_iter)

    lam = (cfg.lambda3, cfg.lambda4, lam5, cfg.lambda6)
    dct = dictionary if coupled else None
    cds = codes if coupled else None
    e_in = flow_energy(u0, m, dct, cds, *lam, geom=geom)
    e_out = flow_energy(result.x, m, dct, cds, *lam, geom=geom)
    if e_out > e_in:
        return u0.copy()
    return result.x


def tvl1_flow(m, cfg: SolverConfig, u0=None, tol=None, max_iter=None):
    """TV-L1 optical flow: :func:`solve_flow` without the patch coupling."""
    return solve_flow(m, None, None, cfg, u0, tol=tol, max_iter=max_iter)
