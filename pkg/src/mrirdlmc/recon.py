"""Image-reconstruction subproblem: quadratic k-space fidelity with TV,
wavelet-sparsity and motion-transport l1 regularization, solved by the
primal-dual iteration on the stacked operator [K, grad, wavelet, transport].

Dual blocks are packed into a single complex array of shape
(5, Nx, Ny, Nt): k-space, the two gradient channels, wavelet and
transport. The transport term acts on the complex image.
"""

import numpy as np

from .cp import SaddleProblem, chambolle_pock
from .errors import ShapeMismatch
from .operators import (broadcast_mask, dt_adjoint, dt_forward,
                        fourier_undersampled, fourier_undersampled_adjoint,
                        grad_spatial_central, grad_spatial_central_adjoint,
                        operator_norm_bound, wavelet_adjoint, wavelet_forward)
from .prox import project_ball, resolvent_l2_fidelity


def _zero_flow(shape):
    return np.zeros((shape[0], shape[1], max(shape[2] - 1, 0), 2))


def transport_forward(m, u):
    """dt m + u . grad m on the complex image; zero at the last frame."""
    mx, my = grad_spatial_central(m)
    out = dt_forward(m)
    t = u.shape[2]
    out[:, :, :t] += u[..., 0] * mx[:, :, :t] + u[..., 1] * my[:, :, :t]
    return out


def transport_adjoint(y, u):
    """Adjoint of :func:`transport_forward` (u is real, so the map is
    complex-linear)."""
    out = dt_adjoint(y)
    t = u.shape[2]
    wx = np.zeros_like(y)
    wy = np.zeros_like(y)
    wx[:, :, :t] = u[..., 0] * y[:, :, :t]
    wy[:, :, :t] = u[..., 1] * y[:, :, :t]
    return out + grad_spatial_central_adjoint((wx, wy))


def make_recon_problem(f, mask, u, cfg):
    """Stacked-operator saddle problem for the reconstruction energy."""
    lam1, lam2, lam3 = cfg.lambda1, cfg.lambda2, cfg.lambda3

    def apply_c(m):
        out = np.empty((5,) + m.shape, dtype=np.complex128)
        out[0] = fourier_undersampled(m, mask)
        mx, my = grad_spatial_central(m)
        out[1] = mx
        out[2] = my
        out[3] = wavelet_forward(m)
        out[4] = transport_forward(m, u)
        return out

    def apply_ct(y):
        m = fourier_undersampled_adjoint(y[0], mask)
        m += grad_spatial_central_adjoint((y[1], y[2]))
        m += wavelet_adjoint(y[3])
        m += transport_adjoint(y[4], u)
        return m

    def resolvent_fstar(y, sigma):
        out = np.empty_like(y)
        out[0] = resolvent_l2_fidelity(y[0], f, sigma)
        out[1:3] = project_ball(y[1:3], lam1, channel_axes=(0,))
        out[3] = project_ball(y[3], lam2)
        out[4] = project_ball(y[4], lam3)
        return out

    return SaddleProblem(
        apply_C=apply_c,
        apply_C_adjoint=apply_ct,
        resolvent_Fstar=resolvent_fstar,
        resolvent_G=lambda x, tau: x,
        norm_bound_C=operator_norm_bound(u),
    )


def recon_energy(m, f, mask, u, lam1, lam2, lam3):
    """0.5 ||K m - f||^2 + lam1 ||grad m||_{2,1} + lam2 ||W m||_1
    + lam3 ||dt m + u . grad m||_1 with complex moduli in the l1 sums."""
    m = np.asarray(m)
    f = np.asarray(f)
    if m.shape != f.shape:
        raise ShapeMismatch(f"image {m.shape} vs k-space {f.shape}")
    if u is None:
        u = _zero_flow(m.shape)
    resid = fourier_undersampled(m, mask) - f
    fidelity = 0.5 * float((resid.real ** 2 + resid.imag ** 2).sum())
    mx, my = grad_spatial_central(m)
    tv = float(np.sqrt(np.abs(mx) ** 2 + np.abs(my) ** 2).sum())
    wav = float(np.abs(wavelet_forward(m)).sum())
    transport = float(np.abs(transport_forward(m, u)).sum())
    return fidelity + lam1 * tv + lam2 * wav + lam3 * transport


def reconstruct_with_state(f, mask, u, cfg, m0, tol=None, max_iter=None,
                           duals=None):
    """Reconstruction subsolve returning (image, duals, solver result).

    Dual variables can be warm-started across outer iterations. The
    energy at the returned image never exceeds the energy at ``m0``: the
    primal-dual iterates are not monotone, so the better endpoint is
    kept (an identity solve returns ``m0`` itself).
    """
    f = np.asarray(f, dtype=np.complex128)
    m0 = np.asarray(m0, dtype=np.complex128)
    if m0.shape != f.shape:
        raise ShapeMismatch(f"m0 {m0.shape} vs k-space {f.shape}")
    broadcast_mask(mask, f.shape)  # validates the mask shape early
    if u is None:
        u = _zero_flow(f.shape)
    if tol is None:
        tol = 0.1 * cfg.eps_outer
    if max_iter is None:
        max_iter = cfg.max_inner
    problem = make_recon_problem(f, mask, u, cfg)
    result = chambolle_pock(problem, m0, cfg.sigma_recon, cfg.tau_recon,
                            cfg.theta_recon, tol, max_iter, y0=duals)
    e_in = recon_energy(m0, f, mask, u, cfg.lambda1, cfg.lambda2, cfg.lambda3)
    e_out = recon_energy(result.x, f, mask, u,
                         cfg.lambda1, cfg.lambda2, cfg.lambda3)
    if e_out > e_in:
        return m0.copy(), duals, result
    return result.x, result.y, result


def reconstruct(f, mask, u, cfg, m0, tol=None, max_iter=None):
    """Minimize the reconstruction energy over the image sequence with
    the flow held fixed; returns the reconstructed complex image."""
    m, _, _ = reconstruct_with_state(f, mask, u, cfg, m0, tol, max_iter)
    return m
