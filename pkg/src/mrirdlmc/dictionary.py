"""Flow-dictionary learning and per-patch sparse coding.

Learning minimizes the patch-fit energy by block coordinate descent with
projected-gradient steps: the dictionary columns are projected onto the
unit ball and the codes onto the hard l0 sparsity budget. Horizontal and
vertical directions are decoupled and solved independently.

The main-loop code refinement (:func:`sparse_code`) instead solves the
l1-penalized fit with a primal-dual scheme whose smooth part enters
through its explicit gradient.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .config import SolverConfig
from .errors import NonFiniteIterate
from .operators import extract_patches, make_patch_geometry
from .prox import prox_l1_dual


class StepTooLarge(ValueError):
    """Gradient step exceeds the stability bound."""


@dataclass(frozen=True)
class FlowDictionary:
    """Per-direction atom matrices of shape (patch_size**2, n_atoms),
    every column with Euclidean norm <= 1."""

    dx: np.ndarray
    dy: np.ndarray

    @property
    def n_atoms(self):
        return self.dx.shape[1]

    @property
    def patch_len(self):
        return self.dx.shape[0]


@dataclass
class SparseCodes:
    """Per-direction coefficient tensors of shape (n_atoms, n_patches, T)."""

    ax: np.ndarray
    ay: np.ndarray


@dataclass
class LearnResult:
    dictionary: FlowDictionary
    codes: SparseCodes
    energy_history: list = field(default_factory=list)
    degenerate: bool = False


def _spectral_norm_gram(a_flat):
    """||A A^T|| for a (n_atoms, n_samples) coefficient matrix."""
    if a_flat.size == 0 or not a_flat.any():
        return 0.0
    return float(np.linalg.svd(a_flat, compute_uv=False)[0] ** 2)


def _project_columns(d):
    norms = np.sqrt((d * d).sum(axis=0))
    return d / np.maximum(1.0, norms)[None, :]


def hard_threshold_columns(a, budget):
    """Keep the ``budget`` largest-magnitude entries of every column,
    zeroing the rest; ties break toward the lower index."""
    n = a.shape[0]
    if budget >= n:
        return a.copy()
    order = np.argsort(-np.abs(a), axis=0, kind="stable")
    out = np.zeros_like(a)
    keep = order[:budget]
    np.put_along_axis(out, keep, np.take_along_axis(a, keep, axis=0), axis=0)
    return out


def random_dictionary(patch_len, n_atoms, seed=1):
    """Unit-norm columns drawn from a seeded standard normal."""
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((patch_len, n_atoms))
    norms = np.sqrt((d * d).sum(axis=0))
    return d / np.maximum(norms, 1e-30)[None, :]


def fit_energy(d, a, patches):
    """Sum over frames of half the squared patch-fit residual."""
    resid = patches - np.einsum("ij,jpt->ipt", d, a)
    return 0.5 * float((resid * resid).sum())


def dictionary_step(d, a, patches, tau1, gram_norm=None):
    """One projected-gradient dictionary update.

    ``a`` has shape (n_atoms, n_patches, T) and ``patches``
    (patch_len, n_patches, T); the step must satisfy
    ``tau1 < 2 / ||sum_k a_k a_k^T||``.
    """
    a_flat = a.reshape(a.shape[0], -1)
    p_flat = patches.reshape(patches.shape[0], -1)
    if gram_norm is None:
        gram_norm = _spectral_norm_gram(a_flat)
    if gram_norm > 0.0 and tau1 >= 2.0 / gram_norm:
        raise StepTooLarge(
            f"tau1={tau1} >= 2/||sum a a^T||={2.0 / gram_norm}")
    grad = (d @ a_flat - p_flat) @ a_flat.T
    return _project_columns(d - tau1 * grad)


def code_step(a_k, d, patches_k, tau2, sparsity_eps, dd_norm=None):
    """One projected-gradient code update.

    Gradient step on the fit followed by the hard l0 projection keeping
    the ``sparsity_eps`` largest magnitudes per patch column. Requires
    ``tau2 < 2 / ||D D^T||``.
    """
    if dd_norm is None:
        dd_norm = float(np.linalg.svd(d, compute_uv=False)[0] ** 2)
    if dd_norm > 0.0 and tau2 >= 2.0 / dd_norm:
        raise StepTooLarge(f"tau2={tau2} >= 2/||DD^T||={2.0 / dd_norm}")
    stepped = a_k - tau2 * (d.T @ (d @ a_k - patches_k))
    return hard_threshold_columns(stepped, sparsity_eps)


def _learn_direction(patches, n_atoms, sparsity_eps, max_iter, tol, d0):
    """Block coordinate descent for one flow direction.

    Returns (dictionary, codes, per-iteration energies). Step sizes are
    1/L, which keeps every step a guaranteed descent (the hard-threshold
    projection is nonconvex, so 1/L rather than the 2/L edge).
    """
    patch_len, n_patches, n_frames = patches.shape
    p_flat = patches.reshape(patch_len, -1)
    d = d0.copy()
    a = np.zeros((n_atoms, n_patches, n_frames))
    energies = [fit_energy(d, a, patches)]
    for _ in range(max_iter):
        a_flat = a.reshape(n_atoms, -1)
        gram_norm = _spectral_norm_gram(a_flat)
        if gram_norm > 0.0:
            d = dictionary_step(d, a, patches, 1.0 / gram_norm, gram_norm)
        else:
            d = _project_columns(d)
        dd_norm = float(np.linalg.svd(d, compute_uv=False)[0] ** 2)
        tau2 = 1.0 / max(dd_norm, 1e-30)
        a_flat = code_step(a.reshape(n_atoms, -1), d, p_flat,
                           tau2, sparsity_eps, dd_norm)
        a = a_flat.reshape(n_atoms, n_patches, n_frames)
        energies.append(fit_energy(d, a, patches))
        prev, cur = energies[-2], energies[-1]
        if prev > 0.0 and abs(prev - cur) < tol * prev:
            break
    return d, a, energies


def learn_dictionary(u_ref, geom, n_atoms, sparsity_eps, max_iter,
                     tol=1e-5, seed=1):
    """Learn per-direction flow dictionaries from a reference field.

    ``u_ref`` has shape (Nx, Ny, T, 2). Both direction solves are
    independent; the recorded energy history is the sum of the two
    per-direction fit energies and is nonincreasing. An all-zero field
    short-circuits with the initial dictionary, zero codes and the
    ``degenerate`` flag set.
    """
    u_ref = np.asarray(u_ref, dtype=np.float64)
    if sparsity_eps < 1 or sparsity_eps > n_atoms:
        raise ValueError(f"sparsity budget {sparsity_eps} outside [1, {n_atoms}]")
    patch_len = geom.patch_size ** 2
    if n_atoms * geom.n_patches <= geom.nx * geom.ny:
        warnings.warn("dictionary is not overcomplete: "
                      f"{n_atoms} atoms x {geom.n_patches} patches <= "
                      f"{geom.nx * geom.ny} pixels", stacklevel=2)
    d0x = random_dictionary(patch_len, n_atoms, seed)
    d0y = random_dictionary(patch_len, n_atoms, seed + 1)
    n_frames = u_ref.shape[2]
    if not u_ref.any():
        codes = SparseCodes(
            np.zeros((n_atoms, geom.n_patches, n_frames)),
            np.zeros((n_atoms, geom.n_patches, n_frames)))
        return LearnResult(FlowDictionary(d0x, d0y), codes, [0.0], degenerate=True)

    px = extract_patches(u_ref[..., 0], geom)
    py = extract_patches(u_ref[..., 1], geom)
    dx, ax, ex = _learn_direction(px, n_atoms, sparsity_eps, max_iter, tol, d0x)
    dy, ay, ey = _learn_direction(py, n_atoms, sparsity_eps, max_iter, tol, d0y)
    hist = [a + b for a, b in zip(_pad(ex, ey), _pad(ey, ex))]
    return LearnResult(FlowDictionary(dx, dy), SparseCodes(ax, ay), hist)


def _pad(values, other):
    """Extend a converged energy tail so both direction histories align."""
    if len(values) >= len(other):
        return values
    return values + [values[-1]] * (len(other) - len(values))


def fit_codes(u, dictionary, geom, sparsity_eps, max_iter=100, tol=1e-6):
    """Sparse decomposition of a flow field in a fixed dictionary using
    the learning-stage l0-projected gradient (dictionary held fixed)."""
    u = np.asarray(u, dtype=np.float64)
    out = []
    for comp, d in ((0, dictionary.dx), (1, dictionary.dy)):
        patches = extract_patches(u[..., comp], geom)
        n_frames = patches.shape[2]
        p_flat = patches.reshape(patches.shape[0], -1)
        a = np.zeros((d.shape[1], geom.n_patches * n_frames))
        dd_norm = float(np.linalg.svd(d, compute_uv=False)[0] ** 2)
        tau2 = 1.0 / max(dd_norm, 1e-30)
        prev = fit_energy(d, a.reshape(d.shape[1], geom.n_patches, n_frames), patches)
        for _ in range(max_iter):
            a = code_step(a, d, p_flat, tau2, sparsity_eps, dd_norm)
            cur = fit_energy(d, a.reshape(d.shape[1], geom.n_patches, n_frames),
                             patches)
            if prev > 0.0 and abs(prev - cur) < tol * prev:
                break
            prev = cur
        out.append(a.reshape(d.shape[1], geom.n_patches, n_frames))
    return SparseCodes(out[0], out[1])


def sparse_code_objective(a, d, patches, lam5, lam6):
    """lam5 * ||patches - D a||_F^2 + lam6 * ||a||_1."""
    resid = patches - np.einsum("ij,jpt->ipt", d, a)
    return lam5 * float((resid * resid).sum()) + lam6 * float(np.abs(a).sum())


def _sparse_code_direction(patches, d, cfg, a0, tol, max_iter):
    """Primal-dual iteration on lam5||P - Da||^2 + lam6||a||_1.

    The l1 term enters through its dual clamp and the smooth fit through
    its explicit gradient at the current iterate; with the identity
    pairing the step constraint is sigma*tau < 1.
    """
    lam5, lam6 = cfg.lambda5, cfg.lambda6
    sigma, tau = cfg.sigma_sparse, cfg.tau_sparse
    a = a0.copy()
    abar = a.copy()
    y = np.zeros_like(a)
    start_obj = sparse_code_objective(a, d, patches, lam5, lam6)
    for _ in range(max_iter):
        y = prox_l1_dual(y + sigma * abar, lam6)
        grad = 2.0 * lam5 * np.einsum("ji,jpt->ipt", d,
                                      np.einsum("ij,jpt->ipt", d, a) - patches)
        a_new = a - tau * (y + grad)
        if not np.all(np.isfinite(a_new)):
            raise NonFiniteIterate("sparse-code iterate contains NaN/Inf")
        da = float(np.linalg.norm((a_new - a).ravel()))
        anorm = float(np.linalg.norm(a.ravel()))
        done = da <= tol * anorm
        abar = a_new + (a_new - a)
        a = a_new
        if done:
            break
    # primal-dual iterates are not monotone; keep the better endpoint
    if sparse_code_objective(a, d, patches, lam5, lam6) > start_obj:
        return a0.copy()
    return a


def sparse_code(u, dictionary, cfg: SolverConfig, a0=None, geom=None,
                tol=None, max_iter=None):
    """Refine the sparse decomposition of a flow field (l1 penalty).

    Minimizes ``lam5 ||R_p u - D a_p||_F^2 + lam6 ||a_p||_1`` per patch;
    the objective at the output never exceeds the objective at ``a0``.
    """
    u = np.asarray(u, dtype=np.float64)
    if geom is None:
        geom = make_patch_geometry(u.shape[0], u.shape[1],
                                   cfg.patch_size, cfg.patch_stride)
    if tol is None:
        tol = 0.1 * cfg.eps_outer
    if max_iter is None:
        max_iter = cfg.max_inner
    n_frames = u.shape[2]
    if a0 is None:
        zeros = np.zeros((dictionary.n_atoms, geom.n_patches, n_frames))
        a0 = SparseCodes(zeros, zeros.copy())
    ax = _sparse_code_direction(extract_patches(u[..., 0], geom),
                                dictionary.dx, cfg, a0.ax, tol, max_iter)
    ay = _sparse_code_direction(extract_patches(u[..., 1], geom),
                                dictionary.dy, cfg, a0.ay, tol, max_iter)
    return SparseCodes(ax, ay)
