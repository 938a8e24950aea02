"""Outer alternating loop tying reconstruction, flow estimation and
sparse coding together, with energy monitoring and a run report.

The dictionary is learnt once before the loop (from the TV-L1 flow of
the initial reconstruction, unless a pretrained one is supplied) and
held fixed; the loop then cycles image, flow and code solves until the
relative image change drops below the outer tolerance.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .config import SolverConfig
from .dictionary import fit_codes, learn_dictionary, sparse_code
from .errors import EmptyMask
from .flow import solve_flow, tvl1_flow
from .operators import (broadcast_mask, extract_patches, grad_flow_forward,
                        make_patch_geometry)
from .recon import reconstruct_with_state, transport_forward

REPORT_COLUMNS = ("outer_iter", "E_total", "E_fidelity", "E_tv_m",
                  "E_wavelet", "E_transport", "E_tv_u", "E_sparse_fit",
                  "E_sparse_l1", "seconds")


@dataclass
class JointState:
    m: np.ndarray
    u: np.ndarray
    dictionary: object
    codes: object
    outer_iter: int = 0
    energy_log: list = field(default_factory=list)


@dataclass
class JointReport:
    rows: list = field(default_factory=list)          # REPORT_COLUMNS tuples
    block_energies: list = field(default_factory=list)  # (iter, block, E_total)
    stop_reason: str = ""
    seconds: float = 0.0
    warnings: list = field(default_factory=list)


def energy_terms(m, u, dictionary, codes, f, mask, cfg, geom):
    """Individual terms of the joint energy, keyed like the report columns."""
    from .operators import (fourier_undersampled, grad_spatial_central,
                            wavelet_forward)
    resid = fourier_undersampled(m, mask) - f
    mx, my = grad_spatial_central(m)
    terms = {
        "E_fidelity": 0.5 * float((resid.real ** 2 + resid.imag ** 2).sum()),
        "E_tv_m": cfg.lambda1 * float(
            np.sqrt(np.abs(mx) ** 2 + np.abs(my) ** 2).sum()),
        "E_wavelet": cfg.lambda2 * float(np.abs(wavelet_forward(m)).sum()),
        "E_transport": cfg.lambda3 * float(
            np.abs(transport_forward(m, u)).sum()),
    }
    g = grad_flow_forward(u)
    terms["E_tv_u"] = cfg.lambda4 * float(
        np.sqrt((g * g).sum(axis=(-2, -1))).sum())
    fit = 0.0
    l1 = 0.0
    if dictionary is not None and codes is not None:
        for comp, d, a in ((0, dictionary.dx, codes.ax),
                           (1, dictionary.dy, codes.ay)):
            r = extract_patches(u[..., comp], geom) - \
                np.einsum("ij,jpt->ipt", d, a)
            fit += float((r * r).sum())
            l1 += float(np.abs(a).sum())
    terms["E_sparse_fit"] = cfg.lambda5 * fit
    terms["E_sparse_l1"] = cfg.lambda6 * l1
    return terms


def total_energy(state, f, mask, cfg, geom=None):
    """Sum of all seven joint-model terms evaluated at the state."""
    if geom is None:
        geom = make_patch_geometry(state.m.shape[0], state.m.shape[1],
                                   cfg.patch_size, cfg.patch_stride)
    return sum(energy_terms(state.m, state.u, state.dictionary, state.codes,
                            f, mask, cfg, geom).values())


def _transport_u_energy(m, u, dictionary, codes, cfg, geom):
    """u-dependent part of the joint energy with the complex-image
    transport convention (used to guard the flow block, whose own solve
    measures brightness on the magnitude image)."""
    e = cfg.lambda3 * float(np.abs(transport_forward(m, u)).sum())
    g = grad_flow_forward(u)
    e += cfg.lambda4 * float(np.sqrt((g * g).sum(axis=(-2, -1))).sum())
    if dictionary is not None and codes is not None:
        for comp, d, a in ((0, dictionary.dx, codes.ax),
                           (1, dictionary.dy, codes.ay)):
            r = extract_patches(u[..., comp], geom) - \
                np.einsum("ij,jpt->ipt", d, a)
            e += cfg.lambda5 * float((r * r).sum())
    return e


def zero_filled(f, mask):
    """Inverse-Fourier reconstruction with unsampled frequencies at zero."""
    from .operators import fourier_undersampled_adjoint
    return fourier_undersampled_adjoint(f, mask)


def joint_reconstruct(f, mask, cfg: SolverConfig, dictionary=None, init="zf"):
    """Full pipeline: initialization, dictionary learning and the outer
    alternating loop.

    ``init="zf"`` starts from the zero-filled reconstruction, ``"cs"``
    from a motion-free compressed-sensing solve. When no ``dictionary``
    is supplied one is learnt from the TV-L1 flow of the initial image;
    a supplied dictionary is used as-is (the transfer workflow) and only
    its codes are fitted. Returns ``(m, u, codes, report)``.
    """
    start = time.perf_counter()
    f = np.asarray(f, dtype=np.complex128)
    mk = broadcast_mask(mask, f.shape)
    if float(mk.sum()) == 0.0:
        raise EmptyMask("mask selects no k-space samples")
    if init not in ("zf", "cs"):
        raise ValueError(f"init must be 'zf' or 'cs', got {init!r}")

    report = JointReport()
    nx, ny, nt = f.shape
    if dictionary is not None:
        # a pretrained dictionary dictates the patch size
        ps = int(round(dictionary.patch_len ** 0.5))
        if ps * ps != dictionary.patch_len:
            raise ValueError(
                f"dictionary rows {dictionary.patch_len} are not square")
        geom = make_patch_geometry(nx, ny, ps, min(cfg.patch_stride, ps))
    else:
        geom = make_patch_geometry(nx, ny, cfg.patch_size, cfg.patch_stride)

    m = zero_filled(f, mask)
    if init == "cs":
        cs_cfg = cfg.replace(lambda3=0.0)
        m, _, _ = reconstruct_with_state(f, mask, None, cs_cfg, m)

    u = tvl1_flow(m, cfg)
    if dictionary is None:
        learned = learn_dictionary(u, geom, cfg.dict_atoms, cfg.sparsity_eps,
                                   max_iter=cfg.max_inner, seed=cfg.dict_seed)
        dictionary = learned.dictionary
        codes = learned.codes
    else:
        codes = fit_codes(u, dictionary, geom,
                          min(cfg.sparsity_eps, dictionary.n_atoms),
                          max_iter=cfg.max_inner)

    state = JointState(m, u, dictionary, codes)

    def log_row(it):
        terms = energy_terms(state.m, state.u, dictionary, state.codes,
                             f, mask, cfg, geom)
        total = sum(terms.values())
        state.energy_log.append(total)
        report.rows.append((it, total, terms["E_fidelity"], terms["E_tv_m"],
                            terms["E_wavelet"], terms["E_transport"],
                            terms["E_tv_u"], terms["E_sparse_fit"],
                            terms["E_sparse_l1"],
                            time.perf_counter() - start))
        return total

    log_row(0)

    duals = None
    report.stop_reason = "max_outer reached"
    if cfg.max_outer == 0:
        report.stop_reason = "max_outer is zero"
    for it in range(1, cfg.max_outer + 1):
        m_prev = state.m
        state.m, duals, cp_result = reconstruct_with_state(
            f, mask, state.u, cfg, state.m, duals=duals)
        report.warnings.extend(cp_result.warnings)
        report.block_energies.append(
            (it, "image", total_energy(state, f, mask, cfg, geom)))

        u_new = solve_flow(state.m, dictionary, state.codes, cfg, state.u,
                           geom=geom)
        # flow solve measures brightness on |m|; accept only if the joint
        # energy (complex transport) does not increase
        e_old = _transport_u_energy(state.m, state.u, dictionary, state.codes,
                                    cfg, geom)
        e_new = _transport_u_energy(state.m, u_new, dictionary, state.codes,
                                    cfg, geom)
        if e_new <= e_old:
            state.u = u_new
        report.block_energies.append(
            (it, "flow", total_energy(state, f, mask, cfg, geom)))

        state.codes = sparse_code(state.u, dictionary, cfg, state.codes,
                                  geom=geom)
        report.block_energies.append(
            (it, "codes", total_energy(state, f, mask, cfg, geom)))

        state.outer_iter = it
        log_row(it)
        dm = float(np.linalg.norm((state.m - m_prev).ravel()))
        mn = float(np.linalg.norm(m_prev.ravel()))
        if dm <= cfg.eps_outer * mn:
            report.stop_reason = (
                f"relative image change {dm / mn if mn else 0.0:.3e} below "
                f"{cfg.eps_outer} at outer iteration {it}")
            break

    report.seconds = time.perf_counter() - start
    return state.m, state.u, state.codes, report


def write_report_csv(report, path):
    """Emit the per-iteration energy rows as CSV (atomic write)."""
    import os
    import tempfile
    lines = [",".join(REPORT_COLUMNS)]
    for row in report.rows:
        lines.append(",".join(
            str(v) if isinstance(v, int) else f"{v:.12g}" for v in row))
    payload = ("\n".join(lines) + "\n").encode()
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".csv-tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise
