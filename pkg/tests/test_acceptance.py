"""Acceptance suite: one test per criterion, each printing a pass line.

Run with ``pytest tests/test_acceptance.py -v -s``. The end-to-end
expected dB values were derived from over-converged reference runs of the
same seeded instances and are pinned with +/-0.2 dB tolerance; the
budgeted runs below were verified to be budget-insensitive (identical
PSNR across max_inner 800/1200/2000) before pinning.
"""

import time
import warnings

import numpy as np
import pytest

from conftest import adjoint_error, crandn
from mrirdlmc.config import SolverConfig
from mrirdlmc.cp import SaddleProblem, chambolle_pock
from mrirdlmc.datagen import (Ellipse, PhantomSpec, acquire,
                              make_mask_sequence, make_phantom)
from mrirdlmc.dictionary import learn_dictionary, random_dictionary, sparse_code
from mrirdlmc.flow import tvl1_flow
from mrirdlmc.joint import joint_reconstruct, zero_filled
from mrirdlmc.metrics import SSIM_C1, SSIM_C2, psnr, sequence_metrics, ssim
from mrirdlmc.operators import (aggregate_patches, divergence_flow,
                                dt_adjoint, dt_forward, extract_patches,
                                fourier_undersampled,
                                fourier_undersampled_adjoint,
                                grad_flow_forward, grad_spatial_central,
                                grad_spatial_central_adjoint,
                                make_patch_geometry, wavelet_adjoint,
                                wavelet_forward)
from mrirdlmc.prox import prox_flow_data, prox_l1_dual, resolvent_l2_fidelity

# ---------------------------------------------------------------------------
# the shared end-to-end instance (criteria 6, 7, 9)

NOISE_STD = 0.02
MASK_SEED = 11
ACCEL = 4.0

# pinned from over-converged reference runs of these seeded instances
# (max_inner=2000 for the joint; the CS value is identical across
# max_inner 800/1200/2000 at four decimals)
EXPECTED_ZF_DB = 24.14
EXPECTED_CS_DB = 31.94
EXPECTED_JOINT_DB = 36.50
DB_TOL = 0.2


def _phantom_b():
    spec = PhantomSpec(nx=64, ny=64, nt=8, shapes=[
        Ellipse(cx=32.0, cy=32.0, ax=14.0, ay=11.0, intensity=0.9,
                pulse_amp=0.15, pulse_period=8.0, edge=3.0),
        Ellipse(cx=14.0, cy=14.0, ax=5.0, ay=5.0, intensity=0.6, edge=2.0),
        Ellipse(cx=50.0, cy=47.0, ax=6.0, ay=4.0, intensity=0.4, edge=2.0)])
    return make_phantom(spec)


def _phantom_a():
    spec = PhantomSpec(nx=64, ny=64, nt=8, shapes=[
        Ellipse(cx=24.0, cy=28.0, ax=10.0, ay=9.0, intensity=0.8, vx=1.0,
                vy=0.5, edge=6.0),
        Ellipse(cx=46.0, cy=20.0, ax=6.0, ay=6.0, intensity=0.5, vx=-0.5,
                vy=0.75, edge=4.0)])
    return make_phantom(spec)


def _joint_cfg(**overrides):
    base = dict(lambda3=0.02, lambda4=0.005, lambda5=0.1,
                dict_atoms=64, patch_size=8, patch_stride=4,
                sigma_recon=0.15, tau_recon=0.15, max_inner=1200)
    base.update(overrides)
    return SolverConfig(**base)


@pytest.fixture(scope="module")
def endtoend():
    """ZF/CS/joint runs on the criterion-6 phantom, shared by 6, 7, 9."""
    start = time.time()
    m_gt, u_gt = _phantom_b()
    mask = make_mask_sequence(64, ACCEL, 8, seed=MASK_SEED, frames=8)
    f = acquire(m_gt, mask, NOISE_STD, seed=0)
    zf = zero_filled(f, mask)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cs, _, _, cs_report = joint_reconstruct(
            f, mask, _joint_cfg(lambda3=0.0, lambda4=0.0, lambda5=0.0,
                                lambda6=0.0))
        joint, u, codes, report = joint_reconstruct(f, mask, _joint_cfg())
    return dict(m_gt=m_gt, mask=mask, f=f, zf=zf, cs=cs, joint=joint,
                report=report, cfg=_joint_cfg(), seconds=time.time() - start)


# ---------------------------------------------------------------------------
# criterion 1: adjoint identities

def test_criterion_1_adjoint_suite():
    start = time.time()
    rng = np.random.default_rng(1001)
    worst = 0.0
    trials = 100
    for _ in range(trials):
        nx, ny, nt = rng.integers(3, 9, size=3)
        m = crandn(rng, (nx, ny, nt))
        ym = crandn(rng, (nx, ny, nt))

        mx, my = grad_spatial_central(m)
        pair = (crandn(rng, (nx, ny, nt)), crandn(rng, (nx, ny, nt)))
        worst = max(worst, adjoint_error(
            np.stack([mx, my]), np.stack(pair), m,
            grad_spatial_central_adjoint(pair)))

        worst = max(worst, adjoint_error(dt_forward(m), ym, m, dt_adjoint(ym)))

        u = rng.standard_normal((nx, ny, max(nt - 1, 1), 2))
        yg = rng.standard_normal(u.shape + (2,))
        worst = max(worst, adjoint_error(grad_flow_forward(u), yg, u,
                                         -divergence_flow(yg)))

        mask = (rng.random((nx, ny)) < 0.6).astype(float)
        mask[0, 0] = 1.0
        worst = max(worst, adjoint_error(
            fourier_undersampled(m, mask), ym, m,
            fourier_undersampled_adjoint(ym, mask)))

        w = crandn(rng, (8, 8, nt))
        yw = crandn(rng, (8, 8, nt))
        worst = max(worst, adjoint_error(wavelet_forward(w), yw, w,
                                         wavelet_adjoint(yw)))

        ps = int(rng.integers(2, 4))
        stride = int(rng.integers(1, ps + 1))
        gx = int(rng.integers(ps, 9))
        gy = int(rng.integers(ps, 9))
        geom = make_patch_geometry(gx, gy, ps, stride)
        field = rng.standard_normal((gx, gy, 2))
        yp = rng.standard_normal((ps * ps, geom.n_patches, 2))
        worst = max(worst, adjoint_error(extract_patches(field, geom), yp,
                                         field, aggregate_patches(yp, geom)))
    elapsed = time.time() - start
    assert worst < 1e-10
    assert elapsed < 10.0
    print(f"\nPASS criterion 1: adjoint suite, {trials} trials x 6 pairs, "
          f"worst rel err {worst:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# criterion 2: prox oracles

def _grid_argmin_2d(objective, center, width, steps=401, refine=3):
    cx, cy = center
    for _ in range(refine):
        xs = np.linspace(cx - width, cx + width, steps)
        ys = np.linspace(cy - width, cy + width, steps)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        vals = objective(gx, gy)
        k = np.unravel_index(np.argmin(vals), vals.shape)
        cx, cy = xs[k[0]], ys[k[1]]
        width = 4.0 * width / steps
    return cx, cy


def test_criterion_2_prox_oracles():
    start = time.time()
    rng = np.random.default_rng(2002)

    # prox_flow_data vs dense grid search on scalar instances
    worst_flow = 0.0
    for _ in range(12):
        ux, uy = rng.uniform(-3, 3, 2)
        gx, gy = rng.uniform(-1.5, 1.5, 2)
        mt = rng.uniform(-1, 1)
        tau = rng.uniform(0.1, 1.0)
        lam3 = rng.uniform(0.1, 2.0)
        lam5 = rng.choice([0.0, 0.5, 2.0])
        cov = rng.integers(1, 5) if lam5 else 0.0
        bx, by = rng.uniform(-2, 2, 2) if lam5 else (0.0, 0.0)

        def obj(vx, vy):
            val = ((vx - ux) ** 2 + (vy - uy) ** 2) / (2 * tau) + \
                lam3 * np.abs(mt + vx * gx + vy * gy)
            if lam5:
                val = val + lam5 * (cov * (vx ** 2 + vy ** 2)
                                    - 2 * (vx * bx + vy * by))
            return val

        u = np.array([[[ [ux, uy] ]]], dtype=float)
        grad = np.array([[[ [gx, gy] ]]], dtype=float)
        dt = np.full((1, 1, 1), mt)
        back = np.array([[[ [bx, by] ]]], dtype=float)
        got = prox_flow_data(u, grad, dt, back, np.full((1, 1), cov),
                             tau, lam3, lam5)[0, 0, 0]
        ox, oy = _grid_argmin_2d(obj, (ux, uy), 5.0)
        worst_flow = max(worst_flow, abs(got[0] - ox), abs(got[1] - oy))
    assert worst_flow < 1e-4

    # prox_l1_dual: Moreau identity against the soft-threshold closed form
    worst_l1 = 0.0
    for x in np.linspace(-3, 3, 25):
        for tlam in (0.3, 1.0, 2.5):
            shrink = np.sign(x) * max(abs(x) - tlam, 0.0)
            worst_l1 = max(worst_l1,
                           abs((x - prox_l1_dual(np.array(x), tlam)) - shrink))
    assert worst_l1 < 1e-8

    # resolvent_l2_fidelity vs 1-D grid search
    y0, fval, sigma = 1.3, -0.4, 0.7
    ys = np.linspace(-4, 4, 400001)
    oracle = ys[np.argmin((ys - y0) ** 2 / (2 * sigma) + 0.5 * ys ** 2
                          + ys * fval)]
    got = resolvent_l2_fidelity(np.array([y0]), np.array([fval]), sigma)[0]
    assert abs(got - oracle) < 1e-4

    # sparse_code on the scalar LASSO instance: minimizer 3 - 1 = 2
    from mrirdlmc.dictionary import FlowDictionary
    geom = make_patch_geometry(1, 1, 1, 1)
    d = FlowDictionary(np.ones((1, 1)), np.ones((1, 1)))
    cfg = SolverConfig(lambda5=0.5, lambda6=1.0, dict_atoms=1, sparsity_eps=1,
                       patch_size=1, patch_stride=1, max_inner=400)
    codes = sparse_code(np.full((1, 1, 1, 2), 3.0), d, cfg, geom=geom, tol=0.0)
    assert abs(codes.ax[0, 0, 0] - 2.0) < 1e-4

    elapsed = time.time() - start
    assert elapsed < 30.0
    print(f"\nPASS criterion 2: prox oracles, flow prox worst {worst_flow:.2e}, "
          f"dual clamp worst {worst_l1:.2e}, LASSO |a-2|"
          f"={abs(codes.ax[0, 0, 0] - 2.0):.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# criterion 3: generic primal-dual solver

def test_criterion_3_cp_solver():
    rng = np.random.default_rng(3003)
    b = rng.standard_normal(40)
    identity = SaddleProblem(
        apply_C=lambda x: x,
        apply_C_adjoint=lambda y: y,
        resolvent_Fstar=lambda y, sigma: np.zeros_like(y),
        resolvent_G=lambda x, tau: (x + tau * b) / (1.0 + tau),
        norm_bound_C=1.0)
    res = chambolle_pock(identity, np.zeros(40), 1.0, 1.0, 1.0, 0.0, 200)
    ls_err = np.linalg.norm(res.x - b) / np.linalg.norm(b)
    assert ls_err < 1e-6

    k1 = k2 = 6
    step = np.concatenate([np.zeros(k1), np.ones(k2)])
    lam = 0.8

    def diff(x):
        return x[1:] - x[:-1]

    def diff_t(y):
        out = np.zeros(len(y) + 1)
        out[:-1] -= y
        out[1:] += y
        return out

    tv = SaddleProblem(
        apply_C=diff, apply_C_adjoint=diff_t,
        resolvent_Fstar=lambda y, sigma: prox_l1_dual(y, lam),
        resolvent_G=lambda x, tau: (x + tau * step) / (1.0 + tau),
        norm_bound_C=2.0)
    res = chambolle_pock(tv, step.copy(), 0.45, 0.45, 1.0, 0.0, 4000)

    # exhaustive two-stage grid search over two-level candidates
    lo1, lo2, width = 0.0, 1.0, 1.0
    for _ in range(4):
        c1s = np.linspace(lo1 - width, lo1 + width, 401)
        c2s = np.linspace(lo2 - width, lo2 + width, 401)
        g1, g2 = np.meshgrid(c1s, c2s, indexing="ij")
        e = 0.5 * (k1 * g1 ** 2 + k2 * (g2 - 1.0) ** 2) + lam * np.abs(g2 - g1)
        k = np.unravel_index(np.argmin(e), e.shape)
        lo1, lo2 = c1s[k[0]], c2s[k[1]]
        width = 4.0 * width / 400
    oracle = np.concatenate([np.full(k1, lo1), np.full(k2, lo2)])
    tv_err = np.abs(res.x - oracle).max()
    assert tv_err < 1e-4
    print(f"\nPASS criterion 3: least squares rel err {ls_err:.2e} "
          f"(<=200 iters), TV-1D vs grid oracle max err {tv_err:.2e}")


# ---------------------------------------------------------------------------
# criterion 4: dictionary learning

def test_criterion_4_dictionary_learning():
    start = time.time()
    geom = make_patch_geometry(8, 8, 4, 4)
    nd = 8
    rng = np.random.default_rng(7)
    d0x = random_dictionary(16, nd, seed=507)
    d0y = random_dictionary(16, nd, seed=607)

    def codes():
        a = np.zeros((nd, geom.n_patches, 2))
        a[1] = rng.uniform(0.5, 1.5, (geom.n_patches, 2))
        a[4] = rng.uniform(-1.5, -0.5, (geom.n_patches, 2))
        return a

    ux = aggregate_patches(np.einsum("ij,jpt->ipt", d0x, codes()), geom)
    uy = aggregate_patches(np.einsum("ij,jpt->ipt", d0y, codes()), geom)
    u = np.stack([ux, uy], axis=-1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = learn_dictionary(u, geom, nd, 2, max_iter=3000, tol=0.0, seed=1)
    hist = res.energy_history
    assert hist[-1] < 1e-8
    assert all(b <= a + 1e-10 for a, b in zip(hist, hist[1:]))
    for d in (res.dictionary.dx, res.dictionary.dy):
        assert np.linalg.norm(d, axis=0).max() <= 1.0 + 1e-12
    for a in (res.codes.ax, res.codes.ay):
        assert (np.count_nonzero(a.reshape(nd, -1), axis=0) <= 2).all()
    elapsed = time.time() - start
    assert elapsed < 60.0
    print(f"\nPASS criterion 4: planted recovery fit energy {hist[-1]:.2e}, "
          f"monotone history ({len(hist)} entries), norms/l0 exact, "
          f"{elapsed:.1f}s")


# ---------------------------------------------------------------------------
# criterion 5: flow recovery

def test_criterion_5_flow_recovery():
    start = time.time()
    spec = PhantomSpec(nx=32, ny=32, nt=5, shapes=[
        Ellipse(cx=12.0, cy=16.0, ax=7.0, ay=7.0, intensity=1.0, vx=1.0,
                edge=7.0)])
    m, u_gt = make_phantom(spec)
    support = u_gt[..., 0] != 0
    cfg = SolverConfig(lambda3=1.0, lambda4=0.1)
    u = tvl1_flow(m, cfg, tol=0.0, max_iter=1500)
    mean_ux = float(u[..., 0][support].mean())
    mean_abs_uy = float(np.abs(u[..., 1][support]).mean())
    elapsed = time.time() - start
    assert 0.7 <= mean_ux <= 1.3
    assert mean_abs_uy < 0.2
    assert elapsed < 60.0
    print(f"\nPASS criterion 5: translating blob mean ux {mean_ux:.3f} "
          f"in [0.7, 1.3], mean |uy| {mean_abs_uy:.3f} < 0.2, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# criterion 6: end-to-end ordering

def test_criterion_6_end_to_end_ordering(endtoend):
    start = time.time()
    m_gt = endtoend["m_gt"]
    p_zf = sequence_metrics(m_gt, endtoend["zf"]).mean_psnr
    p_cs = sequence_metrics(m_gt, endtoend["cs"]).mean_psnr
    p_joint = sequence_metrics(m_gt, endtoend["joint"]).mean_psnr

    assert p_zf < p_cs
    assert p_cs <= p_joint + 0.1
    assert p_joint >= p_zf + 2.0
    assert abs(p_zf - EXPECTED_ZF_DB) <= DB_TOL
    assert abs(p_cs - EXPECTED_CS_DB) <= DB_TOL
    assert abs(p_joint - EXPECTED_JOINT_DB) <= DB_TOL
    assert endtoend["seconds"] < 300.0
    print(f"\nPASS criterion 6: ZF {p_zf:.2f} < CS {p_cs:.2f} <= "
          f"joint {p_joint:.2f} dB (pinned {EXPECTED_ZF_DB}/"
          f"{EXPECTED_CS_DB}/{EXPECTED_JOINT_DB} +/-{DB_TOL}), "
          f"joint - ZF = {p_joint - p_zf:.2f} >= 2 dB "
          f"(runs {endtoend['seconds']:.0f}s < 300s, metrics "
          f"{time.time() - start:.0f}s)")


# ---------------------------------------------------------------------------
# criterion 7: block descent and outer stopping

def test_criterion_7_block_descent(endtoend):
    report = endtoend["report"]
    cfg = endtoend["cfg"]
    energies = [e for _, _, e in report.block_energies]
    worst = 0.0
    for before, after in zip(energies, energies[1:]):
        worst = max(worst, (after - before) / before)
        assert after <= before * (1.0 + 1e-6)
    assert cfg.eps_outer == 0.001 and cfg.max_outer == 20
    assert "relative image change" in report.stop_reason
    outer_used = report.rows[-1][0]
    assert outer_used <= 20
    print(f"\nPASS criterion 7: total energy nonincreasing over "
          f"{len(energies)} block solves (worst relative change "
          f"{worst:.2e} <= 1e-6), outer rule fired at iteration "
          f"{outer_used} of max 20")


# ---------------------------------------------------------------------------
# criterion 8: metrics

def test_criterion_8_metrics_exactness():
    rng = np.random.default_rng(8008)
    img = rng.random((16, 16))
    assert ssim(img, img) == 1.0
    ones = np.ones((4, 4))
    assert abs(psnr(ones, np.zeros((4, 4))) - 0.0) < 1e-12
    assert abs(psnr(ones, np.full((4, 4), 0.9)) - 20.0) < 1e-12
    assert SSIM_C1 == 1e-4 and SSIM_C2 == 9e-4
    print("\nPASS criterion 8: ssim(m,m)=1 exact, PSNR 0/20 dB exact to "
          "1e-12, SSIM constants C1=1e-4 C2=9e-4")


# ---------------------------------------------------------------------------
# criterion 9: transfer workflow

def test_criterion_9_transfer_dictionary(endtoend):
    start = time.time()
    m_a, _ = _phantom_a()
    u_a = tvl1_flow(m_a, SolverConfig(lambda3=1.0, lambda4=0.1),
                    tol=0.0, max_iter=1500)
    geom = make_patch_geometry(64, 64, 8, 4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        learned = learn_dictionary(u_a, geom, 64, 44, max_iter=150, seed=1)
        m_tl, _, _, _ = joint_reconstruct(endtoend["f"], endtoend["mask"],
                                          _joint_cfg(),
                                          dictionary=learned.dictionary)
    m_gt = endtoend["m_gt"]
    p_self = sequence_metrics(m_gt, endtoend["joint"]).mean_psnr
    p_transfer = sequence_metrics(m_gt, m_tl).mean_psnr
    assert abs(p_transfer - p_self) <= 1.0
    print(f"\nPASS criterion 9: transfer dictionary (translation phantom) "
          f"on the pulsation phantom: {p_transfer:.2f} dB vs self-trained "
          f"{p_self:.2f} dB, gap {abs(p_transfer - p_self):.3f} <= 1 dB "
          f"({time.time() - start:.0f}s)")


# ---------------------------------------------------------------------------
# criterion 10: CLI determinism

def test_criterion_10_cli_determinism(tmp_path):
    from mrirdlmc.cli import run
    spec = tmp_path / "p.spec"
    spec.write_text("nx=16\nny=16\nnt=3\n"
                    "shape1.cx=7\nshape1.cy=8\nshape1.ax=4\nshape1.ay=4\n"
                    "shape1.intensity=0.9\nshape1.vx=1\nshape1.edge=4\n")
    cfg = tmp_path / "s.cfg"
    cfg.write_text("dict_atoms=8\npatch_size=4\npatch_stride=2\n"
                   "sparsity_eps=5\nmax_inner=30\nmax_outer=2\n")
    assert run(["phantom", "--spec", str(spec),
                "--out-prefix", str(tmp_path / "p")]) == 0
    assert run(["mask", "--ny", "16", "--accel", "2", "--center-lines", "4",
                "--seed", "3", "--frames", "3",
                "--out", str(tmp_path / "mask.ndf")]) == 0
    assert run(["acquire", "--image", str(tmp_path / "p_image.ndf"),
                "--mask", str(tmp_path / "mask.ndf"), "--noise-std", "0.01",
                "--seed", "5", "--out", str(tmp_path / "f.ndf")]) == 0
    base = ["reconstruct", "--kspace", str(tmp_path / "f.ndf"),
            "--mask", str(tmp_path / "mask.ndf"), "--config", str(cfg)]
    assert run(base + ["--out", str(tmp_path / "a.ndf"),
                       "--flow-out", str(tmp_path / "ua.ndf")]) == 0
    assert run(base + ["--out", str(tmp_path / "b.ndf"),
                       "--flow-out", str(tmp_path / "ub.ndf")]) == 0
    assert (tmp_path / "a.ndf").read_bytes() == (tmp_path / "b.ndf").read_bytes()
    assert (tmp_path / "ua.ndf").read_bytes() == (tmp_path / "ub.ndf").read_bytes()
    print("\nPASS criterion 10: identical CLI invocations produce "
          "byte-identical NDF outputs")
