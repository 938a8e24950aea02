"""Command-line surface wiring the modules into reproducible pipelines.

Exit codes: 0 success, 1 usage error, 2 input-format error, 3 numerical
failure. All file outputs are written atomically.
"""

import argparse
import os
import sys

import numpy as np

from . import datagen, dictionary, flow, joint, metrics, tensorio
from .config import ConfigError, SolverConfig, parse_config
from .errors import EmptyMask, NonFiniteIterate, ShapeMismatch
from .operators import GeometryMismatch, BadExtent, make_patch_geometry

_INPUT_ERRORS = (tensorio.NdfError, ConfigError, datagen.SpecViolation,
                 datagen.InfeasibleBudget, ShapeMismatch, EmptyMask,
                 GeometryMismatch, BadExtent, metrics.ZeroReference,
                 OSError, ValueError)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser():
    parser = _Parser(prog="mrirdlmc", description=__doc__)
    parser.add_argument("--threads", type=int, default=None,
                        help="cap internal parallelism (the numerical core "
                             "is sequential; the cap is honored trivially); "
                             "falls back to MRIRDLMC_THREADS")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="rasterize a synthetic phantom")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-prefix", required=True)

    p = sub.add_parser("mask", help="variable-density Cartesian line masks")
    p.add_argument("--ny", type=int, required=True)
    p.add_argument("--accel", type=float, required=True)
    p.add_argument("--center-lines", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=1)
    p.add_argument("--shared", action="store_true",
                   help="one mask for all frames")
    p.add_argument("--exponent", type=float, default=2.0,
                   help="density profile exponent")
    p.add_argument("--out", required=True)

    p = sub.add_parser("acquire", help="simulate undersampled k-space")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("learn-dict", help="learn a flow dictionary")
    p.add_argument("--flow", help="reference flow field (NDF)")
    p.add_argument("--image", help="k-space input for the ZF + TV-L1 path")
    p.add_argument("--mask", help="mask for the ZF + TV-L1 path")
    p.add_argument("--atoms", type=int, default=1024)
    p.add_argument("--patch", type=int, default=16)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--sparsity", type=int, default=None)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--out", required=True)

    p = sub.add_parser("flow", help="optical-flow estimation")
    p.add_argument("--image", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--dict", default=None)
    p.add_argument("--codes", default=None,
                   help="precomputed sparse codes (NDF); fitted when absent")
    p.add_argument("--out", required=True)

    p = sub.add_parser("reconstruct", help="joint reconstruction pipeline")
    p.add_argument("--kspace", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--dict", default=None)
    p.add_argument("--init", choices=("zf", "cs"), default="zf")
    p.add_argument("--out", required=True)
    p.add_argument("--flow-out", default=None)
    p.add_argument("--codes-out", default=None)
    p.add_argument("--report", default=None)

    p = sub.add_parser("metrics", help="PSNR/SSIM against a ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--rec", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("export", help="export a frame as 16-bit PGM")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def _load_config(path):
    return parse_config(path) if path else SolverConfig()


def _load_dictionary(path):
    stacked = tensorio.read_ndf(path)
    if stacked.ndim != 3 or stacked.shape[2] != 2:
        raise ShapeMismatch(
            f"dictionary file must be (patch^2, atoms, 2), got {stacked.shape}")
    return dictionary.FlowDictionary(stacked[:, :, 0].copy(),
                                     stacked[:, :, 1].copy())


def _save_dictionary(d, path):
    tensorio.write_ndf(np.stack((d.dx, d.dy), axis=-1), path)


def _codes_to_tensor(codes):
    return np.stack((codes.ax, codes.ay), axis=-1)


def _tensor_to_codes(arr):
    if arr.ndim != 4 or arr.shape[3] != 2:
        raise ShapeMismatch(
            f"codes file must be (atoms, patches, T, 2), got {arr.shape}")
    return dictionary.SparseCodes(arr[..., 0].copy(), arr[..., 1].copy())


def _write_csv(path, header, rows):
    import tempfile
    lines = [",".join(header)]
    lines += [",".join(str(v) for v in row) for row in rows]
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


def _cmd_phantom(args):
    spec = datagen.parse_phantom_spec(args.spec)
    m, u = datagen.make_phantom(spec)
    tensorio.write_ndf(m, f"{args.out_prefix}_image.ndf")
    if u.shape[2] > 0:
        tensorio.write_ndf(u, f"{args.out_prefix}_flow.ndf")
    return 0


def _cmd_mask(args):
    mask = datagen.make_mask_sequence(args.ny, args.accel, args.center_lines,
                                      args.seed, frames=args.frames,
                                      shared=args.shared,
                                      exponent=args.exponent)
    tensorio.write_ndf(mask, args.out)
    return 0


def _cmd_acquire(args):
    m = tensorio.read_ndf(args.image)
    mask = tensorio.read_ndf(args.mask)
    tensorio.write_ndf(datagen.acquire(m, mask, args.noise_std, args.seed),
                       args.out)
    return 0


def _cmd_learn_dict(args):
    cfg = SolverConfig()
    if args.flow:
        u = tensorio.read_ndf(args.flow)
        if u.ndim != 4 or u.shape[3] != 2:
            raise ShapeMismatch(f"flow file must be (Nx, Ny, T, 2), got {u.shape}")
    elif args.image and args.mask:
        f = tensorio.read_ndf(args.image)
        mask = tensorio.read_ndf(args.mask)
        m0 = joint.zero_filled(f, mask)
        u = flow.tvl1_flow(m0, cfg)
    else:
        raise _UsageError("learn-dict needs --flow or both --image and --mask")
    stride = args.stride if args.stride is not None else max(1, args.patch // 2)
    sparsity = args.sparsity if args.sparsity is not None \
        else max(1, int(0.7 * args.atoms))
    geom = make_patch_geometry(u.shape[0], u.shape[1], args.patch, stride)
    result = dictionary.learn_dictionary(u, geom, args.atoms, sparsity,
                                         max_iter=args.iters, seed=args.seed)
    _save_dictionary(result.dictionary, args.out)
    return 0


def _cmd_flow(args):
    cfg = _load_config(args.config)
    m = tensorio.read_ndf(args.image)
    if args.dict:
        d = _load_dictionary(args.dict)
        ps = int(round(d.patch_len ** 0.5))
        geom = make_patch_geometry(m.shape[0], m.shape[1], ps,
                                   min(cfg.patch_stride, ps))
        u0 = flow.tvl1_flow(m, cfg)
        if args.codes:
            codes = _tensor_to_codes(tensorio.read_ndf(args.codes))
        else:
            codes = dictionary.fit_codes(u0, d, geom,
                                         min(cfg.sparsity_eps, d.n_atoms))
        u = flow.solve_flow(m, d, codes, cfg, u0, geom=geom)
    else:
        u = flow.tvl1_flow(m, cfg)
    tensorio.write_ndf(u, args.out)
    return 0


def _cmd_reconstruct(args):
    cfg = _load_config(args.config)
    f = tensorio.read_ndf(args.kspace)
    mask = tensorio.read_ndf(args.mask)
    d = _load_dictionary(args.dict) if args.dict else None
    m, u, codes, report = joint.joint_reconstruct(f, mask, cfg, dictionary=d,
                                                  init=args.init)
    tensorio.write_ndf(m, args.out)
    if args.flow_out:
        tensorio.write_ndf(u, args.flow_out)
    if args.codes_out:
        tensorio.write_ndf(_codes_to_tensor(codes), args.codes_out)
    if args.report:
        joint.write_report_csv(report, args.report)
    return 0


def _cmd_metrics(args):
    gt = tensorio.read_ndf(args.gt)
    rec = tensorio.read_ndf(args.rec)
    report = metrics.sequence_metrics(gt, rec)
    rows = [(t, f"{p:.12g}", f"{s:.12g}") for t, (p, s) in
            enumerate(zip(report.per_frame_psnr, report.per_frame_ssim))]
    rows.append(("mean", f"{report.mean_psnr:.12g}",
                 f"{report.mean_ssim:.12g}"))
    _write_csv(args.out, ("frame_index", "psnr_db", "ssim"), rows)
    return 0


def _cmd_export(args):
    arr = tensorio.read_ndf(args.infile)
    if arr.ndim == 2:
        frame = arr
    elif arr.ndim == 3:
        if not 0 <= args.frame < arr.shape[2]:
            raise ShapeMismatch(f"frame {args.frame} outside 0..{arr.shape[2] - 1}")
        frame = arr[:, :, args.frame]
    elif arr.ndim == 4 and arr.shape[3] == 2:
        if not 0 <= args.frame < arr.shape[2]:
            raise ShapeMismatch(f"frame {args.frame} outside 0..{arr.shape[2] - 1}")
        frame = np.sqrt((arr[:, :, args.frame] ** 2).sum(axis=-1))
    else:
        raise ShapeMismatch(f"cannot export shape {arr.shape}")
    tensorio.export_pgm(frame, args.out)
    return 0


_DISPATCH = {
    "phantom": _cmd_phantom,
    "mask": _cmd_mask,
    "acquire": _cmd_acquire,
    "learn-dict": _cmd_learn_dict,
    "flow": _cmd_flow,
    "reconstruct": _cmd_reconstruct,
    "metrics": _cmd_metrics,
    "export": _cmd_export,
}


def run(argv=None):
    """Parse argv and execute one command; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads is None:
            args.threads = int(os.environ.get("MRIRDLMC_THREADS",
                                              os.cpu_count() or 1))
        return _DISPATCH[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except NonFiniteIterate as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())
