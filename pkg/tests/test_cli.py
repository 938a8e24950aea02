import numpy as np
import pytest

from mrirdlmc import tensorio
from mrirdlmc.cli import run

PHANTOM_SPEC = """
nx=16
ny=16
nt=3
shape1.cx=7
shape1.cy=8
shape1.ax=4
shape1.ay=4
shape1.intensity=0.9
shape1.vx=1
shape1.edge=4
"""

SMALL_CFG = """
dict_atoms=8
patch_size=4
patch_stride=2
sparsity_eps=5
max_inner=30
max_outer=2
"""


@pytest.fixture
def workspace(tmp_path):
    spec = tmp_path / "phantom.spec"
    spec.write_text(PHANTOM_SPEC)
    cfg = tmp_path / "solver.cfg"
    cfg.write_text(SMALL_CFG)
    return tmp_path


def _prepare_inputs(ws):
    assert run(["phantom", "--spec", str(ws / "phantom.spec"),
                "--out-prefix", str(ws / "p")]) == 0
    assert run(["mask", "--ny", "16", "--accel", "2", "--center-lines", "4",
                "--seed", "3", "--frames", "3", "--out", str(ws / "mask.ndf")]) == 0
    assert run(["acquire", "--image", str(ws / "p_image.ndf"),
                "--mask", str(ws / "mask.ndf"), "--noise-std", "0.01",
                "--seed", "5", "--out", str(ws / "f.ndf")]) == 0


def test_phantom_and_mask_and_acquire(workspace):
    _prepare_inputs(workspace)
    m = tensorio.read_ndf(workspace / "p_image.ndf")
    u = tensorio.read_ndf(workspace / "p_flow.ndf")
    mask = tensorio.read_ndf(workspace / "mask.ndf")
    f = tensorio.read_ndf(workspace / "f.ndf")
    assert m.shape == (16, 16, 3) and m.dtype == np.complex128
    assert u.shape == (16, 16, 2, 2)
    assert mask.shape == (16, 16, 3)
    assert f.shape == (16, 16, 3)


def test_full_pipeline_exit_codes_and_outputs(workspace):
    ws = workspace
    _prepare_inputs(ws)
    code = run(["reconstruct", "--kspace", str(ws / "f.ndf"),
                "--mask", str(ws / "mask.ndf"),
                "--config", str(ws / "solver.cfg"),
                "--out", str(ws / "rec.ndf"),
                "--flow-out", str(ws / "u.ndf"),
                "--codes-out", str(ws / "a.ndf"),
                "--report", str(ws / "report.csv")])
    assert code == 0
    rec = tensorio.read_ndf(ws / "rec.ndf")
    assert rec.shape == (16, 16, 3)
    assert tensorio.read_ndf(ws / "u.ndf").shape == (16, 16, 2, 2)
    codes = tensorio.read_ndf(ws / "a.ndf")
    assert codes.shape[0] == 8 and codes.shape[3] == 2
    header = (ws / "report.csv").read_text().splitlines()[0]
    assert header.startswith("outer_iter,E_total,E_fidelity")

    assert run(["metrics", "--gt", str(ws / "p_image.ndf"),
                "--rec", str(ws / "rec.ndf"),
                "--out", str(ws / "metrics.csv")]) == 0
    lines = (ws / "metrics.csv").read_text().strip().splitlines()
    assert lines[0] == "frame_index,psnr_db,ssim"
    assert len(lines) == 1 + 3 + 1 and lines[-1].startswith("mean,")

    assert run(["export", "--in", str(ws / "rec.ndf"), "--frame", "1",
                "--out", str(ws / "rec.pgm")]) == 0
    assert (ws / "rec.pgm").read_bytes().startswith(b"P5\n16 16\n65535\n")


def test_learn_dict_and_flow_commands(workspace):
    ws = workspace
    _prepare_inputs(ws)
    assert run(["flow", "--image", str(ws / "p_image.ndf"),
                "--config", str(ws / "solver.cfg"),
                "--out", str(ws / "tvl1.ndf")]) == 0
    assert run(["learn-dict", "--flow", str(ws / "tvl1.ndf"),
                "--atoms", "8", "--patch", "4", "--stride", "2",
                "--sparsity", "5", "--seed", "2", "--iters", "50",
                "--out", str(ws / "dict.ndf")]) == 0
    d = tensorio.read_ndf(ws / "dict.ndf")
    assert d.shape == (16, 8, 2)
    # the ZF + TV-L1 training path
    assert run(["learn-dict", "--image", str(ws / "f.ndf"),
                "--mask", str(ws / "mask.ndf"),
                "--atoms", "8", "--patch", "4", "--stride", "2",
                "--sparsity", "5", "--iters", "30",
                "--out", str(ws / "dict2.ndf")]) == 0
    # transfer-style flow solve with the dictionary
    assert run(["flow", "--image", str(ws / "p_image.ndf"),
                "--config", str(ws / "solver.cfg"),
                "--dict", str(ws / "dict.ndf"),
                "--out", str(ws / "u_dict.ndf")]) == 0
    assert tensorio.read_ndf(ws / "u_dict.ndf").shape == (16, 16, 2, 2)


def test_reconstruct_with_pretrained_dict_and_cs_init(workspace):
    ws = workspace
    _prepare_inputs(ws)
    assert run(["flow", "--image", str(ws / "p_image.ndf"),
                "--out", str(ws / "tvl1.ndf")]) == 0
    assert run(["learn-dict", "--flow", str(ws / "tvl1.ndf"),
                "--atoms", "8", "--patch", "4", "--stride", "2",
                "--sparsity", "5", "--iters", "40",
                "--out", str(ws / "dict.ndf")]) == 0
    assert run(["reconstruct", "--kspace", str(ws / "f.ndf"),
                "--mask", str(ws / "mask.ndf"),
                "--config", str(ws / "solver.cfg"),
                "--dict", str(ws / "dict.ndf"), "--init", "cs",
                "--out", str(ws / "rec2.ndf")]) == 0
    assert tensorio.read_ndf(ws / "rec2.ndf").shape == (16, 16, 3)


def test_usage_errors_exit_1(workspace, capsys):
    assert run(["reconstruct", "--mask", "m.ndf", "--out", "o.ndf"]) == 1
    assert "usage" in capsys.readouterr().err.lower()
    assert run(["bogus-command"]) == 1
    assert run([]) == 1
    assert run(["learn-dict", "--out", "d.ndf"]) == 1


def test_bad_input_files_exit_2(workspace, capsys):
    ws = workspace
    bad = ws / "bad.ndf"
    bad.write_bytes(b"XYZ1" + b"\x00" * 64)
    mask = ws / "mask1.ndf"
    tensorio.write_ndf(np.ones((16, 16)), mask)
    assert run(["reconstruct", "--kspace", str(bad), "--mask", str(mask),
                "--out", str(ws / "r.ndf")]) == 2
    assert run(["reconstruct", "--kspace", str(ws / "missing.ndf"),
                "--mask", str(mask), "--out", str(ws / "r.ndf")]) == 2
    cfg = ws / "broken.cfg"
    cfg.write_text("lambda9=1\n")
    tensorio.write_ndf(np.ones((4, 4, 1), dtype=complex), ws / "f1.ndf")
    assert run(["reconstruct", "--kspace", str(ws / "f1.ndf"),
                "--mask", str(mask), "--config", str(cfg),
                "--out", str(ws / "r.ndf")]) == 2


def test_export_errors(workspace):
    ws = workspace
    tensorio.write_ndf(np.ones((4, 4, 2), dtype=complex), ws / "t.ndf")
    assert run(["export", "--in", str(ws / "t.ndf"), "--frame", "5",
                "--out", str(ws / "t.pgm")]) == 2


def test_determinism_byte_identical(workspace):
    ws = workspace
    _prepare_inputs(ws)
    args = ["reconstruct", "--kspace", str(ws / "f.ndf"),
            "--mask", str(ws / "mask.ndf"),
            "--config", str(ws / "solver.cfg")]
    assert run(args + ["--out", str(ws / "rec_a.ndf")]) == 0
    assert run(args + ["--out", str(ws / "rec_b.ndf")]) == 0
    assert (ws / "rec_a.ndf").read_bytes() == (ws / "rec_b.ndf").read_bytes()

    mask_args = ["mask", "--ny", "32", "--accel", "4", "--seed", "9"]
    assert run(mask_args + ["--out", str(ws / "m_a.ndf")]) == 0
    assert run(mask_args + ["--out", str(ws / "m_b.ndf")]) == 0
    assert (ws / "m_a.ndf").read_bytes() == (ws / "m_b.ndf").read_bytes()


def test_no_partial_output_on_failure(workspace):
    ws = workspace
    bad = ws / "bad.ndf"
    bad.write_bytes(b"NDF1" + bytes([0x01, 2]) + (4).to_bytes(8, "little") * 2
                    + b"\x00" * 8)  # truncated payload
    out = ws / "never.ndf"
    assert run(["export", "--in", str(bad), "--out", str(out)]) == 2
    assert not out.exists()
