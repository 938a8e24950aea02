"""Reconstruction quality metrics: PSNR and windowed SSIM, per frame and
sequence-averaged. Complex inputs are reduced to magnitudes; SSIM
normalizes both images by the ground-truth maximum."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


class ZeroReference(ValueError):
    """The reference image is identically zero."""


@dataclass
class MetricReport:
    per_frame_psnr: list
    per_frame_ssim: list
    mean_psnr: float
    mean_ssim: float


def psnr(m_gt, m_rec):
    """10 log10(max(m^2) / mean((m - m_rec)^2)) on magnitude images, in dB.

    A zero error returns +inf; an all-zero reference is rejected.
    """
    a = np.abs(np.asarray(m_gt)).astype(np.float64)
    b = np.abs(np.asarray(m_rec)).astype(np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    peak = float((a * a).max())
    if peak == 0.0:
        raise ZeroReference("reference image is identically zero")
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak / mse)


def _gaussian_kernel():
    half = SSIM_WINDOW // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * SSIM_SIGMA ** 2))
    return g / g.sum()


def _window_mean(img, kernel):
    """Separable correlation with symmetric boundary handling."""
    half = len(kernel) // 2
    padded = np.pad(img, ((half, half), (0, 0)), mode="symmetric")
    out = np.zeros_like(img)
    for k, w in enumerate(kernel):
        out += w * padded[k:k + img.shape[0], :]
    padded = np.pad(out, ((0, 0), (half, half)), mode="symmetric")
    out = np.zeros_like(img)
    for k, w in enumerate(kernel):
        out += w * padded[:, k:k + img.shape[1]]
    return out


def ssim(m_gt, m_rec):
    """Mean structural similarity over Gaussian-weighted local windows.

    Both magnitudes are normalized to [0, 1] by the ground-truth max
    before evaluating the standard formula with C1=1e-4, C2=9e-4.
    """
    a = np.abs(np.asarray(m_gt)).astype(np.float64)
    b = np.abs(np.asarray(m_rec)).astype(np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ShapeMismatch(f"expected 2-D frames, got {a.shape}")
    peak = float(a.max())
    if peak > 0.0:
        a = a / peak
        b = b / peak
    kernel = _gaussian_kernel()
    mu_a = _window_mean(a, kernel)
    mu_b = _window_mean(b, kernel)
    var_a = _window_mean(a * a, kernel) - mu_a * mu_a
    var_b = _window_mean(b * b, kernel) - mu_b * mu_b
    cov = _window_mean(a * b, kernel) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float((num / den).mean())


def sequence_metrics(m_gt_seq, m_rec_seq):
    """Per-frame PSNR/SSIM plus their arithmetic means over frames."""
    gt = np.asarray(m_gt_seq)
    rec = np.asarray(m_rec_seq)
    if gt.shape != rec.shape:
        raise ShapeMismatch(f"{gt.shape} vs {rec.shape}")
    if gt.ndim != 3:
        raise ShapeMismatch(f"expected (Nx, Ny, Nt), got {gt.shape}")
    psnrs = [psnr(gt[:, :, t], rec[:, :, t]) for t in range(gt.shape[2])]
    ssims = [ssim(gt[:, :, t], rec[:, :, t]) for t in range(gt.shape[2])]
    return MetricReport(psnrs, ssims,
                        float(np.mean(psnrs)), float(np.mean(ssims)))
