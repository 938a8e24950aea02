"""Discrete linear operators and their adjoints.

Image sequences are arrays of shape (Nx, Ny, Nt); flow fields are real
arrays of shape (Nx, Ny, Nt-1, 2) with the last axis holding the
(horizontal, vertical) components. All operators are linear and pure;
every forward/adjoint pair satisfies the inner-product identity to
machine precision.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch


class BadExtent(ValueError):
    """Frame extents not divisible by 2**levels."""


class GeometryMismatch(ValueError):
    """Patch geometry inconsistent with the field it is applied to."""


# ---------------------------------------------------------------------------
# derivatives on image sequences

def grad_spatial_central(m):
    """Central spatial differences of an image sequence.

    Returns (mx, my) with factor 1/2, zero on the spatial borders and on
    the last frame. Complex input is handled natively (the operator is
    complex-linear).
    """
    m = np.asarray(m)
    if m.ndim != 3:
        raise ShapeMismatch(f"expected (Nx, Ny, Nt), got {m.shape}")
    mx = np.zeros_like(m)
    my = np.zeros_like(m)
    mx[1:-1, :, :-1] = 0.5 * (m[2:, :, :-1] - m[:-2, :, :-1])
    my[:, 1:-1, :-1] = 0.5 * (m[:, 2:, :-1] - m[:, :-2, :-1])
    return mx, my


def grad_spatial_central_adjoint(y):
    """Adjoint of :func:`grad_spatial_central` for a dual pair ``y=(yx, yy)``."""
    yx, yy = y
    yx = np.asarray(yx)
    yy = np.asarray(yy)
    if yx.shape != yy.shape or yx.ndim != 3:
        raise ShapeMismatch(f"dual pair shapes {yx.shape} vs {yy.shape}")
    out = np.zeros_like(yx)
    out[2:, :, :-1] += 0.5 * yx[1:-1, :, :-1]
    out[:-2, :, :-1] -= 0.5 * yx[1:-1, :, :-1]
    out[:, 2:, :-1] += 0.5 * yy[:, 1:-1, :-1]
    out[:, :-2, :-1] -= 0.5 * yy[:, 1:-1, :-1]
    return out


def dt_forward(m):
    """Forward temporal difference m(t+1) - m(t); zero at the last frame."""
    m = np.asarray(m)
    if m.ndim != 3:
        raise ShapeMismatch(f"expected (Nx, Ny, Nt), got {m.shape}")
    out = np.zeros_like(m)
    out[:, :, :-1] = m[:, :, 1:] - m[:, :, :-1]
    return out


def dt_adjoint(y):
    """Adjoint of :func:`dt_forward`."""
    y = np.asarray(y)
    if y.ndim != 3:
        raise ShapeMismatch(f"expected (Nx, Ny, Nt), got {y.shape}")
    out = np.zeros_like(y)
    out[:, :, :-1] -= y[:, :, :-1]
    out[:, :, 1:] += y[:, :, :-1]
    return out


# ---------------------------------------------------------------------------
# derivatives on flow fields

def grad_flow_forward(u):
    """Forward spatial differences of a flow field, zero at the far borders.

    Works on any array with leading (Nx, Ny) axes; the derivative axis is
    appended last, so a (Nx, Ny, T, 2) field maps to (Nx, Ny, T, 2, 2).
    """
    u = np.asarray(u)
    if u.ndim < 2:
        raise ShapeMismatch(f"expected leading (Nx, Ny) axes, got {u.shape}")
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    gx[:-1] = u[1:] - u[:-1]
    gy[:, :-1] = u[:, 1:] - u[:, :-1]
    return np.stack((gx, gy), axis=-1)


def divergence_flow(y):
    """Discrete divergence, the negative adjoint of :func:`grad_flow_forward`."""
    y = np.asarray(y)
    if y.ndim < 3 or y.shape[-1] != 2:
        raise ShapeMismatch(f"expected trailing derivative axis of 2, got {y.shape}")
    y1 = y[..., 0]
    y2 = y[..., 1]
    div = np.zeros_like(y1)
    div[:-1] += y1[:-1]
    div[1:] -= y1[:-1]
    div[:, :-1] += y2[:, :-1]
    div[:, 1:] -= y2[:, :-1]
    return div


# ---------------------------------------------------------------------------
# undersampled Fourier

def broadcast_mask(mask, shape):
    """Expand a (Nx, Ny) or (Nx, Ny, Nt) 0/1 mask to the k-space shape."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim == 2:
        if mask.shape != shape[:2]:
            raise ShapeMismatch(f"mask {mask.shape} vs grid {shape[:2]}")
        return mask[:, :, None]
    if mask.ndim == 3:
        if mask.shape != shape:
            raise ShapeMismatch(f"mask {mask.shape} vs k-space {shape}")
        return mask
    raise ShapeMismatch(f"mask must be 2-D or 3-D, got ndim={mask.ndim}")


def fourier_undersampled(m, mask):
    """Per-frame orthonormal 2-D DFT followed by the sampling mask."""
    m = np.asarray(m)
    if m.ndim != 3:
        raise ShapeMismatch(f"expected (Nx, Ny, Nt), got {m.shape}")
    mk = broadcast_mask(mask, m.shape)
    return mk * np.fft.fft2(m, axes=(0, 1), norm="ortho")


def fourier_undersampled_adjoint(f, mask):
    """Adjoint: mask then per-frame orthonormal inverse 2-D DFT."""
    f = np.asarray(f)
    if f.ndim != 3:
        raise ShapeMismatch(f"expected (Nx, Ny, Nt), got {f.shape}")
    mk = broadcast_mask(mask, f.shape)
    return np.fft.ifft2(mk * f, axes=(0, 1), norm="ortho")


# ---------------------------------------------------------------------------
# orthonormal Haar wavelet

def wavelet_levels(nx, ny):
    """Default decomposition depth: log2(min extent) - 2, at least 1."""
    return max(1, int(math.log2(min(nx, ny))) - 2)


def _haar_axis0(a, inverse):
    n = a.shape[0]
    half = n // 2
    s = 1.0 / math.sqrt(2.0)
    out = np.empty_like(a)
    if not inverse:
        out[:half] = (a[0::2] + a[1::2]) * s
        out[half:] = (a[0::2] - a[1::2]) * s
    else:
        out[0::2] = (a[:half] + a[half:]) * s
        out[1::2] = (a[:half] - a[half:]) * s
    return out


def wavelet_forward(m, levels=None):
    """Per-frame 2-D separable orthonormal Haar transform.

    Coefficients use the usual in-place quadrant layout, so the output
    has the same shape as the input. The transform is an isometry and
    its adjoint equals its inverse.
    """
    m = np.asarray(m)
    nx, ny = m.shape[0], m.shape[1]
    if levels is None:
        levels = wavelet_levels(nx, ny)
    if nx % (1 << levels) or ny % (1 << levels):
        raise BadExtent(f"extents {nx}x{ny} not divisible by 2^{levels}")
    out = m.copy()
    hx, hy = nx, ny
    for _ in range(levels):
        block = out[:hx, :hy]
        block = _haar_axis0(block, inverse=False)
        block = np.swapaxes(_haar_axis0(np.swapaxes(block, 0, 1), inverse=False), 0, 1)
        out[:hx, :hy] = block
        hx //= 2
        hy //= 2
    return out


def wavelet_adjoint(coeffs, levels=None):
    """Inverse (= adjoint) of :func:`wavelet_forward`."""
    c = np.asarray(coeffs)
    nx, ny = c.shape[0], c.shape[1]
    if levels is None:
        levels = wavelet_levels(nx, ny)
    if nx % (1 << levels) or ny % (1 << levels):
        raise BadExtent(f"extents {nx}x{ny} not divisible by 2^{levels}")
    out = c.copy()
    sizes = [(nx >> k, ny >> k) for k in range(levels)]
    for hx, hy in reversed(sizes):
        block = out[:hx, :hy]
        block = np.swapaxes(_haar_axis0(np.swapaxes(block, 0, 1), inverse=True), 0, 1)
        block = _haar_axis0(block, inverse=True)
        out[:hx, :hy] = block
    return out


# ---------------------------------------------------------------------------
# overlapping patches

@dataclass(frozen=True)
class PatchGeometry:
    """Overlapping square patch layout on an (nx, ny) grid.

    ``indices[k, p]`` is the flat pixel index of element k of patch p;
    ``coverage[x]`` counts the patches containing pixel x, which makes
    R^T R a diagonal operator.
    """

    nx: int
    ny: int
    patch_size: int
    stride: int
    origins: tuple
    indices: np.ndarray = field(repr=False)
    coverage: np.ndarray = field(repr=False)

    @property
    def n_patches(self):
        return len(self.origins)


def make_patch_geometry(nx, ny, patch_size, stride):
    """Build the patch layout; origins step by ``stride`` and the far edge
    is always covered by a final patch flush with the border."""
    if patch_size < 1 or stride < 1:
        raise GeometryMismatch("patch_size and stride must be >= 1")
    if patch_size > nx or patch_size > ny:
        raise GeometryMismatch(
            f"patch {patch_size} exceeds grid {nx}x{ny}")
    if stride > patch_size:
        raise GeometryMismatch("stride > patch_size leaves uncovered pixels")

    def starts(n):
        s = list(range(0, n - patch_size + 1, stride))
        if s[-1] != n - patch_size:
            s.append(n - patch_size)
        return s

    origins = tuple((ox, oy) for ox in starts(nx) for oy in starts(ny))
    offs = np.arange(patch_size)
    cell = offs[:, None] * ny + offs[None, :]          # (ps, ps) flat offsets
    base = np.array([ox * ny + oy for ox, oy in origins])
    indices = (cell.reshape(-1, 1) + base[None, :]).astype(np.intp)
    coverage = np.zeros(nx * ny)
    np.add.at(coverage, indices.ravel(), 1.0)
    return PatchGeometry(nx, ny, patch_size, stride, origins,
                         indices, coverage.reshape(nx, ny))


def extract_patches(field, geom):
    """Apply R: gather patches of a field with leading (nx, ny) axes.

    A field of shape (nx, ny, *rest) maps to (ps*ps, n_patches, *rest).
    """
    field = np.asarray(field)
    if field.shape[:2] != (geom.nx, geom.ny):
        raise GeometryMismatch(
            f"field {field.shape[:2]} vs geometry {(geom.nx, geom.ny)}")
    rest = field.shape[2:]
    flat = field.reshape(geom.nx * geom.ny, -1)
    out = flat[geom.indices]
    return out.reshape(geom.patch_size ** 2, geom.n_patches, *rest)


def aggregate_patches(patches, geom):
    """Apply R^T: scatter-add patch contents back onto the grid, so that
    aggregate(extract(u)) == coverage * u."""
    patches = np.asarray(patches)
    expect = (geom.patch_size ** 2, geom.n_patches)
    if patches.shape[:2] != expect:
        raise GeometryMismatch(f"patches {patches.shape[:2]} vs {expect}")
    rest = patches.shape[2:]
    ncols = int(np.prod(rest)) if rest else 1
    flat = np.zeros((geom.nx * geom.ny, ncols), dtype=patches.dtype)
    np.add.at(flat, geom.indices.ravel(),
              patches.reshape(expect[0] * expect[1], ncols))
    return flat.reshape(geom.nx, geom.ny, *rest)


# ---------------------------------------------------------------------------
# stacked-operator norm bound

def operator_norm_bound(u):
    """Upper bound for the stacked reconstruction operator norm,
    2 + sqrt(8) + sqrt(2) * (1 + max pointwise flow modulus)."""
    if u is None:
        umax = 0.0
    else:
        u = np.asarray(u)
        umax = 0.0 if u.size == 0 else float(
            np.sqrt((u * u).sum(axis=-1)).max())
    return 2.0 + math.sqrt(8.0) + math.sqrt(2.0) * (1.0 + umax)
