"""Synthetic dynamic phantoms and variable-density Cartesian sampling.

Phantoms are moving ellipses rasterized analytically per frame with a
raised-cosine edge about one pixel wide, together with the exact
per-transition displacement field. Masks sample full phase-encode lines
(columns), always including the lowest-frequency lines, with the
remaining budget drawn without replacement with probability proportional
to (1 - distance/(Ny/2))**exponent.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch
from .operators import broadcast_mask


class SpecViolation(ValueError):
    """Phantom description outside its admissible ranges."""


class InfeasibleBudget(ValueError):
    """Center lines alone exceed the sampling budget."""


@dataclass
class Ellipse:
    cx: float
    cy: float
    ax: float
    ay: float
    intensity: float
    vx: float = 0.0
    vy: float = 0.0
    pulse_amp: float = 0.0
    pulse_period: float = 0.0
    edge: float = 1.0    # raised-cosine transition width in pixels;
                         # edge >= min(ax, ay) gives a smooth blob profile


@dataclass
class PhantomSpec:
    nx: int
    ny: int
    nt: int
    shapes: list = field(default_factory=list)
    noise_std: float = 0.0
    seed: int = 0


def _scale(shape, t):
    if shape.pulse_period > 0.0:
        return 1.0 + shape.pulse_amp * math.sin(2.0 * math.pi * t /
                                                shape.pulse_period)
    return 1.0


def _center(shape, t):
    return shape.cx + shape.vx * t, shape.cy + shape.vy * t


def _validate(spec):
    if spec.nx < 2 or spec.ny < 2 or spec.nt < 1:
        raise SpecViolation(f"grid {spec.nx}x{spec.ny}x{spec.nt} too small")
    if spec.noise_std < 0.0:
        raise SpecViolation("noise_std must be >= 0")
    for idx, s in enumerate(spec.shapes, start=1):
        if not 0.0 <= s.intensity <= 1.0:
            raise SpecViolation(f"shape{idx}: intensity outside [0, 1]")
        if s.ax <= 0.0 or s.ay <= 0.0:
            raise SpecViolation(f"shape{idx}: axes must be positive")
        if s.edge <= 0.0:
            raise SpecViolation(f"shape{idx}: edge width must be positive")
        for t in range(spec.nt):
            sc = _scale(s, t)
            cx, cy = _center(s, t)
            if sc <= 0.0:
                raise SpecViolation(f"shape{idx}: collapses at frame {t}")
            if (cx - s.ax * sc < 0.0 or cx + s.ax * sc > spec.nx - 1 or
                    cy - s.ay * sc < 0.0 or cy + s.ay * sc > spec.ny - 1):
                raise SpecViolation(
                    f"shape{idx}: leaves the grid at frame {t}")


def make_phantom(spec: PhantomSpec):
    """Rasterize the phantom.

    Returns ``(m, u)``: the complex image sequence (Nx, Ny, Nt) and the
    analytic flow field (Nx, Ny, Nt-1, 2). The per-transition
    displacement combines the translation of the center with the radial
    pulsation; it is constant-velocity inside a translating shape and
    zero in the background.
    """
    _validate(spec)
    xs = np.arange(spec.nx, dtype=np.float64)[:, None]
    ys = np.arange(spec.ny, dtype=np.float64)[None, :]
    frames = np.zeros((spec.nx, spec.ny, spec.nt))
    u = np.zeros((spec.nx, spec.ny, max(spec.nt - 1, 0), 2))

    for s in spec.shapes:
        for t in range(spec.nt):
            sc = _scale(s, t)
            cx, cy = _center(s, t)
            rho = np.sqrt(((xs - cx) / (s.ax * sc)) ** 2 +
                          ((ys - cy) / (s.ay * sc)) ** 2)
            w = min(s.edge / (min(s.ax, s.ay) * sc), 1.0)  # pixels -> rho units
            profile = np.clip((1.0 - rho) / w, 0.0, 1.0)
            smooth = 0.5 * (1.0 - np.cos(math.pi * profile))
            frames[:, :, t] += s.intensity * smooth
            if t < spec.nt - 1:
                ratio = _scale(s, t + 1) / sc
                inside = rho <= 1.0
                ux = s.vx + (xs - cx) * (ratio - 1.0)
                uy = s.vy + (ys - cy) * (ratio - 1.0)
                u[:, :, t, 0] = np.where(inside, ux, u[:, :, t, 0])
                u[:, :, t, 1] = np.where(inside, uy, u[:, :, t, 1])

    if spec.noise_std > 0.0:
        rng = np.random.default_rng(spec.seed)
        frames = frames + spec.noise_std * rng.standard_normal(frames.shape)
    return frames.astype(np.complex128), u


def make_mask(ny, accel, center_lines, seed, nx=None, exponent=2.0):
    """One variable-density Cartesian line mask on an (nx or ny, ny) grid.

    Exactly ``ceil(ny/accel)`` phase-encode lines are sampled: the
    ``center_lines`` lowest-frequency lines always (the DC line is kept
    even with ``center_lines=0``), the rest drawn without replacement
    with the polynomial density profile. Deterministic given the seed.
    """
    if accel < 1.0:
        raise ValueError(f"acceleration must be >= 1, got {accel}")
    if not 0 <= center_lines <= ny:
        raise ValueError(f"center_lines {center_lines} outside [0, {ny}]")
    budget = math.ceil(ny / accel)
    dist = np.minimum(np.arange(ny), ny - np.arange(ny)).astype(np.float64)
    order = np.lexsort((np.arange(ny), dist))
    center = order[:max(1, center_lines)]
    if len(center) > budget:
        raise InfeasibleBudget(
            f"{len(center)} center lines exceed the budget of {budget}")

    lines = np.zeros(ny, dtype=bool)
    lines[center] = True
    remaining = budget - len(center)
    if remaining > 0:
        cand = np.where(~lines)[0]
        weights = (1.0 - dist[cand] / (ny / 2.0)) ** exponent
        rng = np.random.default_rng(seed)
        positive = weights > 0.0
        n_pos = int(positive.sum())
        if remaining <= n_pos:
            p = weights / weights.sum()
            chosen = rng.choice(cand, size=remaining, replace=False, p=p)
        else:
            chosen = cand[positive]
            flat = cand[~positive]
            extra = rng.choice(flat, size=remaining - n_pos, replace=False)
            chosen = np.concatenate([chosen, extra])
        lines[chosen] = True

    grid = np.zeros((nx if nx is not None else ny, ny))
    grid[:, lines] = 1.0
    return grid


def make_mask_sequence(ny, accel, center_lines, seed, frames=1, shared=False,
                       nx=None, exponent=2.0):
    """Per-frame masks (Nx, Ny, Nt) with independent per-frame draws, or a
    single shared (Nx, Ny) grid."""
    if shared:
        return make_mask(ny, accel, center_lines, seed, nx, exponent)
    masks = [make_mask(ny, accel, center_lines, [seed, t], nx, exponent)
             for t in range(frames)]
    return np.stack(masks, axis=-1)


def acquire(m_gt, mask, noise_std, seed):
    """Simulated acquisition: mask the per-frame orthonormal DFT of the
    ground truth and add complex circular Gaussian noise (per-component
    std ``noise_std``) on the sampled locations only."""
    m_gt = np.asarray(m_gt)
    if m_gt.ndim != 3:
        raise ShapeMismatch(f"expected (Nx, Ny, Nt), got {m_gt.shape}")
    mk = broadcast_mask(mask, m_gt.shape)
    f = mk * np.fft.fft2(m_gt, axes=(0, 1), norm="ortho")
    if noise_std > 0.0:
        rng = np.random.default_rng(seed)
        eta = noise_std * (rng.standard_normal(m_gt.shape) +
                           1j * rng.standard_normal(m_gt.shape))
        f = f + mk * eta
    return f


# -- key=value phantom dialect ----------------------------------------------

_SPEC_SCALARS = {"nx": int, "ny": int, "nt": int, "noise_std": float,
                 "seed": int}
_SHAPE_KEYS = {"cx", "cy", "ax", "ay", "intensity", "vx", "vy",
               "pulse_amp", "pulse_period", "edge"}


def parse_phantom_spec(path):
    """Parse the indexed key=value phantom dialect (shape1.cx=... lines)."""
    scalars = {}
    shapes = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SpecViolation(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            try:
                num = float(value)
            except ValueError:
                raise SpecViolation(
                    f"{path}:{lineno}: {key}={value!r} is not numeric") from None
            if key in _SPEC_SCALARS:
                scalars[key] = _SPEC_SCALARS[key](num)
            elif "." in key:
                prefix, _, attr = key.partition(".")
                if not prefix.startswith("shape") or attr not in _SHAPE_KEYS:
                    raise SpecViolation(f"{path}:{lineno}: unknown key {key!r}")
                try:
                    index = int(prefix[5:])
                except ValueError:
                    raise SpecViolation(
                        f"{path}:{lineno}: bad shape index in {key!r}") from None
                shapes.setdefault(index, {})[attr] = num
            else:
                raise SpecViolation(f"{path}:{lineno}: unknown key {key!r}")
    for need in ("nx", "ny", "nt"):
        if need not in scalars:
            raise SpecViolation(f"{path}: missing required key {need!r}")
    shape_list = []
    for index in sorted(shapes):
        fields_ = shapes[index]
        for need in ("cx", "cy", "ax", "ay", "intensity"):
            if need not in fields_:
                raise SpecViolation(
                    f"{path}: shape{index} is missing {need!r}")
        shape_list.append(Ellipse(**fields_))
    spec = PhantomSpec(shapes=shape_list, **scalars)
    _validate(spec)
    return spec
