"""Generic primal-dual (Chambolle-Pock) saddle-point solver.

The solver is parameterized by a linear operator pair and two resolvent
callbacks and works on plain numpy arrays of any shape; subsolvers pack
their block variables into a single array.
"""

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NonFiniteIterate

STEP_SIZE_SLACK = 1e-12


@dataclass
class SaddleProblem:
    """min_x F(C x) + G(x) in primal-dual form.

    ``apply_C``/``apply_C_adjoint`` must be a true adjoint pair;
    ``resolvent_Fstar(y, sigma)`` and ``resolvent_G(x, tau)`` are the
    usual proximal maps; ``norm_bound_C`` bounds ||C||.
    """

    apply_C: Callable
    apply_C_adjoint: Callable
    resolvent_Fstar: Callable
    resolvent_G: Callable
    norm_bound_C: float


@dataclass
class CPResult:
    x: np.ndarray
    y: np.ndarray
    iterations: int
    residuals: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


def _converged(dx, xnorm, tol):
    if math.isinf(tol):
        return True
    return dx <= tol * xnorm


def chambolle_pock(problem, x0, sigma, tau, theta, tol, max_iter, y0=None):
    """Run the primal-dual iteration until the relative primal change
    drops below ``tol`` or ``max_iter`` updates were committed.

    The candidate step is evaluated before being committed, so a solve
    that is converged at entry returns ``x0`` untouched after zero
    committed updates. The dual starts at zero unless ``y0`` is given
    (warm start). A step-size product ``sigma*tau*norm_bound_C**2 > 1``
    is recorded as a warning, not an error, since the bound is itself an
    estimate. NaN/Inf in an iterate aborts with :class:`NonFiniteIterate`.
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must be in [0, 1], got {theta}")
    warnings = []
    product = sigma * tau * problem.norm_bound_C ** 2
    if product > 1.0 + STEP_SIZE_SLACK:
        warnings.append(
            f"step sizes violate sigma*tau*||C||^2 < 1 (got {product:.6g})")

    x = np.array(x0, copy=True)
    xbar = x.copy()
    y = problem.apply_C(x) * 0.0 if y0 is None else np.array(y0, copy=True)

    residuals = []
    committed = 0
    for _ in range(max_iter):
        y_cand = problem.resolvent_Fstar(y + sigma * problem.apply_C(xbar), sigma)
        x_cand = problem.resolvent_G(x - tau * problem.apply_C_adjoint(y_cand), tau)
        if not np.all(np.isfinite(x_cand)):
            raise NonFiniteIterate("primal iterate contains NaN/Inf")
        dx = float(np.linalg.norm((x_cand - x).ravel()))
        xnorm = float(np.linalg.norm(x.ravel()))
        residuals.append(dx / xnorm if xnorm > 0.0 else (0.0 if dx == 0.0 else math.inf))
        if _converged(dx, xnorm, tol):
            break
        xbar = x_cand + theta * (x_cand - x)
        x = x_cand
        y = y_cand
        committed += 1
    return CPResult(x, y, committed, residuals, warnings)
