"""Projected gradient descent with Armijo backtracking.

Kept generic: the ERM layer and the perturbed/near-minimizer objectives all
funnel through ``pgd_minimize`` with their own closures.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ermu.errors import SolverDivergedError

_MIN_STEP = 1e-18


@dataclass(frozen=True)
class PgdConfig:
    max_iters: int = 5000
    tol: float = 1e-8
    armijo_shrink: float = 0.5
    armijo_slope: float = 1e-4
    init_step: float = 1.0
    step_growth: float = 2.0


@dataclass
class PgdState:
    x: np.ndarray
    value: float
    grad_map_norm: float
    iterations: int
    flags: list[str] = field(default_factory=list)


def pgd_minimize(
    fun: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    project: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    cfg: PgdConfig = PgdConfig(),
) -> PgdState:
    """Minimize a smooth function over a convex set by projected gradient.

    The accepted step carries over between iterations (regrown by
    ``step_growth``) so backtracking stays cheap once the local curvature is
    known. Convergence is declared on the gradient-mapping norm
    ||x - P(x - s g)|| / s at the accepted step.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    fx = float(fun(x))
    if not np.isfinite(fx):
        raise SolverDivergedError("non-finite objective at the initial point", 0)
    step = cfg.init_step
    grad_map_norm = np.inf
    flags: list[str] = []
    iterations = 0
    for it in range(1, cfg.max_iters + 1):
        iterations = it
        g = grad(x)
        accepted = False
        while step >= _MIN_STEP:
            x_new = project(x - step * g)
            delta = x - x_new
            sq = float(np.sum(delta * delta))
            f_new = float(fun(x_new))
            if not np.isfinite(f_new):
                raise SolverDivergedError("non-finite objective", it)
            if f_new <= fx - cfg.armijo_slope * sq / step:
                accepted = True
                break
            step *= cfg.armijo_shrink
        if not accepted:
            # Step underflow: no descent direction at numerical resolution.
            flags.append("step-underflow")
            grad_map_norm = 0.0
            break
        grad_map_norm = np.sqrt(sq) / step
        # Armijo guarantees monotone objectives; keep the invariant hard.
        assert f_new <= fx + 1e-12 * max(1.0, abs(fx)), "objective increased"
        x, fx = x_new, f_new
        if grad_map_norm <= cfg.tol:
            break
        step = min(step * cfg.step_growth, 1e12)
    else:
        flags.append("maxiter")
    return PgdState(x=x, value=fx, grad_map_norm=float(grad_map_norm), iterations=iterations, flags=flags)
