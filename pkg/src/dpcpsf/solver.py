"""Dense quasi-Newton solver for the shooting problems.

BFGS with Powell damping on the curvature update plus a backtracking
Armijo line search.  Small unconstrained problems only (tens to a few
hundred variables); constraints are handled by the callers through
penalty terms in the objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class SolveResult:
    x: np.ndarray
    fun: float
    grad_norm: float
    iterations: int
    converged: bool
    stagnated: bool = False
    history: list[float] = field(default_factory=list)


def minimize(fun_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
             x0: np.ndarray,
             max_iterations: int = 50,
             grad_tol: float = 1e-6,
             step_tol: float = 1e-12,
             armijo: float = 1e-4,
             backtrack: float = 0.5,
             max_backtracks: int = 30) -> SolveResult:
    """Minimize ``fun_grad`` returning the best iterate seen.

    ``fun_grad(x)`` must return ``(f, g)`` with a finite f at ``x0``.
    The inverse Hessian estimate is reset to identity whenever the
    damped curvature pair is still too ill-conditioned to trust.
    """
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    f, g = fun_grad(x)
    if not np.isfinite(f):
        raise ValueError("objective not finite at the initial point")
    H = np.eye(n)
    best_x, best_f = x.copy(), f
    history = [f]
    stagnated = False
    it = 0
    for it in range(1, max_iterations + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm < grad_tol:
            return SolveResult(x=best_x, fun=best_f, grad_norm=gnorm,
                               iterations=it - 1, converged=True,
                               history=history)
        d = -H @ g
        slope = float(np.dot(g, d))
        if slope >= 0.0:  # H lost positive definiteness; restart
            H = np.eye(n)
            d = -g
            slope = -gnorm ** 2
        step = 1.0
        f_new, g_new = f, g
        ok = False
        for _ in range(max_backtracks):
            x_new = x + step * d
            f_new, g_new = fun_grad(x_new)
            if np.isfinite(f_new) and f_new <= f + armijo * step * slope:
                ok = True
                break
            step *= backtrack
        if not ok:
            stagnated = True
            break
        s = step * d
        y = g_new - g
        sy = float(np.dot(s, y))
        # Powell damping with s^T B s approximated by s^T s (identity
        # metric): blend y toward s when curvature is weak or negative.
        sHs = float(np.dot(s, s))
        if sy < 0.2 * sHs:
            theta = 0.8 * sHs / max(sHs - sy, 1e-300)
            y = theta * y + (1.0 - theta) * s
            sy = float(np.dot(s, y))
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            rho = 1.0 / sy
            Hy = H @ y
            H = (H - rho * (np.outer(s, Hy) + np.outer(Hy, s))
                 + rho * (rho * float(np.dot(y, Hy)) + 1.0) * np.outer(s, s))
        else:
            H = np.eye(n)
        x, f, g = x_new, f_new, g_new
        history.append(f)
        if f < best_f:
            best_f, best_x = f, x.copy()
        if float(np.linalg.norm(s)) < step_tol * (1.0 + float(np.linalg.norm(x))):
            break
    gnorm = float(np.linalg.norm(g))
    return SolveResult(x=best_x, fun=best_f, grad_norm=gnorm,
                       iterations=it, converged=gnorm < grad_tol,
                       stagnated=stagnated, history=history)
