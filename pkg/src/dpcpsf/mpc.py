"""NMPC and VTNMPC baselines plus the shared quadratic cost evaluator.

Both controllers single-shoot the full 17-state model over a 2 s horizon
and minimize the quadratic stage cost with the in-house quasi-Newton
solver.  The cylinder shows up as a one-sided quadratic penalty on the
time-augmented constraint; the motor-command box is a penalty too, so
the transcription stays unconstrained.  VTNMPC differs only in its
linearly increasing timestep schedule (fewer, longer steps for the same
horizon), with internal-model substepping once a timestep exceeds the
Euler stability budget.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .dynamics import QuadParams, euler_step, hover_command, hover_state
from .psf import make_schedule
from .safeset import CylinderConstraint
from .solver import minimize

N_X, N_U = 17, 4

DEFAULT_Q = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0,
                      1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0])
DEFAULT_R = np.ones(4)


@dataclass(frozen=True)
class MPCCostWeights:
    Q: np.ndarray = field(default_factory=lambda: DEFAULT_Q.copy())
    R: np.ndarray = field(default_factory=lambda: DEFAULT_R.copy())

    def __post_init__(self):
        if np.any(self.Q < 0.0) or np.any(self.R < 0.0):
            raise ValueError("cost weights must be non-negative")


def mpc_cost(x, u, x_r, w: MPCCostWeights = MPCCostWeights()):
    """Quadratic stage cost (x_r-x)^T Q (x_r-x) + u^T R u."""
    e = [x_r[i] - x[i] for i in range(N_X)]
    return (ad.dot([w.Q[i] * e[i] for i in range(N_X)], e)
            + ad.dot([w.R[i] * u[i] for i in range(N_U)], u))


def augmented_cylinder(pos, t_ahead: float, c: CylinderConstraint,
                       slope: float = 0.1):
    """Signed violation of the time-grown cylinder; <= 0 means clear."""
    dx = pos[0] - c.x
    dy = pos[1] - c.y
    return c.radius ** 2 * (1.0 + slope * t_ahead) - (dx * dx + dy * dy)


@dataclass(frozen=True)
class MPCConfig:
    horizon: float = 2.0
    N: int = 50
    schedule: str = "constant"  # or "linear"
    Ts: float = 0.01
    cylinder_slope: float = 0.1
    cylinder_weight: float = 2000.0
    input_penalty_weight: float = 100.0
    max_iterations: int = 60
    warm_iterations: int = 12
    grad_tol: float = 1e-6
    internal_dt_max: float = 0.05
    warm_start: bool = True

    def timesteps(self) -> np.ndarray:
        if self.N < 2 or self.horizon <= 0.0:
            raise ValueError("need N >= 2 and horizon > 0")
        if self.schedule == "constant":
            return np.full(self.N, self.horizon / self.N)
        if self.schedule == "linear":
            return make_schedule(self.Ts, self.horizon, self.N).dt
        raise ValueError(f"unknown schedule kind {self.schedule!r}")


@dataclass
class OCPSolution:
    inputs: np.ndarray        # (N, 4)
    states: np.ndarray        # (N+1, 17)
    objective: float
    iterations: int
    wall_time: float
    stagnated: bool = False


def _substeps(dt: float, dt_max: float) -> int:
    return max(1, int(np.ceil(dt / dt_max - 1e-12)))


def _model_step(x, u, dt: float, cfg: MPCConfig, params: QuadParams):
    n = _substeps(dt, cfg.internal_dt_max)
    h = dt / n
    for _ in range(n):
        x = euler_step(x, u, h, params)
    return x


def _relu_sq(v):
    r = ad.relu(v)
    return r * r


class _Transcription:
    """Shared shooting objective for both baselines."""

    def __init__(self, cfg: MPCConfig, params: QuadParams,
                 weights: MPCCostWeights,
                 cylinders: list[CylinderConstraint]):
        self.cfg = cfg
        self.params = params
        self.weights = weights
        self.cylinders = cylinders
        self.dt = cfg.timesteps()

    def rollout(self, x0, u_seq):
        """Float rollout of a (N,4) input plan."""
        xs = [np.asarray(x0, dtype=float)]
        for k in range(self.cfg.N):
            xs.append(np.array(_model_step(list(xs[-1]), list(u_seq[k]),
                                           self.dt[k], self.cfg,
                                           self.params)))
        return np.array(xs)

    def fun_grad(self, x0, refs):
        cfg, w = self.cfg, self.weights

        def fg(u_flat):
            tape = ad.Tape()
            uv = tape.vars(u_flat)
            x = list(np.asarray(x0, dtype=float))
            total = 0.0
            t_ahead = 0.0
            for k in range(cfg.N):
                u_k = uv[4 * k:4 * k + 4]
                t_ahead += self.dt[k]
                x = _model_step(x, u_k, self.dt[k], cfg, self.params)
                total = total + mpc_cost(x, u_k, refs[k], w)
                for j in range(4):
                    total = total + cfg.input_penalty_weight * (
                        _relu_sq(-u_k[j]) + _relu_sq(u_k[j] - 1.0))
                for c in self.cylinders:
                    total = total + cfg.cylinder_weight * _relu_sq(
                        augmented_cylinder(x, t_ahead, c, cfg.cylinder_slope))
            f = float(total.value)
            if not np.isfinite(f):
                return f, np.zeros_like(u_flat)
            return f, tape.gradient(total, uv)

        return fg


def _solve(tr: _Transcription, x0, refs, warm: np.ndarray | None,
           first: bool) -> OCPSolution:
    cfg = tr.cfg
    if warm is None:
        warm = np.full((cfg.N, 4), hover_command(tr.params))
    iters = cfg.max_iterations if (first or not cfg.warm_start) \
        else cfg.warm_iterations
    t0 = time.perf_counter()
    res = minimize(tr.fun_grad(x0, refs), warm.ravel(),
                   max_iterations=iters, grad_tol=cfg.grad_tol)
    u = res.x.reshape(cfg.N, 4)
    return OCPSolution(inputs=u, states=tr.rollout(x0, u),
                       objective=res.fun, iterations=res.iterations,
                       wall_time=time.perf_counter() - t0,
                       stagnated=res.stagnated)


class MPCController:
    """Receding-horizon wrapper with a shifted warm start."""

    def __init__(self, cfg: MPCConfig, params: QuadParams,
                 weights: MPCCostWeights | None = None,
                 cylinders: list[CylinderConstraint] | None = None):
        self.tr = _Transcription(cfg, params, weights or MPCCostWeights(),
                                 cylinders or [])
        self._warm: np.ndarray | None = None

    def reset(self):
        self._warm = None

    def __call__(self, x0, refs) -> OCPSolution:
        sol = _solve(self.tr, x0, refs, self._warm, first=self._warm is None)
        if self.tr.cfg.warm_start:
            self._warm = np.vstack([sol.inputs[1:], sol.inputs[-1:]])
        return sol


def nmpc_solve(x0, refs, cfg: MPCConfig, params: QuadParams,
               weights: MPCCostWeights | None = None,
               cylinders: list[CylinderConstraint] | None = None,
               warm: np.ndarray | None = None) -> OCPSolution:
    if cfg.schedule != "constant":
        raise ValueError("nmpc_solve requires the constant schedule")
    tr = _Transcription(cfg, params, weights or MPCCostWeights(),
                        cylinders or [])
    return _solve(tr, x0, refs, warm, first=warm is None)


def vtnmpc_solve(x0, refs, cfg: MPCConfig, params: QuadParams,
                 weights: MPCCostWeights | None = None,
                 cylinders: list[CylinderConstraint] | None = None,
                 warm: np.ndarray | None = None) -> OCPSolution:
    tr = _Transcription(cfg, params, weights or MPCCostWeights(),
                        cylinders or [])
    return _solve(tr, x0, refs, warm, first=warm is None)


def reference_state(pos, vel, params: QuadParams) -> np.ndarray:
    """Full-state reference: task position/velocity, identity attitude,
    zero rates, hover rotor speeds (the latter all zero-weighted)."""
    x = hover_state(params, pos=pos)
    x[7:10] = vel
    return x


def accumulate_task_cost(states, inputs, refs,
                         weights: MPCCostWeights | None = None,
                         cylinders: list[CylinderConstraint] | None = None
                         ) -> float:
    """Closed-loop cost sum; +inf sentinel on any cylinder penetration."""
    w = weights or MPCCostWeights()
    states = np.asarray(states, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    refs = np.asarray(refs, dtype=float)
    for c in cylinders or []:
        d = np.hypot(states[:, 0] - c.x, states[:, 1] - c.y)
        if np.any(d < c.radius):
            return float("inf")
    total = 0.0
    for k in range(len(inputs)):
        total += float(mpc_cost(states[k], inputs[k], refs[k], w))
    return total
