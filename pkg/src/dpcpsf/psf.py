"""Event-triggered predictive safety filter.

Each control step the subsystem-1 state is tested against every safe
point set with a nearest-hyperplane half-space check.  While all checks
pass the nominal policy input goes through untouched.  On exit, the
policy is linearized at the current state and a single-shooting program
over a linearly increasing timestep horizon is solved: stay close to the
linearized policy while Softplus penalties push the predicted states
back behind the violated sets' hyperplanes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .dpc import Policy, policy_eval, policy_jacobian
from .dynamics import sub1_step
from .safeset import Hyperplane, SafeSet, nearest_hyperplane
from .solver import minimize

_SMOOTH_EPS = 1e-12


@dataclass(frozen=True)
class HorizonSchedule:
    Ts: float
    Tf: float
    N: int
    dt: np.ndarray

    def __post_init__(self):
        if not np.all(self.dt > 0.0):
            raise ValueError("schedule contains non-positive timesteps")
        if abs(float(np.sum(self.dt)) - self.Tf) > 1e-9:
            raise ValueError("schedule does not sum to Tf")


def make_schedule(Ts: float, Tf: float, N: int) -> HorizonSchedule:
    """Linearly increasing timesteps: dt[k] = Ts + 2k*((Tf/N - Ts)/(N-1))."""
    if N < 2:
        raise ValueError(f"need N >= 2, got {N}")
    if Tf < N * Ts:
        raise ValueError(f"infeasible schedule: Tf={Tf} < N*Ts={N * Ts}")
    k = np.arange(N, dtype=float)
    slope = (Tf / N - Ts) / (N - 1)
    dt = Ts + 2.0 * k * slope
    return HorizonSchedule(Ts=Ts, Tf=Tf, N=N, dt=dt)


@dataclass(frozen=True)
class PSFConfig:
    Ts: float = 0.01
    Tf: float = 2.0
    N: int = 20
    alpha: float = 300.0
    margin: float = 0.15
    max_iterations: int = 50
    grad_tol: float = 1e-6
    literal_objective: bool = False  # smoothed 2-norm deviation counted
    # once per set, as the formula reads; default uses the squared norm
    # counted once per step, which is smooth at the zero-deviation point

    def schedule(self) -> HorizonSchedule:
        return make_schedule(self.Ts, self.Tf, self.N)


@dataclass(frozen=True)
class LinearPolicy:
    u0: np.ndarray
    J: np.ndarray  # 3x6
    x0: np.ndarray

    def evaluate(self, x):
        return self.u0 + self.J @ (np.asarray(x, dtype=float) - self.x0)


def linearize_policy(policy: Policy, x0, x_r) -> LinearPolicy:
    x0 = np.asarray(x0, dtype=float)
    return LinearPolicy(u0=policy_eval(policy, x0, x_r),
                        J=policy_jacobian(policy, x0, x_r),
                        x0=x0)


@dataclass
class FilterResult:
    u_sf: np.ndarray
    triggered: bool
    objective: float
    iterations: int
    hyperplanes: list[Hyperplane] = field(default_factory=list)
    stagnated: bool = False
    solve_time: float = 0.0
    sequence: np.ndarray | None = None  # solved (N,3) input plan


def _eval_affine(lp: LinearPolicy, x):
    """lp.evaluate with tape Vars in the state."""
    dx = [x[i] - lp.x0[i] for i in range(6)]
    return [ad.wsum(lp.J[j], dx, lp.u0[j]) for j in range(3)]


def _set_value(h: Hyperplane, sets, x):
    """w^T T(x) + b on a tape state for the set h came from."""
    s = sets[h.source]
    if s.constraint is None:
        z = x
    else:
        c = s.constraint
        dx, dy = x[0] - c.x, x[1] - c.y
        rad = ad.sqrt(dx * dx + dy * dy)
        z = [rad - c.radius, (x[3] * dx + x[4] * dy) / rad]
    return ad.wsum(h.w, z, h.b)


def psf_solve(x0, lp: LinearPolicy, hyperplanes: list[Hyperplane],
              cfg: PSFConfig, ss: SafeSet,
              warm: np.ndarray | None = None) -> FilterResult:
    """Single-shooting transcription of the filter program.

    Decision variables are the N acceleration inputs; states are
    eliminated through the double-integrator step over the schedule, so
    the dynamics constraints hold by construction.
    """
    sched = cfg.schedule()
    x0 = np.asarray(x0, dtype=float)
    sets = {s.set_id: s for s in ss.sets}
    n_dev = len(hyperplanes) if cfg.literal_objective else 1

    if warm is None:
        # closed-loop rollout of the linearized policy: exact optimum of
        # the alpha=0 problem, a good start otherwise
        warm = np.empty((sched.N, 3))
        x = x0
        for k in range(sched.N):
            warm[k] = lp.evaluate(x)
            x = np.array(sub1_step(x, warm[k], sched.dt[k]))

    def fun_grad(u_flat):
        tape = ad.Tape()
        uvars = tape.vars(u_flat)
        x = list(x0)
        total = 0.0
        for k in range(sched.N):
            u_k = uvars[3 * k:3 * k + 3]
            nom = _eval_affine(lp, x)
            dev = [nom[j] - u_k[j] for j in range(3)]
            d2 = ad.dot(dev, dev)
            if cfg.literal_objective:
                total = total + n_dev * ad.sqrt(d2 + _SMOOTH_EPS)
            else:
                total = total + d2
            x = sub1_step(x, u_k, sched.dt[k])
            for h in hyperplanes:
                val = _set_value(h, sets, x) + cfg.margin
                total = total + cfg.alpha * ad.softplus(val)
        f = float(total.value)
        if not np.isfinite(f):
            return f, np.zeros_like(u_flat)
        return f, tape.gradient(total, uvars)

    t0 = time.perf_counter()
    res = minimize(fun_grad, warm.ravel(), max_iterations=cfg.max_iterations,
                   grad_tol=cfg.grad_tol)
    seq = res.x.reshape(sched.N, 3)
    return FilterResult(u_sf=seq[0].copy(), triggered=True, objective=res.fun,
                        iterations=res.iterations, hyperplanes=hyperplanes,
                        stagnated=res.stagnated,
                        solve_time=time.perf_counter() - t0, sequence=seq)


def filter_input(x0, x_r, policy: Policy, ss: SafeSet, cfg: PSFConfig,
                 warm: np.ndarray | None = None) -> FilterResult:
    """One control step of the event-triggered filter."""
    x0 = np.asarray(x0, dtype=float)
    planes = []
    inside = True
    for s in ss.sets:
        z = s.transform_query(x0)
        h = nearest_hyperplane(z, s.set_id, ss)
        planes.append(h)
        inside = inside and h.test(z) <= 0.0
    if inside:
        u = policy_eval(policy, x0, x_r)
        return FilterResult(u_sf=u, triggered=False, objective=0.0,
                            iterations=0, hyperplanes=planes)
    lp = linearize_policy(policy, x0, x_r)
    return psf_solve(x0, lp, planes, cfg, ss, warm=warm)


class PSFController:
    """Stateful wrapper carrying the shifted warm start between steps."""

    def __init__(self, policy: Policy, ss: SafeSet, cfg: PSFConfig):
        self.policy = policy
        self.ss = ss
        self.cfg = cfg
        self._warm: np.ndarray | None = None

    def __call__(self, x0, x_r) -> FilterResult:
        res = filter_input(x0, x_r, self.policy, self.ss, self.cfg,
                           warm=self._warm)
        if res.triggered and res.sequence is not None:
            self._warm = np.vstack([res.sequence[1:], res.sequence[-1:]])
        else:
            self._warm = None
        return res
