"""Closed-loop benchmark: three scenarios, four controllers, one table.

The plant is the 17-state model with parameters perturbed by the run
seed; every controller plans with the nominal parameters.  DPC variants
output accelerations that the low-level cascade converts to motor
commands at the simulation rate; the MPC baselines command motors
directly, held over the control period.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dpc import Policy, policy_eval
from .dynamics import (PGains, QuadParams, cascade_p, default_gains,
                       euler_step, hover_state, perturbed_plant)
from .mpc import (MPCConfig, MPCController, MPCCostWeights,
                  accumulate_task_cost, reference_state)
from .psf import PSFConfig, PSFController
from .safeset import CylinderConstraint, SafeSet

CONTROLLERS = ("dpc", "dpc_psf", "vtnmpc", "nmpc")


@dataclass(frozen=True)
class Scenario:
    kind: str                      # navigation | trajectory | adversarial
    duration: float
    start_pos: tuple[float, float, float]
    start_vel: tuple[float, float, float] = (0.0, 0.0, 0.0)
    goal: tuple[float, float, float] | None = None
    waypoints: np.ndarray | None = None  # rows (t, x, y, z)
    cylinders: tuple[CylinderConstraint, ...] = ()
    dpc_ref_offset: float = 0.0
    slew: float = 0.0              # point-to-point reference ramp time; 0
    # holds the reference at the goal from t=0

    def __post_init__(self):
        if self.duration <= 0.0:
            raise ValueError("duration must be positive")
        if self.waypoints is not None:
            t = np.asarray(self.waypoints)[:, 0]
            if not np.all(np.diff(t) > 0.0):
                raise ValueError("waypoint times must strictly increase")


def waypoint_reference(t: float, waypoints: np.ndarray) -> np.ndarray:
    """Piecewise-linear (pos, vel) reference; clamped outside the range."""
    wp = np.asarray(waypoints, dtype=float)
    times, pos = wp[:, 0], wp[:, 1:4]
    if t <= times[0]:
        return np.concatenate([pos[0], np.zeros(3)])
    if t >= times[-1]:
        return np.concatenate([pos[-1], np.zeros(3)])
    i = int(np.searchsorted(times, t, side="right")) - 1
    span = times[i + 1] - times[i]
    frac = (t - times[i]) / span
    vel = (pos[i + 1] - pos[i]) / span
    return np.concatenate([pos[i] + frac * (pos[i + 1] - pos[i]), vel])


def scenario_reference(sc: Scenario, t: float) -> np.ndarray:
    """Subsystem-1 reference (pos, vel) at time t."""
    if sc.kind == "trajectory":
        return waypoint_reference(t, sc.waypoints)
    goal = np.asarray(sc.goal, dtype=float)
    if sc.slew > 0.0 and t < sc.slew:
        start = np.asarray(sc.start_pos, dtype=float)
        vel = (goal - start) / sc.slew
        return np.concatenate([start + t * vel, vel])
    return np.concatenate([goal, np.zeros(3)])


def make_scenarios(bench_cfg: dict) -> dict[str, Scenario]:
    c = bench_cfg["cylinder"]
    cyl = (CylinderConstraint(c["x"], c["y"], c["radius"]),)
    start = tuple(bench_cfg["nav_start"])
    goal = tuple(bench_cfg["nav_goal"])
    to_cyl = np.array([c["x"] - start[0], c["y"] - start[1], 0.0])
    to_cyl = bench_cfg["adv_speed"] * to_cyl / np.linalg.norm(to_cyl)
    return {
        "navigation": Scenario(kind="navigation",
                               duration=bench_cfg["nav_duration"],
                               start_pos=start, goal=goal, cylinders=cyl,
                               slew=bench_cfg["nav_slew"]),
        "trajectory": Scenario(kind="trajectory",
                               duration=bench_cfg["traj_duration"],
                               start_pos=tuple(
                                   bench_cfg["traj_waypoints"][0][1:4]),
                               waypoints=np.asarray(
                                   bench_cfg["traj_waypoints"], dtype=float),
                               cylinders=cyl,
                               dpc_ref_offset=bench_cfg["dpc_ref_offset"]),
        "adversarial": Scenario(kind="adversarial",
                                duration=bench_cfg["adv_duration"],
                                start_pos=start,
                                start_vel=tuple(to_cyl),
                                goal=goal, cylinders=cyl,
                                slew=bench_cfg["nav_slew"]),
    }


@dataclass
class RunMetrics:
    scenario: str
    controller: str
    seed: int
    cost: float
    terminal_error: float
    min_clearance: float
    trigger_fraction: float
    total_controller_time: float
    median_step_time: float
    steps: int
    diverged: bool = False
    step_times: np.ndarray | None = None
    csv_path: str | None = None


@dataclass
class BenchArtifacts:
    policy: Policy | None = None
    safe_set: SafeSet | None = None
    params: QuadParams = field(default_factory=QuadParams)
    gains: PGains | None = None
    psf_cfg: PSFConfig = field(default_factory=PSFConfig)
    nmpc_cfg: MPCConfig = field(default_factory=MPCConfig)
    vtnmpc_cfg: MPCConfig = field(
        default_factory=lambda: MPCConfig(N=25, schedule="linear"))
    weights: MPCCostWeights = field(default_factory=MPCCostWeights)

    def __post_init__(self):
        if self.gains is None:
            self.gains = default_gains(self.params)


def _sub1(x: np.ndarray) -> np.ndarray:
    return np.concatenate([x[0:3], x[7:10]])


def run_scenario(sc: Scenario, controller: str, art: BenchArtifacts,
                 seed: int = 0, control_period: float = 0.01,
                 sim_dt: float = 0.002, plant_perturbation: float = 0.05,
                 csv_path: str | Path | None = None) -> RunMetrics:
    if controller not in CONTROLLERS:
        raise ValueError(f"unknown controller {controller!r}")
    if controller in ("dpc", "dpc_psf") and art.policy is None:
        raise ValueError(f"{controller} requires a trained policy artifact")
    if controller == "dpc_psf" and art.safe_set is None:
        raise ValueError("dpc_psf requires a safe-set artifact")

    plant = perturbed_plant(art.params, seed, plant_perturbation)
    x = hover_state(plant, pos=sc.start_pos)
    x[7:10] = sc.start_vel
    n_sub = max(1, round(control_period / sim_dt))
    h = control_period / n_sub
    n_steps = int(round(sc.duration / control_period))
    cyls = list(sc.cylinders)

    psf_ctl = mpc_ctl = None
    if controller == "dpc_psf":
        psf_ctl = PSFController(art.policy, art.safe_set, art.psf_cfg)
    elif controller in ("nmpc", "vtnmpc"):
        cfg = art.nmpc_cfg if controller == "nmpc" else art.vtnmpc_cfg
        mpc_ctl = MPCController(cfg, art.params, art.weights, cyls)
        stage_t = np.concatenate([[0.0], np.cumsum(cfg.timesteps())])[:-1]

    states, inputs, refs6 = [], [], []
    step_times = np.empty(n_steps)
    triggers = 0
    rows = []
    diverged = False

    for k in range(n_steps):
        t = k * control_period
        ref = scenario_reference(sc, t)
        x_s1 = _sub1(x)
        triggered = False
        t0 = time.perf_counter()
        if controller == "dpc":
            ref_c = scenario_reference(sc, t + sc.dpc_ref_offset)
            accel = policy_eval(art.policy, x_s1, ref_c)
        elif controller == "dpc_psf":
            ref_c = scenario_reference(sc, t + sc.dpc_ref_offset)
            res = psf_ctl(x_s1, ref_c)
            accel = res.u_sf
            triggered = res.triggered
        else:
            mrefs = [reference_state(r[:3], r[3:], art.params)
                     for r in (scenario_reference(sc, t + st)
                               for st in stage_t)]
            sol = mpc_ctl(x, mrefs)
            u_cmd = np.clip(sol.inputs[0], 0.0, 1.0)
        step_times[k] = time.perf_counter() - t0
        triggers += triggered

        if controller in ("dpc", "dpc_psf"):
            u_cmd = cascade_p(accel, x, art.gains, art.params).u
        states.append(x.copy())
        inputs.append(u_cmd.copy())
        refs6.append(ref)
        rows.append([t, *x, *u_cmd, *ref, int(triggered), step_times[k]])

        for _ in range(n_sub):
            if controller in ("dpc", "dpc_psf"):
                u_cmd = cascade_p(accel, x, art.gains, art.params).u
            x = np.array(euler_step(list(x), list(u_cmd), h, plant))
        if not np.all(np.isfinite(x)) or np.linalg.norm(x[0:3]) > 100.0:
            diverged = True
            step_times = step_times[:k + 1]
            break

    states_a = np.array(states)
    full_refs = [reference_state(r[:3], r[3:], art.params) for r in refs6]
    cost = accumulate_task_cost(states_a, np.array(inputs), full_refs,
                                art.weights, cyls)
    if diverged:
        cost = float("inf")
    clear = min((float(np.min(np.hypot(states_a[:, 0] - c.x,
                                       states_a[:, 1] - c.y) - c.radius))
                 for c in cyls), default=float("inf"))
    ref_end = scenario_reference(sc, sc.duration)
    terminal = float(np.linalg.norm(x[0:3] - ref_end[:3]))

    if csv_path is not None:
        header = (["t"] + [f"x{i}" for i in range(17)]
                  + [f"u{i}" for i in range(4)]
                  + ["rx", "ry", "rz", "rvx", "rvy", "rvz",
                     "triggered", "step_time"])
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)

    return RunMetrics(
        scenario=sc.kind, controller=controller, seed=seed, cost=cost,
        terminal_error=terminal, min_clearance=clear,
        trigger_fraction=triggers / max(len(states), 1),
        total_controller_time=float(np.sum(step_times)),
        median_step_time=float(np.median(step_times)),
        steps=len(states), diverged=diverged,
        step_times=step_times,
        csv_path=str(csv_path) if csv_path is not None else None)


def emit_report(metrics: list[RunMetrics], out_dir: str | Path) -> dict:
    """Write the comparison table as CSV and aligned text."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = ["scenario", "controller", "seed", "cost", "terminal_error",
            "min_clearance", "trigger_fraction", "median_step_time",
            "total_controller_time", "steps", "diverged"]
    csv_path = out / "bench_table.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for m in metrics:
            w.writerow([getattr(m, c) for c in cols])
    lines = ["  ".join(f"{c:>18s}" for c in cols)]
    for m in metrics:
        vals = []
        for c in cols:
            v = getattr(m, c)
            vals.append(f"{v:>18.6g}" if isinstance(v, float)
                        else f"{str(v):>18s}")
        lines.append("  ".join(vals))
    txt_path = out / "bench_table.txt"
    txt_path.write_text("\n".join(lines) + "\n")
    return {"csv": str(csv_path), "txt": str(txt_path)}
