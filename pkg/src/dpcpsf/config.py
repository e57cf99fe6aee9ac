"""Toolkit configuration: one JSON document covering the plant, low-level
gains, policy training, safe-set construction, the safety filter, the MPC
baselines, and the benchmark scenarios.

The document is versioned through a ``schema`` field; loaders reject unknown
schema ids.  ``default_config()`` is the single source of the shipped
defaults and `configs/default.json` is generated from it.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from .dynamics import PGains, QuadParams, default_gains

SCHEMA_ID = "dpcpsf-config-v1"


def default_config() -> dict[str, Any]:
    return {
        "schema": SCHEMA_ID,
        "quad": {
            "mass": 1.2,
            "inertia": [0.0123, 0.0123, 0.0224],
            "arm_length": 0.16,
            "k_thrust": 1.1772e-5,
            "k_torque": 1.632e-7,
            "rotor_tau": 0.05,
            "gravity": 9.81,
            "drag_coeff": 0.08,
            "motor_speed_min": 0.0,
            "motor_speed_max": 1000.0,
            "vel_max": 10.0,
            "rate_max": 5.0,
            "pos_max": 50.0,
        },
        "gains": {
            "att": [9.0, 9.0, 4.0],
            "rate": [22.0, 22.0, 10.0],
            "yaw_setpoint": 0.0,
        },
        "train": {
            "seed": 2024,
            "rollouts_per_batch": 12,
            "steps_per_rollout": 120,
            "batches": 140,
            "dt": 0.05,
            "learning_rate": 0.03,
            "lr_decay": 0.975,
            "accum_decay": 0.95,
            "grad_clip": 50.0,
            "penalty_weight": 10.0,
            "grad_tol": 1e-4,
            "hidden": [24, 24],
            "accel_max": 4.0,
            "pos_box": 3.0,
            "vel_box": 1.0,
            "ref_pos_box": 2.5,
            "ref_vel_max": 0.5,
            "penalty_pos_box": 3.5,
            "penalty_vel_box": 3.0,
            "penalty_accel_box": 4.0,
            "moving_ref_fraction": 0.3,
            "transit_fraction": 0.5,
            "cylinder_penalty": True,
            "cylinder_margin": 0.3,
            "cylinder_weight": 60.0,
            "cylinder_ramp": 0,
        },
        "safeset": {
            "eps_converged": 0.3,
            "delta": 0.1,
            "max_points": 3000,
            "prune": True,
            "filter_inflation": 0.0,
            "cvx_directions": 8192,
            "brake_accel": 1.5,
            "cvx_inflation": 0.5,
        },
        "psf": {
            "horizon_Tf": 2.0,
            "horizon_N": 20,
            "Ts": 0.01,
            "alpha": 300.0,
            "margin": 0.15,
            "max_iterations": 50,
            "grad_tol": 1e-6,
            "literal_objective": False,
        },
        "mpc": {
            "horizon": 2.0,
            "Ts": 0.01,
            "nmpc_steps": 50,
            "vtnmpc_steps": 25,
            "cylinder_slope": 0.1,
            "cylinder_weight": 2000.0,
            "input_penalty_weight": 100.0,
            "max_iterations": 60,
            "warm_iterations": 12,
            "grad_tol": 1e-6,
            "internal_dt_max": 0.05,
            "warm_start": True,
        },
        "bench": {
            "control_period": 0.01,
            "sim_dt": 0.002,
            "plant_perturbation": 0.05,
            "cylinder": {"x": 0.0, "y": 0.35, "radius": 0.5},
            "nav_start": [-2.0, 0.0, 1.0],
            "nav_goal": [2.0, 0.0, 1.0],
            "nav_duration": 5.0,
        "nav_slew": 3.0,
            "traj_duration": 10.0,
            "traj_waypoints": [
                [0.0, -2.0, 0.0, 1.0],
                [2.5, 0.0, -1.5, 1.5],
                [5.0, 2.0, 0.0, 1.0],
                [7.5, 0.0, 1.5, 0.5],
                [10.0, -2.0, 0.0, 1.0],
            ],
            "dpc_ref_offset": 0.4,
            "adv_duration": 10.0,
            "adv_speed": 2.25,
        },
    }


def load_config(path: str | Path) -> dict[str, Any]:
    with open(path) as fh:
        cfg = json.load(fh)
    schema = cfg.get("schema")
    if schema != SCHEMA_ID:
        raise ValueError(f"unsupported config schema {schema!r}; "
                         f"expected {SCHEMA_ID!r}")
    merged = default_config()
    for section, values in cfg.items():
        if section == "schema":
            continue
        if section not in merged:
            raise ValueError(f"unknown config section {section!r}")
        if isinstance(values, dict):
            merged[section].update(values)
        else:
            merged[section] = values
    return merged


def save_config(cfg: dict[str, Any], path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2)
        fh.write("\n")


def quad_params_from(cfg: dict[str, Any]) -> QuadParams:
    q = cfg["quad"]
    return QuadParams(
        mass=q["mass"],
        inertia=tuple(q["inertia"]),
        arm_length=q["arm_length"],
        k_thrust=q["k_thrust"],
        k_torque=q["k_torque"],
        rotor_tau=q["rotor_tau"],
        gravity=q["gravity"],
        drag_coeff=q["drag_coeff"],
        motor_speed_min=q["motor_speed_min"],
        motor_speed_max=q["motor_speed_max"],
        vel_max=q["vel_max"],
        rate_max=q["rate_max"],
        pos_max=q["pos_max"],
    )


def train_config_from(cfg: dict[str, Any]):
    from .dpc import LossParams, TrainConfig

    t = cfg["train"]
    b = cfg["bench"]
    cyl = None
    if t["cylinder_penalty"]:
        c = b["cylinder"]
        cyl = (c["x"], c["y"], c["radius"])
    loss = LossParams(
        penalty_weight=t["penalty_weight"],
        pos_bound=t["penalty_pos_box"],
        vel_bound=t["penalty_vel_box"],
        accel_bound=t["penalty_accel_box"],
        cylinder=cyl,
        cylinder_margin=t["cylinder_margin"],
        cylinder_weight=t["cylinder_weight"],
    )
    return TrainConfig(
        seed=t["seed"],
        rollouts_per_batch=t["rollouts_per_batch"],
        steps_per_rollout=t["steps_per_rollout"],
        batches=t["batches"],
        dt=t["dt"],
        learning_rate=t["learning_rate"],
        lr_decay=t["lr_decay"],
        accum_decay=t["accum_decay"],
        grad_tol=t["grad_tol"],
        grad_clip=t["grad_clip"],
        hidden=tuple(t["hidden"]),
        accel_max=t["accel_max"],
        pos_box=t["pos_box"],
        vel_box=t["vel_box"],
        ref_pos_box=t["ref_pos_box"],
        ref_vel_max=t["ref_vel_max"],
        moving_ref_fraction=t["moving_ref_fraction"],
        transit_fraction=t["transit_fraction"],
        cylinder_ramp=t["cylinder_ramp"],
        loss=loss,
    )


def pgains_from(cfg: dict[str, Any]) -> PGains:
    p = quad_params_from(cfg)
    g = cfg["gains"]
    base = default_gains(p)
    return PGains(att=tuple(g["att"]), rate=tuple(g["rate"]),
                  yaw_setpoint=g["yaw_setpoint"], mixer=base.mixer)
