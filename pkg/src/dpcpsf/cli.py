"""Command-line front end: relative-degree analysis, policy training,
safe-set construction, and the closed-loop benchmark."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import config as config_mod
from . import mpc as mpc_mod
from . import psf as psf_mod
from . import reldeg, safeset
from .dpc import Policy, RolloutStore, train


def _load_cfg(path: str | None) -> dict:
    if path is None:
        return config_mod.default_config()
    return config_mod.load_config(path)


def cmd_reldeg(args) -> int:
    builders = {
        "quad": reldeg.quad_system,
        "sub1": reldeg.sub1_system,
        "single_integrator": reldeg.single_integrator_system,
        "double_integrator": reldeg.double_integrator_system,
    }
    spec = builders[args.system]()
    report = reldeg.vrd_report(spec, seed=args.seed)
    dec = reldeg.decompose(spec, report.delta)
    out = {
        "system": args.system,
        "vector_relative_degree": list(report.r),
        "well_defined": list(report.well_defined),
        "delta": list(report.delta),
        "x_s1": list(dec.x_s1),
        "u_s1": list(dec.u_s1),
        "x_s2": list(dec.x_s2),
        "u_s2": list(dec.u_s2),
    }
    print(json.dumps(out, indent=2))
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args.config)
    tc = config_mod.train_config_from(cfg)
    if args.seed is not None:
        tc = dataclasses.replace(tc, seed=args.seed)
    res = train(tc)
    res.policy.save(args.policy_out)
    res.store.to_csv(args.store_out)
    bl = res.store.batch_loss
    print(f"batches={len(bl)} first_loss={bl[0]:.4f} "
          f"final_loss={bl[-1]:.4f} ratio={bl[-1] / bl[0]:.4f}")
    print(f"policy -> {args.policy_out}")
    print(f"store  -> {args.store_out}")
    return 0


def cmd_safeset_build(args) -> int:
    cfg = _load_cfg(args.config)
    sc = cfg["safeset"]
    c = cfg["bench"]["cylinder"]
    cons = [safeset.CylinderConstraint(c["x"], c["y"], c["radius"])]
    filt = [safeset.CylinderConstraint(c["x"], c["y"],
                                       c["radius"] + sc["filter_inflation"])]
    store = RolloutStore.from_csv(args.store)
    points = safeset.filter_rollouts(store, filt, sc["eps_converged"])
    ss = safeset.build_safe_set(points, cons, delta=sc["delta"],
                                max_points=sc["max_points"],
                                prune=sc["prune"],
                                cvx_directions=sc["cvx_directions"],
                                brake_accel=sc["brake_accel"],
                                cvx_inflation=sc["cvx_inflation"])
    ss.save(args.out)
    for s in ss.sets:
        print(f"set {s.set_id}: {len(s.points)} points, dim {s.dim}")
    print(f"safe set -> {args.out}")
    return 0


def _artifacts(args, cfg) -> bench_mod.BenchArtifacts:
    params = config_mod.quad_params_from(cfg)
    gains = config_mod.pgains_from(cfg)
    p = cfg["psf"]
    m = cfg["mpc"]
    psf_cfg = psf_mod.PSFConfig(
        Ts=p["Ts"], Tf=args.horizon_tf or p["horizon_Tf"],
        N=args.horizon_n or p["horizon_N"],
        alpha=args.alpha if args.alpha is not None else p["alpha"],
        margin=args.margin if args.margin is not None else p["margin"],
        max_iterations=p["max_iterations"], grad_tol=p["grad_tol"],
        literal_objective=p["literal_objective"])
    nmpc_cfg = mpc_mod.MPCConfig(
        horizon=m["horizon"], N=m["nmpc_steps"], schedule="constant",
        Ts=m["Ts"], cylinder_slope=m["cylinder_slope"],
        cylinder_weight=m["cylinder_weight"],
        input_penalty_weight=m["input_penalty_weight"],
        max_iterations=m["max_iterations"],
        warm_iterations=m["warm_iterations"], grad_tol=m["grad_tol"],
        internal_dt_max=m["internal_dt_max"], warm_start=m["warm_start"])
    vt_cfg = mpc_mod.MPCConfig(
        horizon=m["horizon"], N=m["vtnmpc_steps"], schedule="linear",
        Ts=m["Ts"], cylinder_slope=m["cylinder_slope"],
        cylinder_weight=m["cylinder_weight"],
        input_penalty_weight=m["input_penalty_weight"],
        max_iterations=m["max_iterations"],
        warm_iterations=m["warm_iterations"], grad_tol=m["grad_tol"],
        internal_dt_max=m["internal_dt_max"], warm_start=m["warm_start"])
    policy = Policy.load(args.policy) if args.policy else None
    ss = safeset.SafeSet.load(args.safe_set) if args.safe_set else None
    return bench_mod.BenchArtifacts(policy=policy, safe_set=ss,
                                    params=params, gains=gains,
                                    psf_cfg=psf_cfg, nmpc_cfg=nmpc_cfg,
                                    vtnmpc_cfg=vt_cfg)


def cmd_bench_run(args) -> int:
    cfg = _load_cfg(args.config)
    art = _artifacts(args, cfg)
    scenarios = bench_mod.make_scenarios(cfg["bench"])
    sc = scenarios[args.scenario]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics = []
    for ctl in args.controllers:
        csv_path = out_dir / f"{args.scenario}_{ctl}_seed{args.seed}.csv"
        m = bench_mod.run_scenario(
            sc, ctl, art, seed=args.seed,
            control_period=cfg["bench"]["control_period"],
            sim_dt=cfg["bench"]["sim_dt"],
            plant_perturbation=cfg["bench"]["plant_perturbation"],
            csv_path=csv_path)
        metrics.append(m)
        print(f"{ctl}: cost={m.cost:.6g} terminal={m.terminal_error:.3f} "
              f"clearance={m.min_clearance:.3f} "
              f"trigger={m.trigger_fraction:.3f} "
              f"median_step={m.median_step_time * 1e3:.3f}ms")
    paths = bench_mod.emit_report(metrics, out_dir)
    print(f"table -> {paths['txt']}")
    violated = any(m.min_clearance < 0.0 or m.diverged for m in metrics)
    return 1 if violated else 0


def cmd_bench_table(args) -> int:
    rows = Path(args.table).read_text().rstrip("\n")
    print(rows)
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="dpcpsf")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reldeg", help="vector relative degree analysis")
    p.add_argument("--system", default="quad",
                   choices=["quad", "sub1", "single_integrator",
                            "double_integrator"])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_reldeg)

    p = sub.add_parser("train", help="train the policy")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--policy-out", default="policy.json")
    p.add_argument("--store-out", default="rollouts.csv")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("safeset", help="safe-set operations")
    ssub = p.add_subparsers(dest="subcommand", required=True)
    pb = ssub.add_parser("build", help="build from a rollout store")
    pb.add_argument("--config")
    pb.add_argument("--store", required=True)
    pb.add_argument("--out", default="safe_set")
    pb.set_defaults(fn=cmd_safeset_build)

    p = sub.add_parser("bench", help="closed-loop benchmark")
    bsub = p.add_subparsers(dest="subcommand", required=True)
    pr = bsub.add_parser("run", help="run one scenario")
    pr.add_argument("--config")
    pr.add_argument("--scenario", default="navigation",
                    choices=["navigation", "trajectory", "adversarial"])
    pr.add_argument("--controllers", nargs="+",
                    default=["dpc", "dpc_psf", "vtnmpc", "nmpc"],
                    choices=list(bench_mod.CONTROLLERS))
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--policy")
    pr.add_argument("--safe-set")
    pr.add_argument("--alpha", type=float)
    pr.add_argument("--margin", type=float)
    pr.add_argument("--horizon-n", type=int)
    pr.add_argument("--horizon-tf", type=float)
    pr.add_argument("--out", default="bench_out")
    pr.set_defaults(fn=cmd_bench_run)
    pt = bsub.add_parser("table", help="print a previously emitted table")
    pt.add_argument("--table", required=True)
    pt.set_defaults(fn=cmd_bench_table)

    args = ap.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
