import csv

import numpy as np
import pytest

from dpcpsf.bench import (BenchArtifacts, RunMetrics, Scenario, emit_report,
                          make_scenarios, run_scenario, scenario_reference,
                          waypoint_reference)
from dpcpsf.config import default_config
from dpcpsf.dpc import Policy
from dpcpsf.mpc import MPCConfig

CFG = default_config()["bench"]


def test_make_scenarios_shapes():
    scns = make_scenarios(CFG)
    assert set(scns) == {"navigation", "trajectory", "adversarial"}
    nav = scns["navigation"]
    assert nav.goal == (2.0, 0.0, 1.0)
    adv = scns["adversarial"]
    v = np.array(adv.start_vel)
    assert np.linalg.norm(v) == pytest.approx(CFG["adv_speed"])
    # aims at the cylinder axis
    d = np.array([adv.cylinders[0].x - adv.start_pos[0],
                  adv.cylinders[0].y - adv.start_pos[1], 0.0])
    cos = v @ d / (np.linalg.norm(v) * np.linalg.norm(d))
    assert cos == pytest.approx(1.0)


def test_waypoint_reference_interpolation():
    wp = np.array([[0.0, 0, 0, 1], [2.0, 2, 0, 1], [4.0, 2, 2, 1.0]])
    r = waypoint_reference(1.0, wp)
    assert np.allclose(r[:3], [1, 0, 1])
    assert np.allclose(r[3:], [1, 0, 0])
    assert np.allclose(waypoint_reference(-1.0, wp)[3:], 0.0)
    assert np.allclose(waypoint_reference(9.0, wp)[:3], [2, 2, 1])


def test_scenario_validation():
    with pytest.raises(ValueError):
        Scenario(kind="navigation", duration=-1.0, start_pos=(0, 0, 1))
    with pytest.raises(ValueError):
        Scenario(kind="trajectory", duration=1.0, start_pos=(0, 0, 1),
                 waypoints=np.array([[0.0, 0, 0, 1], [0.0, 1, 1, 1]]))


def test_scenario_reference_navigation_slew():
    sc = make_scenarios(CFG)["navigation"]
    r0 = scenario_reference(sc, 0.0)
    assert np.allclose(r0[:3], sc.start_pos)
    mid = scenario_reference(sc, 0.5 * sc.slew)
    assert np.allclose(mid[:3], 0.5 * (np.array(sc.start_pos) + sc.goal))
    assert np.allclose(mid[3:], (np.array(sc.goal) - sc.start_pos) / sc.slew)
    end = scenario_reference(sc, sc.slew + 1.0)
    assert np.allclose(end[:3], sc.goal)
    assert np.allclose(end[3:], 0.0)


def test_run_scenario_requires_artifacts():
    sc = make_scenarios(CFG)["navigation"]
    with pytest.raises(ValueError):
        run_scenario(sc, "dpc", BenchArtifacts())
    with pytest.raises(ValueError):
        run_scenario(sc, "warp_drive", BenchArtifacts())


def test_run_scenario_dpc_smoke(tmp_path):
    # short horizon, untrained policy: just exercises the loop + CSV dump
    sc = Scenario(kind="navigation", duration=0.2, start_pos=(0.0, 2.0, 1.0),
                  goal=(0.0, 2.0, 1.0))
    art = BenchArtifacts(policy=Policy.init(seed=0))
    csv_path = tmp_path / "run.csv"
    m = run_scenario(sc, "dpc", art, csv_path=csv_path)
    assert m.steps == 20
    assert m.trigger_fraction == 0.0
    assert np.isfinite(m.cost)
    with open(csv_path) as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 21  # header + steps
    assert rows[0][0] == "t"


def test_run_scenario_nmpc_smoke():
    sc = Scenario(kind="navigation", duration=0.05, start_pos=(0.0, 2.0, 1.0),
                  goal=(0.0, 2.0, 1.0))
    art = BenchArtifacts(nmpc_cfg=MPCConfig(horizon=0.3, N=3,
                                            max_iterations=3,
                                            warm_iterations=2))
    m = run_scenario(sc, "nmpc", art)
    assert m.steps == 5
    assert np.isfinite(m.cost)
    assert m.median_step_time > 0


def test_emit_report(tmp_path):
    m = RunMetrics(scenario="navigation", controller="dpc", seed=0, cost=1.0,
                   terminal_error=0.1, min_clearance=0.2,
                   trigger_fraction=0.0, total_controller_time=0.5,
                   median_step_time=0.001, steps=10)
    paths = emit_report([m], tmp_path)
    with open(paths["csv"]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "scenario"
    assert rows[1][1] == "dpc"
    assert (tmp_path / "bench_table.txt").exists()
