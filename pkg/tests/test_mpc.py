import numpy as np
import pytest

from dpcpsf.dynamics import QuadParams, hover_command, hover_state
from dpcpsf.mpc import (DEFAULT_Q, DEFAULT_R, MPCConfig, MPCController,
                        MPCCostWeights, _Transcription, accumulate_task_cost,
                        augmented_cylinder, mpc_cost, nmpc_solve,
                        reference_state, vtnmpc_solve)
from dpcpsf.safeset import CylinderConstraint

P = QuadParams()
W = MPCCostWeights()


def test_cost_zero_at_reference():
    xr = reference_state([1.0, 0.0, 1.0], [0.0, 0.0, 0.0], P)
    assert mpc_cost(xr, np.zeros(4), xr, W) == 0.0


def test_cost_unit_position_error():
    xr = reference_state([0.0, 0.0, 1.0], np.zeros(3), P)
    x = xr.copy()
    x[0] += 1.0
    assert mpc_cost(x, np.zeros(4), xr, W) == pytest.approx(1.0)


def test_cost_ignores_quaternion_error():
    xr = reference_state([0.0, 0.0, 1.0], np.zeros(3), P)
    x = xr.copy()
    x[3:7] = [np.cos(0.3), np.sin(0.3), 0.0, 0.0]  # rolled attitude
    assert mpc_cost(x, np.zeros(4), xr, W) == 0.0


def test_cost_input_quadratic():
    xr = reference_state([0.0, 0.0, 1.0], np.zeros(3), P)
    u = np.array([0.5, 0.0, 0.0, 0.0])
    assert mpc_cost(xr, u, xr, W) == pytest.approx(0.25)


def test_weights_validation():
    with pytest.raises(ValueError):
        MPCCostWeights(Q=-DEFAULT_Q, R=DEFAULT_R)


def test_augmented_cylinder_grows_with_time():
    c = CylinderConstraint(0.0, 0.0, 0.5)
    pos = [np.sqrt(1.2) * 0.5, 0.0, 1.0]
    # at t_ahead = 2 with slope 0.1 the grown radius^2 is 0.25*1.2
    assert augmented_cylinder(pos, 2.0, c, slope=0.1) == pytest.approx(0.0)
    assert augmented_cylinder(pos, 0.0, c, slope=0.1) < 0.0
    assert augmented_cylinder(pos, 5.0, c, slope=0.1) > 0.0


def test_timesteps_constant_and_linear():
    c1 = MPCConfig(horizon=2.0, N=50, schedule="constant")
    dt = c1.timesteps()
    assert np.allclose(dt, 0.04)
    c2 = MPCConfig(horizon=2.0, N=25, schedule="linear", Ts=0.01)
    dt2 = c2.timesteps()
    assert dt2[0] == pytest.approx(0.01)
    assert abs(dt2.sum() - 2.0) < 1e-12
    assert np.all(np.diff(dt2) > 0)
    with pytest.raises(ValueError):
        MPCConfig(schedule="geometric").timesteps()


def test_transcription_gradient_matches_fd():
    cfg = MPCConfig(horizon=0.2, N=4, max_iterations=1)
    tr = _Transcription(cfg, P, W, [CylinderConstraint(0.0, 0.35, 0.5)])
    x0 = hover_state(P, pos=(-1.0, 0.0, 1.0))
    refs = [reference_state([1.0, 0.0, 1.0], np.zeros(3), P)] * cfg.N
    fg = tr.fun_grad(x0, refs)
    u = np.full(4 * cfg.N, hover_command(P)) + 0.01
    f0, g = fg(u)
    h = 1e-6
    for i in [0, 5, 11, 15]:
        e = np.zeros_like(u)
        e[i] = h
        fd = (fg(u + e)[0] - fg(u - e)[0]) / (2 * h)
        assert g[i] == pytest.approx(fd, rel=1e-4, abs=1e-6)


def test_hover_is_near_optimal_at_reference():
    cfg = MPCConfig(horizon=0.5, N=5, max_iterations=30)
    x0 = hover_state(P, pos=(0.0, 0.0, 1.0))
    refs = [reference_state([0.0, 0.0, 1.0], np.zeros(3), P)] * cfg.N
    sol = nmpc_solve(x0, refs, cfg, P)
    assert np.allclose(sol.inputs[0], hover_command(P), atol=5e-3)


def test_vtnmpc_equals_nmpc_on_constant_schedule():
    cfg = MPCConfig(horizon=0.4, N=4, schedule="constant", max_iterations=10)
    x0 = hover_state(P, pos=(-0.5, 0.2, 1.0))
    refs = [reference_state([0.5, 0.0, 1.0], np.zeros(3), P)] * cfg.N
    s1 = nmpc_solve(x0, refs, cfg, P)
    s2 = vtnmpc_solve(x0, refs, cfg, P)
    assert np.array_equal(s1.inputs, s2.inputs)


def test_controller_warm_start_reduces_iterations():
    cfg = MPCConfig(horizon=0.4, N=4, max_iterations=30, warm_iterations=5)
    ctl = MPCController(cfg, P)
    x0 = hover_state(P, pos=(-0.5, 0.0, 1.0))
    refs = [reference_state([0.5, 0.0, 1.0], np.zeros(3), P)] * cfg.N
    s1 = ctl(x0, refs)
    s2 = ctl(x0, refs)
    assert s2.iterations <= 5


def test_accumulate_task_cost_penetration_sentinel():
    xr = reference_state([0.0, 0.0, 1.0], np.zeros(3), P)
    x_in = xr.copy()
    x_in[0:2] = [0.0, 0.4]
    c = CylinderConstraint(0.0, 0.35, 0.5)
    cost = accumulate_task_cost([x_in], [np.zeros(4)], [xr], W, [c])
    assert cost == float("inf")
    x_out = xr.copy()
    x_out[0:2] = [2.0, 2.0]
    cost2 = accumulate_task_cost([x_out], [np.zeros(4)], [xr], W, [c])
    assert np.isfinite(cost2)
