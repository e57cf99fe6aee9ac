"""Quadcopter rigid-body model, Euler discretization, the position/velocity
double-integrator subsystem, a cascade P low-level controller, and seeded
parameter perturbation for the evaluation plant.

State layout (17 entries, z-up world frame):

    x, y, z            position (m)
    q0, q1, q2, q3     attitude quaternion (scalar first)
    vx, vy, vz         world-frame velocity (m/s)
    p, q, r            body angular rates (rad/s)
    w1, w2, w3, w4     rotor speeds (rad/s)

Inputs are four normalized motor commands in [0, 1]; a command maps linearly
to a steady-state rotor speed and the rotor follows it with a first-order
lag, so the state derivative stays affine in the input.

All dynamics functions accept plain floats or autodiff Vars elementwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad

STATE_NAMES = ("x", "y", "z", "q0", "q1", "q2", "q3",
               "vx", "vy", "vz", "p", "q", "r", "w1", "w2", "w3", "w4")
INPUT_NAMES = ("uM1", "uM2", "uM3", "uM4")
SUB1_STATE_NAMES = ("x", "y", "z", "vx", "vy", "vz")
SUB1_INPUT_NAMES = ("x_dd", "y_dd", "z_dd")

N_STATES = 17
N_INPUTS = 4

# index groups
POS = slice(0, 3)
QUAT = slice(3, 7)
VEL = slice(7, 10)
RATES = slice(10, 13)
ROTORS = slice(13, 17)


@dataclass(frozen=True)
class QuadParams:
    """Physical parameters and box bounds of the simulated quadcopter."""

    mass: float = 1.2                      # kg
    inertia: tuple[float, float, float] = (0.0123, 0.0123, 0.0224)  # kg m^2
    arm_length: float = 0.16               # m
    k_thrust: float = 1.1772e-5            # N / (rad/s)^2
    k_torque: float = 1.632e-7             # N m / (rad/s)^2
    rotor_tau: float = 0.05                # s
    gravity: float = 9.81                  # m/s^2
    drag_coeff: float = 0.08               # N s/m, linear velocity drag
    motor_speed_min: float = 0.0           # rad/s
    motor_speed_max: float = 1000.0        # rad/s
    vel_max: float = 10.0                  # m/s state box half-width
    rate_max: float = 5.0                  # rad/s state box half-width
    pos_max: float = 50.0                  # m state box half-width

    def __post_init__(self) -> None:
        positive = {
            "mass": self.mass, "arm_length": self.arm_length,
            "k_thrust": self.k_thrust, "k_torque": self.k_torque,
            "rotor_tau": self.rotor_tau, "gravity": self.gravity,
        }
        for name, v in positive.items():
            if v <= 0.0:
                raise ValueError(f"{name} must be strictly positive, got {v}")
        if any(i <= 0.0 for i in self.inertia):
            raise ValueError("inertia diagonal must be strictly positive")
        if self.motor_speed_min >= self.motor_speed_max:
            raise ValueError("motor speed bounds must satisfy lower < upper")

    @property
    def state_lower(self) -> np.ndarray:
        b = np.empty(N_STATES)
        b[POS] = -self.pos_max
        b[QUAT] = -1.0
        b[VEL] = -self.vel_max
        b[RATES] = -self.rate_max
        b[ROTORS] = self.motor_speed_min
        return b

    @property
    def state_upper(self) -> np.ndarray:
        b = np.empty(N_STATES)
        b[POS] = self.pos_max
        b[QUAT] = 1.0
        b[VEL] = self.vel_max
        b[RATES] = self.rate_max
        b[ROTORS] = self.motor_speed_max
        return b

    @property
    def input_lower(self) -> np.ndarray:
        return np.zeros(N_INPUTS)

    @property
    def input_upper(self) -> np.ndarray:
        return np.ones(N_INPUTS)


def hover_speed(p: QuadParams) -> float:
    """Rotor speed at which four rotors cancel gravity."""
    return float(np.sqrt(p.mass * p.gravity / (4.0 * p.k_thrust)))


def hover_command(p: QuadParams) -> float:
    """Normalized motor command whose steady-state speed is hover_speed."""
    return (hover_speed(p) - p.motor_speed_min) / (
        p.motor_speed_max - p.motor_speed_min)


def hover_state(p: QuadParams, pos=(0.0, 0.0, 0.0)) -> np.ndarray:
    s = np.zeros(N_STATES)
    s[0:3] = pos
    s[3] = 1.0
    s[ROTORS] = hover_speed(p)
    return s


def quad_derivative(s: Sequence, u: Sequence, p: QuadParams) -> list:
    """Time derivative of all 17 states; affine in the motor commands."""
    q0, q1, q2, q3 = s[3], s[4], s[5], s[6]
    vx, vy, vz = s[7], s[8], s[9]
    wp, wq, wr = s[10], s[11], s[12]
    w = s[13:17]

    kth = p.k_thrust
    thrusts = [kth * wi * wi for wi in w]
    total_thrust = thrusts[0] + thrusts[1] + thrusts[2] + thrusts[3]

    # body z-axis in world coordinates (third column of the rotation matrix)
    bz_x = 2.0 * (q1 * q3 + q0 * q2)
    bz_y = 2.0 * (q2 * q3 - q0 * q1)
    bz_z = q0 * q0 - q1 * q1 - q2 * q2 + q3 * q3

    inv_m = 1.0 / p.mass
    cd = p.drag_coeff
    ax = (total_thrust * bz_x - cd * vx) * inv_m
    ay = (total_thrust * bz_y - cd * vy) * inv_m
    az = (total_thrust * bz_z - cd * vz) * inv_m - p.gravity

    dq0 = -0.5 * (wp * q1 + wq * q2 + wr * q3)
    dq1 = 0.5 * (wp * q0 + wr * q2 - wq * q3)
    dq2 = 0.5 * (wq * q0 - wr * q1 + wp * q3)
    dq3 = 0.5 * (wr * q0 + wq * q1 - wp * q2)

    ixx, iyy, izz = p.inertia
    dxm = p.arm_length
    dym = p.arm_length
    kto = p.k_torque
    torques = [kto * wi * wi for wi in w]
    tau_x = dym * (thrusts[0] - thrusts[1] - thrusts[2] + thrusts[3])
    tau_y = dxm * (thrusts[0] + thrusts[1] - thrusts[2] - thrusts[3])
    tau_z = -torques[0] + torques[1] - torques[2] + torques[3]

    dp = ((iyy - izz) * wq * wr + tau_x) / ixx
    dq = ((izz - ixx) * wp * wr + tau_y) / iyy
    dr = ((ixx - iyy) * wp * wq + tau_z) / izz

    span = p.motor_speed_max - p.motor_speed_min
    inv_tau = 1.0 / p.rotor_tau
    dw = [((p.motor_speed_min + u[i] * span) - w[i]) * inv_tau
          for i in range(4)]

    return [vx, vy, vz, dq0, dq1, dq2, dq3, ax, ay, az,
            dp, dq, dr, dw[0], dw[1], dw[2], dw[3]]


def euler_step(s: Sequence, u: Sequence, dt: float, p: QuadParams) -> list:
    """One explicit Euler step followed by quaternion renormalization.

    Rotor speeds are clipped to their box after the step.  Differentiable
    when called on tape Vars.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    ds = quad_derivative(s, u, p)
    nxt = [s[i] + ds[i] * dt for i in range(N_STATES)]
    q0, q1, q2, q3 = nxt[3], nxt[4], nxt[5], nxt[6]
    qn = ad.sqrt(q0 * q0 + q1 * q1 + q2 * q2 + q3 * q3)
    nxt[3] = q0 / qn
    nxt[4] = q1 / qn
    nxt[5] = q2 / qn
    nxt[6] = q3 / qn
    for i in range(13, 17):
        nxt[i] = ad.minimum(ad.maximum(nxt[i], p.motor_speed_min),
                            p.motor_speed_max)
    return nxt


def sub1_step(s: Sequence, a: Sequence, dt: float) -> list:
    """Double-integrator step: position advances on the old velocity."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    return [s[0] + s[3] * dt, s[1] + s[4] * dt, s[2] + s[5] * dt,
            s[3] + a[0] * dt, s[4] + a[1] * dt, s[5] + a[2] * dt]


# -- cascade P controller --------------------------------------------------

@dataclass(frozen=True)
class PGains:
    """Gains and mixing for the low-level attitude/rate cascade."""

    att: tuple[float, float, float] = (9.0, 9.0, 4.0)     # 1/s
    rate: tuple[float, float, float] = (22.0, 22.0, 10.0)  # 1/s
    yaw_setpoint: float = 0.0                              # rad
    mixer: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self) -> None:
        if any(g <= 0.0 for g in self.att) or any(g <= 0.0 for g in self.rate):
            raise ValueError("cascade gains must be positive")


def make_mixer(p: QuadParams) -> np.ndarray:
    """Map per-rotor thrusts to (total thrust, roll, pitch, yaw moments).

    Rotor 1 front-left, numbered clockwise; rotors 1 and 3 spin so their
    reaction torque is negative about body z.
    """
    d = p.arm_length
    c = p.k_torque / p.k_thrust
    return np.array([
        [1.0, 1.0, 1.0, 1.0],
        [d, -d, -d, d],
        [d, d, -d, -d],
        [-c, c, -c, c],
    ])


def default_gains(p: QuadParams) -> PGains:
    return PGains(mixer=make_mixer(p))


class CascadeResult(NamedTuple):
    u: np.ndarray          # 4 motor commands in [0, 1]
    degenerate: bool       # True when the commanded thrust direction vanished


def _quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a0, a1, a2, a3 = a
    b0, b1, b2, b3 = b
    return np.array([
        a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
        a0 * b1 + a1 * b0 + a2 * b3 - a3 * b2,
        a0 * b2 - a1 * b3 + a2 * b0 + a3 * b1,
        a0 * b3 + a1 * b2 - a2 * b1 + a3 * b0,
    ])


def cascade_p(a_cmd: Sequence[float], s: Sequence[float], g: PGains,
              p: QuadParams) -> CascadeResult:
    """Map a commanded world acceleration to motor commands.

    Thrust vector -> desired attitude (yaw held at the setpoint), P law on
    attitude error -> body-rate command, P law on rate error plus the total
    thrust demand -> per-rotor thrusts through the mixer.  Outputs are
    clipped to the input box.
    """
    s = np.asarray(s, dtype=float)
    a_cmd = np.asarray(a_cmd, dtype=float)
    f_des = p.mass * (a_cmd + np.array([0.0, 0.0, p.gravity]))
    f_norm = float(np.linalg.norm(f_des))
    degenerate = f_norm < 1e-6 * p.mass * p.gravity
    if degenerate:
        # free-fall command: no thrust direction; fall back to minimum thrust
        # along the current body z-axis
        f_des = np.array([0.0, 0.0, 1e-6])
        f_norm = 1e-6

    b3 = f_des / f_norm
    yaw = g.yaw_setpoint
    b1c = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    b2 = np.cross(b3, b1c)
    b2n = np.linalg.norm(b2)
    if b2n < 1e-8:
        # thrust direction parallel to the yaw heading; pick a fallback
        b2 = np.cross(b3, np.array([0.0, 1.0, 0.0]))
        b2n = np.linalg.norm(b2)
    b2 = b2 / b2n
    b1 = np.cross(b2, b3)
    rot = np.column_stack([b1, b2, b3])

    q_des = _quat_from_matrix(rot)
    q_cur = s[QUAT] / np.linalg.norm(s[QUAT])
    q_err = _quat_mul(_quat_conj(q_cur), q_des)
    if q_err[0] < 0.0:
        q_err = -q_err
    rate_cmd = 2.0 * np.asarray(g.att) * q_err[1:4]

    rate_err = rate_cmd - s[RATES]
    inertia = np.asarray(p.inertia)
    tau_cmd = inertia * np.asarray(g.rate) * rate_err

    thrust_mag = f_norm
    wrench = np.concatenate([[thrust_mag], tau_cmd])
    rotor_thrusts = np.linalg.solve(g.mixer, wrench)
    rotor_thrusts = np.clip(rotor_thrusts, 0.0, None)
    w_cmd = np.sqrt(rotor_thrusts / p.k_thrust)
    span = p.motor_speed_max - p.motor_speed_min
    u = (w_cmd - p.motor_speed_min) / span
    u = np.clip(u, 0.0, 1.0)
    return CascadeResult(u=u, degenerate=degenerate)


def _quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def _quat_from_matrix(rot: np.ndarray) -> np.ndarray:
    t = np.trace(rot)
    if t > 0.0:
        r = np.sqrt(1.0 + t)
        w = 0.5 * r
        f = 0.5 / r
        return np.array([w,
                         (rot[2, 1] - rot[1, 2]) * f,
                         (rot[0, 2] - rot[2, 0]) * f,
                         (rot[1, 0] - rot[0, 1]) * f])
    i = int(np.argmax(np.diag(rot)))
    j, k = (i + 1) % 3, (i + 2) % 3
    r = np.sqrt(1.0 + rot[i, i] - rot[j, j] - rot[k, k])
    q = np.empty(4)
    q[0] = (rot[k, j] - rot[j, k]) / (2.0 * r)
    q[1 + i] = 0.5 * r
    q[1 + j] = (rot[j, i] + rot[i, j]) / (2.0 * r)
    q[1 + k] = (rot[k, i] + rot[i, k]) / (2.0 * r)
    return q


# -- perturbed evaluation plant -------------------------------------------

def perturbed_plant(p: QuadParams, seed: int, magnitude: float) -> QuadParams:
    """Seeded multiplicative perturbation of the physical parameters.

    Mass, inertia, thrust and torque coefficients, and the rotor time
    constant each get an independent factor in [1 - magnitude,
    1 + magnitude]; geometry and bounds are untouched.
    """
    if not 0.0 <= magnitude < 0.5:
        raise ValueError(f"magnitude must be in [0, 0.5), got {magnitude}")
    rng = np.random.default_rng(seed)
    f = 1.0 + magnitude * rng.uniform(-1.0, 1.0, size=5)
    return QuadParams(
        mass=p.mass * f[0],
        inertia=tuple(np.asarray(p.inertia) * f[1]),
        arm_length=p.arm_length,
        k_thrust=p.k_thrust * f[2],
        k_torque=p.k_torque * f[3],
        rotor_tau=p.rotor_tau * f[4],
        gravity=p.gravity,
        drag_coeff=p.drag_coeff,
        motor_speed_min=p.motor_speed_min,
        motor_speed_max=p.motor_speed_max,
        vel_max=p.vel_max,
        rate_max=p.rate_max,
        pos_max=p.pos_max,
    )
