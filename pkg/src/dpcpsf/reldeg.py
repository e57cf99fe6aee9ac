"""Numeric vector-relative-degree analysis and dynamics decomposition.

Relative degree, well-definedness, and the influence-breakdown depth are all
probed numerically: the system's differentiable step function is unrolled on
an autodiff tape at sampled states and the input-to-output (and
state-to-output) Jacobians are tested against a zero tolerance.  The
decomposition then splits states and inputs into a subsystem that sees the
input within the breakdown depth and a remainder subsystem.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import dynamics as dyn

DEFAULT_EPS_J = 1e-8


class RelativeDegreeError(RuntimeError):
    """Raised when no unrolling depth exposes the input for some output."""


@dataclass(frozen=True)
class SystemSpec:
    """A discrete-time system prepared for numeric relative-degree probing.

    ``step(s, u)`` must accept floats or autodiff Vars elementwise and return
    the next state.  ``outputs`` selects the observed states by name.
    ``sample_probe(rng)`` returns a (state, input) operating point;
    ``structured_probes`` are always evaluated first (deterministically) and
    should include any physically meaningful degenerate points.
    """

    state_names: tuple[str, ...]
    input_names: tuple[str, ...]
    output_names: tuple[str, ...]
    step: Callable[[Sequence, Sequence], list]
    sample_probe: Callable[[np.random.Generator], tuple[np.ndarray, np.ndarray]]
    structured_probes: tuple[tuple[np.ndarray, np.ndarray], ...] = ()
    eps_j: float = DEFAULT_EPS_J

    def __post_init__(self) -> None:
        if len(set(self.state_names)) != len(self.state_names):
            raise ValueError("state names must be unique")
        if len(set(self.input_names)) != len(self.input_names):
            raise ValueError("input names must be unique")
        missing = [o for o in self.output_names if o not in self.state_names]
        if missing:
            raise ValueError(f"outputs not among states: {missing}")
        if not (self.state_names and self.input_names and self.output_names):
            raise ValueError("need at least one state, input, and output")

    @property
    def output_indices(self) -> list[int]:
        return [self.state_names.index(o) for o in self.output_names]


@dataclass
class VRDReport:
    """Relative degrees, well-definedness flags, breakdown depths, and the
    probe states at which input-to-output gradients vanished."""

    r: list[int]
    well_defined: list[bool]
    delta: list[int]
    witnesses: dict[str, list[np.ndarray]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for ri, wi, di in zip(self.r, self.well_defined, self.delta):
            if not 1 <= di <= ri:
                raise ValueError(f"delta {di} outside [1, r={ri}]")
            if wi and di != ri:
                raise ValueError("well-defined output requires delta == r")


@dataclass(frozen=True)
class Decomposition:
    """Algorithm-style split into an input-visible subsystem and a remainder.

    When the output's driving channel is realized by states rather than raw
    inputs (the poorly-defined case), ``u_s1`` carries synthesized derivative
    channel names and ``u_s1_realizers`` records which states/inputs realize
    that channel.
    """

    x_s1: tuple[str, ...]
    u_s1: tuple[str, ...]
    x_s2: tuple[str, ...]
    u_s2: tuple[str, ...]
    u_s1_realizers: tuple[str, ...] = ()


def _probes(sys: SystemSpec, n_probes: int, seed: int):
    rng = np.random.default_rng(seed)
    probes = list(sys.structured_probes)
    while len(probes) < max(n_probes, len(probes)):
        probes.append(sys.sample_probe(rng))
    return probes[:max(n_probes, len(sys.structured_probes))]


def _unroll_output_grads(sys: SystemSpec, x0: np.ndarray, u0: np.ndarray,
                         j_max: int, wrt: str) -> list[list[np.ndarray]]:
    """grads[j-1][i] = d y_i[k+j] / d (u[k] or x[k]), for j = 1..j_max.

    The input is applied at the first step only and held at its recorded
    float value afterwards, matching the one-shot influence question.
    """
    tape = ad.Tape()
    if wrt == "u":
        u_vars = tape.vars(u0)
        state: list = list(x0)
        seeds = u_vars
    elif wrt == "x":
        state = tape.vars(x0)
        u_vars = list(u0)
        seeds = state
    else:
        raise ValueError(wrt)
    out_idx = sys.output_indices
    grads: list[list[np.ndarray]] = []
    for j in range(1, j_max + 1):
        state = sys.step(state, u_vars if j == 1 else list(u0))
        per_output = []
        for oi in out_idx:
            node = state[oi]
            if isinstance(node, ad.Var):
                per_output.append(tape.gradient(node, seeds))
            else:
                per_output.append(np.zeros(len(seeds)))
        grads.append(per_output)
    return grads


def compute_vrd(sys: SystemSpec, n_probes: int = 32, j_max: int = 8,
                seed: int = 0) -> tuple[list[int], list[bool],
                                        dict[str, list[np.ndarray]]]:
    """Per-output relative degree and well-definedness over sampled probes.

    r_i is the smallest unrolling depth at which some probe shows a nonzero
    input-to-output gradient; the output is well-defined when that gradient
    is nonzero at every probe at depth r_i.  Witness states where it
    vanishes are returned per output name.
    """
    if n_probes < 1 or j_max < 1:
        raise ValueError("n_probes and j_max must be >= 1")
    probes = _probes(sys, n_probes, seed)
    eps = sys.eps_j
    l = len(sys.output_names)
    # norms[p][j-1][i]
    norms = []
    for x0, u0 in probes:
        g = _unroll_output_grads(sys, x0, u0, j_max, "u")
        norms.append([[float(np.linalg.norm(gi)) for gi in row] for row in g])

    r: list[int] = []
    well: list[bool] = []
    witnesses: dict[str, list[np.ndarray]] = {}
    for i, name in enumerate(sys.output_names):
        ri = None
        for j in range(1, j_max + 1):
            if any(norms[p][j - 1][i] > eps for p in range(len(probes))):
                ri = j
                break
        if ri is None:
            raise RelativeDegreeError(
                f"output {name!r}: relative degree exceeds horizon {j_max}")
        vanish = [p for p in range(len(probes))
                  if norms[p][ri - 1][i] <= eps]
        r.append(ri)
        well.append(not vanish)
        if vanish:
            witnesses[name] = [probes[p][0] for p in vanish]
    return r, well, witnesses


def _downstream_states(sys: SystemSpec, probes) -> list[int]:
    """Indices of states whose one-step update depends on the input."""
    down: set[int] = set()
    for x0, u0 in probes:
        tape = ad.Tape()
        u_vars = tape.vars(u0)
        nxt = sys.step(list(x0), u_vars)
        for a, node in enumerate(nxt):
            if isinstance(node, ad.Var):
                g = tape.gradient(node, u_vars)
                if np.linalg.norm(g) > sys.eps_j:
                    down.add(a)
    return sorted(down)


def compute_delta(sys: SystemSpec, r: Sequence[int],
                  well_defined: Sequence[bool], n_probes: int = 32,
                  seed: int = 0, mode: str = "downstream") -> list[int]:
    """Depth at which the input's influence chain first breaks down.

    Well-defined outputs keep delta = r.  For the rest, the state-to-output
    Jacobian row at depth j is restricted (``mode="downstream"``, default) to
    the state coordinates directly driven by the input, and delta_i is the
    first depth where that restricted row is nonzero at some probe yet
    vanishes at another; depths where the chain has not reached the output
    at any probe are skipped.  ``mode="full"`` tests the unrestricted row.
    """
    if mode not in ("downstream", "full"):
        raise ValueError(f"unknown vanishing-test mode {mode!r}")
    probes = _probes(sys, n_probes, seed)
    eps = sys.eps_j
    j_max = max(r)
    cols = (_downstream_states(sys, probes) if mode == "downstream"
            else list(range(len(sys.state_names))))
    norms = []
    for x0, u0 in probes:
        g = _unroll_output_grads(sys, x0, u0, j_max, "x")
        norms.append([[float(np.linalg.norm(gi[cols])) for gi in row]
                      for row in g])

    delta: list[int] = []
    for i in range(len(sys.output_names)):
        if well_defined[i]:
            delta.append(r[i])
            continue
        di = r[i]
        for j in range(1, r[i]):
            alive = [norms[p][j - 1][i] > eps for p in range(len(probes))]
            if not any(alive):
                continue  # influence has not reached this output yet
            if not all(alive):
                di = j
                break
        delta.append(di)
    return delta


def vrd_report(sys: SystemSpec, n_probes: int = 32, j_max: int = 8,
               seed: int = 0, mode: str = "downstream") -> VRDReport:
    r, well, witnesses = compute_vrd(sys, n_probes, j_max, seed)
    delta = compute_delta(sys, r, well, n_probes, seed, mode)
    return VRDReport(r=r, well_defined=well, delta=delta, witnesses=witnesses)


def _derived_input_name(output: str, order: int) -> str:
    return output + "_" + "d" * order if order <= 2 else f"{output}_d{order}"


def decompose(sys: SystemSpec, delta: Sequence[int], n_probes: int = 32,
              seed: int = 0) -> Decomposition:
    """Split states/inputs around the minimum breakdown depth.

    Subsystem 1 holds every state that reaches the outputs in fewer than
    ``r_min = min(delta)`` steps; its input is whatever drives the outputs at
    exactly r_min steps -- raw inputs when they act directly, otherwise a
    synthesized output-derivative channel realized by the remaining states.
    """
    probes = _probes(sys, n_probes, seed)
    eps = sys.eps_j
    r_min = int(min(delta))
    n = len(sys.state_names)
    out_idx = sys.output_indices

    x_reach = np.zeros((n,), dtype=bool)   # reaches output within < r_min
    x_at_rmin = np.zeros((n,), dtype=bool)
    u_at_rmin = np.zeros((len(sys.input_names),), dtype=bool)
    for oi in out_idx:
        x_reach[oi] = True  # depth 0: the output is the state itself
    for x0, u0 in probes:
        gx = _unroll_output_grads(sys, x0, u0, r_min, "x")
        gu = _unroll_output_grads(sys, x0, u0, r_min, "u")
        for j in range(1, r_min):
            for gi in gx[j - 1]:
                x_reach |= np.abs(gi) > eps
        for gi in gx[r_min - 1]:
            x_at_rmin |= np.abs(gi) > eps
        for gi in gu[r_min - 1]:
            u_at_rmin |= np.abs(gi) > eps

    x_s1 = [sys.state_names[a] for a in range(n) if x_reach[a]]
    if not x_s1:
        raise ValueError("malformed output map: no state reaches any output")

    state_realizers = [sys.state_names[a] for a in range(n)
                       if x_at_rmin[a] and not x_reach[a]]
    input_realizers = [sys.input_names[b]
                       for b in range(len(sys.input_names)) if u_at_rmin[b]]

    if state_realizers:
        # driving channel is realized by states: synthesize one derivative
        # input per output and leave the realizing states in subsystem 2
        u_s1 = [_derived_input_name(o, r_min) for o in sys.output_names]
        realizers = tuple(state_realizers + input_realizers)
        x_s2 = [a for a in sys.state_names if a not in x_s1]
        u_s2 = list(sys.input_names)
    else:
        u_s1 = input_realizers
        realizers = tuple(input_realizers)
        x_s2 = [a for a in sys.state_names if a not in x_s1]
        u_s2 = [b for b in sys.input_names if b not in u_s1]

    return Decomposition(x_s1=tuple(x_s1), u_s1=tuple(u_s1),
                         x_s2=tuple(x_s2), u_s2=tuple(u_s2),
                         u_s1_realizers=realizers)


# -- shipped system specs --------------------------------------------------

def quad_system(params: dyn.QuadParams | None = None,
                dt: float = 0.001) -> SystemSpec:
    """Full 17-state quadcopter observed through its Cartesian position."""
    p = params or dyn.QuadParams()
    u_hover = dyn.hover_command(p)

    def step(s, u):
        return dyn.euler_step(s, u, dt, p)

    def sample(rng: np.random.Generator):
        s = np.zeros(dyn.N_STATES)
        s[dyn.POS] = rng.uniform(-2.0, 2.0, 3)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        ang = rng.uniform(0.25, 0.7)
        s[3] = np.cos(ang / 2.0)
        s[4:7] = np.sin(ang / 2.0) * axis
        s[dyn.VEL] = rng.uniform(-2.0, 2.0, 3)
        s[dyn.RATES] = rng.uniform(-1.0, 1.0, 3)
        s[dyn.ROTORS] = rng.uniform(0.3, 0.9, 4) * p.motor_speed_max
        u = rng.uniform(0.2, 0.8, 4)
        return s, u

    hover = (dyn.hover_state(p), np.full(4, u_hover))
    climb = dyn.hover_state(p)
    climb[dyn.VEL] = (0.0, 0.0, 1.0)
    lateral = dyn.hover_state(p)
    lateral[dyn.VEL] = (1.0, 0.0, 0.0)
    structured = (hover, (climb, np.full(4, u_hover)),
                  (lateral, np.full(4, u_hover)))
    return SystemSpec(
        state_names=dyn.STATE_NAMES,
        input_names=dyn.INPUT_NAMES,
        output_names=("x", "y", "z"),
        step=step,
        sample_probe=sample,
        structured_probes=structured,
    )


def sub1_system(dt: float = 0.001) -> SystemSpec:
    """Position/velocity double integrator with acceleration input."""

    def step(s, a):
        return dyn.sub1_step(s, a, dt)

    def sample(rng: np.random.Generator):
        return (rng.uniform(-3.0, 3.0, 6), rng.uniform(-3.0, 3.0, 3))

    return SystemSpec(
        state_names=dyn.SUB1_STATE_NAMES,
        input_names=dyn.SUB1_INPUT_NAMES,
        output_names=("x", "y", "z"),
        step=step,
        sample_probe=sample,
        structured_probes=((np.zeros(6), np.zeros(3)),),
    )


def single_integrator_system(dt: float = 0.001) -> SystemSpec:
    def step(s, u):
        return [s[0] + u[0] * dt]

    def sample(rng: np.random.Generator):
        return (rng.uniform(-1.0, 1.0, 1), rng.uniform(-1.0, 1.0, 1))

    return SystemSpec(
        state_names=("x",), input_names=("u",), output_names=("x",),
        step=step, sample_probe=sample,
        structured_probes=((np.zeros(1), np.zeros(1)),),
    )


def double_integrator_system(dt: float = 0.001) -> SystemSpec:
    def step(s, u):
        return [s[0] + s[1] * dt, s[1] + u[0] * dt]

    def sample(rng: np.random.Generator):
        return (rng.uniform(-1.0, 1.0, 2), rng.uniform(-1.0, 1.0, 1))

    return SystemSpec(
        state_names=("pos", "vel"), input_names=("accel",),
        output_names=("pos",), step=step, sample_probe=sample,
        structured_probes=((np.zeros(2), np.zeros(1)),),
    )
