"""Reverse-mode automatic differentiation on scalar expression tapes.

A :class:`Tape` records every scalar operation together with local partial
derivatives; one reverse sweep then yields the gradient of any recorded
scalar with respect to any set of recorded inputs.  All functions in this
module accept either plain floats or :class:`Var` handles, so model code can
be written once and evaluated both as fast float arithmetic and as a
differentiable trace.

Conventions at non-smooth points: ``relu``/``minimum``/``maximum`` take the
left branch at exact ties (relu'(0) = 0, min/max prefer their first
argument), which keeps traces deterministic.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DomainError",
    "Tape",
    "Var",
    "grad",
    "jacobian",
    "value_and_grad",
    "exp",
    "log",
    "sqrt",
    "sin",
    "cos",
    "tanh",
    "relu",
    "softplus",
    "minimum",
    "maximum",
    "dot",
    "wsum",
]


class DomainError(ValueError):
    """Raised when a forward evaluation leaves a primitive's domain."""


class Tape:
    """Append-only record of scalar operations in topological order.

    Node ``i`` stores its operation kind, parent node indices (all ``< i``),
    the local partial derivative with respect to each parent, and the forward
    value.  ``replay`` re-executes the forward pass and must reproduce the
    recorded values bit-exactly; a tape is single-threaded by contract.
    """

    __slots__ = ("ops", "parents", "partials", "vals", "aux")

    def __init__(self) -> None:
        self.ops: list[str] = []
        self.parents: list[tuple[int, ...]] = []
        self.partials: list[tuple[float, ...]] = []
        self.vals: list[float] = []
        # per-node replay payload for fused ops (dot/wsum term structure)
        self.aux: dict[int, tuple] = {}

    def __len__(self) -> int:
        return len(self.vals)

    def _push(self, op: str, val: float, parents: tuple[int, ...],
              partials: tuple[float, ...]) -> "Var":
        if val != val or val in (float("inf"), float("-inf")):
            # keep non-finite values on the tape; solvers detect them downstream
            pass
        self.ops.append(op)
        self.parents.append(parents)
        self.partials.append(partials)
        self.vals.append(val)
        return Var(self, len(self.vals) - 1)

    def var(self, value: float) -> "Var":
        """Record a leaf input node."""
        return self._push("input", float(value), (), ())

    def vars(self, values: Sequence[float]) -> list["Var"]:
        return [self.var(v) for v in values]

    def backward(self, output: "Var") -> list[float]:
        """Adjoints of every node w.r.t. ``output`` via one reverse sweep."""
        if output.tape is not self:
            raise ValueError("output does not belong to this tape")
        n = len(self.vals)
        adj = [0.0] * n
        adj[output.i] = 1.0
        parents = self.parents
        partials = self.partials
        for i in range(output.i, -1, -1):
            a = adj[i]
            if a == 0.0:
                continue
            for p, d in zip(parents[i], partials[i]):
                adj[p] += a * d
        return adj

    def gradient(self, output: "Var", wrt: Sequence["Var"]) -> np.ndarray:
        adj = self.backward(output)
        return np.array([adj[v.i] for v in wrt], dtype=float)

    def replay(self) -> list[float]:
        """Recompute forward values from recorded structure (bit-exact)."""
        out: list[float] = []
        for i, (op, pars, partials, val) in enumerate(
                zip(self.ops, self.parents, self.partials, self.vals)):
            if op == "dot":
                acc = 0.0
                for term in self.aux[i][1]:
                    if term[0] == "vv":
                        acc += out[term[1]] * out[term[2]]
                    elif term[0] == "vc":
                        acc += out[term[1]] * term[2]
                    else:
                        acc += term[1]
                out.append(acc)
            elif op == "wsum":
                acc = self.aux[i][1]
                for term in self.aux[i][2]:
                    if term[0] == "vc":
                        acc += term[2] * out[term[1]]
                    else:
                        acc += term[1]
                out.append(acc)
            else:
                args = [out[p] for p in pars]
                out.append(_REPLAY[op](args, partials, val))
        return out


class Var:
    """Handle to a node on a :class:`Tape`."""

    __slots__ = ("tape", "i")

    def __init__(self, tape: Tape, i: int) -> None:
        self.tape = tape
        self.i = i

    @property
    def value(self) -> float:
        return self.tape.vals[self.i]

    def __repr__(self) -> str:
        return f"Var({self.value!r}@{self.i})"

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        t = self.tape
        if isinstance(other, Var):
            return t._push("add", self.value + other.value,
                           (self.i, other.i), (1.0, 1.0))
        return t._push("add_c", self.value + other, (self.i,),
                       (1.0, float(other)))

    __radd__ = __add__

    def __sub__(self, other):
        t = self.tape
        if isinstance(other, Var):
            return t._push("sub", self.value - other.value,
                           (self.i, other.i), (1.0, -1.0))
        return t._push("add_c", self.value - other, (self.i,),
                       (1.0, -float(other)))

    def __rsub__(self, other):
        return self.tape._push("rsub_c", other - self.value, (self.i,),
                               (-1.0, float(other)))

    def __mul__(self, other):
        t = self.tape
        if isinstance(other, Var):
            return t._push("mul", self.value * other.value,
                           (self.i, other.i), (other.value, self.value))
        return t._push("mul_c", self.value * other, (self.i,), (float(other),))

    __rmul__ = __mul__

    def __truediv__(self, other):
        t = self.tape
        if isinstance(other, Var):
            if other.value == 0.0:
                raise DomainError(f"division by zero at node {other.i}")
            inv = 1.0 / other.value
            return t._push("div", self.value * inv, (self.i, other.i),
                           (inv, -self.value * inv * inv))
        if other == 0.0:
            raise DomainError(f"division by constant zero at node {self.i}")
        return t._push("div_c", self.value / other, (self.i,),
                       (1.0 / other, float(other)))

    def __rtruediv__(self, other):
        if self.value == 0.0:
            raise DomainError(f"division by zero at node {self.i}")
        inv = 1.0 / self.value
        return self.tape._push("rdiv_c", other * inv, (self.i,),
                               (-other * inv * inv, float(other)))

    def __pow__(self, p):
        if isinstance(p, Var):
            raise TypeError("Var exponents are unsupported; use exp/log")
        v = self.value
        return self.tape._push("pow_c", v ** p, (self.i,),
                               (p * v ** (p - 1) if p != 1 else 1.0, float(p)))

    def __neg__(self):
        return self.tape._push("neg", -self.value, (self.i,), (-1.0,))

    # comparisons read forward values only (used for branching in callers)
    def __lt__(self, other):
        return self.value < _val(other)

    def __le__(self, other):
        return self.value <= _val(other)

    def __gt__(self, other):
        return self.value > _val(other)

    def __ge__(self, other):
        return self.value >= _val(other)

    def __float__(self) -> float:
        return float(self.value)


def _val(x) -> float:
    return x.value if isinstance(x, Var) else float(x)


# -- unary primitives ------------------------------------------------------

def _unary(op: str, x, f: Callable[[float], float],
           df: Callable[[float], float], check=None):
    if isinstance(x, Var):
        v = x.value
        if check is not None:
            check(v, x.i)
        return x.tape._push(op, f(v), (x.i,), (df(v),))
    if check is not None:
        check(float(x), -1)
    return f(float(x))


def _check_log(v: float, i: int) -> None:
    if v <= 0.0:
        raise DomainError(f"log of non-positive value {v} at node {i}")


def _check_sqrt(v: float, i: int) -> None:
    if v < 0.0:
        raise DomainError(f"sqrt of negative value {v} at node {i}")
    if v == 0.0:
        raise DomainError(f"sqrt of zero has unbounded derivative at node {i}")


def exp(x):
    return _unary("exp", x, math.exp, math.exp)


def log(x):
    return _unary("log", x, math.log, lambda v: 1.0 / v, _check_log)


def sqrt(x):
    return _unary("sqrt", x, math.sqrt,
                  lambda v: 0.5 / math.sqrt(v), _check_sqrt)


def sin(x):
    return _unary("sin", x, math.sin, math.cos)


def cos(x):
    return _unary("cos", x, math.cos, lambda v: -math.sin(v))


def tanh(x):
    return _unary("tanh", x, math.tanh, lambda v: 1.0 - math.tanh(v) ** 2)


def relu(x):
    # left branch at the kink: relu'(0) = 0
    return _unary("relu", x, lambda v: v if v > 0.0 else 0.0,
                  lambda v: 1.0 if v > 0.0 else 0.0)


def _softplus(v: float) -> float:
    # overflow-safe log(1 + e^v)
    if v > 30.0:
        return v + math.log1p(math.exp(-v))
    return math.log1p(math.exp(v))


def _sigmoid(v: float) -> float:
    if v >= 0.0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def softplus(x):
    return _unary("softplus", x, _softplus, _sigmoid)


def minimum(a, b):
    """min with first-argument preference at ties."""
    if not isinstance(a, Var) and not isinstance(b, Var):
        return a if a <= b else b
    tape = a.tape if isinstance(a, Var) else b.tape
    take_a = _val(a) <= _val(b)
    chosen = a if take_a else b
    if isinstance(chosen, Var):
        return tape._push("min", chosen.value, (chosen.i,), (1.0,))
    return tape._push("min_c", float(chosen), (), ())


def maximum(a, b):
    """max with first-argument preference at ties."""
    if not isinstance(a, Var) and not isinstance(b, Var):
        return a if a >= b else b
    tape = a.tape if isinstance(a, Var) else b.tape
    take_a = _val(a) >= _val(b)
    chosen = a if take_a else b
    if isinstance(chosen, Var):
        return tape._push("max", chosen.value, (chosen.i,), (1.0,))
    return tape._push("max_c", float(chosen), (), ())


# -- fused n-ary primitives ------------------------------------------------

def dot(xs: Sequence, ys: Sequence):
    """Inner product sum_i xs[i]*ys[i] as a single tape node.

    Fusing the reduction keeps tapes short for dense layers; partials are the
    opposing operand's forward values.  Entries may be floats or Vars.
    """
    if len(xs) != len(ys):
        raise ValueError("dot operands differ in length")
    tape = None
    for e in xs:
        if isinstance(e, Var):
            tape = e.tape
            break
    if tape is None:
        for e in ys:
            if isinstance(e, Var):
                tape = e.tape
                break
    if tape is None:
        return float(np.dot([float(a) for a in xs], [float(b) for b in ys]))
    val = 0.0
    parents: list[int] = []
    partials: list[float] = []
    terms: list[tuple] = []  # ('vv', ia, ib) | ('vc', ia, c) | ('cc', c)
    for a, b in zip(xs, ys):
        av, bv = _val(a), _val(b)
        val += av * bv
        a_var = isinstance(a, Var)
        b_var = isinstance(b, Var)
        if a_var:
            parents.append(a.i)
            partials.append(bv)
        if b_var:
            parents.append(b.i)
            partials.append(av)
        if a_var and b_var:
            terms.append(("vv", a.i, b.i))
        elif a_var:
            terms.append(("vc", a.i, bv))
        elif b_var:
            terms.append(("vc", b.i, av))
        else:
            terms.append(("cc", av * bv))
    out = tape._push("dot", val, tuple(parents), tuple(partials))
    tape.aux[out.i] = ("dot", tuple(terms))
    return out


def wsum(coeffs: Sequence[float], xs: Sequence, const: float = 0.0):
    """Affine combination const + sum_i coeffs[i]*xs[i] as one node."""
    if len(coeffs) != len(xs):
        raise ValueError("wsum operands differ in length")
    tape = None
    for e in xs:
        if isinstance(e, Var):
            tape = e.tape
            break
    if tape is None:
        return const + float(np.dot(coeffs, [float(x) for x in xs]))
    val = const
    parents: list[int] = []
    partials: list[float] = []
    terms: list[tuple] = []
    for c, x in zip(coeffs, xs):
        val += c * _val(x)
        if isinstance(x, Var):
            parents.append(x.i)
            partials.append(float(c))
            terms.append(("vc", x.i, float(c)))
        else:
            terms.append(("cc", c * float(x)))
    out = tape._push("wsum", val, tuple(parents), tuple(partials))
    tape.aux[out.i] = ("wsum", const, tuple(terms))
    return out


# -- replay table ----------------------------------------------------------
# Constant-folded ops (add_c etc.) keep the folded constant only inside the
# recorded value, so their replay rebuilds from parents plus stored partials
# where possible and otherwise uses the algebraic identity below.

_REPLAY: dict[str, Callable] = {
    "input": lambda a, p, v: v,
    "add": lambda a, p, v: a[0] + a[1],
    "add_c": lambda a, p, v: a[0] + p[1],
    "sub": lambda a, p, v: a[0] - a[1],
    "rsub_c": lambda a, p, v: p[1] - a[0],
    "mul": lambda a, p, v: a[0] * a[1],
    "mul_c": lambda a, p, v: a[0] * p[0],
    "div": lambda a, p, v: a[0] * (1.0 / a[1]),
    "div_c": lambda a, p, v: a[0] / p[1],
    "rdiv_c": lambda a, p, v: p[1] * (1.0 / a[0]),
    "pow_c": lambda a, p, v: a[0] ** p[1],
    "neg": lambda a, p, v: -a[0],
    "exp": lambda a, p, v: math.exp(a[0]),
    "log": lambda a, p, v: math.log(a[0]),
    "sqrt": lambda a, p, v: math.sqrt(a[0]),
    "sin": lambda a, p, v: math.sin(a[0]),
    "cos": lambda a, p, v: math.cos(a[0]),
    "tanh": lambda a, p, v: math.tanh(a[0]),
    "relu": lambda a, p, v: a[0] if a[0] > 0.0 else 0.0,
    "softplus": lambda a, p, v: _softplus(a[0]),
    "min": lambda a, p, v: a[0],
    "max": lambda a, p, v: a[0],
    "min_c": lambda a, p, v: v,
    "max_c": lambda a, p, v: v,
    # "dot" and "wsum" replay from tape.aux inside Tape.replay itself
}


# -- user-facing closures --------------------------------------------------

def grad(f: Callable, x: Sequence[float]) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` via one reverse sweep.

    ``f`` receives a list of Vars and must return a single Var (or float for
    a constant function).
    """
    tape = Tape()
    xs = tape.vars(x)
    out = f(xs)
    if not isinstance(out, Var):
        return np.zeros(len(x))
    return tape.gradient(out, xs)


def value_and_grad(f: Callable, x: Sequence[float]) -> tuple[float, np.ndarray]:
    tape = Tape()
    xs = tape.vars(x)
    out = f(xs)
    if not isinstance(out, Var):
        return float(out), np.zeros(len(x))
    return out.value, tape.gradient(out, xs)


def jacobian(f: Callable, x: Sequence[float]) -> np.ndarray:
    """m-by-n Jacobian of vector ``f``; one reverse sweep per output row."""
    tape = Tape()
    xs = tape.vars(x)
    outs = f(xs)
    rows = []
    for out in outs:
        if isinstance(out, Var):
            rows.append(tape.gradient(out, xs))
        else:
            rows.append(np.zeros(len(x)))
    return np.array(rows, dtype=float)
