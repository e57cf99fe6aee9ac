"""Data-driven safe sets from filtered training rollouts.

Safe states are harvested from convergent, violation-free rollouts.  The box
constraints are convex in the raw subsystem-1 coordinates, so those states
are kept as a 6-D point cloud; each cylinder obstacle gets its own 2-D cloud
in the cylindrical coordinates that make the constraint convex, shifted by a
robustness margin away from the obstacle.  Membership queries come in two
flavours: an exact convex-hull feasibility test (dense two-phase simplex)
and the fast nearest-hyperplane approximation used online.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .dpc import RolloutStore

SAFESET_FORMAT = "dpcpsf-safeset-v1"


@dataclass(frozen=True)
class CylinderConstraint:
    """Infinite vertical cylinder the state must stay outside of."""

    x: float
    y: float
    radius: float

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError("cylinder radius must be positive")

    def clearance(self, s) -> float:
        """Distance from (x, y) to the cylinder surface; < 0 means inside."""
        return float(np.hypot(s[0] - self.x, s[1] - self.y)) - self.radius


def cyl_transform(s, c: CylinderConstraint):
    """Cylindrical coordinates (x_c, xdot_c) of a subsystem-1 state.

    x_c is the distance to the cylinder surface (positive outside) and
    xdot_c the radial velocity.  Accepts floats or tape Vars.  The transform
    is singular on the cylinder axis.
    """
    dx = s[0] - c.x
    dy = s[1] - c.y
    try:
        d = ad.sqrt(dx * dx + dy * dy)
    except ad.DomainError:
        raise ValueError("cyl_transform is singular at the cylinder axis")
    x_c = d - c.radius
    xdot_c = (s[3] * dx + s[4] * dy) / d
    return x_c, xdot_c


@dataclass(frozen=True)
class Hyperplane:
    """Half-space w^T x + b <= 0 oriented toward its source set's centroid."""

    w: np.ndarray
    b: float
    source: str

    def __post_init__(self) -> None:
        n = float(np.linalg.norm(self.w))
        if abs(n - 1.0) > 1e-12:
            raise ValueError(f"hyperplane normal not unit length: {n}")

    def test(self, x) -> float:
        """Signed value w^T x + b; <= 0 inside."""
        return float(np.dot(self.w, x)) + self.b


# -- dense two-phase simplex ----------------------------------------------

class SimplexError(RuntimeError):
    pass


def _pivot_loop(T, basis, n_usable, tol, max_iter):
    """Bland-rule tableau pivoting; last row is reduced costs, last col rhs."""
    m = T.shape[0] - 1
    basis_arr = np.asarray(basis)
    for _ in range(max_iter):
        neg = np.nonzero(T[-1, :n_usable] < -tol)[0]
        if len(neg) == 0:
            return
        enter = int(neg[0])  # Bland's rule: smallest eligible index
        col = T[:m, enter]
        pos = col > tol
        if not np.any(pos):
            raise SimplexError("unbounded linear program")
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / col[pos]
        best_ratio = ratios.min()
        tied = np.nonzero(ratios <= best_ratio + tol)[0]
        best_i = int(tied[np.argmin(basis_arr[tied])])
        T[best_i] /= T[best_i, enter]
        factors = T[:, enter].copy()
        factors[best_i] = 0.0
        T -= np.outer(factors, T[best_i])
        basis[best_i] = enter
        basis_arr[best_i] = enter
    raise SimplexError("simplex iteration limit reached")


def simplex_solve(A: np.ndarray, b: np.ndarray, c: np.ndarray | None = None,
                  tol: float = 1e-9, max_iter: int = 20000):
    """min c^T z s.t. A z = b, z >= 0 by the two-phase tableau simplex.

    Returns (feasible, z, objective).  With ``c=None`` only feasibility is
    decided (phase 1).
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).copy()
    m, n = A.shape
    scale = max(1.0, float(np.max(np.abs(A))), float(np.max(np.abs(b))))
    tol = tol * scale
    A = A.copy()
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    # phase-1 reduced costs: minimize the artificial sum
    T[-1, :] = -T[:m, :].sum(axis=0)
    T[-1, n:n + m] = 0.0
    basis = list(range(n, n + m))
    _pivot_loop(T, basis, n, tol, max_iter)
    if T[-1, -1] < -tol * 10:
        return False, None, None
    if c is None:
        z = np.zeros(n)
        for i, bi in enumerate(basis):
            if bi < n:
                z[bi] = T[i, -1]
        return True, z, 0.0

    # phase 2 on the original costs, artificial columns locked out
    T[-1, :] = 0.0
    T[-1, :n] = c
    for i, bi in enumerate(basis):
        if bi < n and c[bi] != 0.0:
            T[-1] -= c[bi] * T[i]
    _pivot_loop(T, basis, n, tol, max_iter)
    z = np.zeros(n)
    for i, bi in enumerate(basis):
        if bi < n:
            z[bi] = T[i, -1]
    return True, z, float(c @ z)


def membership_exact(x, points: np.ndarray, tol: float = 1e-9) -> bool:
    """True iff ``x`` lies in the convex hull of ``points`` (LP feasibility)."""
    P = np.asarray(points, dtype=float)
    if P.ndim != 2 or len(P) == 0:
        raise ValueError("point set must be a non-empty 2-D array")
    x = np.asarray(x, dtype=float)
    A = np.vstack([P.T, np.ones(len(P))])
    b = np.concatenate([x, [1.0]])
    feasible, _, _ = simplex_solve(A, b, None, tol=tol)
    return bool(feasible)


def radial_boundary(x, points: np.ndarray, centroid=None) -> float:
    """Scale t* >= 0 at which centroid + t (x - centroid) exits the hull.

    t* > 1 means ``x`` is interior along its centroid ray; t* < 1 exterior.
    """
    P = np.asarray(points, dtype=float)
    c = np.mean(P, axis=0) if centroid is None else np.asarray(centroid)
    d = np.asarray(x, dtype=float) - c
    if np.linalg.norm(d) == 0.0:
        return np.inf
    # max t s.t. P^T lam = c + t d, 1^T lam = 1, lam >= 0
    A = np.vstack([np.hstack([P.T, -d[:, None]]),
                   np.hstack([np.ones(len(P)), [0.0]])])
    b = np.concatenate([c, [1.0]])
    cost = np.zeros(len(P) + 1)
    cost[-1] = -1.0
    feasible, z, _ = simplex_solve(A, b, cost)
    if not feasible:
        raise SimplexError("centroid ray LP infeasible; malformed point set")
    return float(z[-1])


# -- safe set --------------------------------------------------------------

@dataclass
class SafePointSet:
    """One convex point cloud with an id and (optionally) its transform."""

    set_id: str
    points: np.ndarray
    constraint: CylinderConstraint | None = None

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    @property
    def diameter(self) -> float:
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def transform_query(self, x_s1) -> np.ndarray:
        """Map a raw subsystem-1 state into this set's query space."""
        if self.constraint is None:
            return np.asarray(x_s1, dtype=float)
        return np.array(cyl_transform(x_s1, self.constraint))


@dataclass
class SafeSet:
    sets: list[SafePointSet]
    delta: float

    def __post_init__(self) -> None:
        for s in self.sets:
            if len(s.points) == 0:
                raise ValueError(f"safe set {s.set_id!r} is empty")

    def get(self, set_id: str) -> SafePointSet:
        for s in self.sets:
            if s.set_id == set_id:
                return s
        raise KeyError(set_id)

    # -- persistence -------------------------------------------------------

    def save(self, directory: str) -> None:
        os.makedirs(directory, exist_ok=True)
        manifest = {"format": SAFESET_FORMAT, "delta": self.delta, "sets": []}
        for s in self.sets:
            fname = f"points_{s.set_id}.csv"
            with open(os.path.join(directory, fname), "w", newline="") as f:
                w = csv.writer(f)
                w.writerow([f"c{i}" for i in range(s.dim)])
                for p in s.points:
                    w.writerow([repr(float(v)) for v in p])
            entry = {"set_id": s.set_id, "dim": s.dim, "file": fname,
                     "centroid": [float(v) for v in s.centroid]}
            if s.constraint is not None:
                entry["cylinder"] = {"x": s.constraint.x, "y": s.constraint.y,
                                     "radius": s.constraint.radius}
            manifest["sets"].append(entry)
        with open(os.path.join(directory, "manifest.json"), "w") as f:
            json.dump(manifest, f, indent=1)

    @classmethod
    def load(cls, directory: str) -> "SafeSet":
        with open(os.path.join(directory, "manifest.json")) as f:
            manifest = json.load(f)
        if manifest.get("format") != SAFESET_FORMAT:
            raise ValueError(f"unknown safe-set format {manifest.get('format')!r}")
        sets = []
        for entry in manifest["sets"]:
            pts = []
            with open(os.path.join(directory, entry["file"])) as f:
                reader = csv.reader(f)
                next(reader)
                for row in reader:
                    pts.append([float(v) for v in row])
            con = None
            if "cylinder" in entry:
                cy = entry["cylinder"]
                con = CylinderConstraint(cy["x"], cy["y"], cy["radius"])
            sets.append(SafePointSet(set_id=entry["set_id"],
                                     points=np.array(pts), constraint=con))
        return cls(sets=sets, delta=manifest["delta"])


def filter_rollouts(store: RolloutStore,
                    constraints: Sequence[CylinderConstraint],
                    eps_conv: float = 0.3) -> np.ndarray:
    """States of rollouts that stayed feasible and converged to reference.

    A rollout survives when it carries no violation flag, never dips inside
    any cylinder, did not diverge, and its terminal position error is within
    ``eps_conv``.  Returns the stacked (n, 6) state array.
    """
    if len(store) == 0:
        raise ValueError("rollout store is empty")
    kept = []
    for r in store:
        if r.diverged or bool(np.any(r.violations)):
            continue
        if r.terminal_error > eps_conv:
            continue
        if any(c.clearance(s) < 0.0 for c in constraints for s in r.states):
            continue
        kept.append(r.states)
    if not kept:
        raise RuntimeError(
            "no rollouts survived filtering; train the policy longer or "
            "loosen eps_conv")
    return np.vstack(kept)


def _affinely_independent(selected: list[np.ndarray], candidate: np.ndarray,
                          tol: float) -> bool:
    if not selected:
        return True
    if any(np.array_equal(candidate, s) for s in selected):
        return False
    D = np.array([s - selected[0] for s in selected[1:]]
                 + [candidate - selected[0]])
    s = np.linalg.svd(D, compute_uv=False)
    return bool(s[-1] > tol) if len(s) == len(D) else False


def prune_to_vertices(points: np.ndarray) -> np.ndarray:
    """Drop points expressible as convex combinations of the others."""
    P = np.asarray(points, dtype=float)
    keep = np.ones(len(P), dtype=bool)
    for i in range(len(P)):
        others = P[keep & (np.arange(len(P)) != i)]
        if len(others) < P.shape[1] + 1:
            continue
        if membership_exact(P[i], others):
            keep[i] = False
    return P[keep]


def support_vertices(points: np.ndarray, n_directions: int,
                     seed: int = 0) -> np.ndarray:
    """Hull vertices found as support points of random directions.

    Every returned point is extreme (it maximizes some linear functional),
    and with many directions the vertices cover the hull surface densely --
    a cheap stand-in for full vertex enumeration on large clouds.
    """
    P = np.asarray(points, dtype=float)
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_directions, P.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    # normalize coordinates so direction coverage is not scale-skewed
    scale = P.std(axis=0)
    scale[scale == 0.0] = 1.0
    Pn = P / scale
    hits = []
    for k in range(0, n_directions, 512):  # chunked to bound memory
        hits.append(np.argmax(Pn @ dirs[k:k + 512].T, axis=0))
    idx = np.unique(np.concatenate(hits))
    return P[idx]


def build_safe_set(points: np.ndarray,
                   constraints: Sequence[CylinderConstraint],
                   delta: float = 0.1, max_points: int = 3000,
                   prune: bool = True, cvx_directions: int = 0,
                   brake_accel: float | None = None,
                   cvx_inflation: float = 0.0) -> SafeSet:
    """Assemble per-constraint convex point clouds from filtered states.

    Raw 6-D states form the box ("cvx") set.  Each cylinder gets the
    2-D cylindrical-coordinate image of the states, with ``delta`` added to
    x_c so queries near the obstacle fall outside the stored hull.  Each
    cloud is thinned to at most ``max_points`` and, with ``prune`` enabled,
    reduced to hull vertices via the membership LP; storing only vertices
    keeps nearest-hyperplane queries cheap without changing the hull.  A
    positive ``cvx_directions`` instead keeps only support vertices of that
    many random directions, giving a slightly smaller hull whose sparse
    surface makes the nearest-hyperplane test far less noisy in 6-D.

    ``brake_accel`` additionally drops cylinder points whose radial approach
    speed beats the braking envelope xdot_c >= -sqrt(2 a x_c): such states
    cannot stop before the surface under the acceleration bound ``a``, so
    keeping them would certify unrecoverable approaches.  The surviving
    region is the epigraph of a convex function, hence still convex.

    ``cvx_inflation`` scales the raw-state cloud outward from its centroid
    before hull construction, so states on the edge of the demonstrated
    distribution sit strictly inside the box set instead of on its
    boundary, where the nearest-hyperplane trigger test is noisy.
    """
    P = np.asarray(points, dtype=float)
    if len(P) == 0:
        raise ValueError("no safe points given")

    def finish(set_id, pts, con):
        dim = pts.shape[1]
        if cvx_directions > 0:
            pts = support_vertices(pts, cvx_directions)
        elif len(pts) > max_points:
            idx = np.linspace(0, len(pts) - 1, max_points).astype(int)
            pts = np.unique(pts[idx], axis=0)
        if prune:
            pts = prune_to_vertices(pts)
        if len(pts) < dim + 1 or np.linalg.matrix_rank(
                pts[1:] - pts[0], tol=1e-10) < dim:
            raise ValueError(f"degenerate hull for set {set_id!r}: need "
                             f"{dim + 1} affinely independent points")
        return SafePointSet(set_id=set_id, points=pts, constraint=con)

    Pc = P
    if cvx_inflation > 0.0:
        c = P.mean(axis=0)
        Pc = c + (1.0 + cvx_inflation) * (P - c)
    sets = [finish("cvx", Pc, None)]
    for i, c in enumerate(constraints):
        tr = np.array([cyl_transform(s, c) for s in P])
        if brake_accel is not None:
            env = -np.sqrt(2.0 * brake_accel * np.maximum(tr[:, 0], 0.0))
            tr = tr[tr[:, 1] >= env]
            if len(tr) == 0:
                raise ValueError(f"braking envelope removed all points for "
                                 f"set cyl{i}")
        tr[:, 0] += delta
        sets.append(finish(f"cyl{i}", tr, c))
    return SafeSet(sets=sets, delta=delta)


def nearest_hyperplane(x, set_id: str, ss: SafeSet) -> Hyperplane:
    """Hyperplane through the nearest affinely independent points.

    Points are sorted by distance to the (transformed-space) query; the
    first ``dim`` affinely independent ones define the plane, oriented so
    the set centroid satisfies w^T c + b <= 0.
    """
    s = ss.get(set_id)
    x = np.asarray(x, dtype=float)
    dim = s.dim
    # standardize per axis: raw coordinates mix meters and m/s, which
    # skews the nearest-point ordering on anisotropic clouds
    sd = s.points.std(axis=0)
    sd[sd < 1e-12] = 1.0
    P = s.points / sd
    z = x / sd
    diam = float(np.linalg.norm(P.max(axis=0) - P.min(axis=0)))
    tol = 1e-8 * max(diam, 1e-12)
    order = np.argsort(np.linalg.norm(P - z, axis=1), kind="stable")
    chosen: list[np.ndarray] = []
    for idx in order:
        if _affinely_independent(chosen, P[idx], tol):
            chosen.append(P[idx])
            if len(chosen) == dim:
                break
    if len(chosen) < dim:
        raise ValueError(f"set {set_id!r} lacks {dim} affinely "
                         "independent points near the query")
    if dim == 1:
        w = np.array([1.0])
    else:
        D = np.array([p - chosen[0] for p in chosen[1:]])
        _, _, vt = np.linalg.svd(D)
        w = vt[-1]
    b = -float(np.dot(w, chosen[0]))
    # map the scaled-space half-space back to raw coordinates
    w = w / sd
    n = np.linalg.norm(w)
    w, b = w / n, b / n
    if float(np.dot(w, s.centroid)) + b > 0.0:
        w, b = -w, -b
    return Hyperplane(w=w, b=b, source=set_id)


def membership_fast(x_s1, ss: SafeSet) -> bool:
    """Conjunction of nearest-hyperplane half-space tests over all sets."""
    for s in ss.sets:
        z = s.transform_query(x_s1)
        h = nearest_hyperplane(z, s.set_id, ss)
        if h.test(z) > 0.0:
            return False
    return True
