import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpcpsf import autodiff as ad
from dpcpsf.safeset import (CylinderConstraint, Hyperplane, SafeSet,
                            build_safe_set, cyl_transform, membership_exact,
                            membership_fast, nearest_hyperplane,
                            prune_to_vertices, radial_boundary, simplex_solve,
                            support_vertices)

coord = st.floats(min_value=-3.0, max_value=3.0,
                  allow_nan=False, allow_infinity=False)


# -- simplex / membership LP ----------------------------------------------

def test_simplex_feasible_system():
    A = np.array([[1.0, 1.0, 1.0], [1.0, -1.0, 0.0]])
    b = np.array([1.0, 0.0])
    ok, z, _ = simplex_solve(A, b)
    assert ok
    assert np.allclose(A @ z, b, atol=1e-9)
    assert np.all(z >= -1e-12)


def test_simplex_infeasible_system():
    # x1 + x2 = -1 with x >= 0 is impossible
    ok, _, _ = simplex_solve(np.array([[1.0, 1.0]]), np.array([-1.0]))
    assert not ok
    ok, _, _ = simplex_solve(np.array([[1.0, 1.0], [1.0, 1.0]]),
                             np.array([1.0, 2.0]))
    assert not ok


def test_simplex_optimization():
    # min -x1 - x2 over the simplex x1 + x2 + s = 1
    A = np.array([[1.0, 1.0, 1.0]])
    b = np.array([1.0])
    c = np.array([-1.0, -1.0, 0.0])
    ok, z, obj = simplex_solve(A, b, c)
    assert ok
    assert obj == pytest.approx(-1.0, abs=1e-9)


def test_membership_square():
    sq = np.array([[0.0, 0], [1, 0], [0, 1], [1, 1.0]])
    assert membership_exact([0.5, 0.5], sq)
    assert membership_exact([1.0, 1.0], sq)  # vertex
    assert membership_exact([0.5, 0.0], sq)  # edge
    assert not membership_exact([1.2, 0.5], sq)
    assert not membership_exact([-0.01, 0.5], sq)


@given(st.lists(st.tuples(coord, coord), min_size=4, max_size=10),
       st.lists(st.floats(0, 1), min_size=4, max_size=10))
@settings(max_examples=40, deadline=None)
def test_convex_combinations_are_members(pts, ws):
    P = np.array(pts, dtype=float)
    w = np.array(ws[:len(P)] + [0.0] * max(0, len(P) - len(ws)))
    if w.sum() == 0:
        w[0] = 1.0
    w = w / w.sum()
    x = w @ P
    assert membership_exact(x, P, tol=1e-7)


def test_radial_boundary_interior_exterior():
    sq = np.array([[-1.0, -1], [1, -1], [-1, 1], [1, 1.0]])
    assert radial_boundary([0.5, 0.0], sq) == pytest.approx(2.0, abs=1e-6)
    assert radial_boundary([2.0, 0.0], sq) == pytest.approx(0.5, abs=1e-6)


# -- hull reduction --------------------------------------------------------

def test_prune_to_vertices_square():
    pts = np.array([[0.0, 0], [1, 0], [0, 1], [1, 1], [0.5, 0.5], [0.2, 0.2]])
    v = prune_to_vertices(pts)
    assert len(v) == 4
    for p in pts:
        assert membership_exact(p, v)


def test_support_vertices_are_extreme():
    rng = np.random.default_rng(0)
    P = rng.normal(size=(300, 3))
    V = support_vertices(P, 32)
    assert len(V) <= 32
    for v in V:
        others = P[~np.all(P == v, axis=1)]
        assert not membership_exact(v, others)


# -- transforms ------------------------------------------------------------

def test_cyl_transform_values():
    c = CylinderConstraint(0.0, 0.0, 0.5)
    x_c, xd_c = cyl_transform([1.0, 0.0, 0.3, -2.0, 1.0, 0.0], c)
    assert x_c == pytest.approx(0.5)
    assert xd_c == pytest.approx(-2.0)  # radial component only


def test_cyl_transform_tape_gradient():
    c = CylinderConstraint(0.2, -0.1, 0.4)
    s0 = [1.0, 0.7, 0.3, -0.5, 0.4, 0.1]
    tape = ad.Tape()
    sv = tape.vars(s0)
    x_c, xd_c = cyl_transform(sv, c)
    g = tape.gradient(x_c, sv[:2])
    h = 1e-7
    for j in range(2):
        sp = list(s0)
        sp[j] += h
        fd = (cyl_transform(sp, c)[0] - cyl_transform(s0, c)[0]) / h
        assert g[j] == pytest.approx(fd, abs=1e-5)


def test_cyl_transform_singular_axis():
    c = CylinderConstraint(0.0, 0.0, 0.5)
    tape = ad.Tape()
    sv = tape.vars([0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        cyl_transform(sv, c)


def test_hyperplane_requires_unit_normal():
    with pytest.raises(ValueError):
        Hyperplane(w=np.array([2.0, 0.0]), b=0.0, source="cvx")


# -- safe-set construction -------------------------------------------------

def _toy_points(n=400, seed=1):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-2, 2, size=(n, 2))
    pts = np.column_stack([pos, rng.uniform(0.5, 1.5, n),
                           rng.uniform(-1, 1, size=(n, 3))])
    c = CylinderConstraint(0.0, 0.0, 0.5)
    return pts[[c.clearance(p) > 0.05 for p in pts]], c


def test_build_safe_set_structure():
    pts, c = _toy_points()
    ss = build_safe_set(pts, [c], delta=0.1, cvx_directions=32)
    assert [s.set_id for s in ss.sets] == ["cvx", "cyl0"]
    assert ss.get("cvx").dim == 6
    assert ss.get("cyl0").dim == 2
    # delta shift: no stored cylinder point below delta clearance
    assert np.all(ss.get("cyl0").points[:, 0] >= 0.1)


def test_build_safe_set_brake_envelope():
    pts, c = _toy_points()
    ss = build_safe_set(pts, [c], delta=0.1, cvx_directions=32,
                        brake_accel=1.0)
    tr = ss.get("cyl0").points
    x_c = tr[:, 0] - 0.1
    assert np.all(tr[:, 1] >= -np.sqrt(2 * 1.0 * np.maximum(x_c, 0)) - 1e-9)


def test_safe_set_save_load_roundtrip(tmp_path):
    pts, c = _toy_points()
    ss = build_safe_set(pts, [c], delta=0.1, cvx_directions=32)
    d = tmp_path / "ss"
    ss.save(str(d))
    ss2 = SafeSet.load(str(d))
    assert ss2.delta == ss.delta
    for a, b in zip(ss.sets, ss2.sets):
        assert a.set_id == b.set_id
        assert np.array_equal(a.points, b.points)
        if a.constraint is not None:
            assert a.constraint.radius == b.constraint.radius


def test_generators_are_fast_members():
    pts, c = _toy_points()
    ss = build_safe_set(pts, [c], delta=0.1, cvx_directions=32)
    cvx = ss.get("cvx").points
    # hull vertices themselves must never be rejected
    for p in cvx[:20]:
        for s in ss.sets:
            z = s.transform_query(p)
            h = nearest_hyperplane(z, s.set_id, ss)
            assert h.test(z) <= 1e-9


def test_nearest_hyperplane_orientation():
    pts, c = _toy_points()
    ss = build_safe_set(pts, [c], delta=0.1, cvx_directions=32)
    s = ss.get("cvx")
    h = nearest_hyperplane(s.centroid + 10.0, "cvx", ss)
    assert h.test(s.centroid) <= 0.0
    assert h.test(s.centroid + 10.0) > 0.0


def test_membership_fast_far_exterior():
    pts, c = _toy_points()
    ss = build_safe_set(pts, [c], delta=0.1, cvx_directions=32)
    assert not membership_fast(np.full(6, 50.0), ss)
    # point inside the cylinder must always fail the cyl test
    assert not membership_fast(np.array([0.0, 0.1, 1.0, 0, 0, 0.0]), ss)
