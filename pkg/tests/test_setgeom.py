import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import cloud_distance, cloud_hausdorff, hull_projection, hull_to_cloud_sampled
from relaxinc.setgeom import (
    GeometryError,
    NotInHullError,
    PointSet,
    caratheodory_decompose,
    dist_point_set,
    hausdorff,
    in_ball,
    nearest_combination,
    project_to_hull,
    scale_set,
)

coords = st.floats(-10, 10, allow_nan=False, allow_infinity=False, width=64)


@st.composite
def clouds(draw, dim=None, max_points=6):
    n = dim or draw(st.integers(1, 4))
    m = draw(st.integers(1, max_points))
    return draw(arrays(np.float64, (m, n), elements=coords))


@st.composite
def cloud_pairs(draw):
    n = draw(st.integers(1, 4))
    return draw(clouds(dim=n)), draw(clouds(dim=n))


# -- construction ----------------------------------------------------------------


def test_pointset_deduplicates_keeping_first_order():
    K = PointSet([[1.0, 2.0], [0.0, 0.0], [1.0, 2.0], [3.0, 3.0]])
    assert K.points.tolist() == [[1.0, 2.0], [0.0, 0.0], [3.0, 3.0]]
    assert K.index.tolist() == [0, 1, 3]


@pytest.mark.parametrize("bad", [[], [[np.nan, 0.0]], [[np.inf]]])
def test_pointset_rejects_empty_or_nonfinite(bad):
    with pytest.raises(GeometryError):
        PointSet(np.array(bad, dtype=float))


def test_dimension_mismatch_is_rejected():
    with pytest.raises(GeometryError):
        dist_point_set([0.0, 0.0], PointSet([1.0]))
    with pytest.raises(GeometryError):
        hausdorff(PointSet([[0.0, 0.0]]), PointSet([1.0]))


# -- distances -------------------------------------------------------------------


def test_point_to_set_examples():
    assert dist_point_set([0.0], PointSet([0.0])) == 0.0
    assert dist_point_set([0.0], PointSet([3.0, 4.0])) == cloud_distance([0.0], [[3.0], [4.0]]) == 3.0
    assert dist_point_set([0.0], PointSet([-1.0, 1.0], convex=True)) == 0.0


@given(clouds(), st.data())
def test_cloud_distance_equals_exhaustive_minimum(P, data):
    x = data.draw(arrays(np.float64, (P.shape[1],), elements=coords))
    assert dist_point_set(x, PointSet(P)) == pytest.approx(cloud_distance(x, P), abs=1e-12)


def test_hausdorff_examples():
    K = PointSet([[0.3, -1.0], [2.0, 5.0]])
    assert hausdorff(K, K) == 0.0
    assert hausdorff(PointSet([0.0]), PointSet([3.0, 4.0])) == cloud_hausdorff([[0.0]], [[3.0], [4.0]]) == 4.0
    assert hausdorff(PointSet([0.0, 1.0]), PointSet([0.0, 2.0])) == cloud_hausdorff([[0.0], [1.0]], [[0.0], [2.0]]) == 1.0


@given(cloud_pairs())
def test_cloud_hausdorff_matches_enumeration(pair):
    A, B = pair
    assert hausdorff(PointSet(A), PointSet(B)) == pytest.approx(cloud_hausdorff(A, B), abs=1e-12)


def test_hull_flag_changes_distance():
    # cloud {-1, 1} misses 0 by 1; its hull contains it
    K = PointSet([-1.0, 1.0])
    Z = PointSet([0.0])
    assert hausdorff(K, Z) == 1.0
    assert hausdorff(K.hull(), Z) == 1.0  # the hull still reaches 1 from 0
    assert hausdorff(K.hull(), PointSet([-1.0, 0.0, 1.0])) == 0.5


def test_hull_versus_cloud_one_dimensional_exact():
    # sup over [0, 4] of the distance to {0, 1, 4} is 1.5 at y = 2.5
    assert hausdorff(PointSet([0.0, 4.0], convex=True), PointSet([0.0, 1.0, 4.0])) == pytest.approx(1.5, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 3), st.integers(0, 10_000))
def test_hull_versus_cloud_brackets_dense_sampling(dim, seed):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(dim + 1, dim))
    L = rng.normal(size=(rng.integers(1, 5), dim))
    exact = hausdorff(PointSet(P, convex=True), PointSet(L))
    lower, mesh = hull_to_cloud_sampled(P, L, level=30 if dim == 2 else 16)
    back = max(dist_point_set(p, PointSet(P, convex=True)) for p in L)
    assert exact >= max(lower, back) - 1e-9
    assert exact <= max(lower + mesh, back) + 1e-9


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 4), st.integers(0, 10**6))
def test_hausdorff_symmetry_identity_triangle(dim, seed):
    rng = np.random.default_rng(seed)
    sets = [
        PointSet(rng.normal(size=(rng.integers(1, 5), dim)), convex=bool(rng.integers(2))) for _ in range(3)
    ]
    K, L, M = sets
    assert hausdorff(K, L) == hausdorff(L, K)
    assert hausdorff(K, K) == 0.0
    assert hausdorff(K, M) <= hausdorff(K, L) + hausdorff(L, M) + 1e-9


def test_hausdorff_zero_iff_equal_sets():
    a = PointSet([[0.0, 0.0], [1.0, 0.0]])
    b = PointSet([[1.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
    assert a.same_as(b) and hausdorff(a, b) == 0.0
    assert hausdorff(a, PointSet([[0.0, 0.0]])) > 0.0


# -- balls and scaling -------------------------------------------------------------


def test_in_ball_examples():
    assert in_ball(PointSet([0.0]), 1.0, [1.0])
    assert not in_ball(PointSet([0.0]), 1.0, [1.5])
    assert in_ball(PointSet([0.0, 2.0]), 0.5, [1.6])
    with pytest.raises(GeometryError):
        in_ball(PointSet([0.0]), -0.1, [0.0])


def test_scale_set_examples():
    K = PointSet([3.0, 4.0], convex=True)
    assert scale_set(1.0, K).same_as(K)
    Z = scale_set(0.0, K)
    assert Z.points.tolist() == [[0.0]] and Z.convex
    assert scale_set(-1.0, PointSet([-1.0, 2.0])).same_as(PointSet([1.0, -2.0]))


@given(clouds(), st.sampled_from([-1, 0, 1]), st.sampled_from([-1, 0, 1]), st.integers(-6, 6), st.integers(-6, 6))
def test_scale_composition_exact_for_powers_of_two(P, a, b, ea, eb):
    c1, c2 = a * 2.0**ea, b * 2.0**eb
    K = PointSet(P)
    assert scale_set(c1, scale_set(c2, K)).same_as(scale_set(c1 * c2, K))


@given(clouds(), st.floats(-3, 3), st.floats(-3, 3))
def test_scale_composition_general_factors(P, c1, c2):
    K = PointSet(P)
    lhs, rhs = scale_set(c1, scale_set(c2, K)), scale_set(c1 * c2, K)
    assert hausdorff(lhs, rhs) <= 1e-12 * (1 + np.abs(P).max())


# -- hull projection and decomposition -------------------------------------------


def test_projection_examples():
    assert project_to_hull([0.3], PointSet([-1.0, 1.0])).tolist() == [0.3]
    assert project_to_hull([2.0], PointSet([-1.0, 1.0])).tolist() == [1.0]
    assert project_to_hull([1.0, 1.0], PointSet([[0.0, 0.0], [1.0, 0.0]])).tolist() == [1.0, 0.0]


@settings(max_examples=150, deadline=None)
@given(clouds(), st.data())
def test_projection_matches_nnls_oracle_and_is_idempotent(P, data):
    v = data.draw(arrays(np.float64, (P.shape[1],), elements=coords))
    K = PointSet(P)
    p = project_to_hull(v, K)
    ref = hull_projection(v, K.points)
    assert np.linalg.norm(p - v) <= np.linalg.norm(ref - v) + 1e-7
    assert dist_point_set(p, K.hull()) <= 1e-9
    assert np.linalg.norm(project_to_hull(p, K) - p) <= 1e-9 * (1 + np.abs(P).max())


@settings(max_examples=100, deadline=None)
@given(clouds(), st.data())
def test_projection_is_nonexpansive(P, data):
    n = P.shape[1]
    u = data.draw(arrays(np.float64, (n,), elements=coords))
    v = data.draw(arrays(np.float64, (n,), elements=coords))
    K = PointSet(P)
    assert np.linalg.norm(project_to_hull(u, K) - project_to_hull(v, K)) <= np.linalg.norm(u - v) + 1e-8


def test_decomposition_examples():
    cc = caratheodory_decompose([0.0], PointSet([-1.0, 1.0]))
    assert cc.indices == (0, 1) and cc.weights.tolist() == [0.5, 0.5]
    K = PointSet([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    cc = caratheodory_decompose([1.0, 0.0], K)
    assert cc.indices == (1,) and cc.weights.tolist() == [1.0]
    # barycentric 3x3 system solved directly
    w = np.linalg.solve(np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]]), [0.25, 0.25, 1.0])
    cc = caratheodory_decompose([0.25, 0.25], K)
    assert cc.indices == (0, 1, 2)
    assert np.allclose(cc.weights, w, atol=1e-15) and np.allclose(w, [0.5, 0.25, 0.25])


def test_decomposition_outside_hull_carries_projection():
    with pytest.raises(NotInHullError) as exc:
        caratheodory_decompose([1.0, 1.0], PointSet([[0.0, 0.0], [1.0, 0.0]]))
    assert exc.value.projection.tolist() == [1.0, 0.0]
    assert exc.value.distance == pytest.approx(1.0)


def test_decomposition_is_deterministic():
    K = PointSet(np.random.default_rng(3).normal(size=(9, 2)))
    v = K.points.mean(axis=0)
    a, b = caratheodory_decompose(v, K), caratheodory_decompose(v, K)
    assert a.indices == b.indices and np.array_equal(a.weights, b.weights)


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 4), st.integers(2, 9), st.integers(0, 10**6))
def test_decomposition_reconstructs_hull_points(dim, m, seed):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(m, dim))
    lam = rng.dirichlet(np.ones(m))
    v = lam @ P
    cc = caratheodory_decompose(v, PointSet(P))
    assert len(cc) <= dim + 1
    assert np.all(cc.weights >= 0) and np.all(cc.weights <= 1)
    assert abs(cc.weights.sum() - 1.0) <= 1e-12
    assert np.linalg.norm(cc.point() - v) <= 1e-9
    assert np.array_equal(cc.points, P[list(cc.indices)])


@settings(max_examples=100, deadline=None)
@given(clouds(), st.data())
def test_nearest_combination_agrees_with_two_step_path(P, data):
    v = data.draw(arrays(np.float64, (P.shape[1],), elements=coords))
    K = PointSet(P)
    proj, cc = nearest_combination(v, K)
    assert np.linalg.norm(proj - project_to_hull(v, K)) <= 1e-9 * (1 + np.abs(P).max())
    assert np.linalg.norm(cc.point() - proj) <= 1e-9 * (1 + np.abs(P).max())
