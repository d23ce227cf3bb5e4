import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import zeta

from relaxinc.counterexample import (
    HarmonicWitness,
    counterexample_bounded,
    counterexample_escape,
    escape_policy,
    tooth_count_log10,
)
from relaxinc.integrate import Switching, TimeGrid, integrate
from relaxinc.systems import builtin

EX41 = builtin("example41")


# -- escape from the origin -------------------------------------------------------------


def test_escape_with_constant_control():
    r = counterexample_escape(0.1, "plus", step=1e-3)
    # h^3 * sum_{k<1000} k^2
    assert r.sigma_hat == pytest.approx(999 * 1000 * 1999 // 6 * 1e-9, abs=1e-12)
    assert abs(r.sigma_hat - 1.0 / 3.0) <= 2e-3
    assert r.bound_check and r.x2_check
    assert 1.8 <= r.first_violation <= 2.0 and not r.extrapolated
    assert r.first_violation == pytest.approx(1.0 + 0.1 / r.sigma_hat**2)
    # the full state leaves the ball much earlier, through x3 = t
    assert r.observed_first_violation == pytest.approx(0.1, abs=2e-3)
    assert r.observed_first_violation_x1 <= r.first_violation


def test_escape_time_bounds_the_first_coordinate():
    r = counterexample_escape(0.1, "minus", step=1e-3)
    assert r.observed_first_violation_x1 is not None
    assert r.observed_first_violation_x1 <= r.certified_escape_time


def test_fast_switching_still_escapes():
    r = counterexample_escape(0.1, "square:0.2", step=1e-3, horizon=3.0)
    # x3 is a triangle wave of height 0.1, so sigma = 0.01 / 3
    assert r.sigma_hat == pytest.approx(0.01 / 3.0, rel=0.03)
    assert r.bound_check and r.extrapolated and r.certified_escape_time > 9000.0


def test_large_tube_is_extrapolated():
    r = counterexample_escape(10.0, "plus", step=1e-2, horizon=20.0)
    assert r.extrapolated and r.first_violation is None
    assert r.certified_escape_time == pytest.approx(1.0 + 10.0 / r.sigma_hat**2)
    assert r.certified_escape_time > 20.0


def test_escape_argument_validation():
    with pytest.raises(ValueError):
        counterexample_escape(0.0)
    with pytest.raises(ValueError):
        counterexample_escape(0.1, horizon=0.5)
    with pytest.raises(ValueError):
        escape_policy("sideways")


# -- bounded witness ------------------------------------------------------------------------


def test_witness_constants_match_independent_quadrature():
    a = 0.3
    W = HarmonicWitness(a, n_teeth=2000)
    assert W.c2 == pytest.approx((2.0 / 3.0) * a**3 * zeta(3.0), rel=1e-14)
    # x2 on one tooth from its local start, by adaptive quadrature of x3^2
    k = 5
    al = a / (k + 1)
    x3 = lambda s: s if s <= al else 2 * al - s  # noqa: E731
    s = 1.5 * al
    inc = quad(lambda u: x3(u) ** 2, 0.0, s, points=[al])[0]
    X, _, _ = W.state(np.array([W.start[k] + s]))
    assert X[0, 1] == pytest.approx(W.base2[k] + inc, abs=1e-15)
    assert X[0, 2] == pytest.approx(x3(s), abs=1e-15)


def test_witness_state_agrees_with_fine_euler():
    W = HarmonicWitness(0.09, n_teeth=2000)
    h = 1e-5
    grid = TimeGrid.uniform(0.0, 0.6, h)
    _, _, U = W.state(grid.nodes)
    x = integrate(EX41, Switching(lambda t: int(U[min(int(round(t / h)), len(U) - 1)])), W.initial, grid)
    X, _, _ = W.state(grid.nodes)
    assert np.max(np.abs(x.states - X)) <= 10 * h


def test_tooth_count_is_astronomical():
    assert tooth_count_log10(0.09, 100.0) > 200
    assert tooth_count_log10(1.0, 2.0) == pytest.approx(0.0, abs=1e-12)
    # the first harmonic number reaching 10 is H_12367
    H = np.cumsum(1.0 / np.arange(1, 20_000))
    assert int(np.argmax(H >= 10.0)) + 1 == 12367
    assert 10 ** tooth_count_log10(0.1, 2.0) == pytest.approx(12367, abs=1.0)


def test_bounded_witness_for_small_tube():
    res, traj, origin = counterexample_bounded(0.1, horizon=100.0)
    assert res.within_tube and res.initial_within and res.x1_monotone and res.x2_monotone and res.ok
    assert res.sup_norm_nodes <= 0.1 and res.initial_norm <= 0.1
    assert res.sup_bound <= 0.1
    assert np.all(np.diff(traj.states[:, 0]) >= 0.0) and np.all(traj.states[:, 0] <= 0.0)
    assert traj.selection_residual(EX41) <= 1e-12
    # from the origin the same schedule escapes, but only through x1 ~ c2^2 t
    assert origin.states[0].tolist() == [0.0, 0.0, 0.0]
    assert res.origin_certified_escape_time > 1e4
    assert res.origin_sigma == pytest.approx(res.c2 + traj.states[100, 1], rel=1e-9)


def test_bounded_witness_for_unit_tube_and_origin_escape():
    res, traj, origin = counterexample_bounded(1.0, horizon=20.0)
    assert res.ok
    assert res.origin_violation is not None and res.origin_violation <= res.origin_certified_escape_time
    assert np.max(np.linalg.norm(origin.states, axis=1)) > 1.0


def test_bounded_witness_rejects_bad_tube():
    with pytest.raises(ValueError):
        counterexample_bounded(-1.0)
    with pytest.raises(ValueError):
        HarmonicWitness(0.0)
