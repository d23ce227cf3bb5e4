import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relaxinc.inclusion import parse_system
from relaxinc.integrate import ConstantAtom, RandomAtom, TimeGrid, integrate
from relaxinc.stability import (
    INF,
    Ball,
    BundleSpec,
    OutputSystem,
    Sublevel,
    build_bundle,
    check_attractivity,
    estimate_stability_margin,
    estimate_uniform_attraction,
    first_crossing,
    first_output_crossing,
    gain_table,
    last_exit_time,
    lemma54_sup,
    make_policy,
    output_of,
)

DECAY_F = parse_system("x1' = -x1; U = {0}")
DECAY = OutputSystem.from_spec(DECAY_F)
EX41_F = parse_system("x1' = x2^2; x2' = x3^2; x3' = u; U = {-1, 1}")


def decay_from(x0, h=1e-3, horizon=3.0):
    return integrate(DECAY_F, ConstantAtom(0), [x0], TimeGrid.uniform(0.0, horizon, h))


# -- outputs and regions ------------------------------------------------------------


def test_output_examples():
    x = integrate(EX41_F, ConstantAtom(1), np.zeros(3), TimeGrid.uniform(0.0, 4.0, 1e-3))
    assert np.array_equal(output_of(x, lambda s: s).states, x.states)
    assert np.all(output_of(x, OutputSystem.from_spec(EX41_F, "0").h).states == 0.0)
    y = output_of(x, OutputSystem.from_spec(EX41_F, "x1").h)
    late = y.times >= 1.0
    sigma = x.states[1000, 1]
    # x1(t) >= sigma^2 (t - 1), and the Euler sigma is within 1e-3 of 1/3
    assert np.all(y.states[late, 0] >= sigma**2 * (y.times[late] - 1.0) - 1e-12)
    assert np.all(y.states[late, 0] >= (y.times[late] - 1.0) / 9.0 - 1e-3 * y.times[late])


def test_time_varying_system_is_rejected():
    with pytest.raises(ValueError):
        OutputSystem.from_spec(parse_system("x1' = t"))


def test_region_predicates():
    assert Ball(1.0).contains([1.0]) and not Ball(1.0, closed=False).contains([1.0])
    assert Ball(0.5, center=(1.0, 1.0)).contains([1.2, 1.2])
    S = Sublevel("x1^2 + x2 - 1")
    assert S.contains([0.0, 1.0]) and not Sublevel("x1^2 + x2 - 1", closed=False).contains([0.0, 1.0])
    assert Sublevel("y1 - 2", var="y").contains([1.0])
    with pytest.raises(ValueError):
        Sublevel("x1 + z")


def test_crossing_examples():
    x = decay_from(2.0)
    assert first_crossing(Ball(3.0), x) == 0.0
    assert first_crossing(Ball(1.0), x) == pytest.approx(math.log(2.0), abs=2e-3)
    assert first_crossing(Ball(1e-3), decay_from(2.0, horizon=1.0)) == INF
    sq = OutputSystem.from_spec(DECAY_F, "x1^2").h
    assert first_output_crossing(Ball(1.0), x, sq) == pytest.approx(math.log(2.0), abs=2e-3)
    assert first_output_crossing(Ball(5.0), x, sq) == 0.0


def test_crossing_error_is_first_order():
    errs = [abs(first_crossing(Ball(1.0), decay_from(2.0, h)) - math.log(2.0)) for h in (1e-2, 5e-3, 2.5e-3)]
    for a, b in zip(errs, errs[1:]):
        assert 1.7 <= a / b <= 2.3


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.05, 0.5), st.floats(0.0, 0.5))
def test_crossings_identity_and_monotone(seed, r, extra):
    x = integrate(parse_system("x1' = -x1 + u; x2' = -x2; U = {-0.2, 0.2}"), RandomAtom(seed), [1.0, -0.8], TimeGrid.uniform(0.0, 5.0, 0.01))
    S, big = Ball(r), Ball(r + extra)
    assert first_crossing(S, x) == first_output_crossing(S, x, lambda s: s)
    assert first_crossing(big, x) <= first_crossing(S, x)


# -- bundles ----------------------------------------------------------------------------


def test_bundle_counts_and_starts():
    spec = BundleSpec(radius=0.5, shells=2, extra_dirs=3, policies=("const:0", "const:1", "random:4"), horizon=0.2)
    b = build_bundle(OutputSystem.from_spec(EX41_F), spec)
    assert len(b) == len(b.initials) * 3
    assert len(b.initials) == 1 + 2 * (6 + 3)
    for n, x in enumerate(b.trajectories):
        assert np.array_equal(x.states[0], b.initials[n // 3])
        assert np.linalg.norm(x.states[0]) <= 0.5 + 1e-12


def test_refined_bundle_contains_original_points():
    spec = BundleSpec(radius=1.0, shells=3, extra_dirs=2)
    small, big = spec.initial_points(2), spec.refined().initial_points(2)
    for p in small:
        assert np.min(np.linalg.norm(big - p, axis=1)) <= 1e-12


def test_policy_strings():
    assert make_policy("const:2").index == 2
    assert make_policy("random:9").seed == 9
    assert make_policy("chatter:3").substeps == 3
    with pytest.raises(ValueError):
        make_policy("wobble")


def test_divergent_member_is_flagged_incomplete():
    sys = OutputSystem.from_spec(parse_system("x1' = x1^2"))
    b = build_bundle(sys, BundleSpec(radius=2.0, shells=1, horizon=2.0, r_max=1e3))
    # only the start at +2 blows up (at t = 1/2); the others decay or stay put
    assert len(b.incomplete) == 1
    i = int(b.incomplete[0].split(":")[0])
    assert b.initials[i].tolist() == [2.0]


# -- margin -----------------------------------------------------------------------------


def test_margin_for_decay_equals_eps():
    spec = BundleSpec(radius=1.0, horizon=5.0, step=5e-3)
    rep = estimate_stability_margin(DECAY, 0.1, spec)
    assert rep.found and abs(rep.delta_hat - 0.1) <= rep.resolution
    assert rep.delta_hat <= 0.1


def test_margin_vacuous_for_zero_output():
    sys = OutputSystem.from_spec(DECAY_F, "0")
    rep = estimate_stability_margin(sys, 0.1, BundleSpec(radius=1.0, horizon=2.0), delta_max=0.75)
    assert rep.found and rep.delta_hat == 0.75


def test_margin_not_found_for_the_bang_bang_chain():
    sys = OutputSystem.from_spec(EX41_F, "x1")
    spec = BundleSpec(radius=0.5, shells=1, policies=("const:1",), horizon=3.0, step=1e-2)
    rep = estimate_stability_margin(sys, 0.1, spec, levels=6)
    assert not rep.found and rep.delta_hat is None
    assert rep.to_dict()["note"].startswith("empirical")


# -- uniform attraction -----------------------------------------------------------------------


def test_attraction_time_for_decay():
    for h in (1e-2, 5e-3):
        spec = BundleSpec(radius=1.0, horizon=5.0, step=h)
        T = estimate_uniform_attraction(DECAY, 1.0, 0.1, spec)
        assert abs(T - math.log(10.0)) <= 0.05


def test_attraction_error_halves_with_step():
    errs = []
    for h in (1e-2, 5e-3):
        T = estimate_uniform_attraction(DECAY, 1.0, 0.1, BundleSpec(radius=1.0, horizon=5.0, step=h))
        errs.append(abs(T - math.log(10.0)))
    assert 1.7 <= errs[0] / errs[1] <= 2.3


def test_attraction_trivial_cases():
    spec = BundleSpec(radius=1.0, horizon=3.0)
    assert estimate_uniform_attraction(DECAY, 0.1, 0.1, spec) == 0.0
    frozen = OutputSystem.from_spec(parse_system("x1' = 0 * x1; U = {0}"))
    assert estimate_uniform_attraction(frozen, 1.0, 0.1, spec) == INF


def test_last_exit_time():
    t = np.array([0.0, 1.0, 2.0, 3.0])
    assert last_exit_time(np.array([0.0, 0.0, 0.0, 0.0]), t, 0.1) == 0.0
    assert last_exit_time(np.array([1.0, 0.5, 0.3, 0.05]), t, 0.1) == pytest.approx(2.8)
    assert last_exit_time(np.array([1.0, 0.05, 0.05, 0.5]), t, 0.1) == INF


def test_gain_table_is_monotone():
    sys = OutputSystem.from_spec(parse_system("x1' = -x1 + 0.3*u*x2; x2' = -2*x2; U = {-1, 1}"))
    spec = BundleSpec(radius=1.0, shells=2, extra_dirs=2, policies=("const:0", "const:1", "random:1"), horizon=6.0, step=0.02)
    table = gain_table(sys, [0.5, 1.0, 2.0], [0.05, 0.1, 0.3], spec)
    assert table.is_monotone()
    assert len(table.rows) == 9
    assert table.value(2.0, 0.05) >= table.value(0.5, 0.3)
    with pytest.raises(KeyError):
        table.value(3.0, 0.1)


# -- bounded first crossings and attractivity --------------------------------------------------


def test_sup_crossing_for_decay():
    spec = BundleSpec(radius=1.0, horizon=5.0, step=5e-3)
    rep = lemma54_sup(DECAY, Ball(0.1, closed=False), Ball(0.05), spec)
    assert rep.hypothesis_ok and abs(rep.sup_hat - math.log(10.0)) <= 0.05
    assert abs(abs(rep.attained_initial[0]) - 1.0) <= 1e-12
    assert rep.refined_sup >= rep.sup_hat and rep.refinement_stable


def test_sup_crossing_single_point_inside():
    rep = lemma54_sup(DECAY, Ball(0.1, closed=False), Ball(0.05), BundleSpec(points=((0.04,),), horizon=1.0))
    assert rep.sup_hat == 0.0 and rep.refined_sup is None


def test_sup_crossing_reports_hypothesis_failure():
    frozen = OutputSystem.from_spec(parse_system("x1' = 0 * x1; U = {0}"))
    rep = lemma54_sup(frozen, Ball(0.1, closed=False), Ball(0.05), BundleSpec(shells=2, horizon=1.0))
    assert not rep.hypothesis_ok
    # only the origin reaches J
    assert len(rep.offenders) == rep.sample_count - 1
    assert rep.sup_hat == INF


def test_sup_crossing_nondecreasing_under_refinement():
    sys = OutputSystem.from_spec(parse_system("x1' = -x1 + 0.5*x2*u; x2' = -x2; U = {-1, 1}"))
    spec = BundleSpec(radius=1.0, shells=2, extra_dirs=3, policies=("const:0", "const:1"), horizon=8.0, step=0.02)
    rep = lemma54_sup(sys, Ball(0.1, closed=False), Ball(0.05), spec)
    assert rep.hypothesis_ok and rep.refined_sup >= rep.sup_hat


def test_attractivity_tail_check():
    assert check_attractivity(DECAY, BundleSpec(radius=1.0, horizon=10.0), 1e-3).ok
    frozen = OutputSystem.from_spec(parse_system("x1' = 0 * x1; U = {0}"))
    rep = check_attractivity(frozen, BundleSpec(radius=1.0, horizon=10.0), 1e-3)
    assert not rep.ok and rep.worst_tail == 1.0 and rep.tail_start == 9.0
