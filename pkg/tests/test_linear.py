import itertools

import numpy as np
import pytest

from builders import line_instance
from railqubo.fixtures import demo_instance, demo_rerouted_routing
from railqubo.linear import (
    EnumerationCapError,
    PrecedenceKey,
    Schedule,
    WindowError,
    build_linear_model,
    count_variables,
    evaluate_objective,
    feasible_mask,
    greedy_schedule,
    left_shift,
    make_schedule,
    solve_order_enumeration,
    to_lp,
)


@pytest.fixture(scope="module")
def lin_default(demo, default_routing):
    return build_linear_model(demo, default_routing)


@pytest.fixture(scope="module")
def lin_rerouted(demo, rerouted_routing):
    return build_linear_model(demo, rerouted_routing)


def test_default_optimum(lin_default):
    sched = solve_order_enumeration(lin_default)
    assert sched.feasible
    assert sched.objective == 0.5
    d = sched.departure
    assert (d[("j1", "s1")], d[("j2", "s1")], d[("j3", "s2")], d[("j1", "s2")]) == (4, 6, 8, 9)
    span = next(k for k in sched.precedence if k.kind == "span")
    assert (span.first, span.second, sched.precedence[span]) == ("j1", "j2", 1)


def test_rerouted_optimum(lin_rerouted):
    sched = solve_order_enumeration(lin_rerouted)
    d = sched.departure
    assert sched.objective == 0.3
    assert (d[("j1", "s1")], d[("j2", "s1")], d[("j3", "s2")], d[("j1", "s2")], d[("j2", "s2")]) == (4, 2, 10, 9, 11)


def test_forcing_j3_first_is_infeasible(lin_rerouted):
    key = next(k for k in lin_rerouted.precedence_vars if k.kind == "single_track")
    sched = solve_order_enumeration(lin_rerouted, fixed={key: 0})
    assert not sched.feasible
    late = [v for v in sched.violations if v.kind == "window" and v.trains == ("j2",)]
    assert late and "above d_max = 10" in late[0].message


def test_counts_of_demo(lin_default, lin_rerouted):
    assert count_variables(lin_default).num_time == 5
    assert count_variables(lin_default).num_precedence == 1
    assert count_variables(lin_default).num_precedence_raw == 2
    assert count_variables(lin_rerouted).num_precedence == 2


def test_count_lone_train():
    inst, routing = line_instance(n_trains=1, n_stations=4)
    c = count_variables(build_linear_model(inst, routing))
    assert (c.num_time, c.num_precedence) == (4, 0)


def test_count_two_trains_sharing_three_stations():
    inst, routing = line_instance(n_trains=2, n_stations=3, run_on=False)
    c = count_variables(build_linear_model(inst, routing))
    assert c.num_precedence_raw == 3
    assert c.num_precedence == 2


def test_order_equality_links_span_and_track(lin_default):
    (a, b), = lin_default.order_equalities
    assert {a.kind, b.kind} == {"span", "track"}


def test_big_m_relaxes_inactive_rows(lin_default):
    """With mu, an inactive row holds for every pair of in-window times."""
    mu = lin_default.mu
    lows = {k: v.lower for k, v in lin_default.time_vars.items()}
    highs = {k: v.upper for k, v in lin_default.time_vars.items()}
    for c in lin_default.constraints:
        if not c.big_m:
            continue
        inactive = 1 - c.active_when
        coefs, rhs = c.coefficients(mu)
        worst = lows[c.later] - highs[c.earlier]
        value = worst + coefs[c.precedence] * inactive
        assert value >= rhs


def test_objective_exact_fraction(demo, lin_rerouted):
    sched = solve_order_enumeration(lin_rerouted)
    assert evaluate_objective(sched, demo) == 0.3


def test_objective_rejects_out_of_window(demo):
    sched = Schedule({("j1", "s1"): 30, ("j1", "s2"): 35, ("j2", "s1"): 1, ("j2", "s2"): 10, ("j3", "s2"): 8},
                     {}, 0.0, True)
    with pytest.raises(WindowError):
        evaluate_objective(sched, demo)


def test_zero_d_max_contributes_nothing():
    inst = demo_instance(d_max=0)
    sched = solve_order_enumeration(build_linear_model(inst, demo_rerouted_routing()))
    assert sched.objective == 0.0


def test_check_feasibility_reports_missing(lin_default):
    sched = make_schedule(lin_default, {("j1", "s1"): 4})
    assert not sched.feasible
    assert {v.kind for v in sched.violations} == {"missing"}


def test_span_violation_detected(lin_default):
    times = {("j1", "s1"): 4, ("j1", "s2"): 9, ("j2", "s1"): 5, ("j2", "s2"): 14, ("j3", "s2"): 8}
    sched = make_schedule(lin_default, times)
    assert not sched.feasible
    assert "span" in {v.kind for v in sched.violations}


def test_feasible_mask_matches_scalar_check(lin_rerouted):
    keys = list(lin_rerouted.time_vars)
    rng = np.random.default_rng(4)
    lows = np.array([lin_rerouted.time_vars[k].lower for k in keys])
    times = lows + rng.integers(0, 11, size=(400, len(keys)))
    mask = feasible_mask(lin_rerouted, keys, times)
    for row, ok in zip(times, mask):
        sched = make_schedule(lin_rerouted, dict(zip(keys, row.tolist())))
        assert sched.feasible == bool(ok)
    assert mask.any() and not mask.all()


def test_enumeration_matches_exhaustive_time_search(lin_rerouted):
    keys = list(lin_rerouted.time_vars)
    grids = [range(lin_rerouted.time_vars[k].lower, lin_rerouted.time_vars[k].upper + 1) for k in keys]
    times = np.array(list(itertools.product(*grids)))
    mask = feasible_mask(lin_rerouted, keys, times)
    coef = np.array([float(lin_rerouted.objective.get(k, 0)) for k in keys])
    lows = np.array([lin_rerouted.time_vars[k].lower for k in keys])
    best = ((times[mask] - lows) @ coef).min()
    assert best == pytest.approx(solve_order_enumeration(lin_rerouted).objective, abs=1e-12)


def test_cap_refuses_large_enumerations(lin_rerouted):
    with pytest.raises(EnumerationCapError, match="annealing"):
        solve_order_enumeration(lin_rerouted, cap=1)


def test_greedy_bounds_optimum(lin_default, lin_rerouted):
    for model in (lin_default, lin_rerouted):
        g = greedy_schedule(model)
        assert g.feasible
        assert g.objective >= solve_order_enumeration(model).objective


def test_left_shift_keeps_orders_and_moves_earlier(lin_default):
    times = {("j1", "s1"): 4, ("j1", "s2"): 13, ("j2", "s1"): 6, ("j2", "s2"): 20, ("j3", "s2"): 8}
    sched = make_schedule(lin_default, times)
    assert sched.feasible
    shifted = left_shift(lin_default, sched)
    assert shifted.departure[("j1", "s2")] == 9
    assert shifted.departure[("j2", "s2")] == 15
    assert shifted.objective == sched.objective


def test_lp_export_lists_rows(lin_default):
    text = to_lp(lin_default)
    lines = text.splitlines()
    assert "Minimize" in lines and "Subject To" in lines and lines[-1] == "End"
    assert "y_span_j1_j2" in text
    assert any(line.startswith(" eq0:") for line in lines)


def test_precedence_key_names_are_stable():
    k = PrecedenceKey("track", "j1", "j2", ("s2", "1"))
    assert k.name == "y_track_j1_j2_s2_1"
