import dataclasses

import pytest

from builders import line_instance
from railqubo.fixtures import demo_default_routing, demo_instance
from railqubo.model import (
    GridError,
    MissingParameterError,
    Routing,
    Station,
    TimingParams,
    departure_windows,
    derive_conflict_sets,
    propagate_unavoidable_delays,
    station_event,
    track_orders,
    validate_instance,
)


def codes(diags):
    return {d.code for d in diags}


def test_demo_validates(demo, default_routing, rerouted_routing):
    assert validate_instance(demo, default_routing) == []
    assert validate_instance(demo, rerouted_routing) == []


def test_unavoidable_departures_of_demo(demo):
    t_u = propagate_unavoidable_delays(demo)
    assert t_u == {("j1", "s1"): 4, ("j1", "s2"): 9, ("j2", "s1"): 1, ("j2", "s2"): 10, ("j3", "s2"): 8}


def test_windows_have_d_max_plus_one_points(demo):
    windows = departure_windows(demo)
    assert windows[("j1", "s1")] == list(range(4, 15))
    # j2 leaves s2 no earlier than 1 + 8 + 1
    assert windows[("j2", "s2")] == list(range(10, 21))
    assert all(len(w) == 11 for w in windows.values())


def test_windows_scale_with_resolution():
    inst = demo_instance(resolution=2)
    windows = departure_windows(inst)
    assert len(windows[("j1", "s1")]) == 21
    assert windows[("j1", "s1")][:3] == [4, 4.5, 5]


def test_default_routing_conflicts(demo, default_routing):
    c = derive_conflict_sets(demo, default_routing)
    assert c.same_direction == {("s1", "s2", "1"): frozenset({("j1", "j2")})}
    assert c.single_track_opposite == {}
    assert c.shared_station_track == {("s2", "1"): frozenset({"j1", "j2"})}
    assert c.shared_switch == {}
    assert c.rolling_stock_pairs == {}
    assert c.common_path[("j1", "j3")] == (("s1", "s2"),)


def test_rerouted_conflicts(demo, rerouted_routing):
    c = derive_conflict_sets(demo, rerouted_routing)
    assert c.same_direction == {}
    assert c.single_track_opposite == {("s1", "s2", "2"): frozenset({("j2", "j3")})}
    assert ("s2", "1") in c.shared_station_track


def test_lone_train_has_no_conflicts():
    inst, routing = line_instance(n_trains=1)
    assert derive_conflict_sets(inst, routing).is_empty()


def test_switch_groups_pair_trains_on_different_tracks():
    inst, routing = line_instance(n_trains=2, switch_groups=True)
    c = derive_conflict_sets(inst, routing)
    # the origin tracks differ but both paths use group w
    assert c.shared_switch == {("s1", "w"): frozenset({("j1", "j2")})}


def test_track_orders(demo):
    assert track_orders(demo, "j1", "j2", "s2") == [("j1", "j2"), ("j2", "j1")]
    # j3 starts at s2: it is already there, nobody can leave before it arrives
    assert track_orders(demo, "j1", "j3", "s2") == [("j3", "j1")]


def test_station_event_uses_arrival_when_train_ends(demo):
    assert station_event(demo, "j1", "s2") == (("j1", "s2"), 0)
    assert station_event(demo, "j3", "s1") == (("j3", "s2"), 8)


def test_missing_timing_parameter_is_structured(demo):
    with pytest.raises(MissingParameterError) as err:
        demo.timing.get("blocks", ("j3", "s2", "s1"))
    assert err.value.table == "blocks"


def test_off_grid_conversion(demo):
    with pytest.raises(GridError):
        demo.units(4.5)
    assert demo_instance(resolution=2).units(4.5) == 9


@pytest.mark.parametrize(
    "mutate, code",
    [
        (lambda i, r: (dataclasses.replace(i, timing=dataclasses.replace(i.timing, pass_={**i.timing.pass_, ("j1", "s1", "s2"): -1})), r), "negative"),
        (lambda i, r: (dataclasses.replace(i, timing=dataclasses.replace(i.timing, pass_={**i.timing.pass_, ("j1", "s1", "s2"): 4.5})), r), "off-grid"),
        (lambda i, r: (dataclasses.replace(i, timing=dataclasses.replace(i.timing, stop={})), r), "missing-parameter"),
        (lambda i, r: (i, r.with_line_track("j3", "s2", "s1", "1")), "direction"),
        (lambda i, r: (i, r.with_station_track("j1", "s2", "9", ())), "unknown-resource"),
        (lambda i, r: (i, Routing({}, dict(r.station_track), {})), "routing"),
        (lambda i, r: (i, r.with_station_track("j3", "s2", "1", ()).with_station_track("j2", "s2", "2", ())), None),
    ],
)
def test_validation_codes(demo, default_routing, mutate, code):
    inst, routing = mutate(demo, default_routing)
    diags = validate_instance(inst, routing)
    if code is None:
        assert diags == []
    else:
        assert code in codes(diags)


def test_validation_reports_everything_at_once(demo, default_routing):
    timing = dataclasses.replace(demo.timing, pass_={**demo.timing.pass_, ("j1", "s1", "s2"): -1,
                                                     ("j2", "s1", "s2"): 2.5})
    inst = dataclasses.replace(demo, timing=timing)
    assert {"negative", "off-grid"} <= codes(validate_instance(inst, default_routing))


def test_terminating_trains_cannot_share_a_track():
    inst, routing = line_instance(n_trains=2, run_on=False)
    routing = routing.with_station_track("j2", "s3", "1", ())
    assert "track-clash" in codes(validate_instance(inst, routing))


def test_repeated_station_rejected(demo, default_routing):
    bad = dataclasses.replace(demo.trains[2], route=("s2", "s1", "s2"))
    inst = dataclasses.replace(demo, trains=demo.trains[:2] + (bad,))
    assert "route" in codes(validate_instance(inst, default_routing))


def test_circulation_requires_turnaround(demo, default_routing):
    timing = dataclasses.replace(demo.timing, prep={("j1", "j2", "s2"): 3})
    inst = dataclasses.replace(demo, timing=timing)
    assert "circulation" in codes(validate_instance(inst, default_routing))


def test_path_must_belong_to_track():
    st = Station("s", ("1", "2"), ("w", "e"), {"1": frozenset({"w"}), "2": frozenset({"w", "e"})},
                 {"2": (frozenset({"w", "e"}), frozenset({"e"}))})
    assert st.default_path("2") == frozenset({"w", "e"})
    assert st.paths("1") == (frozenset({"w"}),)
    assert len(st.paths("2")) == 2


def test_routing_equality_ignores_missing_empty_paths():
    a = Routing({("j", "a", "b"): "1"}, {("j", "a"): "1"}, {})
    b = Routing({("j", "a", "b"): "1"}, {("j", "a"): "1"}, {("j", "a"): frozenset()})
    assert a == b and hash(a) == hash(b)
    assert a != a.with_line_track("j", "a", "b", "2")


def test_default_res_fills_gaps():
    tp = TimingParams(default_res=2)
    assert tp.get("res", ("a", "b", "s")) == 2
    with pytest.raises(MissingParameterError):
        TimingParams().get("res", ("a", "b", "s"))
