"""Built-in instances: the two-station, three-train demonstration and random micro-instances."""

from __future__ import annotations

import random

from .model import (
    BACKWARD,
    BOTH,
    FORWARD,
    DispatchInstance,
    LineSegment,
    LineTrack,
    Routing,
    Scenario,
    Station,
    TimingParams,
    Train,
    validate_instance,
)


def demo_instance(d_max: float = 10, resolution: int = 1) -> DispatchInstance:
    """Two stations joined by a two-track line; two trains s1->s2, one s2->s1.

    Track 1 of the line is one-way s1->s2, track 2 is signalled both ways
    (normally used s2->s1). j1 and j2 continue to the depot after a minimal
    stay at s2; those departures exist but are not counted in the objective.
    """
    stations = {
        "s1": Station("s1", ("1", "2", "3"), (), {"1": frozenset(), "2": frozenset(), "3": frozenset()}),
        "s2": Station("s2", ("1", "2"), (), {"1": frozenset(), "2": frozenset()}),
    }
    segments = (LineSegment("s1", "s2", (LineTrack("1", FORWARD), LineTrack("2", BOTH))),)
    trains = (
        Train("j1", 2.0, ("s1", "s2"), {("s1", "out"): 1, ("s2", "in"): 5, ("s2", "out"): 6}, {"s2": False}),
        Train("j2", 1.0, ("s1", "s2"), {("s1", "out"): 0, ("s2", "in"): 8, ("s2", "out"): 9}, {"s2": False}),
        Train("j3", 1.0, ("s2", "s1"), {("s2", "out"): 6, ("s1", "in"): 14}),
    )
    timing = TimingParams(
        pass_={("j1", "s1", "s2"): 4, ("j2", "s1", "s2"): 8, ("j3", "s2", "s1"): 8},
        blocks={("j1", "s1", "s2"): 2, ("j2", "s1", "s2"): 2},
        stop={("j1", "s2"): 1, ("j2", "s2"): 1},
        default_res=1,
    )
    scenario = Scenario(
        primary_delay={("j1", "s1"): 3, ("j2", "s1"): 1, ("j3", "s2"): 2},
        d_max={"j1": d_max, "j2": d_max, "j3": d_max},
        resolution=resolution,
    )
    return DispatchInstance(stations, segments, trains, timing, scenario, name="demo")


def demo_default_routing() -> Routing:
    """j1 and j2 share line track 1 and station track 1 at s2."""
    return Routing(
        line_track={("j1", "s1", "s2"): "1", ("j2", "s1", "s2"): "1", ("j3", "s2", "s1"): "2"},
        station_track={
            ("j1", "s1"): "1", ("j1", "s2"): "1",
            ("j2", "s1"): "2", ("j2", "s2"): "1",
            ("j3", "s2"): "2", ("j3", "s1"): "3",
        },
    )


def demo_rerouted_routing() -> Routing:
    """j2 moved to line track 2, so the line works as two parallel single tracks."""
    return demo_default_routing().with_line_track("j2", "s1", "s2", "2")


def random_micro_instance(rng: random.Random, max_trains: int = 3, max_stations: int = 3,
                          max_d_max: int = 4, max_states: int = 500_000) -> tuple[DispatchInstance, Routing]:
    """Draw a small valid instance on a line of stations, with its routing.

    Retries until the instance validates and the one-hot state space
    (product of window sizes) stays below ``max_states``.
    """
    while True:
        inst, routing = _draw(rng, max_trains, max_stations, max_d_max)
        if validate_instance(inst, routing):
            continue
        size = 1
        for t in inst.trains:
            size *= (int(inst.scenario.d_max[t.id]) + 1) ** len(t.departures())
        if size <= max_states:
            return inst, routing


def _draw(rng, max_trains, max_stations, max_d_max):
    k = rng.randint(2, max_stations)
    names = [f"s{i + 1}" for i in range(k)]
    stations = {}
    for s in names:
        if rng.random() < 0.4:
            groups = ("w", "e")
            mapping = {"1": frozenset(groups), "2": frozenset(groups)}
            paths = {"2": (frozenset(groups), frozenset({"w"}))} if rng.random() < 0.5 else {}
        else:
            groups, mapping, paths = (), {"1": frozenset(), "2": frozenset()}, {}
        stations[s] = Station(s, ("1", "2"), groups, mapping, paths)

    segments = []
    for a, b in zip(names, names[1:]):
        layout = rng.choice(["single", "double", "double-flex"])
        if layout == "single":
            tracks = (LineTrack("1", BOTH),)
        elif layout == "double":
            tracks = (LineTrack("1", FORWARD), LineTrack("2", BACKWARD))
        else:
            tracks = (LineTrack("1", FORWARD), LineTrack("2", BOTH))
        segments.append(LineSegment(a, b, tracks))

    trains, pass_, blocks, stop = [], {}, {}, {}
    primary, d_max = {}, {}
    line, st_track, st_path = {}, {}, {}
    for n in range(rng.randint(1, max_trains)):
        tid = f"j{n + 1}"
        i, j = sorted(rng.sample(range(k), 2))
        route = names[i:j + 1]
        if rng.random() < 0.5:
            route = route[::-1]
        runs_on = rng.random() < 0.5
        schedule, counted = {}, {}
        t = rng.randint(0, 4)
        for idx, s in enumerate(route):
            if idx > 0:
                prev = route[idx - 1]
                p = rng.randint(1, 4)
                pass_[(tid, prev, s)] = p
                blocks[(tid, prev, s)] = rng.randint(1, 2)
                t += p
                schedule[(s, "in")] = t
            last = idx == len(route) - 1
            if not last or runs_on:
                if idx > 0:
                    st = rng.randint(0, 1)
                    stop[(tid, s)] = st
                    t += st
                schedule[(s, "out")] = t
                if rng.random() < 0.2:
                    counted[s] = False
        primary[(tid, route[0])] = rng.randint(0, 3)
        d_max[tid] = rng.randint(0, max_d_max)
        trains.append(Train(tid, float(rng.choice([1, 2, 3])), tuple(route), schedule, counted))
        for s, s_next in zip(route, route[1:]):
            seg = next(g for g in segments if {g.from_station, g.to_station} == {s, s_next})
            direction = seg.direction(s, s_next)
            options = [tr.id for tr in seg.tracks if tr.allows(direction)]
            line[(tid, s, s_next)] = rng.choice(options)
        for s in route:
            track = rng.choice(["1", "2"])
            st_track[(tid, s)] = track
            st_path[(tid, s)] = stations[s].default_path(track)

    prep = {}
    for a in trains:
        for b in trains:
            if a is b:
                continue
            end = a.route[-1]
            if a.terminates(end) and b.route[0] == end and rng.random() < 0.5:
                if not any(key[2] == end and (key[0] == a.id or key[1] == b.id) for key in prep):
                    prep[(a.id, b.id, end)] = rng.randint(0, 3)

    timing = TimingParams(pass_=pass_, blocks=blocks, stop=stop, prep=prep, default_res=rng.randint(1, 2))
    inst = DispatchInstance(stations, tuple(segments), tuple(trains), timing,
                            Scenario(primary, d_max, 1), name="micro")
    return inst, Routing(line, st_track, st_path)
