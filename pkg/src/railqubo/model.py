"""Problem statement for railway dispatching and the structure derived from it.

Infrastructure (stations, line segments), traffic (trains with routes and
timetables), timing parameters and the disturbance scenario live here, together
with the routing that assigns trains to concrete tracks. Everything an encoder
needs beyond that is derived: conflict sets, unavoidable departures and the
discrete departure windows.

Times in the problem statement are minutes. Internally every quantity is
converted to integer grid units (``minutes * resolution``) so that window
arithmetic and coefficient keys stay exact.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional

FORWARD = "forward"
BACKWARD = "backward"
BOTH = "both"
DIRECTIONS = (FORWARD, BACKWARD, BOTH)

TrainId = str
StationId = str
VarKey = tuple  # (train, station) of a departure event


class DispatchError(Exception):
    """Base class for errors raised while building or solving a dispatch problem."""


class MissingParameterError(DispatchError):
    def __init__(self, table: str, key: tuple):
        super().__init__(f"missing timing parameter {table}{key!r}")
        self.table = table
        self.key = key


class GridError(DispatchError):
    pass


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    subject: tuple = ()

    def __str__(self) -> str:
        return f"[{self.code}] {self.message}"


# --------------------------------------------------------------------------
# Infrastructure and traffic
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Station:
    """A station with its tracks and the switch groups reachable from each track.

    ``track_paths`` optionally lists alternative paths (sets of switch groups)
    for a track; the first alternative is the default path. Without it the
    only path of a track is the full set in ``track_to_switch_groups``.
    """

    id: StationId
    tracks: tuple[str, ...]
    switch_groups: tuple[str, ...] = ()
    track_to_switch_groups: Mapping[str, frozenset] = field(default_factory=dict)
    track_paths: Mapping[str, tuple] = field(default_factory=dict)

    def paths(self, track: str) -> tuple:
        alternatives = self.track_paths.get(track)
        if alternatives:
            return tuple(frozenset(p) for p in alternatives)
        return (frozenset(self.track_to_switch_groups.get(track, ())),)

    def default_path(self, track: str) -> frozenset:
        return self.paths(track)[0]


@dataclass(frozen=True)
class LineTrack:
    id: str
    allowed: str = BOTH  # forward / backward relative to the segment, or both

    def allows(self, direction: str) -> bool:
        return self.allowed == BOTH or self.allowed == direction

    @property
    def bidirectional(self) -> bool:
        return self.allowed == BOTH


@dataclass(frozen=True)
class LineSegment:
    from_station: StationId
    to_station: StationId
    tracks: tuple[LineTrack, ...]

    @property
    def id(self) -> str:
        return f"{self.from_station}-{self.to_station}"

    def direction(self, s: StationId, s_next: StationId) -> Optional[str]:
        if (s, s_next) == (self.from_station, self.to_station):
            return FORWARD
        if (s_next, s) == (self.from_station, self.to_station):
            return BACKWARD
        return None

    def track(self, track_id: str) -> Optional[LineTrack]:
        for t in self.tracks:
            if t.id == track_id:
                return t
        return None


@dataclass(frozen=True)
class Train:
    """A train with its route and timetable.

    ``schedule`` maps ``(station, "in" | "out")`` to the scheduled time in
    minutes. A train departs a station iff the ``"out"`` entry exists, so the
    last station of a route may or may not have a departure (a train running
    on to a depot keeps its final departure, a terminating one does not).
    """

    id: TrainId
    weight: float
    route: tuple[StationId, ...]
    schedule: Mapping[tuple, float]
    counted: Mapping[StationId, bool] = field(default_factory=dict)

    def departs(self, s: StationId) -> bool:
        return (s, "out") in self.schedule

    def arrives(self, s: StationId) -> bool:
        return s in self.route and s != self.route[0]

    def counts(self, s: StationId) -> bool:
        return self.departs(s) and self.counted.get(s, True)

    def prev(self, s: StationId) -> Optional[StationId]:
        i = self.route.index(s)
        return self.route[i - 1] if i > 0 else None

    def legs(self) -> list[tuple[StationId, StationId]]:
        return list(zip(self.route, self.route[1:]))

    def departures(self) -> list[StationId]:
        return [s for s in self.route if self.departs(s)]

    def originates(self, s: StationId) -> bool:
        return self.route[0] == s

    def terminates(self, s: StationId) -> bool:
        return self.route[-1] == s and not self.departs(s)


@dataclass(frozen=True)
class TimingParams:
    """Minimal times in minutes, keyed as in the dispatching literature.

    pass_:  (train, s, s')      running time between consecutive stations
    blocks: (train, s, s')      time to release line blocks for a follower
    stop:   (train, s)          minimal dwell
    prep:   (train, train', s)  rolling-stock preparation when train turns into train'
    res:    (train, train', s)  occupation time of a shared station resource;
                                ``default_res`` fills missing entries
    """

    pass_: Mapping[tuple, float] = field(default_factory=dict)
    blocks: Mapping[tuple, float] = field(default_factory=dict)
    stop: Mapping[tuple, float] = field(default_factory=dict)
    prep: Mapping[tuple, float] = field(default_factory=dict)
    res: Mapping[tuple, float] = field(default_factory=dict)
    default_res: Optional[float] = None

    def get(self, table: str, key: tuple) -> float:
        values = getattr(self, "pass_" if table == "pass" else table)
        if key in values:
            return values[key]
        if table == "res" and self.default_res is not None:
            return self.default_res
        raise MissingParameterError(table, key)

    def has(self, table: str, key: tuple) -> bool:
        try:
            self.get(table, key)
        except MissingParameterError:
            return False
        return True


@dataclass(frozen=True)
class Scenario:
    primary_delay: Mapping[tuple, float] = field(default_factory=dict)  # (train, station) -> minutes
    d_max: Mapping[TrainId, float] = field(default_factory=dict)
    resolution: int = 1


@dataclass(frozen=True)
class Routing:
    """Assignment of trains to line tracks, station tracks and station paths."""

    line_track: Mapping[tuple, str] = field(default_factory=dict)  # (train, s, s') -> track
    station_track: Mapping[tuple, str] = field(default_factory=dict)  # (train, s) -> track
    station_path: Mapping[tuple, frozenset] = field(default_factory=dict)  # (train, s) -> groups

    def key(self) -> frozenset:
        return frozenset(
            [("line",) + k + (v,) for k, v in self.line_track.items()]
            + [("track",) + k + (v,) for k, v in self.station_track.items()]
            + [("path",) + k + (self.path(*k),) for k in set(self.station_track) | set(self.station_path)]
        )

    def __eq__(self, other) -> bool:
        return isinstance(other, Routing) and self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())

    def path(self, train: TrainId, s: StationId) -> frozenset:
        return frozenset(self.station_path.get((train, s), ()))

    def with_line_track(self, train, s, s_next, track) -> "Routing":
        line = dict(self.line_track)
        line[(train, s, s_next)] = track
        return Routing(line, dict(self.station_track), dict(self.station_path))

    def with_station_track(self, train, s, track, path) -> "Routing":
        tracks = dict(self.station_track)
        paths = dict(self.station_path)
        tracks[(train, s)] = track
        paths[(train, s)] = frozenset(path)
        return Routing(dict(self.line_track), tracks, paths)

    def with_path(self, train, s, path) -> "Routing":
        paths = dict(self.station_path)
        paths[(train, s)] = frozenset(path)
        return Routing(dict(self.line_track), dict(self.station_track), paths)


@dataclass(frozen=True)
class DispatchInstance:
    stations: Mapping[StationId, Station]
    segments: tuple[LineSegment, ...]
    trains: tuple[Train, ...]
    timing: TimingParams
    scenario: Scenario
    name: str = ""

    @property
    def resolution(self) -> int:
        return self.scenario.resolution

    def train(self, train_id: TrainId) -> Train:
        for t in self.trains:
            if t.id == train_id:
                return t
        raise KeyError(train_id)

    def order(self, train_id: TrainId) -> int:
        for i, t in enumerate(self.trains):
            if t.id == train_id:
                return i
        raise KeyError(train_id)

    def pair(self, a: TrainId, b: TrainId) -> tuple[TrainId, TrainId]:
        """Canonical ordering of a train pair (instance order)."""
        return (a, b) if self.order(a) < self.order(b) else (b, a)

    def segment(self, s: StationId, s_next: StationId) -> Optional[LineSegment]:
        for seg in self.segments:
            if seg.direction(s, s_next) is not None:
                return seg
        return None

    def units(self, minutes: float) -> int:
        """Convert minutes to integer grid units, refusing off-grid values."""
        scaled = minutes * self.resolution
        rounded = round(scaled)
        if abs(scaled - rounded) > 1e-9:
            raise GridError(f"{minutes} min is not on the 1/{self.resolution} min grid")
        return int(rounded)

    def minutes(self, units: int):
        if units % self.resolution == 0:
            return units // self.resolution
        return units / self.resolution

    def tau(self, table: str, *key) -> int:
        return self.units(self.timing.get(table, tuple(key)))

    def d_max_units(self, train_id: TrainId) -> int:
        return self.units(self.scenario.d_max[train_id])

    def departure_keys(self) -> list[VarKey]:
        return [(t.id, s) for t in self.trains for s in t.departures()]

    def round_pairs(self) -> set[tuple]:
        """(j, j', s) triples for which a preparation time is defined."""
        return set(self.timing.prep)


# --------------------------------------------------------------------------
# Conflict sets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ConflictSets:
    """Pairs of trains competing for the same resource under a routing.

    Line keys are ``(from_station, to_station, track)`` with the segment's own
    orientation. Symmetric relations store each unordered pair once, in
    instance order; ``single_track_opposite`` stores ``(forward, backward)``.
    """

    same_direction: Mapping[tuple, frozenset] = field(default_factory=dict)
    single_track_opposite: Mapping[tuple, frozenset] = field(default_factory=dict)
    shared_station_track: Mapping[tuple, frozenset] = field(default_factory=dict)
    shared_switch: Mapping[tuple, frozenset] = field(default_factory=dict)
    rolling_stock_pairs: Mapping[StationId, frozenset] = field(default_factory=dict)
    common_path: Mapping[tuple, tuple] = field(default_factory=dict)

    def is_empty(self) -> bool:
        return not any(
            (self.same_direction, self.single_track_opposite, self.shared_station_track,
             self.shared_switch, self.rolling_stock_pairs)
        )


def derive_conflict_sets(instance: DispatchInstance, routing: Routing) -> ConflictSets:
    by_line: dict[tuple, dict[str, list[TrainId]]] = {}
    for train in instance.trains:
        for s, s_next in train.legs():
            seg = instance.segment(s, s_next)
            track = routing.line_track[(train.id, s, s_next)]
            key = (seg.from_station, seg.to_station, track)
            by_line.setdefault(key, {FORWARD: [], BACKWARD: []})[seg.direction(s, s_next)].append(train.id)

    same_direction, opposite = {}, {}
    for key, users in sorted(by_line.items()):
        pairs = set()
        for direction in (FORWARD, BACKWARD):
            pairs.update(instance.pair(a, b) for a, b in itertools.combinations(users[direction], 2))
        if pairs:
            same_direction[key] = frozenset(pairs)
        seg = instance.segment(key[0], key[1])
        if seg.track(key[2]).bidirectional:
            opp = {(f, b) for f in users[FORWARD] for b in users[BACKWARD]}
            if opp:
                opposite[key] = frozenset(opp)

    rounds = instance.round_pairs()
    round_keys = {(j, jp, s) for j, jp, s in rounds} | {(jp, j, s) for j, jp, s in rounds}

    track_users: dict[tuple, list[TrainId]] = {}
    for train in instance.trains:
        for s in train.route:
            track_users.setdefault((s, routing.station_track[(train.id, s)]), []).append(train.id)
    shared_track = {k: frozenset(v) for k, v in sorted(track_users.items()) if len(v) >= 2}

    switch_pairs: dict[tuple, set] = {}
    for s in instance.stations:
        visitors = [t for t in instance.trains if s in t.route]
        for a, b in itertools.combinations(visitors, 2):
            if routing.station_track[(a.id, s)] == routing.station_track[(b.id, s)]:
                continue
            if (a.id, b.id, s) in round_keys:
                continue
            common = routing.path(a.id, s) & routing.path(b.id, s)
            for group in common:
                switch_pairs.setdefault((s, group), set()).add(instance.pair(a.id, b.id))
    shared_switch = {k: frozenset(v) for k, v in sorted(switch_pairs.items())}

    rolling: dict[StationId, set] = {}
    for j, jp, s in sorted(rounds):
        rolling.setdefault(s, set()).add((j, jp))

    common_path = {}
    for a, b in itertools.combinations(instance.trains, 2):
        legs_b = {frozenset(leg) for leg in b.legs()}
        shared = tuple(leg for leg in a.legs() if frozenset(leg) in legs_b)
        if shared:
            common_path[(a.id, b.id)] = shared

    return ConflictSets(
        same_direction=same_direction,
        single_track_opposite=opposite,
        shared_station_track=shared_track,
        shared_switch=shared_switch,
        rolling_stock_pairs={s: frozenset(v) for s, v in rolling.items()},
        common_path=common_path,
    )


def track_orders(instance: DispatchInstance, a: TrainId, b: TrainId, s: StationId) -> list[tuple]:
    """Feasible leave orders of two trains sharing a station track at ``s``.

    Returns ``(first, second)`` tuples. ``first`` can leave before ``second``
    only if ``first`` departs ``s`` and ``second`` arrives there; a train that
    originates at ``s`` is already on the track, one that terminates never
    leaves it.
    """
    ta, tb = instance.train(a), instance.train(b)
    orders = []
    for first, second in ((ta, tb), (tb, ta)):
        if first.departs(s) and second.arrives(s):
            orders.append((first.id, second.id))
    return orders


def station_track_pairs(instance: DispatchInstance, conflicts: ConflictSets) -> Iterator[tuple]:
    """Yield (station, track, a, b) for every pair sharing a station track, rounds excluded."""
    rounds = instance.round_pairs()
    for (s, track), users in conflicts.shared_station_track.items():
        ordered = sorted(users, key=instance.order)
        for a, b in itertools.combinations(ordered, 2):
            if (a, b, s) in rounds or (b, a, s) in rounds:
                continue
            yield s, track, a, b


def station_event(instance: DispatchInstance, train_id: TrainId, s: StationId) -> tuple[VarKey, int]:
    """The event at which a train uses the switches of ``s``: departure, else arrival.

    Returned as ``(departure variable, offset)``: the event time equals the
    variable's time plus the offset in grid units.
    """
    train = instance.train(train_id)
    if train.departs(s):
        return (train_id, s), 0
    prev = train.prev(s)
    return (train_id, prev), instance.tau("pass", train_id, prev, s)


# --------------------------------------------------------------------------
# Unavoidable delays and windows
# --------------------------------------------------------------------------


def unavoidable_departures(instance: DispatchInstance) -> dict[VarKey, int]:
    """Earliest departures in grid units, ignoring every other train."""
    earliest: dict[VarKey, int] = {}
    for train in instance.trains:
        prev_time = None
        prev_station = None
        for s in train.route:
            if not train.departs(s):
                break
            t = instance.units(train.schedule[(s, "out")])
            t += instance.units(instance.scenario.primary_delay.get((train.id, s), 0))
            if prev_station is not None:
                reach = prev_time + instance.tau("pass", train.id, prev_station, s)
                reach += instance.tau("stop", train.id, s)
                t = max(t, reach)
            earliest[(train.id, s)] = t
            prev_time, prev_station = t, s
    return earliest


def propagate_unavoidable_delays(instance: DispatchInstance, routing: Optional[Routing] = None) -> dict:
    """Unavoidable departure times t_U per (train, station), in minutes.

    Running times do not depend on the routed track, so ``routing`` only keeps
    the signature uniform with the other derivations.
    """
    return {k: instance.minutes(v) for k, v in unavoidable_departures(instance).items()}


def window_units(instance: DispatchInstance) -> dict[VarKey, range]:
    earliest = unavoidable_departures(instance)
    return {
        k: range(t, t + instance.d_max_units(k[0]) + 1)
        for k, t in earliest.items()
    }


def departure_windows(instance: DispatchInstance, routing: Optional[Routing] = None) -> dict:
    """Discrete departure times allowed per (train, station), in minutes."""
    return {k: [instance.minutes(u) for u in w] for k, w in window_units(instance).items()}


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------


def _check_grid(instance, value, code_subject, diagnostics, what):
    if value < 0:
        diagnostics.append(Diagnostic("negative", f"{what} is negative ({value})", code_subject))
        return
    try:
        instance.units(value)
    except GridError as exc:
        diagnostics.append(Diagnostic("off-grid", f"{what}: {exc}", code_subject))


def validate_instance(instance: DispatchInstance, routing: Routing) -> list[Diagnostic]:
    """Collect every violated invariant of the instance under ``routing``."""
    diags: list[Diagnostic] = []
    add = lambda code, msg, *subject: diags.append(Diagnostic(code, msg, tuple(subject)))  # noqa: E731

    r = instance.scenario.resolution
    if not isinstance(r, int) or r < 1:
        add("resolution", f"resolution must be a positive integer, got {r!r}")
        return diags

    for sid, st in instance.stations.items():
        if st.id != sid:
            add("station", f"station key {sid!r} does not match id {st.id!r}", sid)
        if len(set(st.tracks)) != len(st.tracks):
            add("station", f"station {sid} lists a track twice", sid)
        for track in st.tracks:
            if track not in st.track_to_switch_groups:
                add("station", f"track {track} of {sid} has no switch-group entry", sid, track)
        for track, groups in st.track_to_switch_groups.items():
            if track not in st.tracks:
                add("unknown-resource", f"switch map of {sid} names unknown track {track}", sid, track)
            for g in groups:
                if g not in st.switch_groups:
                    add("unknown-resource", f"{sid}: unknown switch group {g}", sid, g)
        for track, alternatives in st.track_paths.items():
            allowed = frozenset(st.track_to_switch_groups.get(track, ()))
            for p in alternatives:
                if not frozenset(p) <= allowed:
                    add("unknown-resource", f"{sid}: path {sorted(p)} leaves track {track}'s switches", sid, track)

    seen_segments = set()
    for seg in instance.segments:
        for s in (seg.from_station, seg.to_station):
            if s not in instance.stations:
                add("unknown-resource", f"segment {seg.id} names unknown station {s}", seg.id)
        key = frozenset((seg.from_station, seg.to_station))
        if key in seen_segments:
            add("segment", f"segment {seg.id} defined twice", seg.id)
        seen_segments.add(key)
        ids = [t.id for t in seg.tracks]
        if not ids or len(set(ids)) != len(ids):
            add("segment", f"segment {seg.id} needs distinct tracks", seg.id)
        for t in seg.tracks:
            if t.allowed not in DIRECTIONS:
                add("segment", f"track {t.id} of {seg.id} has direction {t.allowed!r}", seg.id, t.id)

    ids = [t.id for t in instance.trains]
    if len(set(ids)) != len(ids):
        add("train", "train ids are not unique")

    structural_ok = not diags
    for train in instance.trains:
        route = train.route
        if len(route) < 2:
            add("route", f"{train.id}: route needs at least two stations", train.id)
            structural_ok = False
            continue
        if len(set(route)) != len(route):
            add("route", f"{train.id}: route visits a station twice", train.id)
            structural_ok = False
        if train.weight < 0:
            add("negative", f"{train.id}: negative weight", train.id)
        for s in route:
            if s not in instance.stations:
                add("unknown-resource", f"{train.id}: unknown station {s}", train.id, s)
                structural_ok = False
        for s, s_next in train.legs():
            if instance.segment(s, s_next) is None:
                add("route", f"{train.id}: no line between {s} and {s_next}", train.id, s, s_next)
                structural_ok = False
        for (s, event) in train.schedule:
            if s not in route or event not in ("in", "out"):
                add("schedule", f"{train.id}: schedule entry ({s}, {event}) is off-route", train.id, s)
        for i, s in enumerate(route):
            if i > 0 and (s, "in") not in train.schedule:
                add("schedule", f"{train.id}: no arrival time at {s}", train.id, s)
            if i < len(route) - 1 and (s, "out") not in train.schedule:
                add("schedule", f"{train.id}: no departure time at {s}", train.id, s)
        times = [train.schedule[(s, e)] for s in route for e in ("in", "out") if (s, e) in train.schedule]
        if any(b < a for a, b in zip(times, times[1:])):
            add("schedule", f"{train.id}: scheduled times decrease along the route", train.id)
        for key, value in train.schedule.items():
            try:
                instance.units(value)
            except GridError as exc:
                add("off-grid", f"{train.id} schedule {key}: {exc}", train.id)
        if train.id not in instance.scenario.d_max:
            add("missing-parameter", f"d_max for {train.id}", "d_max", train.id)
        else:
            _check_grid(instance, instance.scenario.d_max[train.id], ("d_max", train.id), diags, f"d_max of {train.id}")

    for key, value in instance.scenario.primary_delay.items():
        j, s = key
        if j not in ids or not instance.train(j).departs(s):
            add("schedule", f"primary delay given for non-departure {key}", *key)
        _check_grid(instance, value, key, diags, f"primary delay {key}")

    for table in ("pass_", "blocks", "stop", "prep", "res"):
        for key, value in getattr(instance.timing, table).items():
            _check_grid(instance, value, (table.rstrip("_"),) + key, diags, f"tau {table.rstrip('_')}{key}")
    if instance.timing.default_res is not None:
        _check_grid(instance, instance.timing.default_res, ("res",), diags, "default res")

    if not structural_ok:
        return diags

    for train in instance.trains:
        for s, s_next in train.legs():
            if not instance.timing.has("pass", (train.id, s, s_next)):
                add("missing-parameter", f"pass time of {train.id} on {s}->{s_next}", "pass", train.id, s, s_next)
        for s in train.route[1:]:
            if train.departs(s) and not instance.timing.has("stop", (train.id, s)):
                add("missing-parameter", f"stop time of {train.id} at {s}", "stop", train.id, s)

    for (j, jp, s) in instance.timing.prep:
        if j not in ids or jp not in ids:
            add("unknown-resource", f"preparation time names unknown train ({j}, {jp})", j, jp, s)
            continue
        tj, tjp = instance.train(j), instance.train(jp)
        if not (tj.terminates(s) and tjp.originates(s)):
            add("circulation", f"{j} must terminate and {jp} start at {s} to turn around", j, jp, s)

    routing_ok = True
    for train in instance.trains:
        for s, s_next in train.legs():
            track_id = routing.line_track.get((train.id, s, s_next))
            seg = instance.segment(s, s_next)
            if track_id is None:
                add("routing", f"{train.id} has no line track on {s}->{s_next}", train.id, s, s_next)
                routing_ok = False
                continue
            track = seg.track(track_id)
            if track is None:
                add("unknown-resource", f"{train.id}: segment {seg.id} has no track {track_id}", train.id, s, s_next)
                routing_ok = False
            elif not track.allows(seg.direction(s, s_next)):
                add("direction", f"{train.id} runs {s}->{s_next} against one-way track {track_id}",
                    train.id, s, s_next)
        for s in train.route:
            st = instance.stations[s]
            track = routing.station_track.get((train.id, s))
            if track is None:
                add("routing", f"{train.id} has no station track at {s}", train.id, s)
                routing_ok = False
                continue
            if track not in st.tracks:
                add("unknown-resource", f"{train.id}: station {s} has no track {track}", train.id, s)
                routing_ok = False
                continue
            path = routing.path(train.id, s)
            if st.track_paths.get(track):
                if path not in st.paths(track):
                    add("unknown-resource", f"{train.id}: path {sorted(path)} is not a path of {s}/{track}",
                        train.id, s)
            elif not path <= frozenset(st.track_to_switch_groups.get(track, ())):
                add("unknown-resource", f"{train.id}: path {sorted(path)} not reachable from {s}/{track}",
                    train.id, s)
    for key in list(routing.line_track):
        j, s, s_next = key
        if j not in ids or (s, s_next) not in instance.train(j).legs():
            add("routing", f"line assignment {key} is not on a route", *key)
    for key in list(routing.station_track) + list(routing.station_path):
        j, s = key
        if j not in ids or s not in instance.train(j).route:
            add("routing", f"station assignment {key} is not on a route", *key)

    if not routing_ok:
        return diags

    conflicts = derive_conflict_sets(instance, routing)
    for key, pairs in conflicts.same_direction.items():
        for a, b in pairs:
            leg = _leg_on(instance.train(a), key)
            for j in (a, b):
                if not instance.timing.has("blocks", (j,) + leg):
                    add("missing-parameter", f"blocks time of {j} on {leg[0]}->{leg[1]}", "blocks", j, *leg)
    for s, track, a, b in station_track_pairs(instance, conflicts):
        orders = track_orders(instance, a, b, s)
        if not orders:
            add("track-clash", f"{a} and {b} can never share track {track} at {s}", a, b, s)
        for first, second in orders:
            if not instance.timing.has("res", (first, second, s)):
                add("missing-parameter", f"res time of ({first}, {second}) at {s}", "res", first, second, s)
    for (s, _group), pairs in conflicts.shared_switch.items():
        for a, b in pairs:
            for key in ((a, b, s), (b, a, s)):
                if not instance.timing.has("res", key):
                    add("missing-parameter", f"res time of {key}", "res", *key)
    return _dedupe(diags)


def _leg_on(train: Train, line_key: tuple) -> tuple:
    a, b, _ = line_key
    return (a, b) if (a, b) in train.legs() else (b, a)


def _dedupe(diags: list[Diagnostic]) -> list[Diagnostic]:
    seen, out = set(), []
    for d in diags:
        if d not in seen:
            seen.add(d)
            out.append(d)
    return out
