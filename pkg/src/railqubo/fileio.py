"""Instance files (TOML), QUBO text export and JSON records of results.

Instance layout, times in minutes on the 1/resolution grid::

    name = "demo"

    [[stations]]
    id = "s1"
    tracks = ["1", "2"]
    switch_groups = ["w"]                       # optional
    track_switch_groups = { "1" = ["w"] }       # optional
    track_paths = { "2" = [["w"], []] }         # optional, first is default

    [[segments]]
    from = "s1"
    to = "s2"
    tracks = [{ id = "1", allowed = "forward" }, { id = "2", allowed = "both" }]

    [[trains]]
    id = "j1"
    weight = 2
    route = ["s1", "s2"]
    schedule = { s1 = { out = 1 }, s2 = { in = 5, out = 6 } }
    uncounted = ["s2"]                          # optional

    [timing]
    default_res = 1                             # optional
    pass = [{ train = "j1", from = "s1", to = "s2", value = 4 }]
    blocks = [{ train = "j1", from = "s1", to = "s2", value = 2 }]
    stop = [{ train = "j1", station = "s2", value = 1 }]
    prep = [{ train = "j1", next = "j4", station = "s2", value = 3 }]
    res = [{ train = "j1", other = "j2", station = "s2", value = 1 }]

    [scenario]
    resolution = 1
    d_max = { j1 = 10 }
    primary_delay = [{ train = "j1", station = "s1", value = 3 }]

    [routing_default]
    line = [{ train = "j1", from = "s1", to = "s2", track = "1" }]
    station = [{ train = "j1", station = "s1", track = "1", path = ["w"] }]  # path optional
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Union

import jsonschema
import tomli_w

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .model import (
    DIRECTIONS,
    Diagnostic,
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
from .qubo import PenaltyConstants, QuboModel, decode

# --------------------------------------------------------------------------
# Schema
# --------------------------------------------------------------------------

_ID = {"type": "string", "minLength": 1}
_TIME = {"type": "number", "minimum": 0}
_IDS = {"type": "array", "items": _ID}


def _row(*keys: str) -> dict:
    props = {k: _ID for k in keys}
    props["value"] = _TIME
    return {"type": "object", "additionalProperties": False, "required": list(props), "properties": props}


INSTANCE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["stations", "segments", "trains", "timing", "scenario", "routing_default"],
    "properties": {
        "name": {"type": "string"},
        "stations": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "tracks"],
                "properties": {
                    "id": _ID,
                    "tracks": {**_IDS, "minItems": 1},
                    "switch_groups": _IDS,
                    "track_switch_groups": {"type": "object", "additionalProperties": _IDS},
                    "track_paths": {"type": "object",
                                    "additionalProperties": {"type": "array", "minItems": 1, "items": _IDS}},
                },
            },
        },
        "segments": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["from", "to", "tracks"],
                "properties": {
                    "from": _ID,
                    "to": _ID,
                    "tracks": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["id"],
                            "properties": {"id": _ID, "allowed": {"enum": list(DIRECTIONS)}},
                        },
                    },
                },
            },
        },
        "trains": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "weight", "route", "schedule"],
                "properties": {
                    "id": _ID,
                    "weight": {"type": "number", "minimum": 0},
                    "route": {**_IDS, "minItems": 2},
                    "schedule": {
                        "type": "object",
                        "additionalProperties": {
                            "type": "object",
                            "additionalProperties": False,
                            "properties": {"in": _TIME, "out": _TIME},
                        },
                    },
                    "uncounted": _IDS,
                },
            },
        },
        "timing": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "default_res": _TIME,
                "pass": {"type": "array", "items": _row("train", "from", "to")},
                "blocks": {"type": "array", "items": _row("train", "from", "to")},
                "stop": {"type": "array", "items": _row("train", "station")},
                "prep": {"type": "array", "items": _row("train", "next", "station")},
                "res": {"type": "array", "items": _row("train", "other", "station")},
            },
        },
        "scenario": {
            "type": "object",
            "additionalProperties": False,
            "required": ["d_max"],
            "properties": {
                "resolution": {"type": "integer", "minimum": 1},
                "d_max": {"type": "object", "additionalProperties": _TIME},
                "primary_delay": {"type": "array", "items": _row("train", "station")},
            },
        },
        "routing_default": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "line": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["train", "from", "to", "track"],
                        "properties": {"train": _ID, "from": _ID, "to": _ID, "track": _ID},
                    },
                },
                "station": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["train", "station", "track"],
                        "properties": {"train": _ID, "station": _ID, "track": _ID, "path": _IDS},
                    },
                },
            },
        },
    },
}


class InstanceFileError(Exception):
    """Unreadable or invalid instance file; ``diagnostics`` lists every problem found."""

    def __init__(self, path, diagnostics: list[Diagnostic]):
        self.path = str(path)
        self.diagnostics = diagnostics
        lines = "\n".join(f"  {d}" for d in diagnostics)
        super().__init__(f"{self.path}: {len(diagnostics)} problem(s)\n{lines}")


def _json_path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def _locate(text: str, parts: list) -> Optional[int]:
    """Best-effort line number of a schema path in TOML text."""
    lines = text.splitlines()
    start = 0
    keys = list(parts)
    if len(keys) >= 2 and isinstance(keys[0], str) and isinstance(keys[1], int):
        header = re.compile(rf"^\s*\[\[\s*{re.escape(keys[0])}\s*\]\]")
        seen = -1
        for i, line in enumerate(lines):
            if header.match(line):
                seen += 1
                if seen == keys[1]:
                    start = i
                    break
        else:
            return None
        keys = keys[2:]
        if not keys:
            return start + 1
    elif keys and isinstance(keys[0], str):
        table = re.compile(rf"^\s*\[\s*{re.escape(keys[0])}\s*\]")
        for i, line in enumerate(lines):
            if table.match(line):
                start = i
                keys = keys[1:]
                break
    names = [k for k in keys if isinstance(k, str)]
    if not names:
        return start + 1
    pattern = re.compile(rf"^\s*\"?{re.escape(names[0])}\"?\s*=")
    for i in range(start, len(lines)):
        if pattern.match(lines[i]):
            return i + 1
    return None


def schema_diagnostics(data: dict, text: str = "") -> list[Diagnostic]:
    validator = jsonschema.Draft202012Validator(INSTANCE_SCHEMA)
    out = []
    for err in sorted(validator.iter_errors(data), key=lambda e: [str(p) for p in e.absolute_path]):
        parts = list(err.absolute_path)
        line = _locate(text, parts) if text else None
        where = _json_path(parts) + (f" (line {line})" if line else "")
        out.append(Diagnostic("schema", f"{where}: {err.message}", tuple(parts)))
    return out


# --------------------------------------------------------------------------
# Instance <-> document
# --------------------------------------------------------------------------


def _time(v):
    return int(v) if isinstance(v, float) and v.is_integer() else v


def instance_from_dict(data: dict, resolution: Optional[int] = None) -> tuple[DispatchInstance, Routing]:
    stations = {}
    for st in data["stations"]:
        mapping = {t: frozenset(st.get("track_switch_groups", {}).get(t, ())) for t in st["tracks"]}
        paths = {t: tuple(frozenset(p) for p in alts) for t, alts in st.get("track_paths", {}).items()}
        stations[st["id"]] = Station(st["id"], tuple(st["tracks"]), tuple(st.get("switch_groups", ())), mapping, paths)

    segments = tuple(
        LineSegment(seg["from"], seg["to"], tuple(LineTrack(t["id"], t.get("allowed", "both")) for t in seg["tracks"]))
        for seg in data["segments"]
    )

    trains = []
    for tr in data["trains"]:
        schedule = {(s, kind): _time(v) for s, events in tr["schedule"].items() for kind, v in events.items()}
        counted = {s: False for s in tr.get("uncounted", ())}
        trains.append(Train(tr["id"], float(tr["weight"]), tuple(tr["route"]), schedule, counted))

    timing_doc = data.get("timing", {})

    def table(name, *fields):
        return {tuple(row[f] for f in fields): _time(row["value"]) for row in timing_doc.get(name, ())}

    timing = TimingParams(
        pass_=table("pass", "train", "from", "to"),
        blocks=table("blocks", "train", "from", "to"),
        stop=table("stop", "train", "station"),
        prep=table("prep", "train", "next", "station"),
        res=table("res", "train", "other", "station"),
        default_res=_time(timing_doc["default_res"]) if "default_res" in timing_doc else None,
    )
    sc = data["scenario"]
    scenario = Scenario(
        primary_delay={(r["train"], r["station"]): _time(r["value"]) for r in sc.get("primary_delay", ())},
        d_max={k: _time(v) for k, v in sc["d_max"].items()},
        resolution=resolution or sc.get("resolution", 1),
    )
    rd = data.get("routing_default", {})
    line = {(r["train"], r["from"], r["to"]): r["track"] for r in rd.get("line", ())}
    track, path = {}, {}
    for r in rd.get("station", ()):
        key = (r["train"], r["station"])
        track[key] = r["track"]
        if "path" in r:
            path[key] = frozenset(r["path"])
        elif r["station"] in stations:
            path[key] = stations[r["station"]].default_path(r["track"])
    inst = DispatchInstance(stations, segments, tuple(trains), timing, scenario, name=data.get("name", ""))
    return inst, Routing(line, track, path)


def instance_to_dict(instance: DispatchInstance, routing: Routing) -> dict:
    stations = []
    for st in instance.stations.values():
        doc = {"id": st.id, "tracks": list(st.tracks)}
        if st.switch_groups:
            doc["switch_groups"] = list(st.switch_groups)
        groups = {t: sorted(g) for t, g in st.track_to_switch_groups.items() if g}
        if groups:
            doc["track_switch_groups"] = groups
        if st.track_paths:
            doc["track_paths"] = {t: [sorted(p) for p in alts] for t, alts in st.track_paths.items()}
        stations.append(doc)
    segments = [{"from": s.from_station, "to": s.to_station,
                 "tracks": [{"id": t.id, "allowed": t.allowed} for t in s.tracks]} for s in instance.segments]
    trains = []
    for t in instance.trains:
        schedule: dict = {}
        for (s, kind), v in t.schedule.items():
            schedule.setdefault(s, {})[kind] = v
        doc = {"id": t.id, "weight": t.weight, "route": list(t.route), "schedule": schedule}
        uncounted = [s for s, c in t.counted.items() if not c]
        if uncounted:
            doc["uncounted"] = uncounted
        trains.append(doc)

    tm = instance.timing

    def rows(values, *fields):
        return [{**dict(zip(fields, k)), "value": v} for k, v in values.items()]

    timing = {
        "pass": rows(tm.pass_, "train", "from", "to"),
        "blocks": rows(tm.blocks, "train", "from", "to"),
        "stop": rows(tm.stop, "train", "station"),
        "prep": rows(tm.prep, "train", "next", "station"),
        "res": rows(tm.res, "train", "other", "station"),
    }
    if tm.default_res is not None:
        timing["default_res"] = tm.default_res
    sc = instance.scenario
    scenario = {
        "resolution": sc.resolution,
        "d_max": dict(sc.d_max),
        "primary_delay": rows(sc.primary_delay, "train", "station"),
    }
    routing_doc = {
        "line": [{"train": k[0], "from": k[1], "to": k[2], "track": v} for k, v in routing.line_track.items()],
        "station": [{"train": k[0], "station": k[1], "track": v, "path": sorted(routing.path(*k))}
                    for k, v in routing.station_track.items()],
    }
    doc = {"stations": stations, "segments": segments, "trains": trains, "timing": timing,
           "scenario": scenario, "routing_default": routing_doc}
    if instance.name:
        doc = {"name": instance.name, **doc}
    return doc


def loads_instance(text: str, source: str = "<string>", resolution: Optional[int] = None
                   ) -> tuple[DispatchInstance, Routing]:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise InstanceFileError(source, [Diagnostic("syntax", str(exc))]) from None
    problems = schema_diagnostics(data, text)
    if problems:
        raise InstanceFileError(source, problems)
    inst, routing = instance_from_dict(data, resolution)
    problems = validate_instance(inst, routing)
    if problems:
        raise InstanceFileError(source, problems)
    return inst, routing


def load_instance(path: Union[str, Path], resolution: Optional[int] = None) -> tuple[DispatchInstance, Routing]:
    """Parse, check against the schema, then validate semantics and the time grid.

    Every problem found at the failing stage is reported at once.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InstanceFileError(path, [Diagnostic("io", str(exc))]) from None
    return loads_instance(text, str(path), resolution)


def dumps_instance(instance: DispatchInstance, routing: Routing) -> str:
    return tomli_w.dumps(instance_to_dict(instance, routing))


def shipped_instance(name: str = "demo.toml") -> Path:
    """Path of an instance file bundled with the package."""
    return Path(str(resources.files("railqubo") / "data" / name))


# --------------------------------------------------------------------------
# QUBO text format
# --------------------------------------------------------------------------


@dataclass
class QuboFile:
    n: int
    offset: float
    constants: Optional[PenaltyConstants]
    linear: dict[int, float]
    quadratic: dict[tuple, float]
    variables: Optional[dict] = None


def format_qubo(model: QuboModel) -> str:
    c = model.constants
    lines = [
        f"# n {model.n}",
        f"# offset {model.offset!r}",
        f"# p_sum {c.p_sum!r}",
        f"# p_pair {c.p_pair!r}",
        f"# p_qubic {c.p_qubic!r}",
        "# i j coeff  (i == j: linear)",
    ]
    for i in sorted(model.linear):
        lines.append(f"{i} {i} {model.linear[i]!r}")
    for i, j in sorted(model.quadratic):
        lines.append(f"{i} {j} {model.quadratic[(i, j)]!r}")
    return "\n".join(lines) + "\n"


def variable_map(model: QuboModel) -> dict:
    inst = model.instance
    return {
        "n": model.n,
        "time_indexed": [{"index": i, "train": j, "station": s, "time": inst.minutes(t)}
                         for i, (j, s, t) in enumerate(model.index.reverse)],
        "aux": [{"index": z, "product": [i1, i2]} for (i1, i2), z in sorted(model.index.aux.items(), key=lambda kv: kv[1])],
        "groups": [{"train": j, "station": s, "indices": members} for (j, s), members in model.index.groups.items()],
        "floor": model.floor,
    }


def write_qubo(model: QuboModel, path: Union[str, Path]) -> tuple[Path, Path]:
    """Write the coefficient file and its JSON sidecar (``<path>.json``)."""
    path = Path(path)
    path.write_text(format_qubo(model), encoding="utf-8")
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(variable_map(model), indent=1), encoding="utf-8")
    return path, sidecar


def parse_qubo(text: str) -> QuboFile:
    header, linear, quadratic = {}, {}, {}
    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2:
                try:
                    header[parts[0]] = float(parts[1])
                except ValueError:
                    pass
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"line {number}: expected 'i j coeff', got {raw!r}")
        i, j, c = int(parts[0]), int(parts[1]), float(parts[2])
        if i == j:
            linear[i] = linear.get(i, 0.0) + c
        else:
            key = (min(i, j), max(i, j))
            quadratic[key] = quadratic.get(key, 0.0) + c
    constants = None
    if {"p_sum", "p_pair", "p_qubic"} <= header.keys():
        constants = PenaltyConstants(header["p_sum"], header["p_pair"], header["p_qubic"])
    used = set(linear) | {i for k in quadratic for i in k}
    n = int(header["n"]) if "n" in header else (max(used) + 1 if used else 0)
    return QuboFile(n, header.get("offset", 0.0), constants, linear, quadratic)


def read_qubo(path: Union[str, Path]) -> QuboFile:
    path = Path(path)
    qf = parse_qubo(path.read_text(encoding="utf-8"))
    sidecar = path.with_name(path.name + ".json")
    if sidecar.exists():
        qf.variables = json.loads(sidecar.read_text(encoding="utf-8"))
    return qf


# --------------------------------------------------------------------------
# Result records
# --------------------------------------------------------------------------


def sample_records(samples, model: Optional[QuboModel] = None) -> list[dict]:
    out = []
    for s in samples:
        rec = {"bits": s.bitstring, "energy": s.energy, "multiplicity": s.multiplicity}
        if model is not None:
            d = decode(model, s.bits)
            if d.one_hot:
                rec["schedule"] = schedule_record(d.schedule)
        out.append(rec)
    return out


def schedule_record(schedule) -> dict:
    return {
        "feasible": schedule.feasible,
        "objective": schedule.objective,
        "departures": [{"train": j, "station": s, "time": t, "secondary_delay": schedule.secondary_delay.get((j, s))}
                       for (j, s), t in schedule.departure.items()],
        "violations": [str(v) for v in schedule.violations],
    }


def iteration_records(result) -> list[dict]:
    return [
        {
            "iteration": r.iteration,
            "routing_delta": r.routing_delta,
            "objective": r.objective,
            "feasible": r.feasible,
            "conflict": str(r.conflict) if r.conflict else None,
            "move": r.move,
            "stats": r.stats,
        }
        for r in result.iterations
    ]
