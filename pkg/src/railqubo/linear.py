"""Precedence-variable linear model with big-M disjunctions, and its exact oracle.

Arrival times are eliminated (a train leaves a station only if it can run at
full speed to the next one), so only departure variables remain. Every
pairwise resource conflict becomes one binary precedence variable ``y``
selecting which of two difference constraints is active:

    y = 1:  t[later] + mu * (1 - y) >= t[earlier] + lag
    y = 0:  t[later'] + mu * y      >= t[earlier'] + lag'

Once all ``y`` are fixed the model is a system of difference constraints,
and because every objective coefficient is nonnegative the earliest solution
is optimal. :func:`solve_order_enumeration` exploits that by enumerating the
precedence assignments and propagating earliest times.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional

import numpy as np

from .model import (
    ConflictSets,
    DispatchError,
    DispatchInstance,
    Routing,
    VarKey,
    derive_conflict_sets,
    station_event,
    station_track_pairs,
    track_orders,
    unavoidable_departures,
    window_units,
)

DEFAULT_ENUMERATION_CAP = 20


class EnumerationCapError(DispatchError):
    pass


class WindowError(DispatchError):
    pass


@dataclass(frozen=True)
class TimeVar:
    key: VarKey
    lower: int
    upper: int


@dataclass(frozen=True, order=True)
class PrecedenceKey:
    """One stored precedence variable; ``y = 1`` means ``first`` acts before ``second``."""

    kind: str
    first: str
    second: str
    resource: tuple

    @property
    def name(self) -> str:
        return _lp_name("y", self.kind, self.first, self.second, *self.resource)


@dataclass(frozen=True)
class Conflict:
    kind: str
    trains: tuple
    resource: tuple

    @property
    def line(self) -> bool:
        return self.kind in ("span", "single_track")

    def __str__(self) -> str:
        return f"{self.kind}({', '.join(self.trains)} @ {'/'.join(map(str, self.resource))})"


@dataclass(frozen=True)
class Constraint:
    """``t[later] >= t[earlier] + lag``, in grid units.

    With a precedence variable the row is only enforced when
    ``y[precedence] == active_when``; otherwise it is relaxed by ``mu``.
    """

    kind: str
    trains: tuple
    resource: tuple
    later: VarKey
    earlier: VarKey
    lag: int
    precedence: Optional[PrecedenceKey] = None
    active_when: Optional[int] = None

    @property
    def big_m(self) -> bool:
        return self.precedence is not None

    @property
    def conflict(self) -> Optional[Conflict]:
        if self.kind == "stay":
            return None
        return Conflict(self.kind, self.trains, self.resource)

    def coefficients(self, mu: float) -> tuple[dict, float]:
        """Row in ``sum(coef * var) >= rhs`` form, y included when big-M."""
        coefs = {self.later: 1, self.earlier: -1}
        rhs = self.lag
        if self.big_m:
            if self.active_when == 1:
                coefs[self.precedence] = -mu
                rhs -= mu
            else:
                coefs[self.precedence] = mu
        return coefs, rhs

    def slack(self, times: Mapping[VarKey, int]) -> int:
        return times[self.later] - times[self.earlier] - self.lag

    def holds(self, times: Mapping[VarKey, int]) -> bool:
        return self.slack(times) >= 0


@dataclass
class LinearModel:
    instance: DispatchInstance
    routing: Routing
    time_vars: dict[VarKey, TimeVar]
    precedence_vars: list[PrecedenceKey]
    constraints: list[Constraint]
    order_equalities: list[tuple[PrecedenceKey, PrecedenceKey]]
    objective: dict[VarKey, Fraction]  # weight per grid unit of secondary delay
    earliest: dict[VarKey, int]
    mu: int

    def rows(self, key: PrecedenceKey, value: int) -> list[Constraint]:
        return [c for c in self.constraints if c.precedence == key and c.active_when == value]


@dataclass(frozen=True)
class VariableCounts:
    num_time: int
    num_precedence: int
    num_precedence_raw: int


@dataclass(frozen=True)
class Violation:
    kind: str
    trains: tuple
    resource: tuple
    message: str
    amount: float = 0.0

    @property
    def conflict(self) -> Optional[Conflict]:
        if self.kind in ("window", "stay", "missing", "onehot"):
            return None
        return Conflict(self.kind, self.trains, self.resource)

    def __str__(self) -> str:
        return self.message


@dataclass
class Schedule:
    """Realized departures (minutes) with delays and diagnostics."""

    departure: dict[VarKey, float]
    secondary_delay: dict[VarKey, float]
    objective: float
    feasible: bool
    violations: list = field(default_factory=list)
    precedence: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# Model construction
# --------------------------------------------------------------------------


def build_linear_model(instance: DispatchInstance, routing: Routing,
                       conflicts: Optional[ConflictSets] = None) -> LinearModel:
    if conflicts is None:
        conflicts = derive_conflict_sets(instance, routing)
    tau = instance.tau
    windows = window_units(instance)
    earliest = unavoidable_departures(instance)
    time_vars = {k: TimeVar(k, w.start, w.stop - 1) for k, w in windows.items()}

    constraints: list[Constraint] = []
    precedence: list[PrecedenceKey] = []

    def disjunction(kind, a, b, resource, a_first, b_first):
        """a_first / b_first: (later, earlier, lag) rows for each order."""
        key = PrecedenceKey(kind, a, b, resource)
        precedence.append(key)
        for value, row in ((1, a_first), (0, b_first)):
            later, earlier, lag = row
            constraints.append(Constraint(kind, (a, b), resource, later, earlier, lag, key, value))
        return key

    for train in instance.trains:
        for s, s_next in train.legs():
            if train.departs(s_next):
                lag = tau("pass", train.id, s, s_next) + tau("stop", train.id, s_next)
                constraints.append(Constraint("stay", (train.id,), (s, s_next), (train.id, s_next), (train.id, s), lag))

    span_keys = {}
    for line_key, pairs in conflicts.same_direction.items():
        for a, b in sorted(pairs):
            s, s_next = _leg(instance, a, line_key)
            pa, pb = tau("pass", a, s, s_next), tau("pass", b, s, s_next)
            a_first = ((b, s), (a, s), tau("blocks", a, s, s_next) + max(0, pa - pb))
            b_first = ((a, s), (b, s), tau("blocks", b, s, s_next) + max(0, pb - pa))
            span_keys[(a, b, s_next, line_key)] = disjunction("span", a, b, (s, s_next, line_key[2]), a_first, b_first)

    for line_key, pairs in conflicts.single_track_opposite.items():
        for fwd, bwd in sorted(pairs):
            a, b = instance.pair(fwd, bwd)
            rows = {}
            for first, second in ((a, b), (b, a)):
                u, v = _leg(instance, first, line_key)
                rows[first] = ((second, v), (first, u), tau("pass", first, u, v))
            disjunction("single_track", a, b, line_key, rows[a], rows[b])

    for s, pairs in sorted(conflicts.rolling_stock_pairs.items()):
        for j, jp in sorted(pairs):
            prev = instance.train(j).prev(s)
            lag = tau("pass", j, prev, s) + tau("prep", j, jp, s)
            constraints.append(Constraint("circulation", (j, jp), (s,), (jp, s), (j, prev), lag))

    track_keys = {}
    for s, track, a, b in station_track_pairs(instance, conflicts):
        orders = track_orders(instance, a, b, s)
        if not orders:
            raise DispatchError(f"{a} and {b} can never share track {track} at {s}")
        rows = {}
        for first, second in orders:
            prev = instance.train(second).prev(s)
            lag = tau("res", first, second, s) - tau("pass", second, prev, s)
            rows[first] = ((second, prev), (first, s), lag)
        if len(orders) == 2:
            track_keys[(a, b, s, track)] = disjunction("track", a, b, (s, track), rows[a], rows[b])
        else:
            (first, second), = orders
            later, earlier, lag = rows[first]
            constraints.append(Constraint("track", (first, second), (s, track), later, earlier, lag))

    switch_pairs = sorted({(s, pair) for (s, _g), pairs in conflicts.shared_switch.items() for pair in pairs})
    for s, (a, b) in switch_pairs:
        (va, oa), (vb, ob) = station_event(instance, a, s), station_event(instance, b, s)
        a_first = (vb, va, tau("res", a, b, s) + oa - ob)
        b_first = (va, vb, tau("res", b, a, s) + ob - oa)
        disjunction("switch", a, b, (s,), a_first, b_first)

    equalities = []
    for (a, b, s_next, line_key), key in span_keys.items():
        track = routing.station_track[(a, s_next)]
        other = track_keys.get((a, b, s_next, track))
        if other is not None:
            equalities.append((key, other))

    objective = {}
    for train in instance.trains:
        d_max = instance.d_max_units(train.id)
        for s in train.departures():
            if train.counts(s) and d_max > 0:
                objective[(train.id, s)] = Fraction(train.weight) / d_max

    if time_vars:
        span = max(v.upper for v in time_vars.values()) - min(v.lower for v in time_vars.values())
    else:
        span = 0
    max_lag = max((abs(c.lag) for c in constraints), default=0)
    return LinearModel(
        instance=instance,
        routing=routing,
        time_vars=time_vars,
        precedence_vars=sorted(precedence),
        constraints=constraints,
        order_equalities=equalities,
        objective=objective,
        earliest=earliest,
        mu=span + max_lag + 1,
    )


def _leg(instance: DispatchInstance, train_id: str, line_key: tuple) -> tuple:
    a, b, _ = line_key
    return (a, b) if (a, b) in instance.train(train_id).legs() else (b, a)


def count_variables(model: LinearModel) -> VariableCounts:
    components = _components(model)
    return VariableCounts(len(model.time_vars), len(set(components.values())), len(model.precedence_vars))


def _components(model: LinearModel) -> dict[PrecedenceKey, PrecedenceKey]:
    """Map every precedence variable to the representative of its equality class."""
    parent = {k: k for k in model.precedence_vars}

    def find(k):
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    for a, b in model.order_equalities:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return {k: find(k) for k in model.precedence_vars}


# --------------------------------------------------------------------------
# Objective and feasibility
# --------------------------------------------------------------------------


def _objective_units(model_or_instance, times: Mapping[VarKey, int]) -> Fraction:
    if isinstance(model_or_instance, LinearModel):
        objective, earliest = model_or_instance.objective, model_or_instance.earliest
    else:
        inst = model_or_instance
        earliest = unavoidable_departures(inst)
        objective = {}
        for train in inst.trains:
            d_max = inst.d_max_units(train.id)
            for s in train.departures():
                if train.counts(s) and d_max > 0:
                    objective[(train.id, s)] = Fraction(train.weight) / d_max
    return sum((coef * (times[k] - earliest[k]) for k, coef in objective.items()), Fraction(0))


def evaluate_objective(schedule: Schedule, instance: DispatchInstance) -> float:
    """Weighted secondary delay, each normalized by the train's d_max."""
    windows = window_units(instance)
    times = {}
    for key, window in windows.items():
        if key not in schedule.departure:
            raise WindowError(f"no departure for {key}")
        t = instance.units(schedule.departure[key])
        if t not in window:
            raise WindowError(f"departure of {key[0]} from {key[1]} at {schedule.departure[key]} "
                              f"is outside its window")
        times[key] = t
    return float(_objective_units(instance, times))


def make_schedule(model: LinearModel, times: Mapping[VarKey, int], precedence=None) -> Schedule:
    """Wrap grid-unit departures into a checked :class:`Schedule`."""
    inst = model.instance
    departure = {k: inst.minutes(times[k]) for k in model.time_vars if k in times}
    delays = {k: inst.minutes(times[k] - model.earliest[k]) for k in model.time_vars if k in times}
    sched = Schedule(departure, delays, 0.0, False, [], dict(precedence or {}))
    sched.violations = check_feasibility(sched, model)
    sched.feasible = not sched.violations
    if all(k in times for k in model.time_vars):
        sched.objective = float(_objective_units(model, times))
    else:
        sched.objective = float("nan")
    return sched


def schedule_units(schedule: Schedule, model: LinearModel) -> dict[VarKey, int]:
    return {k: model.instance.units(v) for k, v in schedule.departure.items()}


def satisfied_orders(model: LinearModel, times: Mapping[VarKey, int]) -> dict[PrecedenceKey, set]:
    """Values of each precedence variable compatible with the given times."""
    out = {}
    for key in model.precedence_vars:
        out[key] = {v for v in (1, 0) if all(c.holds(times) for c in model.rows(key, v))}
    return out


def check_feasibility(schedule: Schedule, model: LinearModel) -> list[Violation]:
    """Every ground constraint violated by the schedule; empty iff feasible.

    Disjunctions are judged by the orders the departures imply: a conflict is
    violated only when neither order's constraints hold.
    """
    inst = model.instance
    times = schedule_units(schedule, model)
    out: list[Violation] = []
    missing = [k for k in model.time_vars if k not in times]
    for k in missing:
        out.append(Violation("missing", (k[0],), (k[1],), f"no departure for {k[0]} at {k[1]}"))
    if missing:
        return out

    for key, var in model.time_vars.items():
        t = times[key]
        if t < var.lower:
            out.append(Violation("window", (key[0],), (key[1],),
                                 f"{key[0]} leaves {key[1]} before its unavoidable departure",
                                 inst.minutes(var.lower - t)))
        elif t > var.upper:
            excess = t - model.earliest[key]
            out.append(Violation("window", (key[0],), (key[1],),
                                 f"secondary delay of {key[0]} at {key[1]} is {inst.minutes(excess)}, "
                                 f"above d_max = {inst.scenario.d_max[key[0]]}",
                                 inst.minutes(t - var.upper)))

    for c in model.constraints:
        if not c.big_m and not c.holds(times):
            out.append(Violation(c.kind, c.trains, c.resource,
                                 f"{c.kind} violated for {', '.join(c.trains)} at {_res(c.resource)}",
                                 inst.minutes(-c.slack(times))))

    orders = satisfied_orders(model, times)
    for key, ok in orders.items():
        if not ok:
            worst = min(max(-c.slack(times), 0) for v in (0, 1) for c in model.rows(key, v))
            out.append(Violation(key.kind, (key.first, key.second), key.resource,
                                 f"{key.kind} violated for {key.first}, {key.second} at {_res(key.resource)}",
                                 inst.minutes(worst)))
    for a, b in model.order_equalities:
        if orders[a] and orders[b] and not (orders[a] & orders[b]):
            out.append(Violation("order", (a.first, a.second), b.resource,
                                 f"{a.first} and {a.second} change order between {_res(a.resource)} "
                                 f"and {_res(b.resource)}"))
    return out


def _res(resource: tuple) -> str:
    return "/".join(str(r) for r in resource)


def feasible_mask(model: LinearModel, keys: list[VarKey], times: np.ndarray) -> np.ndarray:
    """Vectorized feasibility of many schedules; ``times[n, i]`` is the grid time of ``keys[i]``."""
    col = {k: i for i, k in enumerate(keys)}
    ok = np.ones(times.shape[0], dtype=bool)
    for key, var in model.time_vars.items():
        t = times[:, col[key]]
        ok &= (t >= var.lower) & (t <= var.upper)

    def holds(c):
        return times[:, col[c.later]] >= times[:, col[c.earlier]] + c.lag

    for c in model.constraints:
        if not c.big_m:
            ok &= holds(c)
    sat = {}
    for key in model.precedence_vars:
        sat[key] = {}
        for v in (1, 0):
            m = np.ones_like(ok)
            for c in model.rows(key, v):
                m &= holds(c)
            sat[key][v] = m
        ok &= sat[key][1] | sat[key][0]
    for a, b in model.order_equalities:
        ok &= (sat[a][1] & sat[b][1]) | (sat[a][0] & sat[b][0])
    return ok


# --------------------------------------------------------------------------
# Exact oracle
# --------------------------------------------------------------------------


def _propagate(lower: list[int], rows: list[tuple[int, int, int]]) -> Optional[list[int]]:
    """Earliest times satisfying ``t[later] >= t[earlier] + lag``; None on a positive cycle."""
    t = list(lower)
    for _ in range(len(t) + 1):
        changed = False
        for later, earlier, lag in rows:
            need = t[earlier] + lag
            if t[later] < need:
                t[later] = need
                changed = True
        if not changed:
            return t
    return None


def solve_order_enumeration(model: LinearModel, cap: int = DEFAULT_ENUMERATION_CAP,
                            fixed: Optional[Mapping[PrecedenceKey, int]] = None) -> Schedule:
    """Exact optimum by enumerating all precedence assignments.

    Order equalities merge variables before enumeration; ``fixed`` pins some
    variables. Ties in the objective go to the lexicographically smallest
    ``y`` vector (variables in sorted key order). If no assignment is
    feasible the returned schedule is the one with the least total window
    excess, with ``feasible=False`` and its violations listed.
    """
    keys = list(model.time_vars)
    idx = {k: i for i, k in enumerate(keys)}
    lower = [model.time_vars[k].lower for k in keys]
    upper = [model.time_vars[k].upper for k in keys]

    comp = _components(model)
    reps = sorted(set(comp.values()))
    pinned: dict[PrecedenceKey, int] = {}
    for key, value in (fixed or {}).items():
        rep = comp[key]
        if pinned.get(rep, value) != value:
            return _infeasible_without_candidate(model, keys, lower)
        pinned[rep] = value
    free = [r for r in reps if r not in pinned]
    if len(free) > cap:
        raise EnumerationCapError(
            f"{len(free)} free precedence variables exceed the enumeration cap of {cap}; "
            f"use the QUBO annealing path for instances of this size"
        )

    static_rows = [(idx[c.later], idx[c.earlier], c.lag) for c in model.constraints if not c.big_m]
    switched = {
        (key, v): [(idx[c.later], idx[c.earlier], c.lag) for c in model.rows(key, v)]
        for key in model.precedence_vars for v in (0, 1)
    }
    obj_cols = [(idx[k], coef) for k, coef in model.objective.items()]

    best = None  # (objective, y_vector, times, assignment)
    fallback = None  # (excess, y_vector, times, assignment)
    for bits in itertools.product((0, 1), repeat=len(free)):
        rep_value = dict(pinned)
        rep_value.update(zip(free, bits))
        assignment = {k: rep_value[comp[k]] for k in model.precedence_vars}
        rows = list(static_rows)
        for key, v in assignment.items():
            rows.extend(switched[(key, v)])
        times = _propagate(lower, rows)
        if times is None:
            continue
        y_vector = tuple(assignment[k] for k in model.precedence_vars)
        excess = sum(max(0, t - u) for t, u in zip(times, upper))
        if excess:
            cand = (excess, y_vector)
            if fallback is None or cand < fallback[:2]:
                fallback = (excess, y_vector, times, assignment)
            continue
        value = sum((coef * (times[i] - lower[i]) for i, coef in obj_cols), Fraction(0))
        cand = (value, y_vector)
        if best is None or cand < best[:2]:
            best = (value, y_vector, times, assignment)

    chosen = best or fallback
    if chosen is None:
        return _infeasible_without_candidate(model, keys, lower)
    _, _, times, assignment = chosen
    return make_schedule(model, dict(zip(keys, times)), assignment)


def _infeasible_without_candidate(model, keys, lower) -> Schedule:
    sched = make_schedule(model, dict(zip(keys, lower)))
    sched.feasible = False
    if not sched.violations:
        sched.violations.append(Violation("order", (), (), "no consistent precedence assignment"))
    return sched


# --------------------------------------------------------------------------
# LP export
# --------------------------------------------------------------------------


def _lp_name(prefix: str, *parts) -> str:
    raw = "_".join(str(p) for p in (prefix,) + parts)
    return "".join(ch if ch.isalnum() or ch == "_" else "_" for ch in raw)


def to_lp(model: LinearModel) -> str:
    """The model in CPLEX LP text format (times in grid units)."""
    tname = {k: _lp_name("t", *k) for k in model.time_vars}
    lines = [f"\\ dispatch model {model.instance.name} (grid units, resolution {model.instance.resolution})"]
    offset = -sum(coef * model.earliest[k] for k, coef in model.objective.items())
    lines.append(f"\\ objective offset {float(offset)!r}")
    lines.append("Minimize")
    terms = " + ".join(f"{float(c)!r} {tname[k]}" for k, c in model.objective.items()) or "0 " + next(
        iter(tname.values()), "dummy")
    lines.append(f" obj: {terms}")
    lines.append("Subject To")
    for i, c in enumerate(model.constraints):
        coefs, rhs = c.coefficients(model.mu)
        parts = []
        for var, coef in coefs.items():
            name = var.name if isinstance(var, PrecedenceKey) else tname[var]
            parts.append(f"{'+' if coef >= 0 else '-'} {abs(coef)} {name}")
        lines.append(f" c{i}_{c.kind}: {' '.join(parts)} >= {rhs}")
    for i, (a, b) in enumerate(model.order_equalities):
        lines.append(f" eq{i}: + 1 {a.name} - 1 {b.name} = 0")
    lines.append("Bounds")
    for k, v in model.time_vars.items():
        lines.append(f" {v.lower} <= {tname[k]} <= {v.upper}")
    if model.precedence_vars:
        lines.append("Binary")
        lines.extend(f" {k.name}" for k in model.precedence_vars)
    lines.append("End")
    return "\n".join(lines) + "\n"


def greedy_schedule(model: LinearModel) -> Schedule:
    """First-come-first-served: each order picked by least violation at unavoidable times.

    Cheap (a single propagation); the result is an upper bound on the optimum
    when feasible.
    """
    earliest = {k: v.lower for k, v in model.time_vars.items()}
    fixed = {}
    for key in sorted(set(_components(model).values())):
        excess = {v: sum(max(0, -c.slack(earliest)) for c in model.rows(key, v)) for v in (1, 0)}
        fixed[key] = 1 if excess[1] <= excess[0] else 0
    return solve_order_enumeration(model, cap=0, fixed=fixed)


def implied_orders(model: LinearModel, times: Mapping[VarKey, int]) -> dict[PrecedenceKey, int]:
    """One precedence value per variable consistent with the times (1 preferred), merged keys agreeing."""
    sat = satisfied_orders(model, times)
    comp = _components(model)
    members: dict[PrecedenceKey, list] = {}
    for key, rep in comp.items():
        members.setdefault(rep, []).append(key)
    out = {}
    for rep, keys in members.items():
        common = set.intersection(*(sat[k] for k in keys))
        value = 1 if 1 in common or not common else 0
        for k in keys:
            out[k] = value
    return out


def left_shift(model: LinearModel, schedule: Schedule) -> Schedule:
    """Earliest schedule keeping the orders the given one implies."""
    times = schedule_units(schedule, model)
    return solve_order_enumeration(model, cap=0, fixed=implied_orders(model, times))
