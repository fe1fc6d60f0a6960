"""Iterative rerouting around an exact or annealed dispatching solver.

Each iteration solves the dispatching problem for the current routing,
stops when the objective is good enough, and otherwise picks the conflict
that costs the most, moves the lower-priority train of that conflict to
another resource and tries again.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

from .linear import (
    Conflict,
    LinearModel,
    Schedule,
    build_linear_model,
    greedy_schedule,
    implied_orders,
    left_shift,
    make_schedule,
    schedule_units,
    solve_order_enumeration,
)
from .model import ConflictSets, DispatchError, DispatchInstance, Routing, derive_conflict_sets, validate_instance
from .qubo import PenaltyConstants, QuboModel, assemble, bounded_constants, decode, default_constants
from .solvers import AnnealParams, brute_force_onehot, simulated_annealing

SOLVER_MODES = ("linear-oracle", "qubo-brute", "qubo-anneal")
KIND_ORDER = ("span", "single_track", "track", "switch", "circulation")
LINE_KINDS = ("span", "single_track")
STATION_KINDS = ("track", "switch")


class SolverFailure(DispatchError):
    def __init__(self, iteration: int, cause: Exception):
        super().__init__(f"solver failed in iteration {iteration}: {cause}")
        self.iteration = iteration
        self.cause = cause


@dataclass(frozen=True)
class DispatchConfig:
    objective_threshold: float = 0.0
    max_iterations: int = 10
    solver_mode: str = "linear-oracle"
    anneal: AnnealParams = field(default_factory=AnnealParams)
    constants: Optional[PenaltyConstants] = None  # None: automatic per solver mode

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.solver_mode not in SOLVER_MODES:
            raise ValueError(f"unknown solver mode {self.solver_mode!r}")


@dataclass(frozen=True)
class Move:
    kind: str  # parallel-track | platform | path
    train: str
    target: tuple
    routing: Routing

    def __str__(self) -> str:
        where = "/".join(str(p) for p in self.target[:-1])
        value = self.target[-1]
        if isinstance(value, frozenset):
            value = "{" + ",".join(sorted(value)) + "}"
        return f"{self.kind}: {self.train} at {where} -> {value}"


@dataclass
class Subproblem:
    routing: Routing
    conflicts: ConflictSets
    linear: LinearModel
    qubo: Optional[QuboModel] = None


@dataclass
class IterationRecord:
    iteration: int
    routing_delta: list
    objective: float
    feasible: bool
    conflict: Optional[Conflict] = None
    move: Optional[str] = None
    stats: dict = field(default_factory=dict)


@dataclass
class DispatchResult:
    best_schedule: Schedule
    best_routing: Routing
    final_routing: Routing
    iterations: list[IterationRecord]
    terminated_by: str  # satisfied | exhausted-moves | max-iterations


# --------------------------------------------------------------------------
# Solving one routing
# --------------------------------------------------------------------------


def rebuild_after_reroute(instance: DispatchInstance, routing: Routing, with_qubo: bool = False,
                          constants: Optional[PenaltyConstants] = None) -> Subproblem:
    """Full rebuild: conflict sets, linear model and optionally the QUBO."""
    conflicts = derive_conflict_sets(instance, routing)
    linear = build_linear_model(instance, routing, conflicts)
    qubo = assemble(instance, routing, constants, conflicts) if with_qubo else None
    return Subproblem(routing, conflicts, linear, qubo)


def annealing_constants(instance: DispatchInstance, linear: LinearModel) -> PenaltyConstants:
    """Bounded penalties when a greedy schedule is feasible, safe defaults otherwise."""
    greedy = greedy_schedule(linear)
    if greedy.feasible:
        return bounded_constants(instance, greedy.objective)
    return default_constants(instance)


def solve_routing(instance: DispatchInstance, routing: Routing, config: DispatchConfig
                  ) -> tuple[Schedule, LinearModel, dict]:
    """Schedule for one routing with the configured solver, judged by the linear checker."""
    start = time.perf_counter()
    if config.solver_mode == "linear-oracle":
        sub = rebuild_after_reroute(instance, routing)
        sched = solve_order_enumeration(sub.linear)
        stats = {"solver": "order-enumeration", "precedence_vars": len(sub.linear.precedence_vars)}
    else:
        linear = build_linear_model(instance, routing)
        constants = config.constants
        if constants is None:
            constants = (annealing_constants(instance, linear) if config.solver_mode == "qubo-anneal"
                         else default_constants(instance))
        sub = rebuild_after_reroute(instance, routing, with_qubo=True, constants=constants)
        if config.solver_mode == "qubo-brute":
            samples = brute_force_onehot(sub.qubo)
        else:
            samples = simulated_annealing(sub.qubo, config.anneal)
        decoded = decode(sub.qubo, samples.first.bits)
        if decoded.one_hot:
            sched = make_schedule(sub.linear, schedule_units(decoded.schedule, sub.linear))
        else:
            sched = decoded.schedule
        stats = {"solver": samples.info.get("solver"), "n": sub.qubo.n, "energy": samples.first.energy,
                 "one_hot": decoded.one_hot, "p_pair": constants.p_pair}
    stats["seconds"] = time.perf_counter() - start
    return sched, sub.linear, stats


# --------------------------------------------------------------------------
# Conflict choice and moves
# --------------------------------------------------------------------------


def weighted_delay(schedule: Schedule, instance: DispatchInstance, train_id: str) -> float:
    train = instance.train(train_id)
    d_max = instance.scenario.d_max[train_id]
    if d_max == 0:
        return 0.0
    return sum(train.weight * schedule.secondary_delay.get((train_id, s), 0) / d_max
               for s in train.departures() if train.counts(s))


def conflict_scores(schedule: Schedule, model: LinearModel) -> dict[Conflict, float]:
    """Binding conflicts of a feasible schedule with the weighted delay they hold back.

    The schedule is first left-shifted under its own orders so that slack
    left in uncounted departures does not hide or fake a binding row. A row
    is binding when it is active and tight; it is charged the weighted
    secondary delay of the train whose departure it holds back.
    """
    shifted = left_shift(model, schedule)
    times = schedule_units(shifted, model)
    orders = implied_orders(model, times)
    scores: dict[Conflict, float] = {}
    for c in model.constraints:
        conflict = c.conflict
        if conflict is None:
            continue
        if c.big_m and orders.get(c.precedence) != c.active_when:
            continue
        if c.slack(times) != 0:
            continue
        delay = weighted_delay(shifted, model.instance, c.later[0])
        scores[conflict] = max(scores.get(conflict, 0.0), delay)
    return scores


def _conflict_rank(model: LinearModel, conflict: Conflict) -> tuple:
    inst = model.instance
    kind = KIND_ORDER.index(conflict.kind) if conflict.kind in KIND_ORDER else len(KIND_ORDER)
    return (kind, tuple(inst.order(t) for t in conflict.trains), tuple(map(str, conflict.resource)))


def pick_conflict(schedule: Schedule, model: LinearModel) -> Optional[Conflict]:
    """The conflict to resolve next, or None.

    Infeasible schedules yield a violated conflict; a window violation is
    traced to the tight conflict row holding back the late train. Feasible
    schedules yield the binding conflict charged the largest weighted delay.
    """
    if not schedule.feasible:
        for v in schedule.violations:
            if v.conflict is not None:
                return v.conflict
        late = {(v.trains[0], v.resource[0]) for v in schedule.violations if v.kind == "window"}
        times = schedule_units(schedule, model)
        if len(times) < len(model.time_vars):
            return None
        orders = implied_orders(model, times)
        candidates = []
        for c in model.constraints:
            if c.conflict is None or (c.big_m and orders.get(c.precedence) != c.active_when):
                continue
            if c.slack(times) == 0:
                candidates.append((c.later not in late, _conflict_rank(model, c.conflict), c.conflict))
        return min(candidates)[2] if candidates else None

    scores = conflict_scores(schedule, model)
    if not scores:
        return None
    return min(scores, key=lambda c: (-scores[c], _conflict_rank(model, c)))


def lower_priority(instance: DispatchInstance, conflict: Conflict) -> str:
    """Smaller weight, then later in the instance's train order."""
    return min(conflict.trains, key=lambda j: (instance.train(j).weight, -instance.order(j)))


def candidate_moves(routing: Routing, conflict: Conflict, instance: DispatchInstance) -> list[Move]:
    """Moves for the conflict's lower-priority train: parallel track, then platform, then path."""
    j = lower_priority(instance, conflict)
    train = instance.train(j)
    moves = []
    if conflict.kind in LINE_KINDS:
        a, b = conflict.resource[0], conflict.resource[1]
        leg = (a, b) if (a, b) in train.legs() else (b, a)
        seg = instance.segment(*leg)
        current = routing.line_track[(j,) + leg]
        for track in seg.tracks:
            if track.id != current and track.allows(seg.direction(*leg)):
                moves.append(Move("parallel-track", j, leg + (track.id,), routing.with_line_track(j, *leg, track.id)))
    elif conflict.kind in STATION_KINDS:
        s = conflict.resource[0]
        station = instance.stations[s]
        current = routing.station_track[(j, s)]
        for track in station.tracks:
            if track != current:
                path = station.default_path(track)
                moves.append(Move("platform", j, (s, track), routing.with_station_track(j, s, track, path)))
        for path in station.paths(current):
            if path != routing.path(j, s):
                moves.append(Move("path", j, (s, path), routing.with_path(j, s, path)))
    return moves


def reroute(routing: Routing, conflict: Conflict, instance: DispatchInstance,
            tried: Optional[set] = None, visited: Optional[set] = None) -> Optional[Move]:
    """First valid move not yet tried for this conflict and not leading to a routing seen before."""
    tried = tried if tried is not None else set()
    visited = visited if visited is not None else set()
    for move in candidate_moves(routing, conflict, instance):
        if move.routing in tried or move.routing in visited:
            continue
        tried.add(move.routing)
        if validate_instance(instance, move.routing):
            continue
        return move
    return None


def routing_delta(old: Routing, new: Routing) -> list[str]:
    out = []
    for name in ("line_track", "station_track", "station_path"):
        a, b = getattr(old, name), getattr(new, name)
        for key in sorted(set(a) | set(b), key=str):
            if a.get(key) != b.get(key):
                value = b.get(key)
                if isinstance(value, frozenset):
                    value = "{" + ",".join(sorted(value)) + "}"
                out.append(f"{name} {'/'.join(key)}: {value}")
    return out


# --------------------------------------------------------------------------
# Loop
# --------------------------------------------------------------------------


def _rank(schedule: Schedule) -> tuple:
    if schedule.feasible:
        return (0, schedule.objective)
    return (1, sum(v.amount for v in schedule.violations))


def run(instance: DispatchInstance, routing: Routing, config: DispatchConfig = DispatchConfig()) -> DispatchResult:
    """Solve, assess, pick a conflict, reroute; repeat until a stop condition holds.

    Returns the best schedule seen, which need not be the last one.
    """
    visited = {routing}
    tried: dict[Conflict, set] = {}
    iterations: list[IterationRecord] = []
    best: Optional[tuple] = None
    previous = routing
    terminated = "max-iterations"

    for it in range(1, config.max_iterations + 1):
        try:
            sched, model, stats = solve_routing(instance, routing, config)
        except Exception as exc:  # keep the iteration in the error
            raise SolverFailure(it, exc) from exc
        record = IterationRecord(it, routing_delta(previous, routing), sched.objective, sched.feasible, stats=stats)
        iterations.append(record)
        if best is None or _rank(sched) < _rank(best[0]):
            best = (sched, routing)

        if sched.feasible and sched.objective <= config.objective_threshold + 1e-12:
            terminated = "satisfied"
            break
        conflict = pick_conflict(sched, model)
        record.conflict = conflict
        if conflict is None:
            terminated = "exhausted-moves"
            break
        if it == config.max_iterations:
            break
        move = reroute(routing, conflict, instance, tried.setdefault(conflict, set()), visited)
        if move is None:
            terminated = "exhausted-moves"
            break
        record.move = str(move)
        previous, routing = routing, move.routing
        visited.add(routing)

    return DispatchResult(best[0], best[1], routing, iterations, terminated)


def best_objective_trace(result: DispatchResult) -> list[float]:
    """Running minimum of the feasible objectives in the log."""
    out, current = [], math.inf
    for rec in result.iterations:
        if rec.feasible:
            current = min(current, rec.objective)
        out.append(current)
    return out
