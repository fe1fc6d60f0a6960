"""Time-indexed QUBO/HOBO encoding of the dispatching problem.

A binary ``x[j, s, t]`` is one when train ``j`` leaves station ``s`` at grid
time ``t``. The objective is linear in ``x``; every dispatching condition
becomes a penalty that vanishes exactly on admissible states:

* one departure per (train, station) group,
* pairwise penalties on forbidden departure-time pairs (minimal span,
  single-track meets, minimal stay, rolling-stock turnaround, switches),
* a cubic penalty for two trains sharing a station track, reduced to
  quadratic form with one auxiliary variable per pair of departures at the
  shared station (Rosenberg substitution).

Quadratic coefficients are kept in an unordered-pair map, so the symmetrized
``x_a x_b + x_b x_a`` form of each pairwise penalty is stored once with
doubled weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

import numpy as np

from .linear import Schedule, Violation, evaluate_objective, make_schedule, build_linear_model
from .model import (
    ConflictSets,
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

FAMILIES = ("objective", "sum", "span", "single_track", "stay", "circulation", "switch", "track",
            "occupation", "rosenberg")


@dataclass
class VarIndex:
    """Dense numbering of time-indexed variables followed by auxiliary ones."""

    forward: dict[tuple, int] = field(default_factory=dict)  # (train, station, grid time) -> index
    reverse: list[tuple] = field(default_factory=list)
    groups: dict[VarKey, list[int]] = field(default_factory=dict)
    aux: dict[tuple, int] = field(default_factory=dict)  # (i1, i2) -> z index, i1 < i2

    @property
    def num_x(self) -> int:
        return len(self.reverse)

    @property
    def n(self) -> int:
        return len(self.reverse) + len(self.aux)

    def group_times(self, key: VarKey) -> list[tuple[int, int]]:
        """(grid time, index) pairs of one group."""
        return [(self.reverse[i][2], i) for i in self.groups.get(key, [])]

    def allocate_aux(self, i1: int, i2: int) -> int:
        pair = (min(i1, i2), max(i1, i2))
        if pair not in self.aux:
            self.aux[pair] = self.n
        return self.aux[pair]

    def aux_pairs(self) -> dict[int, tuple]:
        return {z: pair for pair, z in self.aux.items()}


@dataclass(frozen=True)
class PenaltyConstants:
    p_sum: float
    p_pair: float
    p_qubic: float


@dataclass(frozen=True)
class ForbiddenWindow:
    """Departure pairs with ``lower < t_b - t_a < upper`` (grid units) are forbidden."""

    var_a: VarKey
    var_b: VarKey
    lower: float
    upper: float
    family: str = ""
    trains: tuple = ()
    resource: tuple = ()

    @property
    def empty(self) -> bool:
        return self.upper - self.lower <= 1

    def forbids(self, t_a: int, t_b: int) -> bool:
        return self.lower < t_b - t_a < self.upper


@dataclass
class Terms:
    linear: dict[int, float] = field(default_factory=dict)
    quadratic: dict[tuple, float] = field(default_factory=dict)

    def add_linear(self, i: int, c: float) -> None:
        self.linear[i] = self.linear.get(i, 0.0) + c

    def add_quadratic(self, i: int, j: int, c: float) -> None:
        if i == j:
            self.add_linear(i, c)
            return
        key = (i, j) if i < j else (j, i)
        self.quadratic[key] = self.quadratic.get(key, 0.0) + c

    def update(self, other: "Terms") -> None:
        for i, c in other.linear.items():
            self.add_linear(i, c)
        for (i, j), c in other.quadratic.items():
            self.add_quadratic(i, j, c)

    def energy(self, bits) -> float:
        e = sum(c for i, c in self.linear.items() if bits[i])
        return e + sum(c for (i, j), c in self.quadratic.items() if bits[i] and bits[j])

    def pruned(self) -> "Terms":
        return Terms({i: c for i, c in self.linear.items() if c != 0},
                     {k: c for k, c in self.quadratic.items() if c != 0})


@dataclass
class QuboModel:
    instance: DispatchInstance
    routing: Routing
    index: VarIndex
    linear: dict[int, float]
    quadratic: dict[tuple, float]
    offset: float
    constants: PenaltyConstants
    families: dict[str, Terms]
    windows: list[ForbiddenWindow]
    cubic: dict[tuple, float]

    @classmethod
    def from_terms(cls, n: int, linear: Mapping[int, float], quadratic: Mapping[tuple, float],
                   offset: float = 0.0, constants: Optional[PenaltyConstants] = None,
                   groups: Optional[Mapping[tuple, list]] = None) -> "QuboModel":
        """A model without an instance behind it, e.g. an imported file or a test case."""
        index = VarIndex()
        index.reverse = [("", "", i) for i in range(n)]
        index.forward = {key: i for i, key in enumerate(index.reverse)}
        index.groups = {k: list(v) for k, v in (groups or {}).items()}
        quad = {(min(i, j), max(i, j)): c for (i, j), c in quadratic.items()}
        constants = constants or PenaltyConstants(0.0, 0.0, 0.0)
        return cls(None, None, index, dict(linear), quad, offset, constants,
                   {"imported": Terms(dict(linear), quad)}, [], {})

    @property
    def n(self) -> int:
        return self.index.n

    @property
    def groups(self) -> list[tuple[VarKey, list[int]]]:
        return list(self.index.groups.items())

    @property
    def floor(self) -> float:
        """Penalty energy of any admissible state."""
        return -self.constants.p_sum * len(self.index.groups)


# --------------------------------------------------------------------------
# Variables and linear parts
# --------------------------------------------------------------------------


def index_variables(instance: DispatchInstance, routing: Optional[Routing] = None) -> VarIndex:
    index = VarIndex()
    for key, window in window_units(instance).items():
        members = []
        for t in window:
            index.forward[key + (t,)] = len(index.reverse)
            members.append(len(index.reverse))
            index.reverse.append(key + (t,))
        index.groups[key] = members
    return index


def default_constants(instance: DispatchInstance) -> PenaltyConstants:
    """Penalties strictly above the largest possible objective value."""
    bound = 1.0 + sum(t.weight * sum(1 for s in t.departures() if t.counts(s)) for t in instance.trains)
    return PenaltyConstants(p_sum=bound, p_pair=bound, p_qubic=2 * bound)


def objective_quantum(instance: DispatchInstance) -> float:
    """Smallest positive objective change of a one-unit shift; 1.0 if nothing is counted."""
    steps = [t.weight / instance.d_max_units(t.id) for t in instance.trains
             if instance.d_max_units(t.id) > 0 and t.weight > 0 and any(t.counts(s) for s in t.departures())]
    return min(steps, default=1.0)


def bounded_constants(instance: DispatchInstance, bound: float) -> PenaltyConstants:
    """Tighter penalties from the objective of a known feasible schedule.

    Every penalty term is nonnegative apart from the one-hot term, and each
    violation costs at least ``p_pair``, so any infeasible state lies at
    least ``p`` above the floor. With ``p`` above a feasible objective the
    ground state stays feasible, while the smaller barriers keep single-flip
    annealing mobile. The margin is two objective quanta.
    """
    p = float(bound) + 2 * objective_quantum(instance)
    return PenaltyConstants(p_sum=p, p_pair=p, p_qubic=2 * p)


def encode_objective(index: VarIndex, instance: DispatchInstance) -> Terms:
    terms = Terms()
    earliest = unavoidable_departures(instance)
    for (j, s), members in index.groups.items():
        train = instance.train(j)
        d_max = instance.d_max_units(j)
        if not train.counts(s) or d_max == 0:
            continue
        for i in members:
            c = train.weight * (index.reverse[i][2] - earliest[(j, s)]) / d_max
            if c:
                terms.add_linear(i, c)
    return terms


def encode_sum_constraint(index: VarIndex, p_sum: float) -> Terms:
    """p_sum * (sum_{t != t'} x_t x_t' - sum_t x_t) per group; k ones cost p_sum * k * (k - 2)."""
    terms = Terms()
    for members in index.groups.values():
        for a, i in enumerate(members):
            terms.add_linear(i, -p_sum)
            for k in members[a + 1:]:
                terms.add_quadratic(i, k, 2 * p_sum)
    return terms


# --------------------------------------------------------------------------
# Forbidden windows (grid units)
# --------------------------------------------------------------------------


def span_window(instance: DispatchInstance, j: str, jp: str, s: str, s_next: str) -> ForbiddenWindow:
    """Minimal span of two trains leaving ``s`` in the same direction."""
    tau = instance.tau
    pj, pjp = tau("pass", j, s, s_next), tau("pass", jp, s, s_next)
    lower = -tau("blocks", jp, s, s_next) - max(0, pjp - pj)
    upper = tau("blocks", j, s, s_next) + max(0, pj - pjp)
    return ForbiddenWindow((j, s), (jp, s), lower, upper, "span", (j, jp), (s, s_next))


def single_track_window(instance: DispatchInstance, j: str, jp: str, s: str, s_next: str) -> ForbiddenWindow:
    """``j`` runs s -> s_next, ``jp`` runs s_next -> s on the same single track."""
    lower = -instance.tau("pass", jp, s_next, s)
    upper = instance.tau("pass", j, s, s_next)
    return ForbiddenWindow((j, s), (jp, s_next), lower, upper, "single_track", (j, jp), (s, s_next))


def stay_window(instance: DispatchInstance, j: str, s: str, s_next: str) -> ForbiddenWindow:
    upper = instance.tau("pass", j, s, s_next) + instance.tau("stop", j, s_next)
    return ForbiddenWindow((j, s), (j, s_next), -math.inf, upper, "stay", (j,), (s, s_next))


def circulation_window(instance: DispatchInstance, j: str, jp: str, s: str) -> ForbiddenWindow:
    """``j`` terminates at ``s`` and turns into ``jp``; pairs j's previous departure with jp's."""
    prev = instance.train(j).prev(s)
    upper = instance.tau("pass", j, prev, s) + instance.tau("prep", j, jp, s)
    return ForbiddenWindow((j, prev), (jp, s), -math.inf, upper, "circulation", (j, jp), (s,))


def switch_window(instance: DispatchInstance, j: str, jp: str, s: str) -> ForbiddenWindow:
    """Shared switches at ``s``: events closer than the resource time are forbidden."""
    (va, oa), (vb, ob) = station_event(instance, j, s), station_event(instance, jp, s)
    lower = -instance.tau("res", jp, j, s) + oa - ob
    upper = instance.tau("res", j, jp, s) + oa - ob
    return ForbiddenWindow(va, vb, lower, upper, "switch", (j, jp), (s,))


def track_order_window(instance: DispatchInstance, first: str, second: str, s: str) -> ForbiddenWindow:
    """Station track whose leave order is forced: ``second`` must arrive after ``first`` left."""
    prev = instance.train(second).prev(s)
    upper = instance.tau("res", first, second, s) - instance.tau("pass", second, prev, s)
    return ForbiddenWindow((first, s), (second, prev), -math.inf, upper, "track", (first, second), (s,))


def emit_pairwise_penalty(window: ForbiddenWindow, index: VarIndex, p_pair: float) -> Terms:
    terms = Terms()
    for ta, ia in index.group_times(window.var_a):
        for tb, ib in index.group_times(window.var_b):
            if window.forbids(ta, tb):
                terms.add_quadratic(ia, ib, 2 * p_pair)
    return terms


def emit_track_occupation_cubic(instance: DispatchInstance, j: str, jp: str, s: str, index: VarIndex,
                                p_pair: float, inclusive: bool = False) -> dict[tuple, float]:
    """Cubic penalty for ``j`` leaving ``s`` before ``jp`` while ``jp`` arrives too early.

    Terms are keyed ``(x[j,s,t], x[jp,s,t'], x[jp,s_prev,t''])`` and fire when
    ``t'' + pass(jp) - res(j, jp) < t < t'``. With ``inclusive`` the
    simultaneous departure ``t == t'`` is included.
    """
    prev = instance.train(jp).prev(s)
    shift = instance.tau("pass", jp, prev, s) - instance.tau("res", j, jp, s)
    terms: dict[tuple, float] = {}
    for t, i in index.group_times((j, s)):
        for tp, ip in index.group_times((jp, s)):
            if not (t < tp or (inclusive and t == tp)):
                continue
            for tpp, ipp in index.group_times((jp, prev)):
                if tpp + shift < t:
                    terms[(i, ip, ipp)] = terms.get((i, ip, ipp), 0.0) + 2 * p_pair
    return terms


def rosenberg(x1: int, x2: int, z: int) -> int:
    """Zero iff ``z == x1 * x2``; 1 or 3 otherwise."""
    return 3 * z + x1 * x2 - 2 * x1 * z - 2 * x2 * z


def reduce_to_qubo(cubic: Mapping[tuple, float], index: VarIndex, p_qubic: float) -> tuple[Terms, Terms]:
    """Replace ``x1 x2 x3`` by ``z x3`` with ``z`` tied to ``x1 x2`` by a Rosenberg penalty.

    The first two positions of every cubic key are the departures at the
    shared station; one ``z`` is allocated per distinct such pair and shared
    by every term using it. Returns (residual quadratic terms, Rosenberg terms).
    """
    residual, penalty = Terms(), Terms()
    for (x1, x2, x3), coef in cubic.items():
        known = (min(x1, x2), max(x1, x2)) in index.aux
        z = index.allocate_aux(x1, x2)
        if not known:
            penalty.add_linear(z, 3 * p_qubic)
            penalty.add_quadratic(x1, x2, p_qubic)
            penalty.add_quadratic(x1, z, -2 * p_qubic)
            penalty.add_quadratic(x2, z, -2 * p_qubic)
        residual.add_quadratic(z, x3, coef)
    return residual, penalty


# --------------------------------------------------------------------------
# Assembly and decoding
# --------------------------------------------------------------------------


def collect_windows(instance: DispatchInstance, conflicts: ConflictSets) -> list[ForbiddenWindow]:
    """Every pairwise forbidden window implied by the conflict sets, stay and turnaround."""
    windows = []
    for train in instance.trains:
        for s, s_next in train.legs():
            if train.departs(s_next):
                windows.append(stay_window(instance, train.id, s, s_next))
    for line_key, pairs in conflicts.same_direction.items():
        for a, b in sorted(pairs):
            s, s_next = _leg(instance, a, line_key)
            windows.append(span_window(instance, a, b, s, s_next))
    for line_key, pairs in conflicts.single_track_opposite.items():
        for fwd, bwd in sorted(pairs):
            s, s_next = _leg(instance, fwd, line_key)
            windows.append(single_track_window(instance, fwd, bwd, s, s_next))
    for s, pairs in sorted(conflicts.rolling_stock_pairs.items()):
        for j, jp in sorted(pairs):
            windows.append(circulation_window(instance, j, jp, s))
    switch_pairs = sorted({(s, pair) for (s, _g), pairs in conflicts.shared_switch.items() for pair in pairs})
    for s, (a, b) in switch_pairs:
        windows.append(switch_window(instance, a, b, s))
    for s, _track, a, b in station_track_pairs(instance, conflicts):
        orders = track_orders(instance, a, b, s)
        if len(orders) == 1:
            windows.append(track_order_window(instance, *orders[0], s))
        elif len(orders) == 2 and not _tie_allowed(instance, a, b, s) and not _tie_allowed(instance, b, a, s):
            windows.append(ForbiddenWindow((a, s), (b, s), -1, 1, "track", (a, b), (s,)))
    return windows


def _tie_allowed(instance: DispatchInstance, first: str, second: str, s: str) -> bool:
    """Whether ``first`` may leave ``s`` at the very moment ``second`` does, ``first`` counted first."""
    return instance.tau("res", first, second, s) + instance.tau("stop", second, s) == 0


def _leg(instance: DispatchInstance, train_id: str, line_key: tuple) -> tuple:
    a, b, _ = line_key
    return (a, b) if (a, b) in instance.train(train_id).legs() else (b, a)


def track_cubic_terms(instance: DispatchInstance, conflicts: ConflictSets, index: VarIndex,
                      p_pair: float) -> dict[tuple, float]:
    cubic: dict[tuple, float] = {}
    for s, _track, a, b in station_track_pairs(instance, conflicts):
        if len(track_orders(instance, a, b, s)) != 2:
            continue
        a_tie, b_tie = _tie_allowed(instance, a, b, s), _tie_allowed(instance, b, a, s)
        for first, second, inclusive in ((a, b, a_tie), (b, a, b_tie and not a_tie)):
            for key, c in emit_track_occupation_cubic(instance, first, second, s, index, p_pair, inclusive).items():
                cubic[key] = cubic.get(key, 0.0) + c
    return cubic


def assemble(instance: DispatchInstance, routing: Routing,
             constants: Optional[PenaltyConstants] = None,
             conflicts: Optional[ConflictSets] = None) -> QuboModel:
    if conflicts is None:
        conflicts = derive_conflict_sets(instance, routing)
    if constants is None:
        constants = default_constants(instance)
    index = index_variables(instance, routing)

    families = {name: Terms() for name in FAMILIES}
    families["objective"] = encode_objective(index, instance)
    families["sum"] = encode_sum_constraint(index, constants.p_sum)
    windows = collect_windows(instance, conflicts)
    for w in windows:
        families[w.family].update(emit_pairwise_penalty(w, index, constants.p_pair))
    cubic = track_cubic_terms(instance, conflicts, index, constants.p_pair)
    families["occupation"], families["rosenberg"] = reduce_to_qubo(cubic, index, constants.p_qubic)

    total = Terms()
    for name in FAMILIES:
        families[name] = families[name].pruned()
        total.update(families[name])
    total = total.pruned()
    return QuboModel(instance, routing, index, total.linear, total.quadratic, 0.0, constants,
                     {k: v for k, v in families.items() if v.linear or v.quadratic}, windows, cubic)


def present_families(model: QuboModel) -> set[str]:
    return set(model.families)


def consistent_aux(model: QuboModel, bits) -> np.ndarray:
    """Copy of ``bits`` with every auxiliary variable set to the product it stands for."""
    out = np.array(bits, dtype=np.int8).copy()
    for (i1, i2), z in model.index.aux.items():
        out[z] = out[i1] & out[i2]
    return out


def hobo_energy(model: QuboModel, x_bits) -> float:
    """Energy of the unreduced cubic model on the time-indexed variables only."""
    bits = list(x_bits)
    e = model.offset
    for name in ("objective", "sum", "span", "single_track", "stay", "circulation", "switch", "track"):
        if name in model.families:
            e += model.families[name].energy(bits)
    e += sum(c for (a, b, d), c in model.cubic.items() if bits[a] and bits[b] and bits[d])
    return e


@dataclass
class Decoded:
    schedule: Schedule
    one_hot: bool
    group_diagnostics: list[str]
    family_energy: dict[str, float]
    aux_consistent: bool
    penalty_at_floor: bool


def decode(model: QuboModel, bits) -> Decoded:
    """Read departures from a state and report every penalty family's energy.

    The schedule's feasibility depends on the time-indexed variables only:
    penalties are re-evaluated with auxiliary variables forced consistent.
    ``aux_consistent`` tells whether the given state already had them so.
    """
    bits = np.asarray(bits, dtype=np.int8)
    if bits.shape != (model.n,):
        raise ValueError(f"expected {model.n} bits, got {bits.shape}")
    inst = model.instance
    index = model.index

    diagnostics, times = [], {}
    for key, members in index.groups.items():
        on = [i for i in members if bits[i]]
        if len(on) != 1:
            diagnostics.append(f"group {key[0]}@{key[1]} has {len(on)} active departures")
        if on:
            times[key] = index.reverse[on[0]][2]
    one_hot = not diagnostics

    fixed = consistent_aux(model, bits)
    aux_ok = bool(np.array_equal(fixed, bits))
    energies = {name: terms.energy(bits) for name, terms in model.families.items()}
    fixed_energy = {name: terms.energy(fixed) for name, terms in model.families.items()}
    penalty = sum(e for name, e in fixed_energy.items() if name != "objective")
    at_floor = one_hot and abs(penalty - model.floor) <= 1e-9

    if one_hot:
        lin_model = build_linear_model(inst, model.routing)
        sched = make_schedule(lin_model, times)
        sched.objective = evaluate_objective(sched, inst)
        sched.feasible = at_floor
        sched.violations = _penalty_violations(model, fixed) if not at_floor else []
    else:
        departure = {k: inst.minutes(t) for k, t in times.items()}
        sched = Schedule(departure, {}, float("nan"), False,
                         [Violation("onehot", (k[0],), (k[1],), d) for k, d in
                          ((key, d) for key, d in zip(
                              [k for k, m in index.groups.items() if sum(bits[i] for i in m) != 1],
                              diagnostics))])
    return Decoded(sched, one_hot, diagnostics, energies, aux_ok, at_floor)


def _penalty_violations(model: QuboModel, bits) -> list[Violation]:
    out = []
    rev = model.index.reverse
    for name, terms in model.families.items():
        if name in ("objective", "sum", "rosenberg"):
            continue
        for (i, j), c in terms.quadratic.items():
            if c > 0 and bits[i] and bits[j]:
                parts = [rev[k] for k in (i, j) if k < len(rev)]
                trains = tuple(dict.fromkeys(p[0] for p in parts))
                out.append(Violation(name, trains, tuple(dict.fromkeys(p[1] for p in parts)),
                                     f"{name} penalty active on {parts}"))
    return out
