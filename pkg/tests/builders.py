"""Small hand-built instances for tests."""

from railqubo.model import (
    BOTH, FORWARD, DispatchInstance, LineSegment, LineTrack, Routing, Scenario, Station, TimingParams, Train,
)


def line_instance(n_trains=2, n_stations=3, d_max=4, resolution=1, headway=6, run_on=True,
                  weights=None, tracks_per_station=None, switch_groups=False):
    """Trains running s1 -> sN on one line track, sharing station track 1 between the ends.

    With ``run_on`` every train also departs the last station, so every
    (train, station) pair carries a departure and track 1 is shared there
    too; otherwise each train ends on its own track.
    """
    names = [f"s{i + 1}" for i in range(n_stations)]
    k = tracks_per_station or max(2, n_trains)
    tracks = tuple(str(i + 1) for i in range(k))
    groups = ("w",) if switch_groups else ()
    stations = {s: Station(s, tracks, groups, {t: frozenset(groups) for t in tracks}) for s in names}
    segments = tuple(LineSegment(a, b, (LineTrack("1", FORWARD), LineTrack("2", BOTH))) for a, b in zip(names, names[1:]))
    trains, pass_, blocks, stop, line, st_track = [], {}, {}, {}, {}, {}
    for n in range(n_trains):
        tid = f"j{n + 1}"
        t = n * headway
        schedule = {}
        for i, s in enumerate(names):
            if i:
                pass_[(tid, names[i - 1], s)] = 2
                blocks[(tid, names[i - 1], s)] = 1
                t += 2
                schedule[(s, "in")] = t
                line[(tid, names[i - 1], s)] = "1"
            if i < n_stations - 1 or run_on:
                if i:
                    stop[(tid, s)] = 1
                    t += 1
                schedule[(s, "out")] = t
            own = i == 0 or (i == n_stations - 1 and not run_on)
            st_track[(tid, s)] = str(n + 1) if own else "1"
        w = (weights or [1.0] * n_trains)[n]
        trains.append(Train(tid, w, tuple(names), schedule))
    timing = TimingParams(pass_=pass_, blocks=blocks, stop=stop, default_res=1)
    scenario = Scenario({}, {t.id: d_max for t in trains}, resolution)
    routing = Routing(line, st_track, {k: frozenset(groups) for k in st_track})
    return DispatchInstance(stations, segments, tuple(trains), timing, scenario, name="line"), routing


def onehot_table(model):
    """Every one-hot state of a QUBO model with consistent auxiliaries.

    Returns (group keys, grid times per state, bit matrix, energies).
    """
    import itertools

    import numpy as np

    from railqubo.solvers import batch_energy

    keys = list(model.index.groups)
    members = [np.asarray(model.index.groups[k]) for k in keys]
    choices = np.array(list(itertools.product(*[range(len(m)) for m in members])), dtype=int).reshape(-1, len(keys))
    rows = np.arange(len(choices))
    B = np.zeros((len(choices), model.n))
    times = np.zeros((len(choices), len(keys)), dtype=int)
    grid = np.array([t for _, _, t in model.index.reverse])
    for g, idx in enumerate(members):
        picked = idx[choices[:, g]]
        B[rows, picked] = 1
        times[:, g] = grid[picked]
    for (i1, i2), z in model.index.aux.items():
        B[:, z] = B[:, i1] * B[:, i2]
    return keys, times, B, batch_energy(model, B)


def compare_oracles(instance, routing):
    """Exhaustive comparison of the QUBO penalties with the linear feasibility check.

    Returns a dict with the number of states, mismatches, and both optima
    (None when infeasible).
    """
    import numpy as np

    from railqubo.linear import build_linear_model, feasible_mask, solve_order_enumeration
    from railqubo.qubo import assemble, decode
    from railqubo.solvers import brute_force_onehot

    model = assemble(instance, routing)
    lin = build_linear_model(instance, routing)
    keys, times, B, E = onehot_table(model)
    weights = np.zeros(model.n)
    if "objective" in model.families:
        for i, c in model.families["objective"].linear.items():
            weights[i] = c
    objective = B @ weights
    at_floor = np.abs(E - objective - model.floor) <= 1e-9
    feasible = feasible_mask(lin, keys, times)
    exact = solve_order_enumeration(lin)
    ground = brute_force_onehot(model).first
    decoded = decode(model, ground.bits).schedule
    return {
        "states": len(times),
        "mismatches": int((at_floor != feasible).sum()),
        "linear": exact.objective if exact.feasible else None,
        "qubo": decoded.objective if decoded.feasible else None,
    }
