import itertools
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import compare_oracles, line_instance
from railqubo.fileio import dumps_instance, loads_instance
from railqubo.fixtures import random_micro_instance
from railqubo.linear import build_linear_model, count_variables
from railqubo.qubo import assemble, consistent_aux, decode, hobo_energy, index_variables
from railqubo.solvers import energy, flip_delta

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def micro(seed, max_states=60_000):
    return random_micro_instance(random.Random(seed), max_states=max_states)


@settings(max_examples=25)
@given(seeds)
def test_qubo_penalties_match_linear_feasibility(seed):
    inst, routing = micro(seed)
    result = compare_oracles(inst, routing)
    assert result["mismatches"] == 0
    if result["linear"] is None:
        assert result["qubo"] is None
    else:
        assert result["qubo"] == pytest.approx(result["linear"], abs=1e-9)


@settings(max_examples=40)
@given(seeds)
def test_instance_text_round_trip(seed):
    inst, routing = micro(seed)
    again = loads_instance(dumps_instance(inst, routing))
    assert again == (inst, routing)


@settings(max_examples=30)
@given(seeds, st.data())
def test_flip_delta_is_the_energy_difference(seed, data):
    inst, routing = micro(seed)
    model = assemble(inst, routing)
    bits = data.draw(st.lists(st.integers(0, 1), min_size=model.n, max_size=model.n))
    i = data.draw(st.integers(0, model.n - 1))
    flipped = list(bits)
    flipped[i] ^= 1
    assert flip_delta(model, bits, i) == pytest.approx(energy(model, flipped) - energy(model, bits), abs=1e-9)


@settings(max_examples=30)
@given(seeds, st.data())
def test_penalty_energy_never_below_floor(seed, data):
    """Penalty energy of any state with consistent auxiliaries is at least the floor."""
    inst, routing = micro(seed)
    model = assemble(inst, routing)
    x = data.draw(st.lists(st.integers(0, 1), min_size=model.n, max_size=model.n))
    bits = consistent_aux(model, np.array(x))
    objective = model.families["objective"].energy(bits) if "objective" in model.families else 0.0
    assert energy(model, bits) - objective >= model.floor - 1e-9
    assert hobo_energy(model, bits) == pytest.approx(energy(model, bits), abs=1e-9)


@settings(max_examples=60)
@given(seeds)
def test_precedence_count_bound(seed):
    inst, routing = micro(seed, max_states=10**9)
    raw = count_variables(build_linear_model(inst, routing)).num_precedence_raw
    bound = 0
    for a, b in itertools.combinations(inst.trains, 2):
        shared_stations = set(a.route) & set(b.route)
        shared_legs = {frozenset(leg) for leg in a.legs()} & {frozenset(leg) for leg in b.legs()}
        bound += len(shared_stations) + len(shared_legs)
    assert raw <= bound


@settings(max_examples=60)
@given(seeds)
def test_time_variable_count_matches_windows(seed):
    inst, routing = micro(seed, max_states=10**9)
    index = index_variables(inst, routing)
    expected = sum(int(inst.scenario.d_max[t.id] * inst.scenario.resolution) + 1
                   for t in inst.trains for _ in t.departures())
    assert index.num_x == expected


@settings(max_examples=20)
@given(st.integers(1, 3), st.integers(2, 4), st.integers(0, 4), st.integers(1, 2))
def test_full_service_count_formula(n_trains, n_stations, d_max, resolution):
    inst, routing = line_instance(n_trains, n_stations, d_max, resolution=resolution)
    assert index_variables(inst, routing).num_x == n_trains * n_stations * (d_max * resolution + 1)


@settings(max_examples=20)
@given(seeds)
def test_decoded_ground_state_is_feasible_when_any_state_is(seed):
    from railqubo.solvers import brute_force_onehot

    inst, routing = micro(seed, max_states=20_000)
    model = assemble(inst, routing)
    d = decode(model, brute_force_onehot(model).first.bits)
    lin_feasible = compare_oracles(inst, routing)["linear"] is not None
    assert d.schedule.feasible == lin_feasible
