import itertools

import numpy as np
import pytest

from builders import line_instance
from railqubo.qubo import QuboModel, assemble, bounded_constants, decode
from railqubo.solvers import (
    AnnealParams,
    BetaSchedule,
    Sample,
    SampleSet,
    SolverError,
    anneal_chain,
    batch_energy,
    brute_force_full,
    brute_force_onehot,
    energy,
    flip_delta,
    simulated_annealing,
)


def sum_only(k=3, p=1.0):
    """A single one-hot group of k bits, nothing else."""
    quad = {(i, j): 2 * p for i, j in itertools.combinations(range(k), 2)}
    return QuboModel.from_terms(k, {i: -p for i in range(k)}, quad, groups={("g", "s"): list(range(k))})


def test_onehot_brute_force_on_demo(qubo_default):
    ss = brute_force_onehot(qubo_default)
    assert ss.info["states"] == 11 ** 5
    d = decode(qubo_default, ss.first.bits)
    assert d.schedule.objective == 0.5
    assert ss.first.energy == pytest.approx(0.5 + qubo_default.floor, abs=1e-9)


def test_rerouted_ground_states_share_the_objective(qubo_rerouted):
    lows = brute_force_onehot(qubo_rerouted).lowest()
    assert len(lows) == 10
    times = set()
    for s in lows:
        d = decode(qubo_rerouted, s.bits)
        assert d.schedule.objective == 0.3 and d.schedule.feasible
        times.add(tuple(sorted(d.schedule.departure.items())))
    assert len(times) == 10


def test_onehot_cap():
    inst, routing = line_instance(n_trains=3, n_stations=3, d_max=4)
    with pytest.raises(SolverError, match="cap"):
        brute_force_onehot(assemble(inst, routing), cap=100)


def test_sum_penalty_has_k_fold_ground_state():
    ss = brute_force_full(sum_only(3))
    lows = ss.lowest()
    assert [s.bits for s in lows] == [(0, 0, 1), (0, 1, 0), (1, 0, 0)]
    assert all(s.energy == -1.0 for s in lows)


def test_all_zero_model():
    m = QuboModel.from_terms(3, {}, {})
    ss = brute_force_full(m)
    assert len(ss.lowest()) == 8
    assert ss.first.bits == (0, 0, 0)


def test_empty_model():
    m = QuboModel.from_terms(0, {}, {})
    assert brute_force_full(m).first.energy == 0.0
    assert simulated_annealing(m, AnnealParams(sweeps=5, restarts=2)).first.bits == ()


def test_full_enumeration_limit():
    with pytest.raises(SolverError):
        brute_force_full(QuboModel.from_terms(30, {}, {}))


def test_full_and_onehot_agree_on_tiny_instance():
    inst, routing = line_instance(n_trains=1, n_stations=2, d_max=2)
    model = assemble(inst, routing)
    assert model.n <= 24
    assert brute_force_full(model).first.energy == pytest.approx(brute_force_onehot(model).first.energy)


def test_bit_order_of_full_enumeration():
    m = QuboModel.from_terms(3, {0: -1.0, 1: 1.0, 2: 1.0}, {})
    assert brute_force_full(m).first.bits == (1, 0, 0)


def test_energy_length_mismatch(qubo_default):
    with pytest.raises(ValueError):
        energy(qubo_default, [0, 1])


def test_batch_energy_matches_scalar(qubo_default):
    rng = np.random.default_rng(1)
    B = rng.integers(0, 2, size=(50, qubo_default.n))
    ref = [energy(qubo_default, row) for row in B]
    assert np.allclose(batch_energy(qubo_default, B), ref)


def test_flip_delta(qubo_rerouted):
    rng = np.random.default_rng(2)
    bits = rng.integers(0, 2, size=qubo_rerouted.n)
    for i in rng.choice(qubo_rerouted.n, size=30, replace=False):
        flipped = bits.copy()
        flipped[i] ^= 1
        assert flip_delta(qubo_rerouted, bits, i) == pytest.approx(
            energy(qubo_rerouted, flipped) - energy(qubo_rerouted, bits))


def test_sample_set_ordering():
    ss = SampleSet([Sample((1, 0), 0.0), Sample((0, 1), 0.0), Sample((1, 1), -1.0)])
    assert [s.bits for s in ss] == [(1, 1), (0, 1), (1, 0)]
    agg = SampleSet.aggregate([((0,), 1.0), ((0,), 1.0), ((1,), 0.5)])
    assert [(s.bits, s.multiplicity) for s in agg] == [((1,), 1), ((0,), 2)]
    with pytest.raises(SolverError):
        SampleSet([]).first


def test_beta_schedule():
    b = BetaSchedule(1.0, 4.0).betas(3)
    assert np.allclose(b, [1, 2, 4])
    assert np.allclose(BetaSchedule(1.0, 3.0, "linear").betas(3), [1, 2, 3])
    with pytest.raises(ValueError):
        BetaSchedule(2.0, 1.0)
    with pytest.raises(ValueError):
        AnnealParams(sweeps=0)


def test_annealing_is_deterministic_per_seed(demo, rerouted_routing):
    model = assemble(demo, rerouted_routing, bounded_constants(demo, 0.5))
    params = AnnealParams(sweeps=300, restarts=4, seed=7)
    a, b = simulated_annealing(model, params), simulated_annealing(model, params)
    assert a.info["chain_energies"] == b.info["chain_energies"]
    assert [s.bits for s in a] == [s.bits for s in b]


def test_reported_energy_is_recomputed(qubo_rerouted):
    ss = simulated_annealing(qubo_rerouted, AnnealParams(sweeps=50, restarts=3))
    for s in ss:
        assert s.energy == pytest.approx(energy(qubo_rerouted, s.bits), abs=1e-9)
    assert sum(s.multiplicity for s in ss) == 3


def test_cold_chain_never_climbs(qubo_rerouted):
    """At huge beta only downhill or flat flips are accepted."""
    start = np.zeros(qubo_rerouted.n, dtype=np.int8)
    _, best, trace = anneal_chain(qubo_rerouted, np.full(30, 1e9), np.random.default_rng(0), start)
    assert np.all(np.diff(trace) <= 1e-9)
    assert best <= energy(qubo_rerouted, start)


def test_annealing_finds_the_rerouted_optimum(demo, rerouted_routing):
    model = assemble(demo, rerouted_routing, bounded_constants(demo, 0.5))
    ss = simulated_annealing(model, AnnealParams(seed=3))
    d = decode(model, ss.first.bits)
    assert d.schedule.feasible and d.schedule.objective == 0.3
