"""Ground-state search for QUBO models: exhaustive oracles and simulated annealing."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numba
import numpy as np

from .qubo import QuboModel, VarIndex

DEFAULT_ONEHOT_CAP = 10**7
FULL_ENUMERATION_LIMIT = 24
ENERGY_TOL = 1e-9


class SolverError(Exception):
    pass


@dataclass(frozen=True)
class BetaSchedule:
    beta_min: float = 3.0
    beta_max: float = 8.0
    shape: str = "geometric"

    def __post_init__(self):
        if not 0 < self.beta_min < self.beta_max:
            raise ValueError("need 0 < beta_min < beta_max")
        if self.shape not in ("geometric", "linear"):
            raise ValueError(f"unknown beta schedule shape {self.shape!r}")

    def betas(self, sweeps: int) -> np.ndarray:
        if self.shape == "geometric":
            return np.geomspace(self.beta_min, self.beta_max, sweeps)
        return np.linspace(self.beta_min, self.beta_max, sweeps)


@dataclass(frozen=True)
class AnnealParams:
    sweeps: int = 2000
    restarts: int = 10
    beta_schedule: BetaSchedule = field(default_factory=BetaSchedule)
    seed: int = 0

    def __post_init__(self):
        if self.sweeps < 1 or self.restarts < 1:
            raise ValueError("sweeps and restarts must be at least 1")


@dataclass(frozen=True)
class Sample:
    bits: tuple
    energy: float
    multiplicity: int = 1

    @property
    def bitstring(self) -> str:
        return "".join(str(b) for b in self.bits)


def _order(sample: Sample):
    return (round(sample.energy, 9), sample.bits)


@dataclass
class SampleSet:
    """Records sorted by energy, ties broken by the bit vector."""

    records: list[Sample]
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.records = sorted(self.records, key=_order)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def first(self) -> Sample:
        if not self.records:
            raise SolverError("empty sample set")
        return self.records[0]

    def lowest(self, tol: float = ENERGY_TOL) -> list[Sample]:
        if not self.records:
            return []
        e0 = self.records[0].energy
        return [r for r in self.records if r.energy <= e0 + tol]

    @classmethod
    def aggregate(cls, samples: Iterable[tuple[tuple, float]], info: Optional[dict] = None) -> "SampleSet":
        counts: dict[tuple, list] = {}
        for bits, e in samples:
            if bits in counts:
                counts[bits][1] += 1
            else:
                counts[bits] = [e, 1]
        return cls([Sample(b, e, m) for b, (e, m) in counts.items()], dict(info or {}))


# --------------------------------------------------------------------------
# Energy
# --------------------------------------------------------------------------


def energy(model: QuboModel, bits: Sequence[int]) -> float:
    if len(bits) != model.n:
        raise ValueError(f"expected {model.n} bits, got {len(bits)}")
    e = model.offset
    e += sum(c for i, c in model.linear.items() if bits[i])
    e += sum(c for (i, j), c in model.quadratic.items() if bits[i] and bits[j])
    return float(e)


def dense(model: QuboModel) -> tuple[np.ndarray, np.ndarray]:
    """Linear vector and upper-triangular coupling matrix."""
    lin = np.zeros(model.n)
    Q = np.zeros((model.n, model.n))
    for i, c in model.linear.items():
        lin[i] = c
    for (i, j), c in model.quadratic.items():
        Q[i, j] = c
    return lin, Q


def batch_energy(model: QuboModel, B: np.ndarray, lin=None, Q=None) -> np.ndarray:
    if lin is None:
        lin, Q = dense(model)
    return model.offset + B @ lin + np.einsum("ni,ni->n", B @ Q, B)


def flip_delta(model: QuboModel, bits: Sequence[int], i: int) -> float:
    """Energy change of flipping bit ``i``."""
    field_ = model.linear.get(i, 0.0)
    for (a, b), c in model.quadratic.items():
        if a == i and bits[b]:
            field_ += c
        elif b == i and bits[a]:
            field_ += c
    return field_ if not bits[i] else -field_


# --------------------------------------------------------------------------
# Exhaustive search
# --------------------------------------------------------------------------


def _ground(model, blocks, lin, Q, limit):
    """Stream bit matrices; keep every state within tolerance of the running minimum."""
    best = math.inf
    kept: list[tuple[tuple, float]] = []
    visited = 0
    for B in blocks:
        visited += len(B)
        E = batch_energy(model, B, lin, Q)
        m = float(E.min())
        if m < best - ENERGY_TOL:
            best = m
            kept = [(k, e) for k, e in kept if e <= best + ENERGY_TOL]
        sel = np.nonzero(E <= best + ENERGY_TOL)[0]
        for r in sel[:limit]:
            kept.append((tuple(int(v) for v in B[r]), float(E[r])))
        kept = [(k, e) for k, e in kept if e <= best + ENERGY_TOL][:limit]
    return kept, visited


def brute_force_onehot(model: QuboModel, index: Optional[VarIndex] = None, cap: int = DEFAULT_ONEHOT_CAP,
                       max_records: int = 10_000) -> SampleSet:
    """All one-hot group assignments, auxiliaries forced to the products they replace."""
    index = index or model.index
    groups = list(index.groups.values())
    sizes = [len(g) for g in groups]
    total = math.prod(sizes)
    if total > cap:
        raise SolverError(f"{total} one-hot states exceed the cap of {cap}; use annealing instead")
    lin, Q = dense(model)
    aux = list(index.aux.items())
    n = model.n
    chunk = max(1, min(total, 4_000_000 // max(n, 1)))
    members = [np.asarray(g) for g in groups]

    def blocks():
        for start in range(0, total, chunk):
            flat = np.arange(start, min(start + chunk, total))
            B = np.zeros((len(flat), n))
            if sizes:
                choice = np.unravel_index(flat, sizes)
                rows = np.arange(len(flat))
                for g, idx in enumerate(members):
                    B[rows, idx[choice[g]]] = 1.0
            for (i1, i2), z in aux:
                B[:, z] = B[:, i1] * B[:, i2]
            yield B

    kept, visited = _ground(model, blocks(), lin, Q, max_records)
    return SampleSet([Sample(b, e) for b, e in kept], {"solver": "brute-force-onehot", "states": visited})


def brute_force_full(model: QuboModel, max_records: int = 10_000) -> SampleSet:
    """All 2^n bit vectors; bit 0 is the most significant."""
    n = model.n
    if n > FULL_ENUMERATION_LIMIT:
        raise SolverError(f"full enumeration needs n <= {FULL_ENUMERATION_LIMIT}, got {n}")
    lin, Q = dense(model)
    total = 1 << n
    chunk = min(total, 1 << 16)
    shifts = np.arange(n - 1, -1, -1)

    def blocks():
        for start in range(0, total, chunk):
            s = np.arange(start, min(start + chunk, total))
            yield ((s[:, None] >> shifts) & 1).astype(float)

    kept, visited = _ground(model, blocks(), lin, Q, max_records)
    return SampleSet([Sample(b, e) for b, e in kept], {"solver": "brute-force-full", "states": visited})


# --------------------------------------------------------------------------
# Simulated annealing
# --------------------------------------------------------------------------


def adjacency(model: QuboModel) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Linear vector plus a symmetric CSR view of the couplings."""
    n = model.n
    lin = np.zeros(n)
    for i, c in model.linear.items():
        lin[i] = c
    nbrs: list[list] = [[] for _ in range(n)]
    for (i, j), c in sorted(model.quadratic.items()):
        nbrs[i].append((j, c))
        nbrs[j].append((i, c))
    ptr = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        ptr[i + 1] = ptr[i] + len(nbrs[i])
    idx = np.array([j for row in nbrs for j, _ in row], dtype=np.int64)
    val = np.array([c for row in nbrs for _, c in row], dtype=np.float64)
    return lin, ptr, idx, val


@numba.njit(cache=True, nogil=True)
def _sweeps(state, e, lin, ptr, idx, val, betas, rand, best_state, best_e, trace):
    n = state.size
    local = lin.copy()
    for i in range(n):
        if state[i]:
            for k in range(ptr[i], ptr[i + 1]):
                local[idx[k]] += val[k]
    for s in range(betas.size):
        beta = betas[s]
        for i in range(n):
            delta = local[i] if state[i] == 0 else -local[i]
            if delta <= 0.0 or rand[s, i] < math.exp(-beta * delta):
                state[i] = 1 - state[i]
                sign = 1.0 if state[i] else -1.0
                for k in range(ptr[i], ptr[i + 1]):
                    local[idx[k]] += sign * val[k]
                e += delta
                if e < best_e - 1e-12:
                    best_e = e
                    best_state[:] = state
        trace[s] = e
    return e, best_e


def anneal_chain(model: QuboModel, betas: np.ndarray, rng: np.random.Generator,
                 initial: Optional[Sequence[int]] = None, csr=None, block: int = 256):
    """One Metropolis chain. Returns (best bits, best energy, per-sweep energy trace)."""
    lin, ptr, idx, val = csr if csr is not None else adjacency(model)
    n = model.n
    if initial is None:
        state = rng.integers(0, 2, size=n).astype(np.int8)
    else:
        state = np.array(initial, dtype=np.int8)
    e = energy(model, state)
    best_state, best_e = state.copy(), e
    trace = np.zeros(len(betas))
    for start in range(0, len(betas), block):
        part = betas[start:start + block]
        rand = rng.random((len(part), n))
        e, best_e = _sweeps(state, e, lin, ptr, idx, val, part, rand, best_state, best_e,
                            trace[start:start + block])
    bits = tuple(int(b) for b in best_state)
    return bits, energy(model, bits), trace


def simulated_annealing(model: QuboModel, params: AnnealParams = AnnealParams(),
                        initial: Optional[Sequence[int]] = None) -> SampleSet:
    """Independent single-flip Metropolis chains; best state of each chain is reported."""
    betas = params.beta_schedule.betas(params.sweeps)
    csr = adjacency(model)
    seeds = np.random.SeedSequence(params.seed).spawn(params.restarts)

    def run(ss):
        bits, e, _ = anneal_chain(model, betas, np.random.default_rng(ss), initial, csr)
        return bits, e

    with ThreadPoolExecutor(max_workers=min(len(seeds), os.cpu_count() or 1)) as pool:
        results = list(pool.map(run, seeds))
    return SampleSet.aggregate(results, {"solver": "simulated-annealing", "restarts": params.restarts,
                                         "sweeps": params.sweeps, "seed": params.seed,
                                         "chain_energies": [e for _, e in results]})
