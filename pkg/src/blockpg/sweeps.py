"""Complete sweeps of block kernels: left-to-right, parallel, reversible pair.

A sweep applies one kernel per block, each update replacing only the block's
sites.  The PAR schedule runs all odd-indexed blocks, then all even-indexed
blocks; with a B2-valid cover the blocks within a phase are separated, so
their updates commute and may execute concurrently.  Every block update in
sweep number s on block k draws from the stream keyed (seed, sweep, block),
which makes traces bit-identical for any worker count.

Phase-snapshot semantics: all (reference, boundary) inputs of a phase are
gathered before any of its updates run, so concurrent and sequential
execution agree by construction (boundary sites of a phase's blocks are never
written by that phase under B2 anyway).
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import exact as _exact
from . import pg as _pg
from .blocking import BlockCover, validate_cover
from .errors import CoverError, ModelError
from .hmm import GenericHmm, LogTables, ObservationRecord, TabularHmm
from .rng import (
    DOMAIN_BLOCK,
    DOMAIN_DIRECTION,
    DOMAIN_INIT,
    Stream,
    categorical_index,
    derive_key,
)


@dataclass(frozen=True)
class SweepSchedule:
    """Block visit order: 'lr', 'par' (odd phase then even), or 'reversible'
    (forward or exactly reversed left-to-right order, fair coin per sweep)."""

    kind: str

    def __post_init__(self):
        if self.kind not in ("lr", "par", "reversible"):
            raise ModelError(f"unknown schedule kind {self.kind!r}")

    def phases(self, m: int) -> List[List[int]]:
        if self.kind == "par":
            return [list(range(1, m + 1, 2)), list(range(2, m + 1, 2))]
        return [list(range(1, m + 1))]


@dataclass(frozen=True)
class KernelConfig:
    """Which kernel updates each block: exact conditional or PG(N, proposal)."""

    kind: str
    n_particles: int = 0
    proposal: Optional[_pg.ProposalKernel] = None

    def __post_init__(self):
        if self.kind not in ("ideal", "pg"):
            raise ModelError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "pg" and self.n_particles < 2:
            raise ModelError("PG kernel needs at least 2 particles")

    @classmethod
    def ideal(cls) -> "KernelConfig":
        return cls(kind="ideal")

    @classmethod
    def pg(cls, n_particles: int, proposal=None) -> "KernelConfig":
        return cls(kind="pg", n_particles=n_particles, proposal=proposal)


@dataclass
class ChainState:
    """The Gibbs chain: a complete trajectory plus the sweep counter."""

    x: np.ndarray
    sweep_count: int
    seed: int


def init_chain(model, obs: ObservationRecord, seed: int) -> ChainState:
    """Default initialization: forward simulation from the prior dynamics."""
    stream = Stream(derive_key(seed, DOMAIN_INIT))
    if isinstance(model, GenericHmm):
        xs = [model.sample_initial(stream)]
        for _ in range(obs.T - 1):
            xs.append(model.sample_transition(xs[-1], stream))
        return ChainState(x=np.asarray(xs, dtype=object), sweep_count=0, seed=seed)
    x = np.empty(obs.T, dtype=np.int64)
    mu = model.initial
    x[0] = categorical_index(mu, float(mu.sum()), stream.uniform())
    for t in range(1, obs.T):
        row = model.transition[x[t - 1]]
        x[t] = categorical_index(row, float(row.sum()), stream.uniform())
    return ChainState(x=x, sweep_count=0, seed=seed)


def _update_one(model, obs, tables, x, block, kernel: KernelConfig, key: int):
    if kernel.kind == "ideal":
        if tables is None:
            raise ModelError("the ideal kernel requires a tabular model")
        return _exact.sample_block_conditional(model, obs, x, block, Stream(key), tables=tables)
    return _pg.pg_block_step(
        model, obs, x, block, kernel.n_particles, key,
        proposal=kernel.proposal, tables=tables,
    )


def _run_phase(model, obs, tables, x, cover, phase, kernel, seed, sweep_index,
               executor: Optional[ThreadPoolExecutor], threads: int):
    """Update the blocks of one phase; inputs snapshot, disjoint writes."""
    jobs = []
    for k in phase:
        block = cover.block(k)
        key = derive_key(seed, DOMAIN_BLOCK, sweep_index, k)
        s, u = block
        lo = max(1, s - 1)
        hi = min(cover.T, u + 1)
        snapshot = x[lo - 1 : hi].copy()
        jobs.append((k, block, key, lo, snapshot))

    def run_job(job):
        k, block, key, lo, snapshot = job
        s, u = block
        # Rebase the block onto the snapshot's local coordinates.
        local_obs_slice = (s, u)
        view = _SnapshotView(snapshot, lo)
        config = _update_one(model, obs, tables, view, local_obs_slice, kernel, key)
        return k, block, config

    if executor is None or len(jobs) == 1:
        results = [run_job(j) for j in jobs]
    else:
        chunk = max(1, (len(jobs) + threads - 1) // threads)
        chunks = [jobs[i : i + chunk] for i in range(0, len(jobs), chunk)]
        futures = [executor.submit(lambda js: [run_job(j) for j in js], c) for c in chunks]
        results = [r for f in futures for r in f.result()]

    for _, (s, u), config in results:
        x[s - 1 : u] = config
    return x


class _SnapshotView:
    """Offset view letting block updates index a phase snapshot with global sites."""

    __slots__ = ("data", "lo")

    def __init__(self, data, lo):
        self.data = data
        self.lo = lo

    def __getitem__(self, item):
        if isinstance(item, slice):
            start = item.start - (self.lo - 1) if item.start is not None else None
            stop = item.stop - (self.lo - 1) if item.stop is not None else None
            return self.data[start:stop:item.step]
        return self.data[item - (self.lo - 1)]


def sweep(
    chain: ChainState,
    model,
    obs: ObservationRecord,
    cover: BlockCover,
    schedule: SweepSchedule,
    kernel: KernelConfig,
    tables: Optional[LogTables] = None,
    executor: Optional[ThreadPoolExecutor] = None,
    threads: int = 1,
    timings: Optional[Dict[str, float]] = None,
) -> ChainState:
    """One complete sweep; returns the advanced chain (input is not mutated)."""
    x = chain.x.copy()
    seed, si = chain.seed, chain.sweep_count

    if schedule.kind == "par":
        phases = schedule.phases(cover.m)
        for name, phase in zip(("odd", "even"), phases):
            t0 = time.perf_counter()
            if phase:
                _run_phase(model, obs, tables, x, cover, phase, kernel, seed, si,
                           executor, threads)
            if timings is not None:
                timings[f"{name}_phase_seconds"] = (
                    timings.get(f"{name}_phase_seconds", 0.0) + time.perf_counter() - t0
                )
    else:
        order = list(range(1, cover.m + 1))
        if schedule.kind == "reversible":
            direction = Stream(derive_key(seed, DOMAIN_DIRECTION, si)).uniform()
            if direction >= 0.5:
                order.reverse()
        for k in order:
            block = cover.block(k)
            key = derive_key(seed, DOMAIN_BLOCK, si, k)
            config = _update_one(model, obs, tables, x, block, kernel, key)
            s, u = block
            x[s - 1 : u] = config
    return ChainState(x=x, sweep_count=si + 1, seed=seed)


# ---------------------------------------------------------------------------
# Collectors (streaming; fed one post-sweep trajectory at a time)
# ---------------------------------------------------------------------------


class UpdateRateCollector:
    """Fraction of sweeps in which each site's value changed."""

    name = "update_rate"

    def __init__(self, T: int):
        self.changes = np.zeros(T)
        self.count = 0

    def observe(self, sweep_index, x_prev, x_new):
        self.changes += x_new != x_prev
        self.count += 1

    def result(self):
        if self.count == 0:
            return np.zeros_like(self.changes)
        return self.changes / self.count


class SiteMarginalCollector:
    """Post-sweep state frequencies per site (tabular models)."""

    name = "site_marginals"

    def __init__(self, T: int, num_states: int):
        self.counts = np.zeros((T, num_states), dtype=np.int64)
        self.sites = np.arange(T)

    def observe(self, sweep_index, x_prev, x_new):
        self.counts[self.sites, x_new] += 1

    def result(self):
        return self.counts


class AutocorrCollector:
    """Streaming per-site autocorrelation at fixed lags.

    Uses the standard estimator rho_l = sum_{k>l} (z_k - m)(z_{k-l} - m) /
    sum_k (z_k - m)^2 over post-burn-in sweeps; a site whose series is
    constant reports 1.0 (maximally sticky by convention).
    """

    name = "autocorr"

    def __init__(self, T: int, lags: Sequence[int] = (1, 5), burn_in: int = 0):
        self.lags = tuple(lags)
        self.burn_in = burn_in
        self.maxlag = max(self.lags)
        self.T = T
        self.n = 0
        self.s1 = np.zeros(T)
        self.s2 = np.zeros(T)
        self.cross = {lag: np.zeros(T) for lag in self.lags}
        self.head: List[np.ndarray] = []
        self.ring: List[np.ndarray] = []

    def observe(self, sweep_index, x_prev, x_new):
        if sweep_index < self.burn_in:
            return
        z = x_new.astype(np.float64)
        self.n += 1
        self.s1 += z
        self.s2 += z * z
        if len(self.head) < self.maxlag:
            self.head.append(z.copy())
        for lag in self.lags:
            if len(self.ring) >= lag:
                self.cross[lag] += z * self.ring[-lag]
        self.ring.append(z.copy())
        if len(self.ring) > self.maxlag:
            self.ring.pop(0)

    def result(self):
        out = {}
        n = self.n
        if n == 0:
            return {lag: np.full(self.T, np.nan) for lag in self.lags}
        mean = self.s1 / n
        c0 = self.s2 - n * mean * mean
        for lag in self.lags:
            if n <= lag:
                out[lag] = np.full(self.T, np.nan)
                continue
            head = np.sum(self.head[:lag], axis=0)
            tail = np.sum(self.ring[-lag:], axis=0)
            clag = (
                self.cross[lag]
                - mean * (self.s1 - head)
                - mean * (self.s1 - tail)
                + (n - lag) * mean * mean
            )
            rho = np.where(c0 > 0, clag / np.where(c0 > 0, c0, 1.0), 1.0)
            out[lag] = rho
        return out


class TraceCollector:
    """Retains post-sweep trajectories, capped; entries beyond the cap are dropped."""

    name = "trace"

    def __init__(self, max_items: int = 100000):
        self.max_items = max_items
        self.items: List[Tuple[int, np.ndarray]] = []
        self.truncated = False

    def observe(self, sweep_index, x_prev, x_new):
        if len(self.items) < self.max_items:
            self.items.append((sweep_index, x_new.copy()))
        else:
            self.truncated = True

    def result(self):
        return self.items


@dataclass
class ChainTrace:
    """Outcome of run_chain: final state, per-collector results, wall times."""

    final: ChainState
    num_sweeps: int
    stats: Dict[str, object]
    timings: Dict[str, float] = field(default_factory=dict)


def run_chain(
    model,
    obs: ObservationRecord,
    cover: BlockCover,
    schedule: SweepSchedule,
    kernel: KernelConfig,
    init: ChainState,
    num_sweeps: int,
    collectors: Sequence = (),
    threads: int = 1,
    tables: Optional[LogTables] = None,
) -> ChainTrace:
    """Run `num_sweeps` complete sweeps, feeding each post-sweep trajectory
    to the collectors; with zero sweeps the trace holds only the init."""
    problems = validate_cover(cover)
    if problems:
        raise CoverError("cover invalid: " + "; ".join(problems))
    if tables is None and isinstance(model, TabularHmm):
        tables = LogTables(model, obs)

    timings: Dict[str, float] = {}
    executor = None
    try:
        if threads > 1 and schedule.kind == "par":
            executor = ThreadPoolExecutor(max_workers=threads)
        chain = init
        t_start = time.perf_counter()
        for _ in range(num_sweeps):
            prev = chain.x
            chain = sweep(chain, model, obs, cover, schedule, kernel,
                          tables=tables, executor=executor, threads=threads,
                          timings=timings)
            for collector in collectors:
                collector.observe(chain.sweep_count - 1, prev, chain.x)
        timings["sweep_seconds"] = time.perf_counter() - t_start
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    stats = {c.name: c.result() for c in collectors}
    return ChainTrace(final=chain, num_sweeps=num_sweeps, stats=stats, timings=timings)
