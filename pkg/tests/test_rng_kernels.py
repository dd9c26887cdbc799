"""Stream contracts and compiled/pure kernel parity.

The compiled extension and its pure-Python twin must agree bit for bit:
same uniforms, same draws, same outputs, same failure modes.  Everything
downstream (thread determinism, trace reproducibility) leans on this.
"""

import numpy as np
import pytest

from blockpg import ObservationRecord, TableEmission, TabularHmm, WeightCollapseError
from blockpg import _kernels_py
from blockpg import kernels
from blockpg.hmm import GaussianEmission, LogTables
from blockpg.rng import Stream, categorical_index, derive_key, mix64, stream_u64

from conftest import random_obs, random_tabular


def test_stream_probe_matches_reference():
    for seed in (0, 1, 42, 2**63, 2**64 - 1):
        key = derive_key(seed, 7, 9)
        stream = Stream(key)
        expected = [stream.uniform() for _ in range(16)]
        assert kernels.stream_probe(key, 16) == expected
        assert _kernels_py.stream_probe(key, 16) == expected


def test_mix64_parity_on_edge_values():
    for z in (0, 1, 0xDEADBEEF, 2**64 - 1, 2**63, 12345678901234567890):
        assert kernels.mix64(z) == mix64(z) == _kernels_py.mix64(z)


def test_uniforms_in_unit_interval():
    stream = Stream(derive_key(3))
    us = [stream.uniform() for _ in range(1000)]
    assert all(0.0 <= u < 1.0 for u in us)
    assert abs(np.mean(us) - 0.5) < 0.05


def test_derive_key_path_sensitivity():
    keys = {derive_key(1), derive_key(1, 0), derive_key(1, 0, 0), derive_key(0, 1),
            derive_key(1, 1), derive_key(2)}
    assert len(keys) == 6


def test_stream_u64_is_counter_addressable():
    key = derive_key(9)
    stream = Stream(key)
    raw = [stream.next_u64() for _ in range(5)]
    assert raw == [stream_u64(key, i) for i in range(1, 6)]


def test_categorical_ties_break_low():
    # Cumulative hits the target exactly at index 0 for u = 0.5.
    assert categorical_index([1.0, 1.0], 2.0, 0.5) == 0
    assert categorical_index([1.0, 1.0], 2.0, 0.5000001) == 1
    assert categorical_index([0.0, 1.0, 1.0], 2.0, 0.2) == 1
    assert categorical_index([1.0, 0.0], 1.0, 0.9999) == 0


def _tables(model, obs):
    return LogTables(model, obs)


@pytest.mark.parametrize("emission_kind", ["table", "gaussian"])
def test_block_step_parity_compiled_vs_pure(emission_kind):
    rng = np.random.default_rng(5)
    if emission_kind == "table":
        model = random_tabular(rng, 3)
        obs = random_obs(rng, 9, 3)
    else:
        model = TabularHmm(
            rng.dirichlet(np.ones(3)),
            rng.dirichlet(np.full(3, 2.0), size=3),
            GaussianEmission(means=[-1.0, 0.0, 1.5], sds=[0.7, 1.0, 0.5]),
        )
        obs = ObservationRecord(rng.normal(size=9))
    tables = _tables(model, obs)
    T = obs.T

    for block in [(1, 3), (3, 7), (7, 9), (4, 4), (1, 9), (9, 9)]:
        s, u = block
        width = u - s + 1
        ref = np.ascontiguousarray(rng.integers(0, 3, size=T).astype(np.int64))
        left = int(ref[s - 2]) if s > 1 else -1
        right = int(ref[u]) if u < T else -1
        for n in (2, 3, 6):
            for trial in range(10):
                key = derive_key(trial, n, s)
                args = (tables.logp, tables.cump, tables.rowtot, tables.cummu,
                        tables.mutot, tables.logg[s - 1 : u],
                        np.ascontiguousarray(ref[s - 1 : u]),
                        s > 1, left, u < T, right, n, key)
                out_fast = np.empty(width, dtype=np.int64)
                kernels.pg_block_step(*args, out_fast)
                out_pure = np.empty(width, dtype=np.int64)
                _kernels_py.pg_block_step(*args, out_pure)
                assert np.array_equal(out_fast, out_pure), (block, n, trial)


def test_block_step_weight_collapse_parity():
    # Emission column y=1 is zero in every state: weights vanish at time 2.
    model = TabularHmm([0.5, 0.5], [[0.5, 0.5], [0.5, 0.5]],
                       TableEmission([[1.0, 0.0], [1.0, 0.0]]))
    obs = ObservationRecord([0, 1, 0])
    tables = _tables(model, obs)
    ref = np.zeros(3, dtype=np.int64)
    args = (tables.logp, tables.cump, tables.rowtot, tables.cummu, tables.mutot,
            tables.logg[0:3], ref, False, -1, False, -1, 3, derive_key(1))
    for impl in (kernels.pg_block_step, _kernels_py.pg_block_step):
        out = np.empty(3, dtype=np.int64)
        with pytest.raises(WeightCollapseError) as err:
            impl(*args, out)
        assert err.value.time_index == 1


def test_recorded_twin_matches_fast_path():
    rng = np.random.default_rng(8)
    model = random_tabular(rng, 2)
    obs = random_obs(rng, 6, 2)
    tables = _tables(model, obs)
    ref = np.ascontiguousarray(rng.integers(0, 2, size=6).astype(np.int64))
    block = (2, 5)
    s, u = block
    args = (tables.logp, tables.cump, tables.rowtot, tables.cummu, tables.mutot,
            tables.logg[s - 1 : u], np.ascontiguousarray(ref[s - 1 : u]),
            True, int(ref[s - 2]), True, int(ref[u]), 4, derive_key(77))
    out_fast = np.empty(4, dtype=np.int64)
    kernels.pg_block_step(*args, out_fast)

    record = {}
    out_rec = np.empty(4, dtype=np.int64)
    kernels.pg_block_step_recorded(*args, out_rec, record=record)
    assert np.array_equal(out_fast, out_rec)

    particles = np.asarray(record["particles"])
    ancestors = np.asarray(record["ancestors"])
    # Slot N pinned to the reference with self-ancestry, all ancestors valid.
    assert np.array_equal(particles[3], ref[s - 1 : u])
    assert np.all(ancestors[3] == 3)
    assert ancestors.min() >= 0 and ancestors.max() <= 3
    # Bootstrap weights are the emissions (plus the boundary factor at u).
    logw = np.asarray(record["log_weights"])
    for t in range(4):
        for i in range(4):
            expect = tables.logg[s - 1 + t, particles[i, t]]
            if t == 3:
                expect = expect + tables.logp[particles[i, t], ref[u]]
            assert logw[i, t] == expect
