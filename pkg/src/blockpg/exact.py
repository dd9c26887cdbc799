"""Exact-inference oracles for finite tabular HMMs.

Everything here enumerates: the joint smoothing distribution as a vector over
the K^T trajectories, exact block conditionals, exact sampling from them
(the ideal Gibbs kernel, via forward filtering / backward sampling inside the
block), and dense transition matrices of complete sweeps.  These are the
brute-force references the samplers and rate bounds are validated against.

Trajectory enumeration order is mixed-radix little-endian with x_1 the
fastest digit: index(x) = sum_t x_t K^(t-1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from . import pg as _pg
from .blocking import BlockCover, validate_cover
from .errors import CapacityError, CoverError, ModelError
from .hmm import LogTables, ObservationRecord, TabularHmm, validate_trajectory
from .rng import Stream, categorical_index

DEFAULT_STATE_CAP = 4096
TABLE_MODE_BITS = 20.0


def traj_index(x, k: int) -> int:
    """Canonical index of a trajectory (x_1 fastest digit)."""
    idx = 0
    for t in range(len(x) - 1, -1, -1):
        idx = idx * k + int(x[t])
    return idx


def index_traj(idx: int, k: int, T: int) -> np.ndarray:
    x = np.empty(T, dtype=np.int64)
    for t in range(T):
        x[t] = idx % k
        idx //= k
    return x


def jsd_vector(
    model: TabularHmm,
    obs: ObservationRecord,
    tables: Optional[LogTables] = None,
    cap_states: int = 4 * DEFAULT_STATE_CAP,
) -> np.ndarray:
    """The joint smoothing distribution as probabilities over all K^T trajectories."""
    if tables is None:
        tables = LogTables(model, obs)
    k, T = tables.num_states, tables.T
    n = k**T
    if n > cap_states:
        raise CapacityError(f"K^T = {n} too large to enumerate (cap {cap_states})")
    logw = np.empty(n)
    for idx in range(n):
        x = index_traj(idx, k, T)
        lw = tables.logmu[x[0]] + tables.logg[0, x[0]]
        for t in range(1, T):
            lw += tables.logp[x[t - 1], x[t]] + tables.logg[t, x[t]]
        logw[idx] = lw
    m = logw.max()
    if m == -np.inf:
        raise ModelError("the joint smoothing distribution has no support")
    w = np.exp(logw - m)
    return w / w.sum()


def site_marginals(phi: np.ndarray, k: int, T: int) -> np.ndarray:
    """Per-site state marginals (T, K) of a trajectory distribution vector."""
    grid = phi.reshape((k,) * T, order="F")
    out = np.empty((T, k))
    for t in range(T):
        axes = tuple(i for i in range(T) if i != t)
        out[t] = grid.sum(axis=axes)
    return out


# ---------------------------------------------------------------------------
# Block conditionals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockConditional:
    """Exact conditional of the block's states given its boundary values.

    `table[i]` is the probability of the block configuration with canonical
    index i (little-endian within the block).  Depends on the surrounding
    trajectory only through the boundary states.
    """

    block: Tuple[int, int]
    table: np.ndarray
    left: Optional[int]
    right: Optional[int]
    num_states: int

    def config_prob(self, config) -> float:
        return float(self.table[traj_index(config, self.num_states)])


def _conditional_logtable(tables: LogTables, block, left, right) -> np.ndarray:
    s, u = block
    k = tables.num_states
    width = u - s + 1
    n = k**width
    out = np.empty(n)
    for idx in range(n):
        c = index_traj(idx, k, width)
        lw = tables.logmu[c[0]] if left is None else tables.logp[left, c[0]]
        lw += tables.logg[s - 1, c[0]]
        for j in range(1, width):
            lw += tables.logp[c[j - 1], c[j]] + tables.logg[s - 1 + j, c[j]]
        if right is not None:
            lw += tables.logp[c[width - 1], right]
        out[idx] = lw
    return out


def conditional_table(tables: LogTables, block, left, right) -> np.ndarray:
    """Normalized block-conditional table for given boundary states."""
    lw = _conditional_logtable(tables, block, left, right)
    m = lw.max()
    if m == -np.inf:
        raise ModelError(f"block conditional on {block} has empty support")
    w = np.exp(lw - m)
    return w / w.sum()


def _check_block(block, T):
    s, u = block
    if not (1 <= s <= u <= T):
        raise CoverError(f"block [{s},{u}] is not inside 1:{T}")
    return int(s), int(u)


def _boundaries_from(x, block, T):
    s, u = block
    left = int(x[s - 2]) if s > 1 else None
    right = int(x[u]) if u < T else None
    return left, right


def block_conditional(
    model: TabularHmm,
    obs: ObservationRecord,
    x,
    block,
    tables: Optional[LogTables] = None,
) -> BlockConditional:
    """Tabulate the conditional of x_J given the boundary values found in x."""
    if tables is None:
        tables = LogTables(model, obs)
    x = validate_trajectory(model, obs, x)
    s, u = _check_block(block, obs.T)
    width = u - s + 1
    if width * math.log2(model.num_states) > TABLE_MODE_BITS:
        raise CapacityError(
            f"table over K^|J| = {model.num_states}^{width} exceeds the table-mode cap; "
            "use sample_block_conditional (in-block forward filter / backward sampler)"
        )
    left, right = _boundaries_from(x, (s, u), obs.T)
    table = conditional_table(tables, (s, u), left, right)
    return BlockConditional(
        block=(s, u), table=table, left=left, right=right, num_states=model.num_states
    )


def sample_block_conditional(
    model: TabularHmm,
    obs: ObservationRecord,
    x,
    block,
    stream: Stream,
    tables: Optional[LogTables] = None,
) -> np.ndarray:
    """Draw the block configuration from its exact conditional (ideal kernel).

    Forward filter inside the block with the right boundary folded into the
    final filter weight as an extra observation, then backward sampling; cost
    O(|J| K^2), so it scales past table mode.
    """
    if tables is None:
        tables = LogTables(model, obs)
    s, u = _check_block(block, obs.T)
    left, right = _boundaries_from(x, (s, u), obs.T)
    k = tables.num_states
    width = u - s + 1

    filt = np.empty((width, k))
    a = (tables.logmu if left is None else tables.logp[left]) + tables.logg[s - 1]
    filt[0] = a
    for j in range(1, width):
        m = a.max()
        if m == -np.inf:
            raise ModelError(f"block conditional filter vanished at time {s + j - 1}")
        a = m + np.log(np.exp(a - m) @ tables.model.transition) + tables.logg[s - 1 + j]
        filt[j] = a
    if right is not None:
        filt[width - 1] = filt[width - 1] + tables.logp[:, right]

    out = np.empty(width, dtype=np.int64)
    lw = filt[width - 1]
    m = lw.max()
    if m == -np.inf:
        raise ModelError("block conditional has empty support at the final time")
    w = np.exp(lw - m)
    out[width - 1] = categorical_index(w, float(w.sum()), stream.uniform())
    for j in range(width - 2, -1, -1):
        lw = filt[j] + tables.logp[:, out[j + 1]]
        m = lw.max()
        w = np.exp(lw - m)
        out[j] = categorical_index(w, float(w.sum()), stream.uniform())
    return out


# ---------------------------------------------------------------------------
# Exact sweep operators
# ---------------------------------------------------------------------------


@dataclass
class SweepOperator:
    """Dense transition matrix of one complete sweep on the K^T trajectory space."""

    matrix: np.ndarray
    target: np.ndarray
    num_states: int
    T: int
    description: str

    def to_csv(self, path) -> None:
        """Row-major dump, one row per source trajectory index."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("from_index," + ",".join(f"to_{j}" for j in range(self.matrix.shape[1])) + "\n")
            for i, row in enumerate(self.matrix):
                fh.write(f"{i}," + ",".join(repr(float(v)) for v in row) + "\n")


def block_operator(
    model: TabularHmm,
    obs: ObservationRecord,
    block,
    kernel=("ideal",),
    tables: Optional[LogTables] = None,
    cap_states: int = DEFAULT_STATE_CAP,
    enum_cap: int = 10**7,
) -> np.ndarray:
    """Exact K^T x K^T matrix of the kernel updating one block.

    kernel = ("ideal",) tabulates the block conditionals; ("pg", N)
    marginalizes Algorithm-style conditional SMC over all of its randomness
    (bootstrap proposal), which is feasible only for tiny K, |J|, N.
    """
    if tables is None:
        tables = LogTables(model, obs)
    k, T = tables.num_states, tables.T
    n = k**T
    if n > cap_states:
        raise CapacityError(f"K^T = {n} exceeds cap_states = {cap_states}")
    s, u = _check_block(block, T)
    width = u - s + 1
    scale = k ** (s - 1)

    law_memo: Dict[Tuple, np.ndarray] = {}
    mat = np.zeros((n, n))
    for idx in range(n):
        x = index_traj(idx, k, T)
        left, right = _boundaries_from(x, (s, u), T)
        if kernel[0] == "ideal":
            memo_key = (left, right)
            if memo_key not in law_memo:
                law_memo[memo_key] = conditional_table(tables, (s, u), left, right)
            law = law_memo[memo_key]
        elif kernel[0] == "pg":
            ref = tuple(int(v) for v in x[s - 1 : u])
            memo_key = (ref, left, right)
            if memo_key not in law_memo:
                law_dict = _pg.enumerate_block_kernel(
                    tables, (s, u), kernel[1], ref, left, right, enum_cap=enum_cap
                )
                dense = np.zeros(k**width)
                for config, prob in law_dict.items():
                    dense[traj_index(config, k)] = prob
                law_memo[memo_key] = dense
            law = law_memo[memo_key]
        else:
            raise ValueError(f"unknown kernel {kernel!r}")

        code_old = traj_index(x[s - 1 : u], k)
        base = idx - code_old * scale
        for code_new, prob in enumerate(law):
            if prob:
                mat[idx, base + code_new * scale] += prob
    return mat


def sweep_operator(
    model: TabularHmm,
    obs: ObservationRecord,
    cover: BlockCover,
    schedule: str = "lr",
    kernel=("ideal",),
    tables: Optional[LogTables] = None,
    cap_states: int = DEFAULT_STATE_CAP,
    enum_cap: int = 10**7,
) -> SweepOperator:
    """Exact transition matrix of one complete sweep (LR or PAR order)."""
    problems = validate_cover(cover)
    if problems:
        raise CoverError("cover invalid: " + "; ".join(problems))
    if tables is None:
        tables = LogTables(model, obs)
    if schedule == "lr":
        order = list(range(1, cover.m + 1))
    elif schedule == "par":
        order = list(range(1, cover.m + 1, 2)) + list(range(2, cover.m + 1, 2))
    else:
        raise ValueError(f"unknown schedule {schedule!r} (expected 'lr' or 'par')")

    mat = None
    for kk in order:
        bm = block_operator(
            model, obs, cover.block(kk), kernel, tables=tables,
            cap_states=cap_states, enum_cap=enum_cap,
        )
        mat = bm if mat is None else mat @ bm
    target = jsd_vector(model, obs, tables=tables)
    desc = f"{schedule}:{cover.canonical()}:{'/'.join(str(v) for v in kernel)}"
    return SweepOperator(matrix=mat, target=target, num_states=tables.num_states,
                         T=tables.T, description=desc)


def tv_to_target(op: SweepOperator, init: np.ndarray, k: int) -> float:
    """Total variation distance (sup over events, i.e. half L1) between
    init advanced k sweeps and the joint smoothing distribution."""
    dist = np.asarray(init, dtype=np.float64)
    if dist.shape != (op.matrix.shape[0],):
        raise ModelError("initial distribution dimension mismatch")
    for _ in range(k):
        dist = dist @ op.matrix
    return 0.5 * float(np.abs(dist - op.target).sum())
