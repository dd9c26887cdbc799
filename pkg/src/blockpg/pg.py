"""Conditional-SMC (Particle Gibbs) block kernel and its minorisation bounds.

The kernel targets the conditional law of one block given its boundary
states: a conditional SMC pass with slot N pinned to the reference
trajectory, multinomial ancestor draws, the right boundary folded into the
final weights as an extra observation, and a weighted selection of the output
trajectory.  The bootstrap tabular path runs through `kernels.pg_block_step`
(compiled when available); custom proposals and generic-state models take the
pure paths below.

`enumerate_block_kernel` marginalizes the same algorithm over all of its
randomness on tiny instances — it is the oracle behind the exact invariance
and minorisation acceptance checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from . import kernels
from .errors import CapacityError, CoverError, ModelError, WeightCollapseError
from .hmm import GenericHmm, LogTables, MixingProfile, ObservationRecord, TabularHmm
from .rng import Stream, categorical_index


@dataclass(frozen=True)
class ProposalKernel:
    """Per-step proposal r_t for the conditional SMC pass.

    Bootstrap proposes from the model transition itself, which cancels the
    m/r ratio and leaves the emission as the whole weight; that is the case
    the minorisation analysis covers.  A custom tabular proposal supplies a
    row-stochastic matrix; `final_proposal`, if set, replaces the proposal at
    the block's last time and may peek at the right boundary state (hook
    only; no construction shipped).
    """

    kind: str
    matrix: Optional[np.ndarray] = None
    final_proposal: Optional[Callable[[int, Optional[int]], np.ndarray]] = None

    @classmethod
    def bootstrap(cls) -> "ProposalKernel":
        return cls(kind="bootstrap")

    @classmethod
    def tabular(cls, matrix, final_proposal=None) -> "ProposalKernel":
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ModelError("custom proposal matrix must be square")
        if np.any(matrix < 0):
            raise ModelError("custom proposal probabilities must be nonnegative")
        return cls(kind="custom", matrix=matrix, final_proposal=final_proposal)

    @property
    def is_bootstrap(self) -> bool:
        return self.kind == "bootstrap"


@dataclass(frozen=True)
class MinorisationBound:
    """Prop-style lower bound: Q_N^J >= (1 - epsilon(N, L)) * conditional."""

    c: float
    epsilon: float
    n_particles: int
    block_len: int


@dataclass
class ParticleSystem:
    """Recorded internals of one block update (debugging / trace dumps).

    particles[i, t] is particle i at in-block time t; slot `reference_slot`
    carries the reference trajectory with self-ancestry.  ancestors[i, t-1]
    is A_t^i (0-based slots).
    """

    particles: np.ndarray
    log_weights: np.ndarray
    ancestors: np.ndarray
    reference_slot: int
    selected: int

    def to_csv(self, path) -> None:
        n, width = self.particles.shape
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("slot,time,state,log_weight,ancestor\n")
            for i in range(n):
                for t in range(width):
                    anc = self.ancestors[i, t - 1] if t > 0 else ""
                    fh.write(
                        f"{i},{t + 1},{self.particles[i, t]},"
                        f"{repr(float(self.log_weights[i, t]))},{anc}\n"
                    )


def _check_block(block, T):
    s, u = int(block[0]), int(block[1])
    if not (1 <= s <= u <= T):
        raise CoverError(f"block [{s},{u}] is not inside 1:{T}")
    return s, u


def _boundary_states(reference, s, u, T):
    left = int(reference[s - 2]) if s > 1 else None
    right = int(reference[u]) if u < T else None
    return left, right


def pg_block_step(
    model,
    obs: ObservationRecord,
    reference,
    block,
    n_particles: int,
    key_or_stream,
    proposal: Optional[ProposalKernel] = None,
    tables: Optional[LogTables] = None,
    record: Optional[dict] = None,
):
    """One draw from the PG kernel for a block, given the reference trajectory.

    `reference` must be defined on the block and its boundary; the output is
    the new block configuration (the rest of the trajectory is untouched by
    definition of the block kernel).  `key_or_stream` is a stream key (int)
    or a fresh Stream; the update consumes the whole stream.

    With `record` set to a dict the pure instrumented kernel runs instead and
    fills in the particle system (same output bit for bit).
    """
    if n_particles < 2:
        raise ModelError("PG kernel needs at least 2 particles to be ergodic")
    if proposal is None:
        proposal = ProposalKernel.bootstrap()
    key = key_or_stream.key if isinstance(key_or_stream, Stream) else int(key_or_stream)

    if isinstance(model, GenericHmm):
        if not proposal.is_bootstrap:
            raise ModelError("generic-state models support the bootstrap proposal only")
        return _pg_block_step_generic(model, obs, reference, block, n_particles, Stream(key))

    if not isinstance(model, TabularHmm):
        raise ModelError(f"unsupported model type {type(model).__name__}")
    if tables is None:
        tables = LogTables(model, obs)
    s, u = _check_block(block, obs.T)
    width = u - s + 1
    left, right = _boundary_states(reference, s, u, obs.T)
    ref_block = np.ascontiguousarray(np.asarray(reference[s - 1 : u], dtype=np.int64))
    out = np.empty(width, dtype=np.int64)

    if proposal.is_bootstrap:
        step = kernels.pg_block_step_recorded if record is not None else kernels.pg_block_step
        step(
            tables.logp, tables.cump, tables.rowtot,
            tables.cummu, tables.mutot,
            tables.logg[s - 1 : u],
            ref_block,
            left is not None, -1 if left is None else left,
            right is not None, -1 if right is None else right,
            n_particles, key, out,
            record=record,
        )
        return out
    return _pg_block_step_custom(
        tables, s, u, left, right, ref_block, n_particles, Stream(key), proposal, out
    )


def pg_block_step_recorded(model, obs, reference, block, n_particles, key,
                           proposal=None, tables=None) -> Tuple[np.ndarray, ParticleSystem]:
    """As pg_block_step, additionally returning the full particle system."""
    rec: dict = {}
    out = pg_block_step(model, obs, reference, block, n_particles, key,
                        proposal=proposal, tables=tables, record=rec)
    system = ParticleSystem(
        particles=np.asarray(rec["particles"], dtype=np.int64),
        log_weights=np.asarray(rec["log_weights"], dtype=np.float64),
        ancestors=np.asarray(rec["ancestors"], dtype=np.int64),
        reference_slot=n_particles - 1,
        selected=rec["selected"],
    )
    return out, system


# ---------------------------------------------------------------------------
# Pure paths: custom tabular proposals, generic-state models
# ---------------------------------------------------------------------------


def _categorical_log(logw, stream: Stream) -> int:
    m = max(logw)
    if m == -math.inf:
        raise WeightCollapseError(-1)
    w = [math.exp(v - m) for v in logw]
    return categorical_index(w, math.fsum(w), stream.uniform())


def _pg_block_step_custom(tables, s, u, left, right, ref_block, n, stream, proposal, out):
    """Algorithm with a custom tabular proposal; weights g * m / r in log space.

    The initial step of a first block (s = 1) proposes from mu regardless of
    the custom matrix (the mu/r ratio then cancels), mirroring the bootstrap
    convention for the missing left boundary.
    """
    width = u - s + 1
    k = tables.num_states
    rmat = proposal.matrix
    if rmat.shape[0] != k:
        raise ModelError("proposal matrix dimension does not match the state space")
    with np.errstate(divide="ignore"):
        logr = np.log(rmat)

    def proposal_row(t_loc, prev_state):
        """(probabilities, log densities) of the proposal at in-block time t_loc."""
        if t_loc == width - 1 and proposal.final_proposal is not None:
            row = np.asarray(proposal.final_proposal(int(prev_state), right), dtype=np.float64)
            if row.shape != (k,) or np.any(row < 0):
                raise ModelError("final_proposal must return a nonnegative length-K vector")
            with np.errstate(divide="ignore"):
                return row, np.log(row)
        return rmat[prev_state], logr[prev_state]

    particles = np.empty((n, width), dtype=np.int64)
    ancestors = np.zeros((n, width), dtype=np.int64)
    logw = np.empty(n)

    mu = np.exp(tables.logmu)
    for i in range(n - 1):
        if left is None:
            particles[i, 0] = categorical_index(mu, float(mu.sum()), stream.uniform())
        else:
            row, _ = proposal_row(0, left)
            particles[i, 0] = categorical_index(row, float(row.sum()), stream.uniform())
    particles[n - 1, 0] = ref_block[0]
    for i in range(n):
        xt = particles[i, 0]
        w = float(tables.logg[s - 1, xt])
        if left is not None:
            _, lrow = proposal_row(0, left)
            w += float(tables.logp[left, xt]) - float(lrow[xt])
        if width == 1 and right is not None:
            w += float(tables.logp[xt, right])
        logw[i] = w
    if logw.max() == -math.inf:
        raise WeightCollapseError(0)

    for t in range(1, width):
        m = logw.max()
        pw = np.exp(logw - m)
        tot = float(pw.sum())
        for i in range(n - 1):
            ancestors[i, t] = categorical_index(pw, tot, stream.uniform())
        ancestors[n - 1, t] = n - 1
        for i in range(n - 1):
            prev = int(particles[ancestors[i, t], t - 1])
            row, _ = proposal_row(t, prev)
            particles[i, t] = categorical_index(row, float(row.sum()), stream.uniform())
        particles[n - 1, t] = ref_block[t]
        for i in range(n):
            prev = int(particles[ancestors[i, t], t - 1])
            xt = int(particles[i, t])
            _, lrow = proposal_row(t, prev)
            w = float(tables.logg[s - 1 + t, xt]) + float(tables.logp[prev, xt]) - float(lrow[xt])
            if t == width - 1 and right is not None:
                w += float(tables.logp[xt, right])
            logw[i] = w
        if logw.max() == -math.inf:
            raise WeightCollapseError(t)

    sel = _categorical_log(list(logw), stream)
    idx = sel
    for t in range(width - 1, 0, -1):
        out[t] = particles[idx, t]
        idx = ancestors[idx, t]
    out[0] = particles[idx, 0]
    return out


def _pg_block_step_generic(model: GenericHmm, obs, reference, block, n, stream: Stream):
    """Bootstrap PG for callback-defined (e.g. continuous-state) models."""
    s, u = _check_block(block, obs.T)
    width = u - s + 1
    left = reference[s - 2] if s > 1 else None
    right = reference[u] if u < obs.T else None
    ys = obs.values

    particles = [[None] * width for _ in range(n)]
    ancestors = [[0] * width for _ in range(n)]
    logw = [0.0] * n

    for i in range(n - 1):
        particles[i][0] = (
            model.sample_initial(stream) if left is None else model.sample_transition(left, stream)
        )
    particles[n - 1][0] = reference[s - 1]
    for i in range(n):
        w = model.log_emission(particles[i][0], ys[s - 1])
        if width == 1 and right is not None:
            w += model.log_transition(particles[i][0], right)
        logw[i] = w
    if max(logw) == -math.inf:
        raise WeightCollapseError(0)

    for t in range(1, width):
        m = max(logw)
        pw = [math.exp(v - m) for v in logw]
        tot = math.fsum(pw)
        for i in range(n - 1):
            ancestors[i][t] = categorical_index(pw, tot, stream.uniform())
        ancestors[n - 1][t] = n - 1
        for i in range(n - 1):
            particles[i][t] = model.sample_transition(
                particles[ancestors[i][t]][t - 1], stream
            )
        particles[n - 1][t] = reference[s - 1 + t]
        new_logw = []
        for i in range(n):
            w = model.log_emission(particles[i][t], ys[s - 1 + t])
            if t == width - 1 and right is not None:
                w += model.log_transition(particles[i][t], right)
            new_logw.append(w)
        logw = new_logw
        if max(logw) == -math.inf:
            raise WeightCollapseError(t)

    sel = _categorical_log(logw, stream)
    out = [None] * width
    idx = sel
    for t in range(width - 1, 0, -1):
        out[t] = particles[idx][t]
        idx = ancestors[idx][t]
    out[0] = particles[idx][0]
    return out


# ---------------------------------------------------------------------------
# Minorisation constants
# ---------------------------------------------------------------------------


def epsilon_from_c(c: float, n_particles: int, block_len: int) -> float:
    """epsilon(N, L) = 1 - (1 - 1/(c(N-1)+1))^L; the empty block gives 0."""
    if n_particles < 2:
        raise ModelError("minorisation bound is stated for N >= 2")
    if block_len < 0:
        raise ModelError("block length must be nonnegative")
    if not 0.0 < c <= 1.0:
        raise ModelError("c must lie in (0, 1]")
    return 1.0 - (1.0 - 1.0 / (c * (n_particles - 1) + 1.0)) ** block_len


def minorisation_bound(profile: MixingProfile, n_particles: int, block_len: int) -> MinorisationBound:
    """Closed-form lower-bound constants for the bootstrap PG block kernel.

    c = 1 / (2 * delta * sigma+ / sigma- - 1) in (0, 1];
    epsilon(N, L) = 1 - (1 - 1/(c(N-1)+1))^L, with epsilon(N, 0) = 0.
    """
    c = 1.0 / (2.0 * profile.delta * profile.sigma_plus / profile.sigma_minus - 1.0)
    eps = epsilon_from_c(c, n_particles, block_len)
    return MinorisationBound(c=c, epsilon=eps, n_particles=n_particles, block_len=block_len)


# ---------------------------------------------------------------------------
# Exact enumeration of the kernel's law (oracle for tiny instances)
# ---------------------------------------------------------------------------


def enumeration_guard(k: int, width: int, n: int, enum_cap: int = 10**7) -> None:
    if (k ** ((n - 1) * width)) * (n ** (width + 1)) > enum_cap:
        raise CapacityError(
            f"PG enumeration over K={k}, |J|={width}, N={n} exceeds the cap {enum_cap}"
        )


def enumerate_block_kernel(
    tables: LogTables,
    block,
    n_particles: int,
    ref_config,
    left,
    right,
    enum_cap: int = 10**7,
) -> Dict[Tuple[int, ...], float]:
    """Exact output law of the bootstrap PG kernel for one boundary/reference.

    Recurses over every initial draw, ancestor draw, proposal draw, and the
    final selection, carrying exact branch probabilities; particle systems
    with identical trajectory multisets are merged (free slots are
    exchangeable), which keeps the state set small.  Returns a dict mapping
    block configurations to probabilities (sums to 1).
    """
    if n_particles < 2:
        raise ModelError("PG kernel needs at least 2 particles")
    s, u = block
    width = u - s + 1
    k = tables.num_states
    n = n_particles
    enumeration_guard(k, width, n, enum_cap)

    trans = np.asarray(np.exp(tables.logp))
    mu = np.asarray(np.exp(tables.logmu))
    gvals = np.exp(tables.logg[s - 1 : u])

    def weight(t_loc, state) -> float:
        w = float(gvals[t_loc, state])
        if t_loc == width - 1 and right is not None:
            w *= float(trans[state, right])
        return w

    init_row = mu if left is None else trans[left]

    # systems: {(free trajectories sorted, pinned trajectory): probability}
    ref_tuple = tuple(int(v) for v in ref_config)
    systems: Dict[Tuple, float] = {}
    stack = [((), 1.0)]
    for _ in range(n - 1):
        stack = [
            (chosen + ((x,),), pr * float(init_row[x]))
            for chosen, pr in stack
            for x in range(k)
            if init_row[x] > 0.0
        ]
    for chosen, pr in stack:
        key = (tuple(sorted(chosen)), (ref_tuple[0],))
        systems[key] = systems.get(key, 0.0) + pr

    for t_loc in range(1, width):
        new_systems: Dict[Tuple, float] = {}
        for (free, pinned), pr in systems.items():
            trajs = list(free) + [pinned]
            ws = [weight(t_loc - 1, traj[-1]) for traj in trajs]
            tot = sum(ws)
            if tot <= 0.0:
                continue
            probs = [w / tot for w in ws]
            # Joint enumeration of (ancestor, new position) per free slot.
            options = [
                (trajs[a] + (x,), probs[a] * float(trans[trajs[a][-1], x]))
                for a in range(n)
                for x in range(k)
                if probs[a] > 0.0 and trans[trajs[a][-1], x] > 0.0
            ]
            partial = [((), pr)]
            for _ in range(n - 1):
                partial = [
                    (acc + (traj,), q * opt_p)
                    for acc, q in partial
                    for traj, opt_p in options
                ]
            new_pinned = pinned + (ref_tuple[t_loc],)
            for acc, q in partial:
                key = (tuple(sorted(acc)), new_pinned)
                new_systems[key] = new_systems.get(key, 0.0) + q
        systems = new_systems

    law: Dict[Tuple[int, ...], float] = {}
    for (free, pinned), pr in systems.items():
        trajs = list(free) + [pinned]
        ws = [weight(width - 1, traj[-1]) for traj in trajs]
        tot = sum(ws)
        if tot <= 0.0:
            continue
        for traj, w in zip(trajs, ws):
            if w > 0.0:
                law[traj] = law.get(traj, 0.0) + pr * (w / tot)
    return law


def minorisation_empirical(
    model: TabularHmm,
    obs: ObservationRecord,
    block,
    n_particles: int,
    tables: Optional[LogTables] = None,
    enum_cap: int = 10**7,
) -> float:
    """Largest gamma with Q_N^J >= gamma * (exact block conditional), by
    exact enumeration over every reference and boundary configuration."""
    from . import exact as _exact

    if tables is None:
        tables = LogTables(model, obs)
    s, u = _check_block(block, obs.T)
    width = u - s + 1
    k = tables.num_states
    enumeration_guard(k, width, n_particles, enum_cap)

    lefts = [None] if s == 1 else list(range(k))
    rights = [None] if u == obs.T else list(range(k))
    gamma = math.inf
    for left in lefts:
        for right in rights:
            phi = _exact.conditional_table(tables, (s, u), left, right)
            for ref_idx in range(k**width):
                ref = _exact.index_traj(ref_idx, k, width)
                law = enumerate_block_kernel(
                    tables, (s, u), n_particles, ref, left, right, enum_cap=enum_cap
                )
                for cfg_idx in range(k**width):
                    target = float(phi[cfg_idx])
                    if target <= 0.0:
                        continue
                    q = law.get(tuple(_exact.index_traj(cfg_idx, k, width)), 0.0)
                    gamma = min(gamma, q / target)
    return float(gamma)
