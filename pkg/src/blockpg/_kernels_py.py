"""Pure-Python twin of the compiled CSMC block-step kernel.

This module mirrors `_kernels.pyx` operation for operation: same splitmix64
stream, same draw order, same floating-point evaluation order.  Outputs are
bit-identical to the compiled kernel for equal inputs (asserted by
tests/test_kernels_parity.py), so it serves both as the import-time fallback
when the extension is unavailable and as the instrumented reference used for
trace dumps.
"""

from __future__ import annotations

import math

from .errors import WeightCollapseError

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_INV53 = 1.0 / 9007199254740992.0

COMPILED = False


def mix64(z):
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def stream_probe(key, n):
    """First n uniforms of stream `key` (parity check helper)."""
    return [(mix64((key + (i + 1) * _GOLDEN) & _MASK) >> 11) * _INV53 for i in range(n)]


def _pick(cum_row, total, u, k):
    """Inverse-CDF over a cumulative row; ties break toward the lower index."""
    target = u * total
    for j in range(k):
        if cum_row[j] >= target:
            return j
    return k - 1


def pg_block_step(
    logp,
    cump,
    rowtot,
    cummu,
    mutot,
    logg,
    ref,
    has_left,
    left,
    has_right,
    right,
    n_particles,
    key,
    out,
    record=None,
):
    """One draw from the block conditional-SMC kernel (bootstrap proposal).

    Arguments are the tabular model's log/cumulative tables (see
    `hmm.LogTables`), `logg` restricted to the block's time rows, the
    reference states on the block, the optional boundary states, and a stream
    key.  Writes the selected block configuration into `out`.

    `record`, if given, is a dict that receives the full particle system
    (particles, log_weights, ancestors, selected) for debugging dumps; the
    compiled kernel does not support it.
    """
    num_t = len(ref)
    n = n_particles
    counter = 0

    particles = [[0] * num_t for _ in range(n)]
    ancestors = [[0] * num_t for _ in range(n)]
    logw = [0.0] * n
    pbuf = [0.0] * n
    all_logw = [[0.0] * num_t for _ in range(n)] if record is not None else None

    k_states = len(rowtot)
    exp = math.exp

    # Time s: N-1 proposals from mu (first block) or m(x*_{s-1}, .), slot N pinned.
    for i in range(n - 1):
        counter += 1
        u = (mix64((key + counter * _GOLDEN) & _MASK) >> 11) * _INV53
        if has_left:
            particles[i][0] = _pick(cump[left], rowtot[left], u, k_states)
        else:
            particles[i][0] = _pick(cummu, mutot, u, k_states)
    particles[n - 1][0] = ref[0]

    lwmax = -math.inf
    for i in range(n):
        w = logg[0][particles[i][0]]
        if num_t == 1 and has_right:
            w += logp[particles[i][0]][right]
        logw[i] = w
        if w > lwmax:
            lwmax = w
    if lwmax == -math.inf:
        raise WeightCollapseError(0)
    if all_logw is not None:
        for i in range(n):
            all_logw[i][0] = logw[i]

    for t in range(1, num_t):
        # Ancestor draws from the time t-1 weights.
        total = 0.0
        for i in range(n):
            pbuf[i] = exp(logw[i] - lwmax)
            total += pbuf[i]
        for i in range(n - 1):
            counter += 1
            u = (mix64((key + counter * _GOLDEN) & _MASK) >> 11) * _INV53
            target = u * total
            acc = 0.0
            a = n - 1
            for j in range(n):
                acc += pbuf[j]
                if acc >= target:
                    a = j
                    break
            ancestors[i][t] = a
        ancestors[n - 1][t] = n - 1

        # Proposal draws (bootstrap: the model transition itself).
        for i in range(n - 1):
            counter += 1
            u = (mix64((key + counter * _GOLDEN) & _MASK) >> 11) * _INV53
            prev = particles[ancestors[i][t]][t - 1]
            particles[i][t] = _pick(cump[prev], rowtot[prev], u, k_states)
        particles[n - 1][t] = ref[t]

        lwmax = -math.inf
        for i in range(n):
            w = logg[t][particles[i][t]]
            if t == num_t - 1 and has_right:
                w += logp[particles[i][t]][right]
            logw[i] = w
            if w > lwmax:
                lwmax = w
        if lwmax == -math.inf:
            raise WeightCollapseError(t)
        if all_logw is not None:
            for i in range(n):
                all_logw[i][t] = logw[i]

    # Select an output trajectory from the final weights.
    total = 0.0
    for i in range(n):
        pbuf[i] = exp(logw[i] - lwmax)
        total += pbuf[i]
    counter += 1
    u = (mix64((key + counter * _GOLDEN) & _MASK) >> 11) * _INV53
    target = u * total
    acc = 0.0
    sel = n - 1
    for j in range(n):
        acc += pbuf[j]
        if acc >= target:
            sel = j
            break

    idx = sel
    for t in range(num_t - 1, 0, -1):
        out[t] = particles[idx][t]
        idx = ancestors[idx][t]
    out[0] = particles[idx][0]

    if record is not None:
        record["particles"] = [row[:] for row in particles]
        record["ancestors"] = [row[1:] for row in ancestors]
        record["log_weights"] = [row[:] for row in all_logw]
        record["selected"] = sel
    return None
