# cython: boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled CSMC block-step kernel (bootstrap proposal, tabular models).

Bit-identical twin of `_kernels_py`: same splitmix64 stream, same draw order,
same floating-point evaluation order (the extension is built with
-ffp-contract=off so gcc cannot fuse multiply-adds).  The heavy loop runs
without the GIL, which is what makes thread-parallel PAR phases effective.
"""

from libc.math cimport exp
from libc.stdlib cimport free, malloc

from .errors import WeightCollapseError

COMPILED = True

ctypedef unsigned long long u64

cdef double _INV53 = 1.0 / 9007199254740992.0
cdef u64 _GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double _NEG_INF = float("-inf")


cdef inline u64 _mix64(u64 z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _uniform(u64 key, u64 counter) noexcept nogil:
    return <double> (_mix64(key + counter * _GOLDEN) >> 11) * _INV53


cdef inline long _pick(const double* cum_row, double total, double u, long k) noexcept nogil:
    cdef double target = u * total
    cdef long j
    for j in range(k):
        if cum_row[j] >= target:
            return j
    return k - 1


def mix64(z):
    """splitmix64 finalizer on a Python int (parity check helper)."""
    return _mix64(<u64> (z & 0xFFFFFFFFFFFFFFFF))


def stream_probe(key, n):
    """First n uniforms of stream `key` (parity check helper)."""
    cdef u64 k = <u64> (key & 0xFFFFFFFFFFFFFFFF)
    cdef long i
    return [_uniform(k, <u64> (i + 1)) for i in range(n)]


cdef long _run(const double* logp, const double* cump, const double* rowtot,
               const double* cummu, double mutot, const double* logg,
               const long* ref, bint has_left, long left, bint has_right, long right,
               long n, u64 key, long* out,
               long num_t, long k_states,
               long* particles, long* ancestors, double* logw, double* pbuf) noexcept nogil:
    """Returns -1 on success, else the in-block time index where weights collapsed."""
    cdef u64 counter = 0
    cdef long i, j, t, a, sel, prev, idx
    cdef double u, w, lwmax, total, target, acc

    for i in range(n - 1):
        counter += 1
        u = _uniform(key, counter)
        if has_left:
            particles[i * num_t] = _pick(cump + left * k_states, rowtot[left], u, k_states)
        else:
            particles[i * num_t] = _pick(cummu, mutot, u, k_states)
    particles[(n - 1) * num_t] = ref[0]

    lwmax = _NEG_INF
    for i in range(n):
        w = logg[particles[i * num_t]]
        if num_t == 1 and has_right:
            w += logp[particles[i * num_t] * k_states + right]
        logw[i] = w
        if w > lwmax:
            lwmax = w
    if lwmax == _NEG_INF:
        return 0

    for t in range(1, num_t):
        total = 0.0
        for i in range(n):
            pbuf[i] = exp(logw[i] - lwmax)
            total += pbuf[i]
        for i in range(n - 1):
            counter += 1
            u = _uniform(key, counter)
            target = u * total
            acc = 0.0
            a = n - 1
            for j in range(n):
                acc += pbuf[j]
                if acc >= target:
                    a = j
                    break
            ancestors[i * num_t + t] = a
        ancestors[(n - 1) * num_t + t] = n - 1

        for i in range(n - 1):
            counter += 1
            u = _uniform(key, counter)
            prev = particles[ancestors[i * num_t + t] * num_t + t - 1]
            particles[i * num_t + t] = _pick(cump + prev * k_states, rowtot[prev], u, k_states)
        particles[(n - 1) * num_t + t] = ref[t]

        lwmax = _NEG_INF
        for i in range(n):
            w = logg[t * k_states + particles[i * num_t + t]]
            if t == num_t - 1 and has_right:
                w += logp[particles[i * num_t + t] * k_states + right]
            logw[i] = w
            if w > lwmax:
                lwmax = w
        if lwmax == _NEG_INF:
            return t

    total = 0.0
    for i in range(n):
        pbuf[i] = exp(logw[i] - lwmax)
        total += pbuf[i]
    counter += 1
    u = _uniform(key, counter)
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
        out[t] = particles[idx * num_t + t]
        idx = ancestors[idx * num_t + t]
    out[0] = particles[idx * num_t]
    return -1


def pg_block_step(const double[:, ::1] logp, const double[:, ::1] cump, const double[::1] rowtot,
                  const double[::1] cummu, double mutot, const double[:, ::1] logg,
                  const long[::1] ref, bint has_left, long left, bint has_right, long right,
                  long n_particles, key, long[::1] out, record=None):
    """One draw from the block conditional-SMC kernel; see `_kernels_py` for docs."""
    if record is not None:
        raise ValueError("the compiled kernel does not record particle traces; "
                         "use the pure-Python kernel for trace dumps")
    cdef long num_t = ref.shape[0]
    cdef long n = n_particles
    cdef long k_states = rowtot.shape[0]
    cdef u64 ukey = <u64> (key & 0xFFFFFFFFFFFFFFFF)
    cdef long rc

    cdef long* particles = <long*> malloc(2 * n * num_t * sizeof(long))
    cdef double* logw = <double*> malloc(2 * n * sizeof(double))
    if particles == NULL or logw == NULL:
        free(particles)
        free(logw)
        raise MemoryError()
    cdef long* ancestors = particles + n * num_t
    cdef double* pbuf = logw + n

    with nogil:
        rc = _run(&logp[0, 0], &cump[0, 0], &rowtot[0], &cummu[0], mutot,
                  &logg[0, 0], &ref[0], has_left, left, has_right, right,
                  n, ukey, &out[0], num_t, k_states,
                  particles, ancestors, logw, pbuf)
    free(particles)
    free(logw)
    if rc >= 0:
        raise WeightCollapseError(rc)
    return None
