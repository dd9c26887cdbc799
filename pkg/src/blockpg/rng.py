"""Counter-based random streams for reproducible (parallel) sampling.

Every random decision in the package is drawn from a `Stream`, a stateless
splitmix64 generator addressed by (key, counter).  Keys are derived from a
root seed plus an integer path (e.g. seed -> sweep index -> block index), so
block updates scheduled on different threads consume independent streams and
the result of a run is bit-identical for any worker count.

The compiled kernel re-implements `_mix64` / the counter-to-uniform mapping
with identical uint64 arithmetic; `tests/test_kernels_parity.py` pins the two
implementations against each other.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# Domain tags for key derivation; keep in sync with the call sites in sweeps/cli.
DOMAIN_INIT = 1
DOMAIN_BLOCK = 2
DOMAIN_DIRECTION = 3
DOMAIN_OBS = 4
DOMAIN_CHAIN = 5


def mix64(z: int) -> int:
    """splitmix64 finalizer (Steele, Lea & Flood construction)."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_key(*parts: int) -> int:
    """Hash an integer path into a 64-bit stream key.

    Distinct paths give (for all practical purposes) independent streams;
    the chain of finalizers is order-sensitive.
    """
    key = 0x243F6A8885A308D3
    for part in parts:
        key = mix64(key ^ mix64(part & _MASK))
    return key


def stream_u64(key: int, counter: int) -> int:
    """The `counter`-th raw 64-bit output of stream `key` (counter >= 1)."""
    return mix64((key + counter * _GOLDEN) & _MASK)


class Stream:
    """Sequential view onto a counter-based stream.

    Instances are cheap; make a fresh one per independent task instead of
    sharing across threads.
    """

    __slots__ = ("key", "counter")

    def __init__(self, key: int, counter: int = 0):
        self.key = key & _MASK
        self.counter = counter

    def next_u64(self) -> int:
        self.counter += 1
        return stream_u64(self.key, self.counter)

    def uniform(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)


def categorical_index(weights, total: float, u: float) -> int:
    """Inverse-CDF draw over nonnegative `weights` summing to `total`.

    Selects the first index whose cumulative weight reaches u * total; exact
    cumulative ties break toward the lower index.  `total` must be the sum of
    `weights` computed in index order so the final cumulative equals it.
    """
    target = u * total
    acc = 0.0
    last = len(weights) - 1
    for i, w in enumerate(weights):
        acc += w
        if acc >= target:
            return i
    return last
