"""Import-time selection between the compiled kernel and its pure-Python twin.

Set BLOCKPG_PURE=1 in the environment to force the fallback (used by the
benchmark and the parity tests).
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("BLOCKPG_PURE"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_py

COMPILED = _impl.COMPILED
mix64 = _impl.mix64
stream_probe = _impl.stream_probe
pg_block_step = _impl.pg_block_step

# The instrumented twin is always available for trace dumps, whatever the
# selected fast path (outputs are bit-identical by construction).
pg_block_step_recorded = _kernels_py.pg_block_step
