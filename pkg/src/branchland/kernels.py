"""Probe kernel backend selection.

Prefers the compiled extension, falls back to pure Python when it is not
built.  BRANCHLAND_KERNELS=py|cy forces a backend (cy raises if the
extension is missing, so benchmarks cannot silently compare py to py).
"""

from __future__ import annotations

import os

_forced = os.environ.get("BRANCHLAND_KERNELS", "").strip().lower()

if _forced in ("py", "python"):
    from branchland import _probe_py as _impl

    BACKEND = "python"
elif _forced in ("cy", "cython"):
    from branchland import _probe_cy as _impl  # type: ignore[no-redef]

    BACKEND = "cython"
elif _forced:
    raise ValueError(f"BRANCHLAND_KERNELS={_forced!r}: expected 'py' or 'cy'")
else:
    try:
        from branchland import _probe_cy as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        from branchland import _probe_py as _impl

        BACKEND = "python"

mix64 = _impl.mix64
hash_pair = _impl.hash_pair
hash_positions = _impl.hash_positions
filter_query = _impl.filter_query
batch_query = _impl.batch_query
