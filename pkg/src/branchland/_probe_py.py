"""Pure Python probe kernels.

Reference implementation of the hash and membership-probe primitives.  The
compiled backend in _probe_cy must produce bit-identical results; tests
cross-check the two.  Batch entry points accept numpy arrays so the
Monte-Carlo suites stay usable even without the extension.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

_C1 = 0x9E3779B97F4A7C15
_C2 = 0xBF58476D1CE4E5B9
_C3 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """64-bit avalanche finalizer (wrapping arithmetic throughout)."""
    z = (z + _C1) & MASK64
    z = ((z ^ (z >> 30)) * _C2) & MASK64
    z = ((z ^ (z >> 27)) * _C3) & MASK64
    return z ^ (z >> 31)


def hash_pair(sid: int, seed1: int, seed2: int) -> tuple[int, int]:
    """Two derived hashes; the stride hash is forced odd so every probe
    sequence walks all residues of a power-of-two modulus."""
    h1 = mix64((sid ^ seed1) & MASK64)
    h2 = mix64((sid ^ seed2) & MASK64) | 1
    return h1, h2


def hash_positions(sid: int, seed1: int, seed2: int, m: int, k: int) -> list[int]:
    h1, h2 = hash_pair(sid, seed1, seed2)
    # The sum lives in a 64-bit register; wrap before reducing mod m.
    return [((h1 + i * h2) & MASK64) % m for i in range(k)]


def filter_query(buf: bytes, m: int, k: int, seed1: int, seed2: int, sid: int) -> bool:
    """Membership probe against an m-bit filter stored little-endian in buf.

    Reads all k positions with no early exit; the probe count must not
    depend on the filter contents.
    """
    h1, h2 = hash_pair(sid, seed1, seed2)
    hit = 1
    for i in range(k):
        b = ((h1 + i * h2) & MASK64) % m
        hit &= (buf[b >> 3] >> (b & 7)) & 1
    return bool(hit)


def _mix64_vec(z: np.ndarray) -> np.ndarray:
    z = (z + np.uint64(_C1))
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_C2)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_C3)
    return z ^ (z >> np.uint64(31))


def batch_query(
    buf: bytes, m: int, k: int, seed1: int, seed2: int, sids: np.ndarray
) -> np.ndarray:
    """Vectorized filter_query over a uint64 sid array; returns a bool array."""
    sids = np.ascontiguousarray(sids, dtype=np.uint64)
    bits = np.frombuffer(bytes(buf), dtype=np.uint8)
    with np.errstate(over="ignore"):
        h1 = _mix64_vec(sids ^ np.uint64(seed1))
        h2 = _mix64_vec(sids ^ np.uint64(seed2)) | np.uint64(1)
        out = np.ones(len(sids), dtype=bool)
        for i in range(k):
            pos = (h1 + np.uint64(i) * h2) % np.uint64(m)
            byte = bits[(pos >> np.uint64(3)).astype(np.int64)]
            out &= ((byte >> (pos & np.uint64(7)).astype(np.uint8)) & 1).astype(bool)
    return out
