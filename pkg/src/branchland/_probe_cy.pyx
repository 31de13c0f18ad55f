# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled probe kernels. Must match _probe_py bit for bit."""

from libc.stdint cimport uint8_t, uint64_t

import numpy as np

cdef uint64_t C1 = 0x9E3779B97F4A7C15u
cdef uint64_t C2 = 0xBF58476D1CE4E5B9u
cdef uint64_t C3 = 0x94D049BB133111EBu


cdef inline uint64_t c_mix64(uint64_t z) nogil:
    z = z + C1
    z = (z ^ (z >> 30)) * C2
    z = (z ^ (z >> 27)) * C3
    return z ^ (z >> 31)


def mix64(z):
    return c_mix64(<uint64_t> z)


def hash_pair(sid, seed1, seed2):
    cdef uint64_t h1 = c_mix64((<uint64_t> sid) ^ (<uint64_t> seed1))
    cdef uint64_t h2 = c_mix64((<uint64_t> sid) ^ (<uint64_t> seed2)) | 1u
    return h1, h2


def hash_positions(sid, seed1, seed2, m, k):
    cdef uint64_t h1, h2
    cdef uint64_t cm = <uint64_t> m
    cdef int i, ck = <int> k
    h1, h2 = hash_pair(sid, seed1, seed2)
    return [(h1 + (<uint64_t> i) * h2) % cm for i in range(ck)]


def filter_query(const uint8_t[:] buf, m, k, seed1, seed2, sid):
    # All k positions are read unconditionally; no early exit.
    cdef uint64_t h1 = c_mix64((<uint64_t> sid) ^ (<uint64_t> seed1))
    cdef uint64_t h2 = c_mix64((<uint64_t> sid) ^ (<uint64_t> seed2)) | 1u
    cdef uint64_t cm = <uint64_t> m
    cdef uint64_t b
    cdef int i, ck = <int> k
    cdef int hit = 1
    for i in range(ck):
        b = (h1 + (<uint64_t> i) * h2) % cm
        hit &= (buf[b >> 3] >> (b & 7u)) & 1u
    return bool(hit)


def batch_query(const uint8_t[:] buf, m, k, seed1, seed2, sids):
    cdef uint64_t[::1] csids = np.ascontiguousarray(sids, dtype=np.uint64)
    cdef Py_ssize_t n = csids.shape[0]
    out = np.zeros(n, dtype=np.uint8)
    cdef uint8_t[::1] cout = out
    cdef uint64_t cs1 = <uint64_t> seed1
    cdef uint64_t cs2 = <uint64_t> seed2
    cdef uint64_t cm = <uint64_t> m
    cdef int ck = <int> k
    cdef uint64_t h1, h2, b
    cdef int i, hit
    cdef Py_ssize_t j
    with nogil:
        for j in range(n):
            h1 = c_mix64(csids[j] ^ cs1)
            h2 = c_mix64(csids[j] ^ cs2) | 1u
            hit = 1
            for i in range(ck):
                b = (h1 + (<uint64_t> i) * h2) % cm
                hit &= (buf[b >> 3] >> (b & 7u)) & 1u
            cout[j] = <uint8_t> hit
    return out.astype(bool)
