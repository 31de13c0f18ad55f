"""Backend parity and frozen hash values for the probe kernels."""

import random

import numpy as np
import pytest

from branchland import _probe_py, kernels

try:
    from branchland import _probe_cy
except ImportError:
    _probe_cy = None

needs_cy = pytest.mark.skipif(_probe_cy is None, reason="compiled backend not built")


def test_backend_selected():
    assert kernels.BACKEND in ("python", "cython")


# Frozen outputs of the mixing function, derived with an independent
# integer-arithmetic implementation (no shifts shared with the package).
def test_mix64_frozen():
    assert _probe_py.mix64(42) == 0xBDD732262FEB6E95
    assert _probe_py.mix64(0) == 0xE220A8397B1DCDAF
    assert 0 <= _probe_py.mix64(2**64 - 1) < 2**64


def test_hash_positions_frozen():
    assert _probe_py.hash_positions(42, 0, 0, 1024, 4) == [661, 298, 959, 596]
    assert _probe_py.hash_positions(7, 1, 2, 64, 3) == [0, 27, 54]


def test_hash_pair_h2_odd():
    rng = random.Random(3)
    for _ in range(500):
        sid = rng.randrange(1, 2**31)
        s1, s2 = rng.randrange(2**64), rng.randrange(2**64)
        h1, h2 = _probe_py.hash_pair(sid, s1, s2)
        assert h2 & 1 == 1
        assert 0 <= h1 < 2**64


def test_positions_arithmetic_vs_pair():
    rng = random.Random(4)
    for _ in range(200):
        sid = rng.randrange(1, 2**31)
        s1, s2 = rng.randrange(2**64), rng.randrange(2**64)
        m = 64 * rng.randrange(1, 64)
        k = rng.randrange(1, 9)
        h1, h2 = _probe_py.hash_pair(sid, s1, s2)
        expect = [(h1 + i * h2) % 2**64 % m for i in range(k)]
        assert _probe_py.hash_positions(sid, s1, s2, m, k) == expect


@needs_cy
def test_scalar_parity():
    rng = random.Random(5)
    for _ in range(1000):
        z = rng.randrange(2**64)
        assert _probe_cy.mix64(z) == _probe_py.mix64(z)
    for _ in range(500):
        sid = rng.randrange(1, 2**31)
        s1, s2 = rng.randrange(2**64), rng.randrange(2**64)
        m = 64 * rng.randrange(1, 32)
        k = rng.randrange(1, 9)
        assert _probe_cy.hash_pair(sid, s1, s2) == _probe_py.hash_pair(sid, s1, s2)
        assert _probe_cy.hash_positions(sid, s1, s2, m, k) == _probe_py.hash_positions(
            sid, s1, s2, m, k
        )


@needs_cy
def test_query_parity():
    rng = random.Random(6)
    for _ in range(100):
        m = 64 * rng.randrange(1, 16)
        k = rng.randrange(1, 9)
        s1, s2 = rng.randrange(2**64), rng.randrange(2**64)
        buf = bytes(rng.randrange(256) for _ in range(m // 8))
        sids = [rng.randrange(1, 2**31) for _ in range(50)]
        py = [_probe_py.filter_query(buf, m, k, s1, s2, q) for q in sids]
        cy = [_probe_cy.filter_query(buf, m, k, s1, s2, q) for q in sids]
        assert py == cy
        arr = np.array(sids, dtype=np.uint64)
        assert np.array_equal(
            _probe_py.batch_query(buf, m, k, s1, s2, arr),
            _probe_cy.batch_query(buf, m, k, s1, s2, arr),
        )
        assert _probe_py.batch_query(buf, m, k, s1, s2, arr).tolist() == py


def test_batch_matches_scalar_on_selected_backend():
    rng = random.Random(7)
    m, k, s1, s2 = 512, 5, 11, 13
    buf = bytes(rng.randrange(256) for _ in range(m // 8))
    sids = np.array([rng.randrange(1, 2**31) for _ in range(200)], dtype=np.uint64)
    got = kernels.batch_query(buf, m, k, s1, s2, sids)
    expect = [kernels.filter_query(buf, m, k, s1, s2, int(q)) for q in sids]
    assert got.tolist() == expect
