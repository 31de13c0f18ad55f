"""Time the compiled probe kernels against the pure-Python fallback.

Run from a checkout:  python benchmarks/bench_kernels.py [--probes N]
"""

import argparse
import random
import time

import numpy as np

from branchland import _probe_py
from branchland.bloom import build_image, lookup_descriptor

try:
    from branchland import _probe_cy
except ImportError:
    _probe_cy = None


def bench(label, fn, reps):
    t0 = time.perf_counter()
    fn()
    dt = time.perf_counter() - t0
    per = dt / reps * 1e9
    print(f"  {label:28s} {dt:8.3f} s   {per:9.1f} ns/op")
    return dt


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--probes", type=int, default=200_000)
    ap.add_argument("--batch", type=int, default=2_000_000)
    args = ap.parse_args()

    rng = random.Random(1)
    members = {rng.randrange(1, 2**31) for _ in range(256)}
    image = build_image({1: members}, target_fp=1e-3, seed1=7, seed2=9)
    desc = lookup_descriptor(image, 1)
    m, k = desc.m_bits, image.k
    bits = image.bit_region[desc.offset_bytes : desc.offset_bytes + m // 8]
    queries = [rng.randrange(1, 2**31) for _ in range(args.probes)]
    batch = np.array(
        [rng.randrange(1, 2**31) for _ in range(args.batch)], dtype=np.uint64
    )

    backends = [("python", _probe_py)]
    if _probe_cy is not None:
        backends.append(("cython", _probe_cy))
    else:
        print("compiled backend not built; showing pure python only")

    results = {}
    for name, mod in backends:
        print(f"{name}:")
        results[name, "mix64"] = bench(
            "mix64",
            lambda mod=mod: [mod.mix64(q) for q in queries],
            args.probes,
        )
        results[name, "filter_query"] = bench(
            "filter_query",
            lambda mod=mod: [mod.filter_query(bits, m, k, 7, 9, q) for q in queries],
            args.probes,
        )
        results[name, "batch_query"] = bench(
            "batch_query",
            lambda mod=mod: mod.batch_query(bits, m, k, 7, 9, batch),
            args.batch,
        )

    if _probe_cy is not None:
        print("speedup (python / cython):")
        for op in ("mix64", "filter_query", "batch_query"):
            ratio = results["python", op] / results["cython", op]
            print(f"  {op:28s} {ratio:6.1f}x")


if __name__ == "__main__":
    main()
