#!/usr/bin/env python3
"""Benchmark the compiled kernel extension against the NumPy fallback.

Usage:
    python benchmarks/bench_kernels.py [--size 4000000] [--repeat 5]

Times the four hot kernels (quantize, dequantize, pack, unpack) at every
supported bit width on both backends and prints per-element throughput
plus the speedup of the compiled path.
"""

import argparse
import time

import numpy as np

from tvq import kernels
from tvq.quantizer import compute_qparams


def best_of(repeat, fn, *args):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def run(size: int, repeat: int) -> None:
    rng = np.random.default_rng(1)
    data = rng.normal(0, 0.02, size)
    names = kernels.available_backends()
    if len(names) < 2:
        print("compiled backend not built; nothing to compare")
    impls = {name: kernels.get_backend(name) for name in names}

    header = f"{'kernel':<12} {'bits':>4} " + "".join(f"{n + ' (ms)':>16}" for n in impls)
    if len(impls) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))

    for bits in (2, 3, 4, 8):
        qp = compute_qparams(data, bits)
        codes = impls[names[0]].quantize_codes(data, qp.scale, qp.zero_point, bits)
        packed = np.frombuffer(impls[names[0]].pack_codes(codes, bits), dtype=np.uint8)
        rows = [
            ("quantize", lambda impl: impl.quantize_codes(data, qp.scale, qp.zero_point, bits)),
            ("dequantize", lambda impl: impl.dequantize_codes(codes, qp.scale, qp.zero_point)),
            ("pack", lambda impl: impl.pack_codes(codes, bits)),
            ("unpack", lambda impl: impl.unpack_codes(packed, codes.size, bits)),
        ]
        for label, op in rows:
            times = {name: best_of(repeat, op, impl) for name, impl in impls.items()}
            line = f"{label:<12} {bits:>4} " + "".join(
                f"{times[n] * 1e3:>16.2f}" for n in impls)
            if len(impls) == 2:
                line += f"{times['numpy'] / times['compiled']:>9.1f}x"
            print(line)


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=4_000_000)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    run(args.size, args.repeat)
