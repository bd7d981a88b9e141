"""Benchmark the compiled bit-kernel backend against the NumPy fallback.

Both implementations are importable side by side, so this times them in one
process and checks they agree before reporting. Run as:

    python3 benchmarks/bench_bitops.py [--samples 4096] [--repeats 5]
"""

import argparse
import time

import numpy as np

from bitgen.bitops import _fallback

try:
    from bitgen.bitops import _kernels
except ImportError:
    _kernels = None


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def make_workloads(samples, tokens, bits, rng):
    flat = rng.choice(np.array([-1, 1], np.int8), size=(samples, tokens * bits))
    packed = _fallback.pack_bits(flat)
    token_bits = flat.reshape(samples * tokens, bits)
    indices = _fallback.bits_to_indices(token_bits)
    corpus = packed[: min(samples, 512)]
    return {
        "pack_bits": (lambda impl: impl.pack_bits(flat)),
        "unpack_bits": (lambda impl: impl.unpack_bits(packed, tokens * bits)),
        "bits_to_indices": (lambda impl: impl.bits_to_indices(token_bits)),
        "indices_to_bits": (lambda impl: impl.indices_to_bits(indices, bits)),
        "hamming_matrix": (lambda impl: impl.hamming_matrix(corpus, corpus)),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--samples", type=int, default=4096)
    parser.add_argument("--tokens", type=int, default=256)
    parser.add_argument("--bits", type=int, default=12)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if _kernels is None:
        print("compiled backend unavailable; nothing to compare")
        return

    rng = np.random.default_rng(0)
    workloads = make_workloads(args.samples, args.tokens, args.bits, rng)

    print(f"{args.samples} samples x {args.tokens} tokens x {args.bits} bits, "
          f"best of {args.repeats}")
    print(f"{'op':<18s}{'cython':>12s}{'numpy':>12s}{'speedup':>10s}")
    for name, call in workloads.items():
        assert np.array_equal(call(_kernels), call(_fallback)), name
        fast = timeit(lambda: call(_kernels), args.repeats)
        slow = timeit(lambda: call(_fallback), args.repeats)
        print(f"{name:<18s}{fast * 1e3:>10.2f}ms{slow * 1e3:>10.2f}ms"
              f"{slow / fast:>9.1f}x")


if __name__ == "__main__":
    main()
