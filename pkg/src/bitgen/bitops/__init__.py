"""Bit-token kernels: packing, base-2 index conversion, Hamming distances.

A compiled Cython backend is used when the extension was built; otherwise a
NumPy fallback provides the same functions. ``backend()`` reports which one
is active, and ``BITGEN_BITOPS=fallback`` in the environment forces the
NumPy path (useful for the benchmark in ``benchmarks/bench_bitops.py``).
"""

import os

import numpy as np

from . import _fallback

if os.environ.get("BITGEN_BITOPS") == "fallback":
    _impl = _fallback
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _fallback

__all__ = [
    "backend",
    "pack_bits",
    "unpack_bits",
    "bits_to_indices",
    "indices_to_bits",
    "hamming_matrix",
]


def backend():
    """Name of the active backend, 'cython' or 'numpy'."""
    return _impl.BACKEND


def _as_bit_array(bits):
    arr = np.asarray(bits)
    if arr.ndim < 1:
        raise ValueError("bit array must have at least one dimension")
    if not np.isin(arr, (-1, 1)).all():
        raise ValueError("bit entries must be -1 or +1")
    return arr.astype(np.int8, copy=False)


def pack_bits(bits):
    """Pack {-1,+1} bit rows into bytes along the last axis, MSB-first.

    +1 packs to binary 1, -1 to 0; bit 0 of a token is the most significant
    bit of its first byte. Pad bits (when the width is not a multiple of 8)
    are zero.
    """
    return _impl.pack_bits(_as_bit_array(bits))


def unpack_bits(packed, num_bits):
    """Unpack bytes back to {-1,+1} int8 rows of width ``num_bits``."""
    packed = np.asarray(packed, dtype=np.uint8)
    if num_bits < 1 or num_bits > 8 * packed.shape[-1]:
        raise ValueError(f"num_bits {num_bits} out of range for {packed.shape[-1]} byte rows")
    return _impl.unpack_bits(packed, num_bits)


def bits_to_indices(bits):
    """Convert {-1,+1} rows to their base-2 integer reading (bit 0 = MSB)."""
    arr = _as_bit_array(bits)
    if arr.shape[-1] > 62:
        raise ValueError("bit width too large for int64 indices")
    return _impl.bits_to_indices(arr)


def indices_to_bits(indices, num_bits):
    """Inverse of bits_to_indices for integers in [0, 2**num_bits)."""
    arr = np.asarray(indices, dtype=np.int64)
    if num_bits < 1 or num_bits > 62:
        raise ValueError(f"invalid bit width {num_bits}")
    if arr.size and (arr.min() < 0 or arr.max() >= (1 << num_bits)):
        raise ValueError(f"index out of range for {num_bits} bits")
    return _impl.indices_to_bits(arr, num_bits)


def hamming_matrix(a_packed, b_packed):
    """Pairwise Hamming distances between two sets of packed bit rows."""
    a = np.ascontiguousarray(a_packed, dtype=np.uint8)
    b = np.ascontiguousarray(b_packed, dtype=np.uint8)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"incompatible packed shapes {a.shape} and {b.shape}")
    return _impl.hamming_matrix(a, b)
