"""Pure NumPy implementations of the bit kernels.

Used when the compiled extension is unavailable. Same contracts as
``bitgen.bitops._kernels``; the public wrappers in ``bitgen.bitops``
validate inputs before dispatching here.
"""

import numpy as np

BACKEND = "numpy"

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint16)


def pack_bits(bits):
    """Pack rows of {-1,+1} bits into bytes, MSB-first (+1 -> 1, -1 -> 0)."""
    return np.packbits(bits > 0, axis=-1)


def unpack_bits(packed, num_bits):
    """Inverse of pack_bits: (n, ceil(K/8)) uint8 -> (n, K) int8 in {-1,+1}."""
    b01 = np.unpackbits(packed, axis=-1, count=num_bits)
    return (b01.astype(np.int8) * 2 - 1)


def bits_to_indices(bits):
    """Rows of {-1,+1} bits -> integer codes; bit 0 is the most significant."""
    k = bits.shape[-1]
    weights = np.left_shift(1, np.arange(k - 1, -1, -1, dtype=np.int64))
    return (bits > 0).astype(np.int64) @ weights


def indices_to_bits(indices, num_bits):
    """Integer codes -> rows of {-1,+1} bits; bit 0 is the most significant."""
    shifts = np.arange(num_bits - 1, -1, -1, dtype=np.int64)
    b01 = (indices[..., None] >> shifts) & 1
    return (b01.astype(np.int8) * 2 - 1)


def hamming_matrix(a_packed, b_packed):
    """Pairwise Hamming distances between packed bit rows.

    a_packed: (m, nbytes) uint8, b_packed: (n, nbytes) uint8 -> (m, n) int64.
    Pad bits must be zero in both inputs (pack_bits guarantees this).
    """
    m = a_packed.shape[0]
    n = b_packed.shape[0]
    out = np.empty((m, n), dtype=np.int64)
    # chunk rows of a to bound the m*n*nbytes intermediate
    chunk = max(1, (1 << 24) // max(1, n * a_packed.shape[1]))
    for start in range(0, m, chunk):
        stop = min(m, start + chunk)
        xor = a_packed[start:stop, None, :] ^ b_packed[None, :, :]
        out[start:stop] = _POPCOUNT[xor].sum(axis=-1, dtype=np.int64)
    return out
