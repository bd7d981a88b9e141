"""Bit packing / index conversion / Hamming kernels, against brute-force oracles
and the pure-numpy fallback backend."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bitgen import bitops
from bitgen.bitops import _fallback


def random_bits(rng, shape):
    return rng.choice(np.array([-1, 1], dtype=np.int8), size=shape)


def test_backend_reported():
    assert bitops.backend() in ("cython", "numpy")


def test_pack_msb_first_example():
    # 1,-1,-1,1 reads as binary 1001 = 9; packed into the high nibble of one byte
    bits = np.array([[1, -1, -1, 1]], dtype=np.int8)
    packed = bitops.pack_bits(bits)
    assert packed.dtype == np.uint8
    assert packed.tolist() == [[0b10010000]]
    assert bitops.bits_to_indices(bits).tolist() == [9]


def test_pack_unpack_round_trip_simple():
    rng = np.random.default_rng(0)
    for width in (1, 3, 7, 8, 9, 12, 16, 30):
        bits = random_bits(rng, (5, width))
        packed = bitops.pack_bits(bits)
        assert packed.shape == (5, (width + 7) // 8)
        out = bitops.unpack_bits(packed, width)
        np.testing.assert_array_equal(out, bits)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30), st.integers(1, 8), st.integers(0, 2 ** 32 - 1))
def test_pack_unpack_round_trip_property(width, rows, seed):
    rng = np.random.default_rng(seed)
    bits = random_bits(rng, (rows, width))
    np.testing.assert_array_equal(bitops.unpack_bits(bitops.pack_bits(bits), width), bits)


def test_multi_dim_leading_axes():
    rng = np.random.default_rng(1)
    bits = random_bits(rng, (2, 3, 4, 12))
    packed = bitops.pack_bits(bits)
    assert packed.shape == (2, 3, 4, 2)
    np.testing.assert_array_equal(bitops.unpack_bits(packed, 12), bits)
    idx = bitops.bits_to_indices(bits)
    assert idx.shape == (2, 3, 4)
    np.testing.assert_array_equal(bitops.indices_to_bits(idx, 12), bits)


def test_index_round_trip_exhaustive_k8():
    idx = np.arange(256, dtype=np.int64)
    bits = bitops.indices_to_bits(idx, 8)
    assert bits.shape == (256, 8)
    np.testing.assert_array_equal(bitops.bits_to_indices(bits), idx)
    # oracle: manual base-2 reading, bit 0 most significant
    weights = 2 ** np.arange(7, -1, -1)
    np.testing.assert_array_equal(((bits > 0) * weights).sum(-1), idx)


def test_indices_to_bits_value_oracle():
    bits = bitops.indices_to_bits(np.array([9]), 4)
    assert bits.tolist() == [[1, -1, -1, 1]]
    bits = bitops.indices_to_bits(np.array([0, 15]), 4)
    assert bits.tolist() == [[-1, -1, -1, -1], [1, 1, 1, 1]]


def test_hamming_matrix_brute_force():
    rng = np.random.default_rng(2)
    for width in (1, 8, 13, 30):
        a = random_bits(rng, (7, width))
        b = random_bits(rng, (5, width))
        d = bitops.hamming_matrix(bitops.pack_bits(a), bitops.pack_bits(b))
        oracle = (a[:, None, :] != b[None, :, :]).sum(-1)
        np.testing.assert_array_equal(d, oracle)


def test_hamming_self_zero_diagonal():
    rng = np.random.default_rng(3)
    a = bitops.pack_bits(random_bits(rng, (6, 12)))
    d = bitops.hamming_matrix(a, a)
    assert (np.diag(d) == 0).all()
    np.testing.assert_array_equal(d, d.T)


def test_validation_errors():
    good = np.array([[1, -1]], dtype=np.int8)
    with pytest.raises(ValueError):
        bitops.pack_bits(np.array([[0, 1]], dtype=np.int8))
    with pytest.raises(ValueError):
        bitops.pack_bits(np.zeros((3, 0), dtype=np.int8))
    with pytest.raises(ValueError):
        bitops.unpack_bits(bitops.pack_bits(good), 0)
    with pytest.raises(ValueError):
        bitops.unpack_bits(np.zeros((1, 1), dtype=np.uint8), 9)  # needs 2 bytes
    with pytest.raises(ValueError):
        bitops.bits_to_indices(random_bits(np.random.default_rng(0), (1, 63)))
    with pytest.raises(ValueError):
        bitops.indices_to_bits(np.array([4]), 2)  # out of range for 2 bits
    with pytest.raises(ValueError):
        bitops.indices_to_bits(np.array([-1]), 2)
    with pytest.raises(ValueError):
        bitops.hamming_matrix(np.zeros((2, 1), dtype=np.uint8),
                              np.zeros((2, 2), dtype=np.uint8))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
def test_backends_agree(width, rows, seed):
    rng = np.random.default_rng(seed)
    bits = random_bits(rng, (rows, width))
    packed = bitops.pack_bits(bits)
    np.testing.assert_array_equal(packed, _fallback.pack_bits(bits))
    np.testing.assert_array_equal(bitops.unpack_bits(packed, width),
                                  _fallback.unpack_bits(packed, width))
    np.testing.assert_array_equal(bitops.bits_to_indices(bits),
                                  _fallback.bits_to_indices(bits))
    idx = bitops.bits_to_indices(bits)
    np.testing.assert_array_equal(bitops.indices_to_bits(idx, width),
                                  _fallback.indices_to_bits(idx, width))
    other = _fallback.pack_bits(random_bits(rng, (3, width)))
    np.testing.assert_array_equal(bitops.hamming_matrix(packed, other),
                                  _fallback.hamming_matrix(packed, other))


def test_fallback_env_override(tmp_path):
    import subprocess
    import sys
    code = ("import bitgen.bitops as b; print(b.backend()); "
            "import numpy as np; "
            "print(b.bits_to_indices(np.array([[1,-1,-1,1]], dtype=np.int8)).tolist())")
    out = subprocess.run([sys.executable, "-c", code],
                         env={"BITGEN_BITOPS": "fallback", "PATH": "/usr/bin:/bin"},
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert out.stdout.split() == ["numpy", "[9]"]
