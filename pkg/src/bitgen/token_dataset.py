"""Serialized bit-token datasets: the bridge from Stage-I tokenization to
Stage-II training.

Binary layout: magic, JSON header (version, bit width, grid dims, sample
count, tokenizer config digest), int64 class ids, bit-packed tokens
(MSB-first per token, 1 packed bit per {-1,+1} entry), trailing sha256 over
everything before it.
"""

import hashlib
import json
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from . import bitops


class TokenDatasetError(RuntimeError):
    pass


class TokenDatasetCorruptError(TokenDatasetError):
    pass


class TokenDatasetVersionError(TokenDatasetError):
    pass


class TokenizerDigestError(TokenDatasetError):
    pass


_MAGIC = b"BGTOKDS1"
_VERSION = 1


@dataclass
class TokenDataset:
    bits: torch.Tensor       # (M, T, K) int8 in {-1, +1}
    class_ids: torch.Tensor  # (M,) int64
    grid_hw: tuple
    tokenizer_digest: str

    def __post_init__(self):
        if self.bits.ndim != 3:
            raise TokenDatasetError(f"expected (M, T, K) bits, got {tuple(self.bits.shape)}")
        if self.bits.shape[0] != self.class_ids.shape[0]:
            raise TokenDatasetError("sample/class-id count mismatch")
        h, w = self.grid_hw
        if h * w != self.bits.shape[1]:
            raise TokenDatasetError(
                f"grid {h}x{w} does not match token count {self.bits.shape[1]}")

    @property
    def num_bits(self) -> int:
        return self.bits.shape[2]

    def __len__(self) -> int:
        return self.bits.shape[0]


def bytes_per_sample(seq_len: int, num_bits: int) -> int:
    return (seq_len * num_bits + 7) // 8


def write_token_dataset(path, bits: torch.Tensor, class_ids: torch.Tensor,
                        grid_hw, tokenizer_digest: str = "") -> None:
    ds = TokenDataset(bits.to(torch.int8), class_ids.to(torch.int64),
                      tuple(grid_hw), tokenizer_digest)
    m, t, k = ds.bits.shape
    packed = bitops.pack_bits(ds.bits.reshape(m, t * k).numpy())
    header = json.dumps({
        "version": _VERSION, "num_bits": k, "grid": [int(grid_hw[0]), int(grid_hw[1])],
        "count": m, "tokenizer_digest": tokenizer_digest,
    }).encode()
    body = (_MAGIC + struct.pack("<Q", len(header)) + header
            + ds.class_ids.numpy().astype("<i8").tobytes()
            + packed.tobytes())
    with open(path, "wb") as fh:
        fh.write(body + hashlib.sha256(body).digest())


def read_token_dataset(path, expected_digest: Optional[str] = None) -> TokenDataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(_MAGIC) + 8 + 32 or not blob.startswith(_MAGIC):
        raise TokenDatasetCorruptError("not a token dataset file")
    body, stored = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != stored:
        raise TokenDatasetCorruptError("checksum mismatch; file is corrupt")
    header_len = struct.unpack("<Q", body[8:16])[0]
    try:
        header = json.loads(body[16:16 + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TokenDatasetCorruptError(f"unreadable header: {exc}") from exc
    if header.get("version") != _VERSION:
        raise TokenDatasetVersionError(
            f"token dataset version {header.get('version')} != {_VERSION}")
    digest = header["tokenizer_digest"]
    if expected_digest is not None and digest != expected_digest:
        raise TokenizerDigestError(
            "token dataset was produced by a different tokenizer "
            f"({digest[:12]}... != {expected_digest[:12]}...)")
    k = header["num_bits"]
    h, w = header["grid"]
    m = header["count"]
    t = h * w
    offset = 16 + header_len
    ids_bytes = m * 8
    row_bytes = bytes_per_sample(t, k)
    expected_len = offset + ids_bytes + m * row_bytes
    if len(body) != expected_len:
        raise TokenDatasetCorruptError(
            f"payload length {len(body)} != expected {expected_len}")
    class_ids = np.frombuffer(body, dtype="<i8", count=m, offset=offset).copy()
    packed = np.frombuffer(body, dtype=np.uint8, count=m * row_bytes,
                           offset=offset + ids_bytes).reshape(m, row_bytes)
    flat = bitops.unpack_bits(packed, t * k)
    bits = torch.from_numpy(flat.reshape(m, t, k).copy())
    return TokenDataset(bits, torch.from_numpy(class_ids), (h, w), digest)
