"""Latent quantizers: learnable-codebook VQ and sign-based binary quantization.

Both quantizers operate on NCHW latent grids and pass gradients through the
non-differentiable step with a straight-through estimator. The binary
quantizer produces bit tokens in {-1,+1}^K whose base-2 reading is the token
id, so no embedding table exists on either side of the bottleneck.
"""

from typing import NamedTuple

import torch
from torch import nn
from torch.nn import functional as F


class QuantizerError(ValueError):
    pass


def straight_through(pre: torch.Tensor, post: torch.Tensor) -> torch.Tensor:
    """Forward value of ``post`` with identity gradient onto ``pre``."""
    if pre.shape != post.shape:
        raise QuantizerError(f"shape mismatch {tuple(pre.shape)} vs {tuple(post.shape)}")
    return pre + (post - pre).detach()


def bits_to_index(bits) -> torch.Tensor:
    """Base-2 reading of {-1,+1} bit vectors, bit 0 most significant.

    Accepts a tensor or array-like with bits along the last axis; returns a
    long tensor with that axis reduced. +1 reads as binary 1, -1 as 0.
    """
    t = torch.as_tensor(bits)
    if t.ndim < 1:
        raise QuantizerError("bit token must have at least one dimension")
    k = t.shape[-1]
    if k > 62:
        raise QuantizerError(f"bit width {k} too large")
    if not torch.isin(t, torch.tensor([-1, 1], dtype=t.dtype)).all():
        raise QuantizerError("bit entries must be -1 or +1")
    weights = torch.pow(2, torch.arange(k - 1, -1, -1, device=t.device))
    return ((t > 0).long() * weights).sum(dim=-1)


def index_to_bits(index, num_bits: int) -> torch.Tensor:
    """Inverse of bits_to_index; returns {-1,+1} long bits, bit 0 = MSB."""
    t = torch.as_tensor(index)
    if num_bits < 1 or num_bits > 62:
        raise QuantizerError(f"invalid bit width {num_bits}")
    if t.numel() and (t.min() < 0 or t.max() >= (1 << num_bits)):
        raise QuantizerError(f"index out of range for {num_bits} bits")
    shifts = torch.arange(num_bits - 1, -1, -1, device=t.device)
    b01 = (t.long().unsqueeze(-1) >> shifts) & 1
    return b01 * 2 - 1


class VqResult(NamedTuple):
    quantized: torch.Tensor   # (B, D, h, w), straight-through
    indices: torch.Tensor     # (B, h, w) long
    commit_term: torch.Tensor
    codebook_term: torch.Tensor


class VectorQuantizer(nn.Module):
    """Nearest-neighbor quantization against a learnable codebook.

    The codebook is trained by gradient through the codebook term; ties in
    the nearest-neighbor search resolve to the lowest index.
    """

    def __init__(self, num_entries: int = 1024, dim: int = 256):
        super().__init__()
        if num_entries < 2 or dim < 1:
            raise QuantizerError("codebook needs >= 2 entries of dim >= 1")
        self.num_entries = num_entries
        self.dim = dim
        entries = torch.empty(num_entries, dim).uniform_(-1.0 / num_entries, 1.0 / num_entries)
        self.entries = nn.Parameter(entries)

    def lookup(self, indices: torch.Tensor) -> torch.Tensor:
        """Indices (B, h, w) -> codebook vectors as an NCHW grid."""
        vecs = self.entries[indices]            # (B, h, w, D)
        return vecs.permute(0, 3, 1, 2).contiguous()

    def forward(self, latent: torch.Tensor) -> VqResult:
        if latent.ndim != 4 or latent.shape[1] != self.dim:
            raise QuantizerError(
                f"expected (B, {self.dim}, h, w) latent, got {tuple(latent.shape)}")
        b, d, h, w = latent.shape
        flat = latent.permute(0, 2, 3, 1).reshape(-1, d)
        indices = torch.empty(flat.shape[0], dtype=torch.long, device=flat.device)
        # exact squared distances, chunked to bound the (chunk, V, D) buffer
        chunk = max(1, (1 << 22) // max(1, self.num_entries * d))
        with torch.no_grad():
            for start in range(0, flat.shape[0], chunk):
                stop = min(flat.shape[0], start + chunk)
                diff = flat[start:stop, None, :] - self.entries[None, :, :]
                indices[start:stop] = diff.pow(2).sum(-1).argmin(dim=1)
        quantized = self.entries[indices].reshape(b, h, w, d).permute(0, 3, 1, 2)
        commit = F.mse_loss(latent, quantized.detach())
        codebook = F.mse_loss(latent.detach(), quantized)
        return VqResult(straight_through(latent, quantized), indices.reshape(b, h, w),
                        commit, codebook)


class LfqResult(NamedTuple):
    bits: torch.Tensor        # (B, K, h, w) in {-1,+1}, straight-through
    pre_quant: torch.Tensor   # (B, K, h, w)


class LookupFreeQuantizer(nn.Module):
    """Binary quantization of a projected latent by coordinate sign.

    A learned 1x1 convolution maps the encoder output to K channels; each
    channel is quantized to +1 (>= 0) or -1. The implicit codebook is
    {-1,+1}^K and ``project_out`` maps bits back to the decoder width.
    """

    def __init__(self, input_dim: int, num_bits: int,
                 entropy_weight: float = 0.02, entropy_temperature: float = 0.01):
        super().__init__()
        if num_bits < 1 or num_bits > 30:
            raise QuantizerError(f"bit width {num_bits} outside [1, 30]")
        if entropy_temperature <= 0:
            raise QuantizerError("entropy temperature must be positive")
        self.num_bits = num_bits
        self.entropy_weight = entropy_weight
        self.entropy_temperature = entropy_temperature
        self.proj_in = nn.Conv2d(input_dim, num_bits, kernel_size=1)
        self.proj_out = nn.Conv2d(num_bits, input_dim, kernel_size=1)

    def forward(self, latent: torch.Tensor) -> LfqResult:
        if not torch.isfinite(latent).all():
            raise QuantizerError("non-finite latent input")
        pre = self.proj_in(latent)
        hard = torch.where(pre >= 0, 1.0, -1.0)
        return LfqResult(straight_through(pre, hard), pre)

    def project_out(self, bits: torch.Tensor) -> torch.Tensor:
        return self.proj_out(bits)


def entropy_loss(pre_quant: torch.Tensor, temperature: float) -> torch.Tensor:
    """Per-bit Bernoulli entropy objective on the pre-quantization values.

    p_k = sigmoid(2 * pre / tau). The per-sample term (mean over tokens of the
    summed bit entropies) rewards confident assignments; subtracting the
    entropy of the batch-averaged bit probabilities rewards spreading tokens
    over the implicit codebook. Zero at the symmetric maximum-entropy point,
    approaching -K*ln(2) for confident, uniformly spread bits.
    """
    if temperature <= 0:
        raise QuantizerError("entropy temperature must be positive")
    flat = pre_quant.transpose(0, 1).reshape(pre_quant.shape[1], -1) \
        if pre_quant.ndim == 4 else pre_quant.reshape(-1, pre_quant.shape[-1]).t()
    # flat: (K, num_samples)
    p = torch.sigmoid(2.0 * flat / temperature)
    per_sample = _bernoulli_entropy(p).sum(dim=0).mean()
    usage = _bernoulli_entropy(p.mean(dim=1)).sum()
    return per_sample - usage


def _bernoulli_entropy(p: torch.Tensor) -> torch.Tensor:
    # clamp inside the log only: values match -p*log(p) - (1-p)*log(1-p)
    # exactly (0*log(tiny) == 0 at the endpoints) while the gradient stays
    # bounded by |log(tiny)| instead of diverging when sigmoid saturates
    tiny = torch.finfo(p.dtype).tiny
    return -(p * torch.log(p.clamp_min(tiny))
             + (1.0 - p) * torch.log((1.0 - p).clamp_min(tiny)))
