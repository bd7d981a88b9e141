"""Convolutional encoder/decoder with output stride 16.

Purely convolutional by default (attention exists only for the baseline
reproduction mode), symmetric two residual blocks per stage, group norm +
swish throughout, stride-2 conv downsampling and nearest-neighbor + conv
upsampling.
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Union

import torch
from torch import nn
from torch.nn import functional as F

from .quantizers import (LfqResult, LookupFreeQuantizer, VectorQuantizer,
                         entropy_loss)


class TokenizerError(ValueError):
    pass


@dataclass
class AutoencoderConfig:
    base_channels: int = 128
    channel_multipliers: tuple = (1, 1, 2, 2, 4)
    res_blocks_per_stage: int = 2
    latent_dim: int = 256
    use_attention: bool = False
    # None mirrors the encoder; the historical baseline used one extra block
    decoder_res_blocks_per_stage: Optional[int] = None
    mid_blocks: int = 2

    def __post_init__(self):
        self.channel_multipliers = tuple(self.channel_multipliers)
        if len(self.channel_multipliers) < 2:
            raise TokenizerError("need at least two stages")
        if self.res_blocks_per_stage < 1 or self.latent_dim < 1:
            raise TokenizerError("invalid block count or latent dim")
        if self.base_channels < 1 or self.mid_blocks < 0:
            raise TokenizerError("invalid base channels or mid block count")

    @property
    def num_downsamples(self) -> int:
        return len(self.channel_multipliers) - 1

    @property
    def output_stride(self) -> int:
        return 2 ** self.num_downsamples

    @property
    def decoder_blocks(self) -> int:
        if self.decoder_res_blocks_per_stage is None:
            return self.res_blocks_per_stage
        return self.decoder_res_blocks_per_stage


def _norm(channels: int) -> nn.GroupNorm:
    groups = 32
    while channels % groups:
        groups //= 2
    return nn.GroupNorm(groups, channels, eps=1e-6)


class ResidualBlock(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.norm1 = _norm(cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.norm2 = _norm(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x):
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class AttentionBlock(nn.Module):
    """Single-head spatial self-attention, baseline-reproduction mode only."""

    def __init__(self, channels: int):
        super().__init__()
        self.norm = _norm(channels)
        self.q = nn.Conv2d(channels, channels, 1)
        self.k = nn.Conv2d(channels, channels, 1)
        self.v = nn.Conv2d(channels, channels, 1)
        self.proj = nn.Conv2d(channels, channels, 1)

    def forward(self, x):
        b, c, h, w = x.shape
        y = self.norm(x)
        q = self.q(y).reshape(b, c, h * w).transpose(1, 2)
        k = self.k(y).reshape(b, c, h * w)
        v = self.v(y).reshape(b, c, h * w).transpose(1, 2)
        attn = torch.softmax(q @ k * (c ** -0.5), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, c, h, w)
        return x + self.proj(out)


class Downsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2.0, mode="nearest"))


class Encoder(nn.Module):
    def __init__(self, cfg: AutoencoderConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.base_channels
        self.stem = nn.Conv2d(3, ch, 3, padding=1)
        blocks = []
        last_stage = len(cfg.channel_multipliers) - 1
        for i, mult in enumerate(cfg.channel_multipliers):
            cout = cfg.base_channels * mult
            for _ in range(cfg.res_blocks_per_stage):
                blocks.append(ResidualBlock(ch, cout))
                ch = cout
                if cfg.use_attention and i == last_stage:
                    blocks.append(AttentionBlock(ch))
            if i < last_stage:
                blocks.append(Downsample(ch))
        for j in range(cfg.mid_blocks):
            blocks.append(ResidualBlock(ch, ch))
            if cfg.use_attention and j == 0:
                blocks.append(AttentionBlock(ch))
        self.blocks = nn.Sequential(*blocks)
        self.head = nn.Sequential(_norm(ch), nn.SiLU(), nn.Conv2d(ch, cfg.latent_dim, 3, padding=1))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.ndim != 4 or images.shape[1] != 3:
            raise TokenizerError(f"expected (B, 3, H, W) images, got {tuple(images.shape)}")
        stride = self.cfg.output_stride
        if images.shape[2] % stride or images.shape[3] % stride:
            raise TokenizerError(f"spatial dims {images.shape[2:]} not divisible by {stride}")
        if not torch.isfinite(images).all():
            raise TokenizerError("non-finite image input")
        return self.head(self.blocks(self.stem(images)))


class Decoder(nn.Module):
    def __init__(self, cfg: AutoencoderConfig):
        super().__init__()
        self.cfg = cfg
        mults = cfg.channel_multipliers
        ch = cfg.base_channels * mults[-1]
        self.stem = nn.Conv2d(cfg.latent_dim, ch, 3, padding=1)
        blocks = []
        for j in range(cfg.mid_blocks):
            blocks.append(ResidualBlock(ch, ch))
            if cfg.use_attention and j == 0:
                blocks.append(AttentionBlock(ch))
        for i in reversed(range(len(mults))):
            cout = cfg.base_channels * mults[i]
            for _ in range(cfg.decoder_blocks):
                blocks.append(ResidualBlock(ch, cout))
                ch = cout
                if cfg.use_attention and i == len(mults) - 1:
                    blocks.append(AttentionBlock(ch))
            if i > 0:
                blocks.append(Upsample(ch))
        self.blocks = nn.Sequential(*blocks)
        self.head = nn.Sequential(_norm(ch), nn.SiLU(), nn.Conv2d(ch, 3, 3, padding=1))

    def forward(self, latent: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(latent).all():
            raise TokenizerError("non-finite latent input")
        return torch.tanh(self.head(self.blocks(self.stem(latent))))


def has_attention(module: nn.Module) -> bool:
    return any(isinstance(m, AttentionBlock) for m in module.modules())


class ReconstructionOutput(NamedTuple):
    recon: torch.Tensor
    tokens: torch.Tensor            # (B, T, K) bits for LFQ, (B, T) indices for VQ
    commit_term: torch.Tensor
    codebook_term: torch.Tensor     # zero for LFQ
    entropy_term: torch.Tensor      # zero for VQ


class TokenizerModel(nn.Module):
    """Encoder -> quantizer -> decoder pipeline for either quantizer kind."""

    def __init__(self, cfg: AutoencoderConfig,
                 quantizer: Union[VectorQuantizer, LookupFreeQuantizer]):
        super().__init__()
        if isinstance(quantizer, VectorQuantizer) and quantizer.dim != cfg.latent_dim:
            raise TokenizerError("codebook dim must match the latent dim")
        if (isinstance(quantizer, LookupFreeQuantizer)
                and quantizer.proj_in.in_channels != cfg.latent_dim):
            raise TokenizerError("binary quantizer input dim must match the latent dim")
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)
        self.quantizer = quantizer

    @property
    def is_binary(self) -> bool:
        return isinstance(self.quantizer, LookupFreeQuantizer)

    @property
    def num_bits(self) -> int:
        if not self.is_binary:
            raise TokenizerError("VQ tokenizer has no bit width")
        return self.quantizer.num_bits

    def forward(self, images: torch.Tensor) -> ReconstructionOutput:
        latent = self.encoder(images)
        zero = images.new_zeros(())
        if self.is_binary:
            q: LfqResult = self.quantizer(latent)
            recon = self.decoder(self.quantizer.project_out(q.bits))
            commit = F.mse_loss(q.pre_quant, q.bits.detach())
            ent = entropy_loss(q.pre_quant, self.quantizer.entropy_temperature)
            tokens = grid_to_seq(q.bits)
            return ReconstructionOutput(recon, tokens, commit, zero, ent)
        res = self.quantizer(latent)
        recon = self.decoder(res.quantized)
        b, h, w = res.indices.shape
        return ReconstructionOutput(recon, res.indices.reshape(b, h * w),
                                    res.commit_term, res.codebook_term, zero)

    @torch.no_grad()
    def tokenize(self, images: torch.Tensor) -> torch.Tensor:
        """Images -> bit tokens (B, T, K) for LFQ or indices (B, T) for VQ."""
        latent = self.encoder(images)
        if self.is_binary:
            return grid_to_seq(self.quantizer(latent).bits)
        res = self.quantizer(latent)
        b, h, w = res.indices.shape
        return res.indices.reshape(b, h * w)

    @torch.no_grad()
    def decode_tokens(self, tokens: torch.Tensor, grid_hw: tuple) -> torch.Tensor:
        """Token sequences back to images; grid_hw is the (h, w) latent shape."""
        h, w = grid_hw
        if self.is_binary:
            return self.decode_bits_grid(seq_to_grid(tokens.float(), h, w))
        quant = self.quantizer.lookup(tokens.reshape(tokens.shape[0], h, w))
        return self.decoder(quant)

    @torch.no_grad()
    def decode_bits_grid(self, bits: torch.Tensor) -> torch.Tensor:
        if not self.is_binary:
            raise TokenizerError("bit grids require the binary quantizer")
        return self.decoder(self.quantizer.project_out(bits.float()))

    def latent_grid_hw(self, image_hw: tuple) -> tuple:
        s = self.cfg.output_stride
        return (image_hw[0] // s, image_hw[1] // s)


def grid_to_seq(grid: torch.Tensor) -> torch.Tensor:
    """(B, C, h, w) -> (B, h*w, C), row-major token order."""
    b, c, h, w = grid.shape
    return grid.permute(0, 2, 3, 1).reshape(b, h * w, c)


def seq_to_grid(seq: torch.Tensor, h: int, w: int) -> torch.Tensor:
    """(B, h*w, C) -> (B, C, h, w), inverse of grid_to_seq."""
    b, t, c = seq.shape
    if t != h * w:
        raise TokenizerError(f"sequence length {t} does not match grid {h}x{w}")
    return seq.reshape(b, h, w, c).permute(0, 3, 1, 2).contiguous()
