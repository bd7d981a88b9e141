"""Embedding-free bidirectional transformer over bit tokens.

Tokens are K-dimensional {-1,+1} vectors split into N groups of K/N
consecutive bits; masked groups are zeroed. The input projection is a single
K -> hidden linear map (no index-embedding table), and the head predicts N
independent categoricals of size 2^(K/N) per position.
"""

import math
from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .quantizers import bits_to_index, index_to_bits


class GeneratorError(ValueError):
    pass


@dataclass
class GeneratorConfig:
    num_bits: int = 12
    num_groups: int = 2
    seq_len: int = 256
    num_classes: int = 1000
    hidden: int = 1024
    depth: int = 24
    heads: int = 16
    mlp_dim: int = 4096
    dropout: float = 0.1
    class_dropout: float = 0.1
    label_smoothing: float = 0.1

    def __post_init__(self):
        if self.num_groups < 1 or self.num_bits % self.num_groups:
            raise GeneratorError(
                f"group count {self.num_groups} must divide bit width {self.num_bits}")
        if self.hidden % self.heads:
            raise GeneratorError("hidden size must be divisible by head count")
        if min(self.seq_len, self.num_classes, self.depth) < 1:
            raise GeneratorError("seq_len, num_classes and depth must be positive")

    @property
    def bits_per_group(self) -> int:
        return self.num_bits // self.num_groups

    @property
    def categories(self) -> int:
        return 1 << self.bits_per_group

    @property
    def null_label(self) -> int:
        return self.num_classes


def desk_config(**overrides) -> GeneratorConfig:
    """Small preset that runs quickly on a CPU."""
    base = dict(num_bits=8, num_groups=2, seq_len=16, num_classes=10,
                hidden=128, depth=4, heads=4, mlp_dim=512, dropout=0.1)
    base.update(overrides)
    return GeneratorConfig(**base)


def group_split(bits: torch.Tensor, num_groups: int) -> torch.Tensor:
    """(B, T, K) -> (B, T, N, K/N); group n holds bits [n*K/N, (n+1)*K/N)."""
    if bits.ndim != 3:
        raise GeneratorError(f"expected (B, T, K), got {tuple(bits.shape)}")
    b, t, k = bits.shape
    if num_groups < 1 or k % num_groups:
        raise GeneratorError(f"group count {num_groups} must divide bit width {k}")
    return bits.reshape(b, t, num_groups, k // num_groups)


def group_merge(groups: torch.Tensor) -> torch.Tensor:
    """(B, T, N, K/N) -> (B, T, K), inverse of group_split."""
    if groups.ndim != 4:
        raise GeneratorError(f"expected (B, T, N, K/N), got {tuple(groups.shape)}")
    b, t, n, g = groups.shape
    return groups.reshape(b, t, n * g)


def apply_mask(bits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Zero out whole masked groups; unmasked bits pass through unchanged."""
    if mask.dtype != torch.bool or mask.ndim != 3:
        raise GeneratorError("mask must be a (B, T, N) boolean tensor")
    grouped = group_split(bits.float(), mask.shape[2])
    if grouped.shape[:3] != mask.shape:
        raise GeneratorError(
            f"mask shape {tuple(mask.shape)} does not match bits {tuple(bits.shape)}")
    return group_merge(grouped * (~mask).unsqueeze(-1))


def group_targets(bits: torch.Tensor, num_groups: int) -> torch.Tensor:
    """Category index per group: (B, T, K) bits -> (B, T, N) ints."""
    return bits_to_index(group_split(bits, num_groups))


class MaskedBitTransformer(nn.Module):
    """Pre-norm transformer encoder mapping masked bit grids to group logits."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        self.input_proj = nn.Linear(cfg.num_bits, cfg.hidden)
        self.class_embed = nn.Embedding(cfg.num_classes + 1, cfg.hidden)
        self.pos_embed = nn.Parameter(torch.zeros(1, cfg.seq_len, cfg.hidden))
        nn.init.normal_(self.pos_embed, std=0.02)
        layer = nn.TransformerEncoderLayer(
            d_model=cfg.hidden, nhead=cfg.heads, dim_feedforward=cfg.mlp_dim,
            dropout=cfg.dropout, activation="gelu", batch_first=True,
            norm_first=True)
        self.blocks = nn.TransformerEncoder(layer, cfg.depth, enable_nested_tensor=False)
        self.final_norm = nn.LayerNorm(cfg.hidden)
        self.head = nn.Linear(cfg.hidden, cfg.num_groups * cfg.categories)

    @property
    def null_label(self) -> int:
        return self.cfg.null_label

    def forward(self, masked_bits: torch.Tensor, class_ids: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        if masked_bits.shape[1:] != (cfg.seq_len, cfg.num_bits):
            raise GeneratorError(
                f"expected (B, {cfg.seq_len}, {cfg.num_bits}) bit grid, "
                f"got {tuple(masked_bits.shape)}")
        if class_ids.shape != masked_bits.shape[:1]:
            raise GeneratorError("need one class id per batch element")
        if class_ids.min() < 0 or class_ids.max() > cfg.null_label:
            raise GeneratorError(f"class ids must lie in [0, {cfg.null_label}]")
        x = self.input_proj(masked_bits.float()) + self.pos_embed
        cls = self.class_embed(class_ids).unsqueeze(1)
        h = self.blocks(torch.cat([cls, x], dim=1))
        h = self.final_norm(h[:, 1:])
        logits = self.head(h)
        b, t = logits.shape[:2]
        return logits.reshape(b, t, cfg.num_groups, cfg.categories)


def masked_bits_loss(logits: torch.Tensor, target_bits: torch.Tensor,
                     mask: torch.Tensor, label_smoothing: float = 0.1) -> torch.Tensor:
    """Label-smoothed cross-entropy over masked groups only, mean per group."""
    if logits.ndim != 4:
        raise GeneratorError(f"expected (B, T, N, C) logits, got {tuple(logits.shape)}")
    num_groups = logits.shape[2]
    targets = group_targets(target_bits, num_groups)
    if targets.shape != mask.shape or mask.dtype != torch.bool:
        raise GeneratorError("mask must be (B, T, N) booleans matching the targets")
    if not mask.any():
        raise GeneratorError("at least one group must be masked")
    return F.cross_entropy(logits[mask], targets[mask], label_smoothing=label_smoothing)


def mask_fraction(r: float) -> float:
    """Arccos masking schedule: fraction of groups masked at progress r.

    f(0) = 1 (everything masked), f(1) = 0, f(0.5) = 2/3.
    """
    if not 0.0 <= r <= 1.0:
        raise GeneratorError(f"schedule progress {r} outside [0, 1]")
    return (2.0 / math.pi) * math.acos(r)


def sample_training_mask(batch: int, seq_len: int, num_groups: int,
                         rng: torch.Generator) -> torch.Tensor:
    """Arccos-scheduled random group mask.

    Per batch element: r ~ U(0,1), fraction f = (2/pi)*arccos(r), then
    ceil(f*T*N) of the T*N groups are masked uniformly without replacement.
    """
    if seq_len < 1 or num_groups < 1 or batch < 1:
        raise GeneratorError("batch, seq_len and num_groups must be positive")
    total = seq_len * num_groups
    r = torch.rand(batch, generator=rng).clamp_min(torch.finfo(torch.float32).tiny)
    frac = (2.0 / math.pi) * torch.arccos(r)
    count = torch.ceil(frac * total).long()
    order = torch.argsort(torch.rand(batch, total, generator=rng), dim=1)
    rank = torch.empty_like(order)
    rank.scatter_(1, order, torch.arange(total).expand(batch, total))
    mask = rank < count.unsqueeze(1)
    return mask.reshape(batch, seq_len, num_groups)


def drop_class_label(class_ids: torch.Tensor, num_classes: int, p: float,
                     rng: torch.Generator) -> torch.Tensor:
    """Replace each label with the null label (== num_classes) w.p. p."""
    if not 0.0 <= p <= 1.0:
        raise GeneratorError("dropout probability must lie in [0, 1]")
    drop = torch.rand(class_ids.shape, generator=rng) < p
    return torch.where(drop, torch.full_like(class_ids, num_classes), class_ids)


def bits_from_categories(categories: torch.Tensor, bits_per_group: int) -> torch.Tensor:
    """(B, T, N) category ints -> (B, T, K) float bits in {-1, +1}."""
    return group_merge(index_to_bits(categories, bits_per_group)).float()
