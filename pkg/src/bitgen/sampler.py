"""Non-autoregressive iterative decoding of bit tokens.

Starts from a fully masked grid and runs S refinement steps. Each step
samples categories for the still-masked groups, scores them by annealed
confidence, and commits the best so the cumulative kept count follows an
arccos schedule. Classifier-free guidance combines conditional and
unconditional logits with a power-ramped scale.
"""

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import torch

from .generator import MaskedBitTransformer, bits_from_categories


class SamplerError(ValueError):
    pass


@dataclass(frozen=True)
class SampleConfig:
    steps: int = 64
    temperature: float = 7.8      # paper-validated range [7.3, 8.3]
    guidance_scale: float = 6.8   # range [5.8, 7.8]
    scale_pow: float = 3.0        # range [2.5, 3.5]
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise SamplerError("need at least one sampling step")
        if self.temperature < 0 or self.guidance_scale < 0:
            raise SamplerError("temperature and guidance scale must be >= 0")


@dataclass
class SamplerState:
    committed: torch.Tensor   # (B, T, K) bits, zeros where still masked
    mask: torch.Tensor        # (B, T, N) booleans, True = still masked
    step: int = 0


def initial_state(batch: int, seq_len: int, num_bits: int, num_groups: int) -> SamplerState:
    committed = torch.zeros(batch, seq_len, num_bits)
    mask = torch.ones(batch, seq_len, num_groups, dtype=torch.bool)
    return SamplerState(committed, mask, step=0)


def keep_count(step: int, steps: int, total_groups: int) -> int:
    """Cumulative number of groups kept after `step` of `steps` steps."""
    if not 1 <= step <= steps:
        raise SamplerError(f"step {step} outside [1, {steps}]")
    frac = 1.0 - (2.0 / math.pi) * math.acos(step / steps)
    return math.ceil(total_groups * frac)


def cfg_combine(cond_logits: torch.Tensor, uncond_logits: torch.Tensor,
                scale: float) -> torch.Tensor:
    if cond_logits.shape != uncond_logits.shape:
        raise SamplerError("conditional/unconditional logit shapes differ")
    if scale < 0:
        raise SamplerError("guidance scale must be >= 0")
    if scale == 0:
        return cond_logits
    return uncond_logits + (1.0 + scale) * (cond_logits - uncond_logits)


def guidance_at_step(step: int, steps: int, base_scale: float, m: float) -> float:
    """Guidance ramps from ~0 up to base_scale as step/steps -> 1."""
    return base_scale * (step / steps) ** m


def _gumbel(shape, rng: torch.Generator) -> torch.Tensor:
    u = torch.rand(shape, generator=rng)
    tiny = torch.finfo(torch.float32).tiny
    neg_log = (-torch.log(u.clamp_min(tiny))).clamp_min(tiny)
    return -torch.log(neg_log)


@torch.no_grad()
def sample_step(state: SamplerState, model: MaskedBitTransformer,
                class_ids: torch.Tensor, cfg: SampleConfig,
                rng: torch.Generator) -> SamplerState:
    if not state.mask.any():
        raise SamplerError("no masked groups remain")
    mcfg = model.cfg
    step = state.step + 1
    batch, seq_len, num_groups = state.mask.shape
    total = seq_len * num_groups

    null_ids = torch.full_like(class_ids, model.null_label)
    cond = model(state.committed, class_ids)
    uncond = model(state.committed, null_ids)
    scale = guidance_at_step(step, cfg.steps, cfg.guidance_scale, cfg.scale_pow)
    logits = cfg_combine(cond, uncond, scale)
    log_probs = torch.log_softmax(logits, dim=-1)

    # Gumbel-max draw == sampling the categorical softmax
    sampled = torch.argmax(log_probs + _gumbel(log_probs.shape, rng), dim=-1)
    conf = log_probs.gather(-1, sampled.unsqueeze(-1)).squeeze(-1)
    anneal = cfg.temperature * (1.0 - step / cfg.steps)
    conf = conf + anneal * _gumbel(conf.shape, rng)
    conf = conf.masked_fill(~state.mask, math.inf)   # committed groups stay kept

    k = keep_count(step, cfg.steps, total)
    flat_conf = conf.reshape(batch, total)
    kept_idx = torch.topk(flat_conf, k, dim=1).indices
    keep = torch.zeros(batch, total, dtype=torch.bool)
    keep.scatter_(1, kept_idx, True)
    keep = keep.reshape(batch, seq_len, num_groups)

    newly = keep & state.mask
    bits = bits_from_categories(sampled, mcfg.bits_per_group)
    grouped = state.committed.reshape(batch, seq_len, num_groups, -1).clone()
    grouped[newly] = bits.reshape(batch, seq_len, num_groups, -1)[newly]
    committed = grouped.reshape(batch, seq_len, mcfg.num_bits)
    return SamplerState(committed, state.mask & ~keep, step)


@torch.no_grad()
def generate_bits(model: MaskedBitTransformer, class_ids: torch.Tensor,
                  cfg: SampleConfig) -> torch.Tensor:
    """Run the full schedule from an all-masked grid; returns (B, T, K) bits."""
    mcfg = model.cfg
    if class_ids.ndim != 1:
        raise SamplerError("class_ids must be a 1-D batch of labels")
    rng = torch.Generator().manual_seed(cfg.seed)
    state = initial_state(len(class_ids), mcfg.seq_len, mcfg.num_bits, mcfg.num_groups)
    while state.step < cfg.steps and bool(state.mask.any()):
        state = sample_step(state, model, class_ids, cfg, rng)
    if bool(state.mask.any()):
        raise SamplerError("schedule finished with masked groups remaining")
    return state.committed


@torch.no_grad()
def generate(model: MaskedBitTransformer,
             decoder: Callable[[torch.Tensor], torch.Tensor],
             class_ids: torch.Tensor, cfg: SampleConfig) -> torch.Tensor:
    """Sample bit tokens and decode them to images in [-1, 1]."""
    bits = generate_bits(model, class_ids, cfg)
    return decoder(bits)
