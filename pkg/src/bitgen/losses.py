"""Stage-I training objective: reconstruction, logit-space perceptual loss,
hinge adversarial losses with LeCAM regularization, and the blur-pool
discriminator.
"""

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import torch
from torch import nn
from torch.nn import functional as F


class LossError(ValueError):
    pass


# --------------------------------------------------------------------------- #
# blur-pool downsampling
# --------------------------------------------------------------------------- #

_BLUR_BASE = (1.0, 3.0, 3.0, 1.0)


def blur_kernel(dtype=torch.float32, device=None) -> torch.Tensor:
    """Normalized 4x4 blur kernel: outer product of [1,3,3,1]/8 with itself."""
    v = torch.tensor(_BLUR_BASE, dtype=dtype, device=device) / 8.0
    return torch.outer(v, v)


def blur_pool_2d(features: torch.Tensor) -> torch.Tensor:
    """Antialiased stride-2 downsampling: replicate-pad by 1, then convolve
    each channel with the fixed 4x4 blur kernel. Halves both spatial dims.
    """
    if features.ndim != 4:
        raise LossError(f"expected (B, C, H, W), got {tuple(features.shape)}")
    if features.shape[2] < 2 or features.shape[3] < 2:
        raise LossError("spatial dims must be at least 2")
    c = features.shape[1]
    k = blur_kernel(features.dtype, features.device).expand(c, 1, 4, 4)
    padded = F.pad(features, (1, 1, 1, 1), mode="replicate")
    return F.conv2d(padded, k, stride=2, groups=c)


# --------------------------------------------------------------------------- #
# discriminator
# --------------------------------------------------------------------------- #

@dataclass
class DiscriminatorConfig:
    base_channels: int = 128
    kernel_size: int = 3
    num_stages: int = 4
    max_multiplier: int = 8

    @property
    def output_stride(self) -> int:
        return 2 ** self.num_stages


def _group_norm(channels: int) -> nn.GroupNorm:
    groups = 32
    while channels % groups:
        groups //= 2
    return nn.GroupNorm(groups, channels, eps=1e-6)


class Discriminator(nn.Module):
    """Patch discriminator with blur-pool downsampling.

    Stem conv then (num_stages - 1) conv stages, channels doubling up to
    max_multiplier * base; every downsample is a blur pool, so the output
    stride is 2**num_stages (16 by default: 256x256 in, 16x16 logits out).
    """

    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        self.cfg = cfg
        k = cfg.kernel_size
        pad = k // 2
        ch = cfg.base_channels
        layers = [nn.Conv2d(3, ch, k, padding=pad), _Blur(), nn.LeakyReLU(0.2)]
        for _ in range(cfg.num_stages - 1):
            cout = min(ch * 2, cfg.base_channels * cfg.max_multiplier)
            layers += [nn.Conv2d(ch, cout, k, padding=pad), _group_norm(cout),
                       _Blur(), nn.LeakyReLU(0.2)]
            ch = cout
        layers.append(nn.Conv2d(ch, 1, k, padding=pad))
        self.net = nn.Sequential(*layers)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.ndim != 4 or images.shape[1] != 3:
            raise LossError(f"expected (B, 3, H, W) images, got {tuple(images.shape)}")
        stride = self.cfg.output_stride
        if images.shape[2] % stride or images.shape[3] % stride:
            raise LossError(f"spatial dims {images.shape[2:]} not divisible by {stride}")
        return self.net(images)


class _Blur(nn.Module):
    def forward(self, x):
        return blur_pool_2d(x)


# --------------------------------------------------------------------------- #
# loss terms
# --------------------------------------------------------------------------- #

def l2_reconstruction_loss(orig: torch.Tensor, recon: torch.Tensor) -> torch.Tensor:
    if orig.shape != recon.shape:
        raise LossError(f"shape mismatch: {tuple(orig.shape)} vs {tuple(recon.shape)}")
    return F.mse_loss(recon, orig)


def perceptual_loss(orig: torch.Tensor, recon: torch.Tensor,
                    extractor: Callable[[torch.Tensor], torch.Tensor]) -> torch.Tensor:
    """Mean squared difference of extractor logits; intermediate features are
    deliberately not compared.
    """
    if orig.shape != recon.shape:
        raise LossError(f"shape mismatch: {tuple(orig.shape)} vs {tuple(recon.shape)}")
    a = extractor(orig)
    b = extractor(recon)
    if a.shape != b.shape or a.ndim != 2:
        raise LossError("extractor must map a batch to a (B, L) logit matrix")
    return F.mse_loss(b, a)


def hinge_d_loss(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    return F.relu(1.0 - real_logits).mean() + F.relu(1.0 + fake_logits).mean()


def generator_adv_loss(fake_logits: torch.Tensor) -> torch.Tensor:
    return -fake_logits.mean()


@dataclass
class LeCamState:
    """EMA trackers of mean real/fake discriminator logits."""
    ema_real: float = 0.0
    ema_fake: float = 0.0
    decay: float = 0.999

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise LossError("decay must lie in (0, 1)")

    def update(self, real_logits: torch.Tensor, fake_logits: torch.Tensor) -> None:
        # called by the trainer after each discriminator step, nowhere else
        d = self.decay
        self.ema_real = d * self.ema_real + (1.0 - d) * float(real_logits.mean())
        self.ema_fake = d * self.ema_fake + (1.0 - d) * float(fake_logits.mean())


def lecam_regularization(real_logits: torch.Tensor, fake_logits: torch.Tensor,
                         state: LeCamState) -> torch.Tensor:
    real_term = F.relu(real_logits - state.ema_fake).pow(2).mean()
    fake_term = F.relu(state.ema_real - fake_logits).pow(2).mean()
    return real_term + fake_term


# --------------------------------------------------------------------------- #
# combined Stage-I generator objective
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class LossWeights:
    recon: float = 4.0
    perceptual: float = 0.1
    adversarial: float = 0.02
    commitment: float = 0.25
    entropy: float = 0.02
    lecam: float = 0.001
    codebook: float = 1.0
    adv_start_iter: int = 20000

    def __post_init__(self):
        if min(self.recon, self.perceptual, self.adversarial, self.commitment,
               self.entropy, self.lecam, self.codebook) < 0:
            raise LossError("loss weights must be nonnegative")


class Stage1LossParts(NamedTuple):
    recon: torch.Tensor
    perceptual: torch.Tensor
    commitment: torch.Tensor
    entropy: torch.Tensor
    adversarial: torch.Tensor
    codebook: torch.Tensor = torch.tensor(0.0)


def stage1_generator_objective(parts: Stage1LossParts, weights: LossWeights,
                               iteration: int) -> torch.Tensor:
    total = (weights.recon * parts.recon
             + weights.perceptual * parts.perceptual
             + weights.commitment * parts.commitment
             + weights.entropy * parts.entropy
             + weights.codebook * parts.codebook)
    if iteration >= weights.adv_start_iter:
        total = total + weights.adversarial * parts.adversarial
    return total


# --------------------------------------------------------------------------- #
# desk-scale perceptual extractor
# --------------------------------------------------------------------------- #

class TinyConvLogits(nn.Module):
    """Small frozen random-weight CNN exposing a logit vector per image.

    Stands in for a large pretrained classifier wherever a logit extractor is
    needed (perceptual loss, feature statistics). Weights are seeded so two
    instances with the same seed agree exactly. Accepts images in [-1, 1].
    """

    input_range = (-1.0, 1.0)

    def __init__(self, num_logits: int = 32, width: int = 16, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.features = nn.Sequential(
            nn.Conv2d(3, width, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(width, 2 * width, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(2 * width, 4 * width, 3, stride=2, padding=1), nn.SiLU(),
        )
        self.head = nn.Linear(4 * width, num_logits)
        with torch.no_grad():
            for p in self.parameters():
                p.copy_(torch.empty_like(p).normal_(std=0.2, generator=gen))
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.ndim != 4 or images.shape[1] != 3:
            raise LossError(f"expected (B, 3, H, W) images, got {tuple(images.shape)}")
        h = self.features(images)
        return self.head(h.mean(dim=(2, 3)))
