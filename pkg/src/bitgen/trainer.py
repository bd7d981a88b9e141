"""Optimization machinery for both training stages.

Covers AdamW setup, linear-warmup + cosine learning-rate decay to 10% of
base, gradient clipping, EMA of generator weights, the alternating
generator/discriminator update, and a checksummed binary checkpoint format
that restores training bit-exactly (parameters, optimizer moments, RNG
states, step counter).
"""

import hashlib
import io
import json
import math
import struct
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
import torch
from torch import nn

from .generator import (GeneratorConfig, MaskedBitTransformer, apply_mask,
                        drop_class_label, masked_bits_loss,
                        sample_training_mask)
from .losses import (Discriminator, LeCamState, LossWeights, Stage1LossParts,
                     generator_adv_loss, hinge_d_loss, l2_reconstruction_loss,
                     lecam_regularization, perceptual_loss,
                     stage1_generator_objective)
from .tokenizer import TokenizerModel


class TrainerError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


# --------------------------------------------------------------------------- #
# optimizer config and LR schedule
# --------------------------------------------------------------------------- #

@dataclass
class OptimConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-4
    base_lr: float = 1e-4
    warmup: int = 5000
    total_iters: int = 1_350_000
    batch_size: int = 256
    grad_clip_norm: float = 1.0
    eps: float = 1e-8
    end_lr_fraction: float = 0.1

    def __post_init__(self):
        if self.base_lr <= 0:
            raise TrainerError("base_lr must be positive")
        if not 0 <= self.warmup < self.total_iters:
            raise TrainerError("need 0 <= warmup < total_iters")

    @staticmethod
    def stage1(**overrides) -> "OptimConfig":
        base = dict(beta1=0.9, beta2=0.999, weight_decay=1e-4, base_lr=1e-4,
                    warmup=5000, total_iters=1_350_000, batch_size=256)
        base.update(overrides)
        return OptimConfig(**base)

    @staticmethod
    def stage2(**overrides) -> "OptimConfig":
        base = dict(beta1=0.9, beta2=0.96, weight_decay=0.045, base_lr=1e-4,
                    warmup=5000, total_iters=1_350_000, batch_size=1024)
        base.update(overrides)
        return OptimConfig(**base)

    def make_adamw(self, params) -> torch.optim.AdamW:
        return torch.optim.AdamW(params, lr=self.base_lr,
                                 betas=(self.beta1, self.beta2),
                                 eps=self.eps, weight_decay=self.weight_decay)


def lr_at(step: int, cfg: OptimConfig) -> float:
    """Linear warmup to base_lr, then cosine decay to end_lr_fraction * base."""
    if step < 0:
        raise TrainerError("step must be >= 0")
    if cfg.warmup > 0 and step < cfg.warmup:
        return cfg.base_lr * step / cfg.warmup
    end = cfg.end_lr_fraction * cfg.base_lr
    progress = min(step - cfg.warmup, cfg.total_iters - cfg.warmup)
    span = cfg.total_iters - cfg.warmup
    return end + 0.5 * (cfg.base_lr - end) * (1.0 + math.cos(math.pi * progress / span))


# --------------------------------------------------------------------------- #
# EMA
# --------------------------------------------------------------------------- #

class EmaState:
    """Shadow copy of named parameters, updated geometrically."""

    def __init__(self, model: nn.Module, decay: float = 0.999):
        if not 0.0 < decay < 1.0:
            raise TrainerError("EMA decay must lie in (0, 1)")
        self.decay = decay
        self.shadow: Dict[str, torch.Tensor] = {
            name: p.detach().clone() for name, p in model.named_parameters()}

    @torch.no_grad()
    def update(self, model: nn.Module) -> None:
        d = self.decay
        for name, p in model.named_parameters():
            shadow = self.shadow[name]
            if shadow.shape != p.shape:
                raise TrainerError(f"EMA shape mismatch for {name}")
            shadow.mul_(d).add_(p.detach(), alpha=1.0 - d)

    @torch.no_grad()
    def copy_to(self, model: nn.Module) -> None:
        for name, p in model.named_parameters():
            p.copy_(self.shadow[name])


# --------------------------------------------------------------------------- #
# trainers
# --------------------------------------------------------------------------- #

def _require_finite(value: torch.Tensor, label: str) -> None:
    if not torch.isfinite(value).all():
        raise TrainerError(f"non-finite {label} at training step; aborting")


class Stage1Trainer:
    """Alternating autoencoder/discriminator training for the tokenizer."""

    def __init__(self, model: TokenizerModel, discriminator: Discriminator,
                 extractor: nn.Module, optim_cfg: OptimConfig,
                 weights: LossWeights = LossWeights(),
                 ema_decay: float = 0.999, seed: int = 0):
        self.model = model
        self.discriminator = discriminator
        self.extractor = extractor
        self.cfg = optim_cfg
        self.weights = weights
        self.opt_g = optim_cfg.make_adamw(model.parameters())
        self.opt_d = optim_cfg.make_adamw(discriminator.parameters())
        self.ema = EmaState(model, ema_decay)
        self.lecam = LeCamState()
        self.step_count = 0
        self.data_rng = torch.Generator().manual_seed(seed)

    def _set_lr(self, opt) -> float:
        lr = lr_at(self.step_count, self.cfg)
        for group in opt.param_groups:
            group["lr"] = lr
        return lr

    def step(self, batch: torch.Tensor) -> Dict[str, float]:
        w = self.weights
        adv_active = self.step_count >= w.adv_start_iter

        out = self.model(batch)
        zero = batch.new_zeros(())
        parts = Stage1LossParts(
            recon=l2_reconstruction_loss(batch, out.recon),
            perceptual=perceptual_loss(batch, out.recon, self.extractor),
            commitment=out.commit_term,
            entropy=out.entropy_term,
            adversarial=generator_adv_loss(self.discriminator(out.recon))
            if adv_active else zero,
            codebook=out.codebook_term,
        )
        loss = stage1_generator_objective(parts, w, self.step_count)
        _require_finite(loss, "generator loss")
        self._set_lr(self.opt_g)
        self.opt_g.zero_grad(set_to_none=True)
        loss.backward()
        nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.grad_clip_norm)
        self.opt_g.step()
        self.ema.update(self.model)

        d_loss_val = 0.0
        if adv_active:
            real_logits = self.discriminator(batch)
            fake_logits = self.discriminator(out.recon.detach())
            d_loss = (hinge_d_loss(real_logits, fake_logits)
                      + w.lecam * lecam_regularization(real_logits, fake_logits,
                                                       self.lecam))
            _require_finite(d_loss, "discriminator loss")
            self._set_lr(self.opt_d)
            self.opt_d.zero_grad(set_to_none=True)
            d_loss.backward()
            nn.utils.clip_grad_norm_(self.discriminator.parameters(),
                                     self.cfg.grad_clip_norm)
            self.opt_d.step()
            self.lecam.update(real_logits.detach(), fake_logits.detach())
            d_loss_val = float(d_loss.detach())

        self.step_count += 1
        return {"loss": float(loss.detach()), "recon": float(parts.recon.detach()),
                "perceptual": float(parts.perceptual.detach()),
                "commitment": float(parts.commitment.detach()),
                "entropy": float(parts.entropy.detach()),
                "adversarial": float(parts.adversarial.detach()),
                "codebook": float(parts.codebook.detach()), "d_loss": d_loss_val}

    def state_tensors(self) -> Dict[str, torch.Tensor]:
        named = {}
        _collect_module(named, "model", self.model)
        _collect_module(named, "disc", self.discriminator)
        _collect_ema(named, self.ema)
        _collect_optimizer(named, "opt_g", self.opt_g)
        _collect_optimizer(named, "opt_d", self.opt_d)
        _collect_rng(named, self.data_rng)
        return named

    def load_state_tensors(self, named: Dict[str, torch.Tensor], meta: dict) -> None:
        _restore_module(named, "model", self.model)
        _restore_module(named, "disc", self.discriminator)
        _restore_ema(named, self.ema)
        _restore_optimizer(named, "opt_g", self.opt_g)
        _restore_optimizer(named, "opt_d", self.opt_d)
        _restore_rng(named, self.data_rng)
        self.lecam.ema_real = float(meta["lecam_real"])
        self.lecam.ema_fake = float(meta["lecam_fake"])
        self.step_count = int(meta["step"])

    def meta(self) -> dict:
        return {"step": self.step_count, "lecam_real": self.lecam.ema_real,
                "lecam_fake": self.lecam.ema_fake}


class Stage2Trainer:
    """Masked-bit transformer training over frozen Stage-I tokens."""

    def __init__(self, model: MaskedBitTransformer, optim_cfg: OptimConfig,
                 ema_decay: float = 0.999, seed: int = 0):
        self.model = model
        self.cfg = optim_cfg
        self.opt = optim_cfg.make_adamw(model.parameters())
        self.ema = EmaState(model, ema_decay)
        self.step_count = 0
        self.rng = torch.Generator().manual_seed(seed)
        self.data_rng = torch.Generator().manual_seed(seed + 1)

    def step(self, bit_tokens: torch.Tensor, class_ids: torch.Tensor) -> Dict[str, float]:
        gcfg: GeneratorConfig = self.model.cfg
        batch, seq_len, _ = bit_tokens.shape
        mask = sample_training_mask(batch, seq_len, gcfg.num_groups, self.rng)
        labels = drop_class_label(class_ids, gcfg.num_classes,
                                  gcfg.class_dropout, self.rng)
        masked = apply_mask(bit_tokens, mask)
        logits = self.model(masked, labels)
        loss = masked_bits_loss(logits, bit_tokens.float(), mask,
                                gcfg.label_smoothing)
        _require_finite(loss, "masked-bits loss")
        lr = lr_at(self.step_count, self.cfg)
        for group in self.opt.param_groups:
            group["lr"] = lr
        self.opt.zero_grad(set_to_none=True)
        loss.backward()
        nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.grad_clip_norm)
        self.opt.step()
        self.ema.update(self.model)
        self.step_count += 1
        return {"loss": float(loss.detach()), "lr": lr,
                "masked_fraction": float(mask.float().mean())}

    def state_tensors(self) -> Dict[str, torch.Tensor]:
        named = {}
        _collect_module(named, "model", self.model)
        _collect_ema(named, self.ema)
        _collect_optimizer(named, "opt", self.opt)
        _collect_rng(named, self.rng, "rng/mask")
        _collect_rng(named, self.data_rng, "rng/data")
        return named

    def load_state_tensors(self, named: Dict[str, torch.Tensor], meta: dict) -> None:
        _restore_module(named, "model", self.model)
        _restore_ema(named, self.ema)
        _restore_optimizer(named, "opt", self.opt)
        _restore_rng(named, self.rng, "rng/mask")
        _restore_rng(named, self.data_rng, "rng/data")
        self.step_count = int(meta["step"])

    def meta(self) -> dict:
        return {"step": self.step_count}


# --------------------------------------------------------------------------- #
# state flattening helpers
# --------------------------------------------------------------------------- #

def _collect_module(out: dict, prefix: str, module: nn.Module) -> None:
    for name, t in module.state_dict().items():
        out[f"{prefix}/{name}"] = t


def _restore_module(named: dict, prefix: str, module: nn.Module) -> None:
    sd = module.state_dict()
    fresh = {}
    for name in sd:
        key = f"{prefix}/{name}"
        if key not in named:
            raise ConfigMismatchError(f"checkpoint is missing tensor {key}")
        if named[key].shape != sd[name].shape:
            raise ConfigMismatchError(
                f"shape mismatch for {key}: checkpoint {tuple(named[key].shape)} "
                f"vs model {tuple(sd[name].shape)}")
        fresh[name] = named[key]
    module.load_state_dict(fresh)


def _collect_ema(out: dict, ema: EmaState) -> None:
    for name, t in ema.shadow.items():
        out[f"ema/{name}"] = t


def _restore_ema(named: dict, ema: EmaState) -> None:
    for name in ema.shadow:
        key = f"ema/{name}"
        if key not in named:
            raise ConfigMismatchError(f"checkpoint is missing tensor {key}")
        ema.shadow[name] = named[key].clone()


def _collect_optimizer(out: dict, prefix: str, opt: torch.optim.Optimizer) -> None:
    for idx, state in opt.state_dict()["state"].items():
        for key, value in state.items():
            if torch.is_tensor(value):
                out[f"{prefix}/{idx}/{key}"] = value


def _restore_optimizer(named: dict, prefix: str, opt: torch.optim.Optimizer) -> None:
    sd = opt.state_dict()
    state = {}
    pat = prefix + "/"
    for key, t in named.items():
        if not key.startswith(pat):
            continue
        _, idx, field_name = key.rsplit("/", 2)
        state.setdefault(int(idx), {})[field_name] = t.clone()
    sd["state"] = state
    opt.load_state_dict(sd)


def _collect_rng(out: dict, gen: torch.Generator, key: str = "rng/default") -> None:
    out[key] = gen.get_state().clone()
    out["rng/torch_global"] = torch.get_rng_state().clone()


def _restore_rng(named: dict, gen: torch.Generator, key: str = "rng/default") -> None:
    gen.set_state(named[key].clone())
    torch.set_rng_state(named["rng/torch_global"].clone())


# --------------------------------------------------------------------------- #
# checkpoint container
# --------------------------------------------------------------------------- #

_MAGIC = b"BGCKPT01"
_VERSION = 1

_DTYPES = {
    "float32": (torch.float32, "<f4"), "float64": (torch.float64, "<f8"),
    "int64": (torch.int64, "<i8"), "int32": (torch.int32, "<i4"),
    "uint8": (torch.uint8, "|u1"), "bool": (torch.bool, "|b1"),
}


def _dtype_name(t: torch.Tensor) -> str:
    name = str(t.dtype).replace("torch.", "")
    if name not in _DTYPES:
        raise CheckpointError(f"unsupported tensor dtype {name}")
    return name


def save_checkpoint(path, named_tensors: Dict[str, torch.Tensor],
                    meta: dict, config_digest: str = "") -> None:
    """Write the versioned container: magic, JSON header, raw little-endian
    arrays, trailing sha256 of everything before it.
    """
    entries = []
    payload = io.BytesIO()
    for name in sorted(named_tensors):
        t = named_tensors[name].detach().contiguous().cpu()
        dtype = _dtype_name(t)
        raw = t.numpy().astype(_DTYPES[dtype][1], copy=False).tobytes()
        entries.append({"name": name, "dtype": dtype,
                        "shape": list(t.shape), "offset": payload.tell(),
                        "nbytes": len(raw)})
        payload.write(raw)
    header = json.dumps({"version": _VERSION, "config_digest": config_digest,
                         "meta": meta, "arrays": entries}).encode()
    body = _MAGIC + struct.pack("<Q", len(header)) + header + payload.getvalue()
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as fh:
        fh.write(body + digest)


def load_checkpoint(path, expected_digest: Optional[str] = None):
    """Read the container back; returns (named_tensors, meta, config_digest)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(_MAGIC) + 8 + 32 or not blob.startswith(_MAGIC):
        raise CheckpointCorruptError("not a checkpoint file")
    body, stored = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != stored:
        raise CheckpointCorruptError("checksum mismatch; file is corrupt")
    header_len = struct.unpack("<Q", body[8:16])[0]
    try:
        header = json.loads(body[16:16 + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointCorruptError(f"unreadable header: {exc}") from exc
    if header.get("version") != _VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {header.get('version')} != {_VERSION}")
    if expected_digest is not None and header["config_digest"] != expected_digest:
        raise ConfigMismatchError(
            "checkpoint was written under a different configuration "
            f"({header['config_digest'][:12]}... != {expected_digest[:12]}...)")
    payload = body[16 + header_len:]
    named = {}
    for entry in header["arrays"]:
        torch_dtype, np_dtype = _DTYPES[entry["dtype"]]
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np_dtype).copy()
        named[entry["name"]] = torch.from_numpy(arr).to(torch_dtype).reshape(entry["shape"])
    return named, header["meta"], header["config_digest"]
