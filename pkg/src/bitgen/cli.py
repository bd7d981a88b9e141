"""Command-line surface: training, tokenization, sampling, evaluation and
analysis commands, all deterministic given (config, seed) and writing a run
manifest plus line-delimited metric records to the output directory.
"""

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .config import (ConfigError, ExperimentConfig, build_tokenizer,
                     check_stage_compatibility, config_digest, load_config,
                     save_config, stage_digest, to_dict, tokenizer_digest)
from .data import (DataError, iterate_eval_batches, make_dataset, sample_batch,
                   to_float_batch)
from .evaluation import (EvaluationError, append_metric_record, bit_flip_probe,
                         compute_stats, extract_features, frechet_distance,
                         inception_score, nearest_neighbors,
                         reconstruction_eval)
from .generator import GeneratorError, MaskedBitTransformer
from .losses import Discriminator, LossError, TinyConvLogits
from .quantizers import QuantizerError, index_to_bits
from .sampler import SamplerError, generate_bits
from .token_dataset import (TokenDataset, TokenDatasetError,
                            read_token_dataset, write_token_dataset)
from .tokenizer import TokenizerError, TokenizerModel
from .trainer import (CheckpointError, ConfigMismatchError, Stage1Trainer,
                      Stage2Trainer, TrainerError, load_checkpoint,
                      save_checkpoint)

_TYPED_ERRORS = (ConfigError, DataError, EvaluationError, GeneratorError,
                 LossError, QuantizerError, SamplerError, TokenDatasetError,
                 TokenizerError, TrainerError, CheckpointError, OSError)

_EXTRACTOR_ID = "tiny-conv-logits-v1"


# --------------------------------------------------------------------------- #
# shared plumbing
# --------------------------------------------------------------------------- #

def _load_cfg(args) -> ExperimentConfig:
    cfg = load_config(args.config, args.set)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "output_dir", None) is not None:
        cfg = replace(cfg, output_dir=args.output_dir)
    return cfg


def _outdir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, cfg: ExperimentConfig,
                    outputs: dict, extra: dict = None) -> None:
    manifest = {
        "command": command,
        "config_digest": config_digest(cfg),
        "seed": cfg.seed,
        "outputs": {name: {"path": str(p), "sha256": _sha256_file(p)}
                    for name, p in outputs.items()},
        "extra": extra or {},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    save_config(cfg, out / "config_used.yaml")


def _metric(out: Path, name: str, value: float, cfg: ExperimentConfig,
            count: int) -> None:
    append_metric_record(out / "metrics.jsonl", name, value, _EXTRACTOR_ID,
                         count, cfg.seed)


def _to_uint8(images: torch.Tensor) -> np.ndarray:
    arr = ((images.clamp(-1, 1) + 1.0) * 127.5).round().to(torch.uint8)
    return arr.permute(0, 2, 3, 1).numpy()


def _save_png_grid(images: torch.Tensor, path: Path) -> None:
    arr = _to_uint8(images)
    n, h, w, _ = arr.shape
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    grid = np.zeros((rows * h, cols * w, 3), np.uint8)
    for i in range(n):
        r, c = divmod(i, cols)
        grid[r * h:(r + 1) * h, c * w:(c + 1) * w] = arr[i]
    Image.fromarray(grid).save(path)


def _override_iters(optim, args):
    if getattr(args, "iters", None) is not None:
        warmup = min(optim.warmup, max(0, args.iters // 10))
        optim = replace(optim, total_iters=args.iters, warmup=warmup)
    if getattr(args, "batch_size", None) is not None:
        optim = replace(optim, batch_size=args.batch_size)
    return optim


def _read_ckpt(path, digest):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"missing checkpoint: {path}")
    return load_checkpoint(path, expected_digest=digest)


def _apply_ema(model, named):
    with torch.no_grad():
        for name, p in model.named_parameters():
            key = f"ema/{name}"
            if key not in named:
                raise ConfigMismatchError(f"checkpoint has no EMA tensor {key}")
            p.copy_(named[key])


def _load_stage1_model(cfg: ExperimentConfig, path, use_ema: bool = True) -> TokenizerModel:
    torch.manual_seed(cfg.seed)
    model = build_tokenizer(cfg)
    named, _, _ = _read_ckpt(path, stage_digest(cfg, 1))
    state = {k.split("/", 1)[1]: v for k, v in named.items() if k.startswith("model/")}
    model.load_state_dict(state)
    if use_ema:
        _apply_ema(model, named)
    model.eval()
    return model


def _load_stage2_model(cfg: ExperimentConfig, path, use_ema: bool = True) -> MaskedBitTransformer:
    torch.manual_seed(cfg.seed)
    model = MaskedBitTransformer(cfg.generator)
    named, _, _ = _read_ckpt(path, stage_digest(cfg, 2))
    state = {k.split("/", 1)[1]: v for k, v in named.items() if k.startswith("model/")}
    model.load_state_dict(state)
    if use_ema:
        _apply_ema(model, named)
    model.eval()
    return model


def _grid_hw(cfg: ExperimentConfig):
    stride = cfg.autoencoder.output_stride
    res = cfg.dataset.resolution
    if res % stride:
        raise ConfigError(f"resolution {res} not divisible by output stride {stride}")
    return (res // stride, res // stride)


# --------------------------------------------------------------------------- #
# training commands
# --------------------------------------------------------------------------- #

def _build_stage1_trainer(cfg: ExperimentConfig) -> Stage1Trainer:
    torch.manual_seed(cfg.seed)
    model = build_tokenizer(cfg)
    disc = Discriminator(cfg.discriminator)
    extractor = TinyConvLogits(seed=cfg.seed)
    return Stage1Trainer(model, disc, extractor, cfg.stage1_optim, cfg.loss,
                         seed=cfg.seed)


def cmd_train_stage1(args) -> int:
    cfg = _load_cfg(args)
    cfg = replace(cfg, stage1_optim=_override_iters(cfg.stage1_optim, args))
    out = _outdir(cfg)
    dataset = make_dataset(cfg.dataset, cfg.seed)
    trainer = _build_stage1_trainer(cfg)
    ckpt = out / "stage1.ckpt"
    digest = stage_digest(cfg, 1)
    if args.resume and ckpt.exists():
        named, meta, _ = _read_ckpt(ckpt, digest)
        trainer.load_state_tensors(named, meta)
        print(f"[stage1] resumed at step {trainer.step_count}")
    total = cfg.stage1_optim.total_iters
    log_every = max(1, total // 10)
    start = time.time()
    recent = []
    while trainer.step_count < total:
        batch, _ = sample_batch(dataset, cfg.stage1_optim.batch_size,
                                trainer.data_rng, cfg.dataset, stage=1)
        metrics = trainer.step(batch)
        recent.append(metrics["recon"])
        if trainer.step_count % log_every == 0 or trainer.step_count == total:
            mean_recon = sum(recent[-50:]) / len(recent[-50:])
            print(f"[stage1] step {trainer.step_count}/{total} "
                  f"loss {metrics['loss']:.4f} recon~{mean_recon:.4f} "
                  f"({time.time() - start:.0f}s)", flush=True)
    save_checkpoint(ckpt, trainer.state_tensors(), trainer.meta(), digest)
    if recent:
        _metric(out, "stage1_final_recon", sum(recent[-50:]) / len(recent[-50:]),
                cfg, len(dataset))
    _write_manifest(out, "train-stage1", cfg, {"checkpoint": ckpt},
                    {"steps": trainer.step_count})
    return 0


def _tokenize_dataset(model: TokenizerModel, dataset, batch_size: int = 32):
    """Deterministic full pass; returns (M, T, K) bit tokens as int8."""
    chunks = []
    with torch.no_grad():
        for batch in iterate_eval_batches(dataset, batch_size):
            tokens = model.tokenize(batch)
            if not model.is_binary:
                width = (model.quantizer.num_entries - 1).bit_length()
                if (1 << width) != model.quantizer.num_entries:
                    raise ConfigError(
                        "bit serialization of VQ indices needs a power-of-two codebook")
                tokens = index_to_bits(tokens, width)
            chunks.append(tokens.to(torch.int8))
    return torch.cat(chunks, dim=0)


def cmd_tokenize(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(cfg)
    dataset = make_dataset(cfg.dataset, cfg.seed)
    model = _load_stage1_model(cfg, args.stage1 or out / "stage1.ckpt",
                               use_ema=not args.raw_weights)
    bits = _tokenize_dataset(model, dataset)
    path = Path(args.output or out / "tokens.bgtok")
    write_token_dataset(path, bits, torch.from_numpy(dataset.labels),
                        _grid_hw(cfg), tokenizer_digest(cfg))
    print(f"[tokenize] wrote {len(bits)} samples "
          f"({bits.shape[1]} tokens x {bits.shape[2]} bits) to {path}")
    _write_manifest(out, "tokenize", cfg, {"tokens": path},
                    {"samples": len(bits)})
    return 0


def cmd_train_stage2(args) -> int:
    cfg = _load_cfg(args)
    cfg = replace(cfg, stage2_optim=_override_iters(cfg.stage2_optim, args))
    check_stage_compatibility(cfg)
    out = _outdir(cfg)
    tokens_path = Path(args.tokens or out / "tokens.bgtok")
    if tokens_path.exists():
        token_ds = read_token_dataset(tokens_path, tokenizer_digest(cfg))
    else:
        stage1 = args.stage1 or out / "stage1.ckpt"
        print(f"[stage2] no token dataset at {tokens_path}; tokenizing via {stage1}")
        dataset = make_dataset(cfg.dataset, cfg.seed)
        model1 = _load_stage1_model(cfg, stage1)
        bits = _tokenize_dataset(model1, dataset)
        token_ds = TokenDataset(bits, torch.from_numpy(dataset.labels),
                                _grid_hw(cfg), tokenizer_digest(cfg))
    gcfg = cfg.generator
    if token_ds.num_bits != gcfg.num_bits:
        raise ConfigError(f"token dataset bit width {token_ds.num_bits} "
                          f"!= generator bit width {gcfg.num_bits}")
    if token_ds.bits.shape[1] != gcfg.seq_len:
        raise ConfigError(f"token dataset length {token_ds.bits.shape[1]} "
                          f"!= generator seq_len {gcfg.seq_len}")
    if int(token_ds.class_ids.max()) >= gcfg.num_classes:
        raise ConfigError("token dataset class ids exceed generator num_classes")

    torch.manual_seed(cfg.seed)
    model = MaskedBitTransformer(gcfg)
    trainer = Stage2Trainer(model, cfg.stage2_optim, seed=cfg.seed)
    ckpt = out / "stage2.ckpt"
    digest = stage_digest(cfg, 2)
    if args.resume and ckpt.exists():
        named, meta, _ = _read_ckpt(ckpt, digest)
        trainer.load_state_tensors(named, meta)
        print(f"[stage2] resumed at step {trainer.step_count}")
    total = cfg.stage2_optim.total_iters
    log_every = max(1, total // 10)
    start = time.time()
    recent = []
    while trainer.step_count < total:
        idx = torch.randint(len(token_ds), (cfg.stage2_optim.batch_size,),
                            generator=trainer.data_rng)
        metrics = trainer.step(token_ds.bits[idx].float(), token_ds.class_ids[idx])
        recent.append(metrics["loss"])
        if trainer.step_count % log_every == 0 or trainer.step_count == total:
            mean_loss = sum(recent[-50:]) / len(recent[-50:])
            print(f"[stage2] step {trainer.step_count}/{total} "
                  f"loss~{mean_loss:.4f} ({time.time() - start:.0f}s)", flush=True)
    save_checkpoint(ckpt, trainer.state_tensors(), trainer.meta(), digest)
    if recent:
        _metric(out, "stage2_final_loss", sum(recent[-50:]) / len(recent[-50:]),
                cfg, len(token_ds))
    _write_manifest(out, "train-stage2", cfg, {"checkpoint": ckpt},
                    {"steps": trainer.step_count})
    return 0


# --------------------------------------------------------------------------- #
# sampling and evaluation commands
# --------------------------------------------------------------------------- #

def _parse_classes(args, num_classes: int):
    if args.classes:
        ids = [int(x) for x in args.classes.split(",")]
    else:
        ids = [args.class_id] * args.num
    for c in ids:
        if not 0 <= c < num_classes:
            raise ConfigError(f"class id {c} outside [0, {num_classes})")
    return torch.tensor(ids, dtype=torch.long)


def cmd_sample(args) -> int:
    cfg = _load_cfg(args)
    check_stage_compatibility(cfg)
    out = _outdir(cfg)
    model1 = _load_stage1_model(cfg, args.stage1 or out / "stage1.ckpt")
    model2 = _load_stage2_model(cfg, args.stage2 or out / "stage2.ckpt")
    class_ids = _parse_classes(args, cfg.generator.num_classes)
    scfg = replace(cfg.sample, seed=cfg.seed if args.seed is None else args.seed)
    bits = generate_bits(model2, class_ids, scfg)
    images = model1.decode_tokens(bits, _grid_hw(cfg))
    png = out / "samples.png"
    _save_png_grid(images, png)
    bits_path = out / "sample_tokens.bgtok"
    write_token_dataset(bits_path, bits.to(torch.int8), class_ids,
                        _grid_hw(cfg), tokenizer_digest(cfg))
    print(f"[sample] wrote {len(class_ids)} samples to {png}")
    _write_manifest(out, "sample", cfg,
                    {"samples": png, "tokens": bits_path},
                    {"classes": class_ids.tolist(), "sample_seed": scfg.seed})
    return 0


def cmd_eval_recon(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(cfg)
    dataset = make_dataset(cfg.dataset, cfg.seed)
    model = _load_stage1_model(cfg, args.stage1 or out / "stage1.ckpt",
                               use_ema=not args.raw_weights)
    extractor = TinyConvLogits(seed=cfg.seed)
    batches = list(iterate_eval_batches(dataset, args.batch_size))
    if args.max_samples:
        kept, seen = [], 0
        for b in batches:
            if seen >= args.max_samples:
                break
            kept.append(b[:args.max_samples - seen])
            seen += len(kept[-1])
        batches = kept
    with torch.no_grad():
        score = reconstruction_eval(batches, lambda b: model(b).recon, extractor)
    count = sum(len(b) for b in batches)
    print(f"[eval-recon] rfid_proxy {score:.4f} over {count} images")
    _metric(out, "rfid_proxy", score, cfg, count)
    _write_manifest(out, "eval-recon", cfg, {}, {"rfid_proxy": score})
    return 0


def cmd_eval_gen(args) -> int:
    cfg = _load_cfg(args)
    check_stage_compatibility(cfg)
    out = _outdir(cfg)
    dataset = make_dataset(cfg.dataset, cfg.seed)
    model1 = _load_stage1_model(cfg, args.stage1 or out / "stage1.ckpt")
    model2 = _load_stage2_model(cfg, args.stage2 or out / "stage2.ckpt")
    extractor = TinyConvLogits(seed=cfg.seed)
    num_classes = min(cfg.generator.num_classes, dataset.num_classes)
    per_class = args.num_per_class
    generated = []
    for cls in range(num_classes):
        ids = torch.full((per_class,), cls, dtype=torch.long)
        scfg = replace(cfg.sample, seed=cfg.seed * 1000 + cls)
        bits = generate_bits(model2, ids, scfg)
        generated.append(model1.decode_tokens(bits, _grid_hw(cfg)))
    gen_images = torch.cat(generated, dim=0)
    real_feats = extract_features(iterate_eval_batches(dataset, 32), extractor)
    gen_feats = extract_features([gen_images], extractor)
    fd = frechet_distance(compute_stats(real_feats), compute_stats(gen_feats))
    with torch.no_grad():
        probs = torch.softmax(extractor(gen_images), dim=1).double()
    score = inception_score(probs / probs.sum(dim=1, keepdim=True))
    print(f"[eval-gen] fd_proxy {fd:.4f} inception_proxy {score:.4f} "
          f"over {len(gen_images)} samples")
    _metric(out, "gfid_proxy", fd, cfg, len(gen_images))
    _metric(out, "inception_proxy", score, cfg, len(gen_images))
    _save_png_grid(gen_images, out / "eval_gen_samples.png")
    _write_manifest(out, "eval-gen", cfg,
                    {"samples": out / "eval_gen_samples.png"},
                    {"gfid_proxy": fd, "inception_proxy": score})
    return 0


# --------------------------------------------------------------------------- #
# analysis commands
# --------------------------------------------------------------------------- #

def cmd_analyze_bitflip(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(cfg)
    dataset = make_dataset(cfg.dataset, cfg.seed)
    model = _load_stage1_model(cfg, args.stage1 or out / "stage1.ckpt")
    if not model.is_binary:
        raise ConfigError("bit-flip analysis requires the 'lfq' quantizer")
    image = to_float_batch(dataset.images[args.index:args.index + 1])
    other_idx = (args.index + len(dataset) // 2) % len(dataset)
    other = to_float_batch(dataset.images[other_idx:other_idx + 1])
    with torch.no_grad():
        bits = model.tokenize(image).float()
        recon = model.decode_tokens(bits, _grid_hw(cfg))
        other_recon = model(other).recon
    decode = lambda b: model.decode_tokens(b, _grid_hw(cfg))
    baseline = float((other_recon - recon).pow(2).mean())
    closer = 0
    for i in range(model.num_bits):
        probe = bit_flip_probe(bits, i, decode)
        dist = float((probe - recon).pow(2).mean())
        _metric(out, f"bitflip_l2_bit{i}", dist, cfg, 1)
        if dist < baseline:
            closer += 1
        print(f"[bitflip] bit {i}: L2 {dist:.5f} (cross-image baseline {baseline:.5f})")
    print(f"[bitflip] {closer}/{model.num_bits} bit flips stay closer than "
          f"the cross-image baseline")
    _write_manifest(out, "analyze-bitflip", cfg, {},
                    {"closer_bits": closer, "total_bits": model.num_bits,
                     "baseline_l2": baseline})
    return 0


def cmd_analyze_nn(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(cfg)
    dataset = make_dataset(cfg.dataset, cfg.seed)
    model = _load_stage1_model(cfg, args.stage1 or out / "stage1.ckpt")
    extractor = TinyConvLogits(seed=cfg.seed)
    bits = _tokenize_dataset(model, dataset)
    images = to_float_batch(dataset.images)
    q = args.index
    results = {}
    for metric in ("hamming", "perceptual"):
        if metric == "hamming":
            ranked = nearest_neighbors(bits[q], bits, "hamming", args.k)
        else:
            ranked = nearest_neighbors(images[q], images, "perceptual", args.k,
                                       extractor=extractor)
        results[metric] = ranked
        pretty = ", ".join(f"#{i} d={d:.1f}" for i, d in ranked)
        print(f"[nn] {metric}: {pretty}")
    (out / "nn_report.json").write_text(json.dumps(
        {"query": q, "k": args.k,
         "hamming": results["hamming"], "perceptual": results["perceptual"],
         "perceptual_metric": f"L2 in {_EXTRACTOR_ID} logit space"},
        indent=2) + "\n")
    _write_manifest(out, "analyze-nn", cfg, {"report": out / "nn_report.json"})
    return 0


# --------------------------------------------------------------------------- #
# roadmap
# --------------------------------------------------------------------------- #

_RUNGS = ("baseline", "architecture", "perceptual", "discriminator", "ema",
          "entropy")


def _rung_config(cfg: ExperimentConfig, upto: int):
    """Cumulative ablation ladder from a plain VQ autoencoder up to the full
    recipe. Returns (config, evaluate_with_ema)."""
    names = _RUNGS[:upto + 1]
    ae = replace(cfg.autoencoder, use_attention=True,
                 decoder_res_blocks_per_stage=3)
    quant = replace(cfg.quantizer, kind="vq", codebook_dim=cfg.autoencoder.latent_dim)
    weights = replace(cfg.loss, perceptual=0.0, adversarial=0.0)
    use_ema = False
    if "architecture" in names:
        ae = replace(ae, use_attention=False, decoder_res_blocks_per_stage=None)
    if "perceptual" in names:
        weights = replace(weights, perceptual=cfg.loss.perceptual)
    if "discriminator" in names:
        weights = replace(weights, adversarial=cfg.loss.adversarial,
                          adv_start_iter=0)
    if "ema" in names:
        use_ema = True
    if "entropy" in names:
        quant = replace(quant, kind="lfq")
    return replace(cfg, autoencoder=ae, quantizer=quant, loss=weights), use_ema


def cmd_roadmap(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(cfg)
    rungs = args.rungs.split(",") if args.rungs else list(_RUNGS)
    for r in rungs:
        if r not in _RUNGS:
            raise ConfigError(f"unknown roadmap rung {r!r}; choose from {_RUNGS}")
    dataset = make_dataset(cfg.dataset, cfg.seed)
    extractor = TinyConvLogits(seed=cfg.seed)
    eval_batches = list(iterate_eval_batches(dataset, 16))[:8]
    rows = []
    for rung in rungs:
        rung_cfg, use_ema = _rung_config(cfg, _RUNGS.index(rung))
        optim = _override_iters(rung_cfg.stage1_optim, args)
        rung_cfg = replace(rung_cfg, stage1_optim=optim)
        trainer = _build_stage1_trainer(rung_cfg)
        while trainer.step_count < optim.total_iters:
            batch, _ = sample_batch(dataset, optim.batch_size,
                                    trainer.data_rng, rung_cfg.dataset, stage=1)
            trainer.step(batch)
        model = trainer.model
        if use_ema:
            trainer.ema.copy_to(model)
        model.eval()
        with torch.no_grad():
            score = reconstruction_eval(eval_batches,
                                        lambda b: model(b).recon, extractor)
        rows.append((rung, score))
        _metric(out, f"roadmap_{rung}_rfid_proxy", score, cfg,
                sum(len(b) for b in eval_batches))
        print(f"[roadmap] {rung:<14s} rfid_proxy {score:.4f}", flush=True)
    print()
    print(f"{'rung':<16s}{'rfid_proxy':>12s}")
    for rung, score in rows:
        print(f"{rung:<16s}{score:>12.4f}")
    _write_manifest(out, "roadmap", cfg, {},
                    {"table": [{"rung": r, "rfid_proxy": s} for r, s in rows]})
    return 0


# --------------------------------------------------------------------------- #
# argument parsing
# --------------------------------------------------------------------------- #

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file (defaults when omitted)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="dotted-path config override, repeatable")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--output-dir", help="override config output_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bitgen",
        description="Two-stage image generation over binary latent tokens")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-stage1", help="train the image tokenizer")
    _add_common(p)
    p.add_argument("--iters", type=int, help="override total iterations")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train_stage1)

    p = sub.add_parser("train-stage2", help="train the masked-bit generator")
    _add_common(p)
    p.add_argument("--iters", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--tokens", help="pre-tokenized dataset path")
    p.add_argument("--stage1", help="stage-1 checkpoint for on-the-fly tokens")
    p.set_defaults(func=cmd_train_stage2)

    p = sub.add_parser("tokenize", help="serialize dataset tokens for stage 2")
    _add_common(p)
    p.add_argument("--stage1")
    p.add_argument("--output")
    p.add_argument("--raw-weights", action="store_true",
                   help="use raw instead of EMA weights")
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("sample", help="generate images from class labels")
    _add_common(p)
    p.add_argument("--stage1")
    p.add_argument("--stage2")
    p.add_argument("--class-id", type=int, default=0)
    p.add_argument("--num", type=int, default=4)
    p.add_argument("--classes", help="comma-separated class ids (overrides --class-id)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval-recon", help="reconstruction quality proxy")
    _add_common(p)
    p.add_argument("--stage1")
    p.add_argument("--raw-weights", action="store_true")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--max-samples", type=int, default=256)
    p.set_defaults(func=cmd_eval_recon)

    p = sub.add_parser("eval-gen", help="generation quality proxies")
    _add_common(p)
    p.add_argument("--stage1")
    p.add_argument("--stage2")
    p.add_argument("--num-per-class", type=int, default=8)
    p.set_defaults(func=cmd_eval_gen)

    p = sub.add_parser("analyze-bitflip", help="semantic bit-flip probe")
    _add_common(p)
    p.add_argument("--stage1")
    p.add_argument("--index", type=int, default=0, help="dataset image index")
    p.set_defaults(func=cmd_analyze_bitflip)

    p = sub.add_parser("analyze-nn", help="Hamming/perceptual nearest neighbors")
    _add_common(p)
    p.add_argument("--stage1")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--k", type=int, default=5)
    p.set_defaults(func=cmd_analyze_nn)

    p = sub.add_parser("roadmap", help="staged tokenizer-improvement ladder")
    _add_common(p)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--rungs", help="comma-separated subset of "
                                   + ",".join(_RUNGS))
    p.set_defaults(func=cmd_roadmap)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _TYPED_ERRORS as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
