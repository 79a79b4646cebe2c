"""Pretraining loop: AdamW, linear warmup into cosine decay, per-step
metrics CSV, periodic TAPQ1 checkpoints, and held-out evaluation.

Everything is deterministic for a fixed seed: the torch RNG seeds the
parameter init and a numpy generator drives every data-side draw
(batch choice, span masking, negative mining, match labels).
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt_io
from .checkpoint import Checkpoint
from .config import TrainConfig
from .corpus import OcrDocument, load_corpus, mask_spans
from .exceptions import TrainingDivergedError, ValidationError
from .model import TapqModel
from .objectives import (collate, contrastive_loss, contrastive_similarity,
                         denoising_loss, matching_loss, retrieval_top1,
                         total_loss)
from .tokenizer import Vocabulary, build_vocab

METRICS_HEADER = "step,lr,l_lm,l_con,l_match,total,acc_lm,acc_ret,acc_match"


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear 0 -> base_lr over warmup, then cosine from base_lr to 0."""
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        return cfg.base_lr * step / cfg.warmup_steps
    if cfg.steps == cfg.warmup_steps:
        return cfg.base_lr
    progress = (step - cfg.warmup_steps) / (cfg.steps - cfg.warmup_steps)
    progress = min(max(progress, 0.0), 1.0)
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def build_fresh_model(cfg: TrainConfig, vocab: Vocabulary) -> TapqModel:
    torch.manual_seed(cfg.seed)
    return TapqModel(cfg.encoder_config(vocab.size), cfg.ocrq_config(vocab.size))


def _sample_batch(docs: list[OcrDocument], cfg: TrainConfig,
                  vocab: Vocabulary, rng: np.random.Generator):
    idx = rng.choice(len(docs), size=cfg.batch_size, replace=False)
    examples = [mask_spans(docs[i], cfg.mask_density, cfg.mean_span_len, rng)
                for i in idx]
    return collate(examples, vocab)


def _dump_diagnostics(out_dir: Path, step: int, batch, bundle) -> Path:
    dump = {
        "step": step,
        "doc_ids": list(batch.doc_ids),
        "l_lm": bundle.l_lm.item(), "l_con": bundle.l_con.item(),
        "l_match": bundle.l_match.item(), "total": bundle.total.item(),
    }
    path = out_dir / f"diverged_step{step}.json"
    path.write_text(json.dumps(dump, indent=2), encoding="utf-8")
    return path


def train(cfg: TrainConfig, docs: list[OcrDocument] | None = None,
          resume_from: Checkpoint | None = None) -> Checkpoint:
    """Run the three-objective pretraining and return the final checkpoint.

    ``docs`` may be passed directly (tests); otherwise they are loaded
    from ``cfg.corpus_path``.
    """
    cfg.validate()
    if cfg.torch_threads > 0:
        torch.set_num_threads(cfg.torch_threads)
    if docs is None:
        docs = load_corpus(cfg.corpus_path)
    if len(docs) < cfg.batch_size:
        raise ValidationError(
            f"corpus has {len(docs)} docs; need at least batch_size={cfg.batch_size}")

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if resume_from is not None:
        vocab = resume_from.vocab
        model = ckpt_io.build_model(resume_from)
        start_step = resume_from.step
    else:
        vocab = build_vocab(docs, min_count=cfg.min_count, mmax=cfg.mmax)
        model = build_fresh_model(cfg, vocab)
        start_step = 0

    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.base_lr,
                                  weight_decay=cfg.weight_decay)
    data_rng = np.random.default_rng(cfg.seed)
    if resume_from is not None:
        ckpt_io.restore_optimizer(resume_from, model, optimizer)
        if resume_from.numpy_rng is not None:
            data_rng.bit_generator.state = resume_from.numpy_rng
        if resume_from.torch_rng:
            torch.set_rng_state(torch.frombuffer(
                bytearray(resume_from.torch_rng), dtype=torch.uint8).clone())

    loss_cfg = cfg.loss_config()
    metrics_path = out_dir / "metrics.csv"
    mode = "a" if resume_from is not None and metrics_path.exists() else "w"
    with metrics_path.open(mode, encoding="utf-8") as metrics:
        if mode == "w":
            metrics.write(METRICS_HEADER + "\n")
        model.train()
        for step in range(start_step, cfg.steps):
            lr = lr_at(step, cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr
            batch = _sample_batch(docs, cfg, vocab, data_rng)
            bundle = total_loss(model, batch, loss_cfg, data_rng)
            if not torch.isfinite(bundle.total):
                dump = _dump_diagnostics(out_dir, step, batch, bundle)
                raise TrainingDivergedError(
                    f"non-finite loss at step {step}; batch dumped to {dump}")
            optimizer.zero_grad()
            bundle.total.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            diag = bundle.diagnostics
            metrics.write(
                f"{step},{lr:.8g},{bundle.l_lm.item():.6f},{bundle.l_con.item():.6f},"
                f"{bundle.l_match.item():.6f},{bundle.total.item():.6f},"
                f"{diag['acc_lm']:.4f},{diag['acc_ret']:.4f},{diag['acc_match']:.4f}\n")
            done = step + 1
            if cfg.checkpoint_every > 0 and done % cfg.checkpoint_every == 0 and done < cfg.steps:
                snap = ckpt_io.from_training(model, optimizer, cfg, vocab, done, data_rng)
                ckpt_io.save_checkpoint(snap, out_dir / f"checkpoint_step{done}.tapq")

    final = ckpt_io.from_training(model, optimizer, cfg, vocab,
                                  max(start_step, cfg.steps), data_rng)
    ckpt_io.save_checkpoint(final, out_dir / "checkpoint.tapq")
    return final


def evaluate(ckpt: Checkpoint, heldout: list[OcrDocument], n_batches: int = 50,
             batch_size: int = 16, seed: int = 12345) -> dict[str, float]:
    """Proxy metrics for the three objectives on held-out documents.

    Reports masked-token accuracy, retrieval top-1 within batches of
    ``batch_size`` (chance 1/batch_size), and matching accuracy at
    threshold 0.5 with balanced labels.
    """
    if not heldout:
        raise ValidationError("held-out corpus is empty")
    if len(heldout) < batch_size:
        raise ValidationError(
            f"held-out corpus has {len(heldout)} docs; need >= {batch_size}")
    cfg = ckpt.config
    if cfg.torch_threads > 0:
        torch.set_num_threads(cfg.torch_threads)
    model = ckpt_io.build_model(ckpt)
    model.eval()
    rng = np.random.default_rng(seed)
    acc_lm = []
    acc_ret = []
    acc_match = []
    losses = {"l_lm": [], "l_con": [], "l_match": []}
    with torch.no_grad():
        for _ in range(n_batches):
            idx = rng.choice(len(heldout), size=batch_size, replace=False)
            examples = [mask_spans(heldout[i], cfg.mask_density, cfg.mean_span_len, rng)
                        for i in idx]
            batch = collate(examples, ckpt.vocab)
            l_lm, diag_lm = denoising_loss(model, batch)
            sim = contrastive_similarity(model, batch)
            l_con = contrastive_loss(sim, cfg.tau,
                                     include_diagonal=cfg.contrastive_include_diagonal,
                                     symmetric=cfg.symmetric_contrastive)
            l_match, diag_match = matching_loss(model, batch, cfg.p_match, rng,
                                                similarity=sim)
            acc_lm.append(diag_lm["acc_lm"])
            acc_ret.append(retrieval_top1(sim))
            acc_match.append(diag_match["acc_match"])
            losses["l_lm"].append(float(l_lm))
            losses["l_con"].append(float(l_con))
            losses["l_match"].append(float(l_match))
    return {
        "acc_lm": float(np.mean(acc_lm)),
        "acc_ret": float(np.mean(acc_ret)),
        "acc_match": float(np.mean(acc_match)),
        "l_lm": float(np.mean(losses["l_lm"])),
        "l_con": float(np.mean(losses["l_con"])),
        "l_match": float(np.mean(losses["l_match"])),
        "n_batches": float(n_batches),
        "batch_size": float(batch_size),
    }
