"""Shared fixtures: small corpora, tiny models, and the reference
training run used by the learning smoke tests."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from tapq import (LayoutSpec, TrainConfig, build_vocab, collate,
                  generate_synthetic_document, mask_spans)
from tapq.model import TapqModel
from tapq.trainer import build_fresh_model, evaluate, train

torch.set_num_threads(1)

REFERENCE_SEED = 0
TRAIN_DOC_SEED = 7_000_021
HELD_DOC_SEED = 29_100_251


def make_docs(n: int, layout: LayoutSpec | None = None, base_seed: int = 1,
              prefix: str = "doc") -> list:
    layout = layout or LayoutSpec()
    return [generate_synthetic_document(base_seed + i, layout, doc_id=f"{prefix}-{i:06d}")
            for i in range(n)]


def make_batch(docs, vocab, n=4, seed=0, density=0.15, span_len=3.0,
               dtype=torch.float32):
    rng = np.random.default_rng(seed)
    examples = [mask_spans(d, density, span_len, rng) for d in docs[:n]]
    return collate(examples, vocab, dtype=dtype)


@pytest.fixture(scope="session")
def small_corpus():
    return make_docs(64, base_seed=100)


@pytest.fixture(scope="session")
def small_vocab(small_corpus):
    return build_vocab(small_corpus, min_count=1, mmax=32)


@pytest.fixture()
def tiny_cfg():
    return TrainConfig(d=16, d_ocr=16, k_queries=4, enc_layers=1, q_layers=1,
                       n_heads=2, ff_mult=2, proj_dim=8, steps=10,
                       warmup_steps=2, batch_size=4, checkpoint_every=0)


@pytest.fixture()
def tiny_model(tiny_cfg, small_vocab) -> TapqModel:
    return build_fresh_model(tiny_cfg, small_vocab)


@pytest.fixture(scope="session")
def reference_run(tmp_path_factory):
    """The toy reference run: 2k docs, d=64, K=8, 4 layers, 3k steps, batch 16.

    Trains once per session; the learning smoke tests and the acceptance
    gate all read from here. Returns the final checkpoint, the held-out
    documents, the untrained checkpoint, and both evaluations.
    """
    layout = LayoutSpec()
    train_docs = [generate_synthetic_document(TRAIN_DOC_SEED + i, layout,
                                              doc_id=f"doc-{i:06d}")
                  for i in range(2000)]
    held_docs = [generate_synthetic_document(HELD_DOC_SEED + i, layout,
                                             doc_id=f"held-{i:06d}")
                 for i in range(256)]
    out_dir = tmp_path_factory.mktemp("reference_run")
    cfg = TrainConfig(steps=3000, warmup_steps=200, batch_size=16, base_lr=1e-3,
                      seed=REFERENCE_SEED, out_dir=str(out_dir), checkpoint_every=0)
    ckpt = train(cfg, docs=train_docs)

    untrained_dir = tmp_path_factory.mktemp("reference_untrained")
    cfg0 = TrainConfig(steps=0, warmup_steps=0, batch_size=16, seed=REFERENCE_SEED,
                       out_dir=str(untrained_dir), checkpoint_every=0)
    ckpt0 = train(cfg0, docs=train_docs)

    metrics = evaluate(ckpt, held_docs, n_batches=50, batch_size=16)
    metrics0 = evaluate(ckpt0, held_docs, n_batches=50, batch_size=16)
    return {
        "checkpoint": ckpt,
        "untrained": ckpt0,
        "held_docs": held_docs,
        "train_docs": train_docs,
        "metrics": metrics,
        "metrics_untrained": metrics0,
        "out_dir": out_dir,
    }
