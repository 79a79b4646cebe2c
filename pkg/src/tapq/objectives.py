"""The three pretraining objectives and their weighted combination.

Each objective runs the dual-stream module under its own regime:
denoising under the multimodal-causal mask, contrastive under the
unimodal mask, matching under the bidirectional mask. The contrastive
loss follows the written form with the positive excluded from the
denominator; a flag restores the conventional softmax denominator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .corpus import MaskedExample
from .exceptions import ConfigurationError, ValidationError
from .model import TapqModel
from .ocrq import MaskRegime
from .tokenizer import CLS_ID, DEC_ID, FIRST_EXTRA_ID, PAD_ID, Vocabulary


@dataclass
class PretrainBatch:
    """Collated (noisy OCR, masked words) pairs.

    ``target_ids`` holds the sentinel/word id sequence per row, padded
    with PAD; the task prefix (DEC or CLS) is prepended by each
    objective. ``doc_ids`` let the negative miner exclude same-document
    candidates.
    """

    noisy_ids: torch.Tensor     # long [B, l]
    noisy_bboxes: torch.Tensor  # float [B, l, 4]
    ocr_pad: torch.Tensor       # bool [B, l], True = real token
    target_ids: torch.Tensor    # long [B, T]
    target_pad: torch.Tensor    # bool [B, T]
    doc_ids: tuple[str, ...]
    mmax: int

    @property
    def batch_size(self) -> int:
        return self.noisy_ids.shape[0]


def collate(examples: list[MaskedExample], vocab: Vocabulary,
            dtype: torch.dtype = torch.float32) -> PretrainBatch:
    if not examples:
        raise ValidationError("cannot collate an empty batch")
    id_rows = [vocab.encode_words(ex.noisy_tokens) for ex in examples]
    tgt_rows = [vocab.encode_target(ex.target) for ex in examples]
    l_max = max(len(r) for r in id_rows)
    t_max = max(len(r) for r in tgt_rows)
    b = len(examples)

    noisy_ids = torch.full((b, l_max), PAD_ID, dtype=torch.long)
    noisy_boxes = torch.zeros(b, l_max, 4, dtype=dtype)
    ocr_pad = torch.zeros(b, l_max, dtype=torch.bool)
    target_ids = torch.full((b, t_max), PAD_ID, dtype=torch.long)
    target_pad = torch.zeros(b, t_max, dtype=torch.bool)
    for i, ex in enumerate(examples):
        n = len(id_rows[i])
        noisy_ids[i, :n] = torch.tensor(id_rows[i], dtype=torch.long)
        noisy_boxes[i, :n] = torch.tensor([list(bx) for bx in ex.noisy_bboxes], dtype=dtype)
        ocr_pad[i, :n] = True
        t = len(tgt_rows[i])
        target_ids[i, :t] = torch.tensor(tgt_rows[i], dtype=torch.long)
        target_pad[i, :t] = True
    return PretrainBatch(noisy_ids, noisy_boxes, ocr_pad, target_ids, target_pad,
                         tuple(ex.source_doc_id for ex in examples), vocab.mmax)


@dataclass
class LossBundle:
    l_lm: torch.Tensor
    l_con: torch.Tensor
    l_match: torch.Tensor
    total: torch.Tensor
    diagnostics: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.07
    p_match: float = 0.5
    w_lm: float = 1.0
    w_con: float = 1.0
    w_match: float = 1.0
    contrastive_include_diagonal: bool = False
    symmetric_contrastive: bool = False


def _with_prefix(batch: PretrainBatch, prefix_id: int) -> tuple[torch.Tensor, torch.Tensor]:
    b = batch.batch_size
    prefix = torch.full((b, 1), prefix_id, dtype=torch.long, device=batch.target_ids.device)
    ids = torch.cat([prefix, batch.target_ids], dim=1)
    pad = torch.cat([torch.ones(b, 1, dtype=torch.bool, device=ids.device),
                     batch.target_pad], dim=1)
    return ids, pad


def _word_positions(labels: torch.Tensor, mmax: int) -> torch.Tensor:
    """Label positions holding actual masked words (not PAD, not sentinels)."""
    sentinel = (labels >= FIRST_EXTRA_ID) & (labels < FIRST_EXTRA_ID + mmax)
    return (labels != PAD_ID) & ~sentinel


def _encode_batch_ocr(model: TapqModel, batch: PretrainBatch):
    return model.encode_ocr(batch.noisy_ids, batch.noisy_bboxes, batch.ocr_pad)


def denoising_loss(model: TapqModel, batch: PretrainBatch,
                   ocr=None) -> tuple[torch.Tensor, dict]:
    """Teacher-forced cross-entropy on the masked-word sequence.

    Input is the DEC prefix followed by the target shifted right; the
    text stream sees the OCR only through the query positions. ``ocr``
    may carry a precomputed encoder pass for the same batch.
    """
    text_ids, text_pad = _with_prefix(batch, DEC_ID)
    labels = torch.cat([
        batch.target_ids,
        torch.full((batch.batch_size, 1), PAD_ID, dtype=torch.long,
                   device=batch.target_ids.device),
    ], dim=1)
    if int((labels != PAD_ID).sum()) == 0:
        raise ValidationError("batch has no labelled positions")

    if ocr is None:
        ocr = _encode_batch_ocr(model, batch)
    out = model.ocrq(text_ids, text_pad, ocr, MaskRegime.MULTIMODAL_CAUSAL)
    logits = model.ocrq.lm_logits(out.r_m)
    loss = F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), labels.reshape(-1), ignore_index=PAD_ID
    )
    with torch.no_grad():
        words = _word_positions(labels, batch.mmax)
        pred = logits.argmax(dim=-1)
        acc = float((pred[words] == labels[words]).float().mean()) if words.any() else 0.0
    return loss, {"acc_lm": acc}


def contrastive_similarity(model: TapqModel, batch: PretrainBatch,
                           ocr=None) -> torch.Tensor:
    """S[i, j] = max over queries of <query_ik, text_j> on unit projections.

    Row i comes from document i's noisy OCR; column j from document j's
    masked words behind a CLS prefix. Both streams run under the
    unimodal mask so neither sees the other.
    """
    if batch.batch_size < 2:
        raise ValidationError("contrastive objective needs a batch of at least 2")
    text_ids, text_pad = _with_prefix(batch, CLS_ID)
    if ocr is None:
        ocr = _encode_batch_ocr(model, batch)
    out = model.ocrq(text_ids, text_pad, ocr, MaskRegime.UNIMODAL)
    zq = model.ocrq.proj_queries(out.r_q)        # [B, K, C]
    zt = model.ocrq.proj_text(out.r_m[:, 0, :])  # [B, C]
    pairwise = torch.einsum("ikc,jc->ijk", zq, zt)
    return pairwise.max(dim=-1).values


def contrastive_loss(similarity: torch.Tensor, tau: float,
                     include_diagonal: bool = False,
                     symmetric: bool = False) -> torch.Tensor:
    """Mean over rows of -log exp(S_ii/tau) / sum_{j != i} exp(S_ij/tau).

    As written the positive is excluded from the denominator, so the
    value may be negative; ``include_diagonal`` restores the standard
    softmax form.
    """
    if tau <= 0:
        raise ConfigurationError(f"temperature must be positive, got {tau}")
    b = similarity.shape[0]
    if similarity.shape != (b, b) or b < 2:
        raise ValidationError(f"similarity must be [B,B] with B >= 2, got "
                              f"{tuple(similarity.shape)}")

    def one_direction(s: torch.Tensor) -> torch.Tensor:
        logits = s / tau
        pos = logits.diagonal()
        if include_diagonal:
            denom = torch.logsumexp(logits, dim=1)
        else:
            off = logits.masked_fill(
                torch.eye(b, dtype=torch.bool, device=s.device), float("-inf"))
            denom = torch.logsumexp(off, dim=1)
        return -(pos - denom).mean()

    loss = one_direction(similarity)
    if symmetric:
        loss = 0.5 * (loss + one_direction(similarity.T))
    return loss


def mine_hard_negatives(similarity: torch.Tensor, doc_ids: tuple[str, ...],
                        rng: np.random.Generator) -> np.ndarray:
    """One negative row index per row, sampled ∝ softmax of its similarities.

    Candidates exclude the row itself and any row from the same source
    document; if that empties the pool, fall back to uniform over j != i.
    """
    b = similarity.shape[0]
    if b < 2:
        raise ValidationError("need at least 2 rows to mine negatives")
    sims = similarity.detach().cpu().double().numpy()
    chosen = np.empty(b, dtype=np.int64)
    for i in range(b):
        valid = np.array([j != i and doc_ids[j] != doc_ids[i] for j in range(b)])
        if valid.any():
            logits = sims[i, valid]
            if np.isfinite(logits).all():
                logits = logits - logits.max()
                probs = np.exp(logits)
                probs /= probs.sum()
            else:
                # diverged similarities: keep mining total so the caller
                # can surface the non-finite loss instead of crashing here
                probs = np.full(int(valid.sum()), 1.0 / valid.sum())
            chosen[i] = np.flatnonzero(valid)[rng.choice(valid.sum(), p=probs)]
        else:
            others = np.array([j for j in range(b) if j != i])
            chosen[i] = others[rng.integers(len(others))]
    return chosen


def matching_loss(model: TapqModel, batch: PretrainBatch, p: float,
                  rng: np.random.Generator,
                  similarity: torch.Tensor | None = None,
                  ocr=None) -> tuple[torch.Tensor, dict]:
    """Binary classification of (noisy OCR, masked words) correspondence.

    Each row keeps its own masked words with probability ``p`` and takes
    a mined hard negative's otherwise. The logit is the match head
    averaged over the query positions.
    """
    if not (0.0 <= p <= 1.0):
        raise ConfigurationError(f"match probability must be in [0,1], got {p}")
    b = batch.batch_size
    if similarity is None:
        with torch.no_grad():
            similarity = contrastive_similarity(model, batch, ocr=ocr)
    negatives = mine_hard_negatives(similarity, batch.doc_ids, rng)
    keep = rng.random(b) < p
    sel = np.where(keep, np.arange(b), negatives)

    text_ids, text_pad = _with_prefix(batch, CLS_ID)
    sel_t = torch.as_tensor(sel, device=text_ids.device)
    if ocr is None:
        ocr = _encode_batch_ocr(model, batch)
    out = model.ocrq(text_ids[sel_t], text_pad[sel_t], ocr, MaskRegime.BIDIRECTIONAL)
    logits = model.ocrq.match_logits(out.r_q).squeeze(-1).mean(dim=1)  # [B]
    labels = torch.as_tensor(keep, dtype=logits.dtype, device=logits.device)
    loss = F.binary_cross_entropy_with_logits(logits, labels)
    with torch.no_grad():
        acc = float(((logits > 0) == labels.bool()).float().mean())
    return loss, {"acc_match": acc}


def retrieval_top1(similarity: torch.Tensor) -> float:
    """Fraction of rows whose best-matching column is their own."""
    b = similarity.shape[0]
    hits = similarity.argmax(dim=1) == torch.arange(b, device=similarity.device)
    return float(hits.float().mean())


def total_loss(model: TapqModel, batch: PretrainBatch, cfg: LossConfig,
               rng: np.random.Generator) -> LossBundle:
    """All three objectives on one batch, each under its own regime.

    The encoder pass is shared: the three losses read the same OCR
    embeddings, and gradients accumulate through the shared subgraph
    exactly as if each objective had encoded the batch itself.
    """
    ocr = _encode_batch_ocr(model, batch)
    l_lm, diag_lm = denoising_loss(model, batch, ocr=ocr)
    similarity = contrastive_similarity(model, batch, ocr=ocr)
    l_con = contrastive_loss(similarity, cfg.tau,
                             include_diagonal=cfg.contrastive_include_diagonal,
                             symmetric=cfg.symmetric_contrastive)
    l_match, diag_match = matching_loss(model, batch, cfg.p_match, rng,
                                        similarity=similarity.detach(), ocr=ocr)
    total = cfg.w_lm * l_lm + cfg.w_con * l_con + cfg.w_match * l_match
    diagnostics = {**diag_lm, "acc_ret": retrieval_top1(similarity.detach()),
                   **diag_match}
    return LossBundle(l_lm=l_lm, l_con=l_con, l_match=l_match, total=total,
                      diagnostics=diagnostics)
