"""Inference path and the FLOPs ledger.

``compress`` turns a document plus an instruction into K vectors per
page; pages never attend each other, so multi-page output is the
per-page result concatenated along a page axis. ``assemble_llm_input``
describes the downstream LM input as ordered token slots; the FLOPs
report prices that sequence analytically.

FLOPs conventions (so numbers are reproducible): forward pass only, a
multiply-accumulate counts as 2 FLOPs, embedding lookups are free.
Per transformer layer over a length-n, width-d sequence:

    attention = 8*n*d^2 + 4*n^2*d     (QKV+output projections, scores, mix)
    mlp       = 4*n*d^2*ff_mult       (up and down projections)

For full/light modes the OCR-module cost is the same price applied to
its encoder over the raw OCR length and to the compressor over the
K + instruction sequence, once per page.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import torch

from .checkpoint import Checkpoint, build_model
from .corpus import OcrDocument
from .exceptions import ConfigurationError, ValidationError
from .model import TapqModel
from .ocrq import MaskRegime
from .tokenizer import Vocabulary

MODES = ("baseline", "full", "light")


@dataclass(frozen=True)
class CompressedOcr:
    """K vectors per page; the page axis is first."""

    vectors: torch.Tensor  # [pages, K, d]
    doc_ids: tuple[str, ...]
    instruction: str


def _compress_one(model: TapqModel, vocab: Vocabulary, doc: OcrDocument,
                  instruction: str, regime: MaskRegime) -> torch.Tensor:
    if len(doc.tokens) == 0:
        raise ValidationError("cannot compress an empty document")
    ids = torch.tensor([vocab.encode_words(doc.tokens)], dtype=torch.long)
    boxes = torch.tensor([[list(b) for b in doc.bboxes]], dtype=torch.float32)
    pad = torch.ones(1, ids.shape[1], dtype=torch.bool)
    instr_ids = torch.tensor([vocab.encode_words(instruction.split())],
                             dtype=torch.long)
    instr_pad = torch.ones_like(instr_ids, dtype=torch.bool)
    with torch.no_grad():
        ocr = model.encode_ocr(ids, boxes, pad)
        out = model.ocrq(instr_ids, instr_pad, ocr, regime)
    return out.r_q[0]


def compress(ckpt: Checkpoint, doc: OcrDocument, instruction: str = "") -> CompressedOcr:
    """Condense one document into [1, K, d] under the inference regime."""
    model = build_model(ckpt)
    model.eval()
    regime = MaskRegime.from_string(ckpt.config.inference_regime)
    vectors = _compress_one(model, ckpt.vocab, doc, instruction, regime)
    return CompressedOcr(vectors=vectors[None], doc_ids=(doc.doc_id,),
                         instruction=instruction)


def compress_multipage(ckpt: Checkpoint, pages: list[OcrDocument],
                       instruction: str = "") -> CompressedOcr:
    """Per-page compression concatenated along the page axis, [P, K, d]."""
    if not pages:
        raise ValidationError("need at least one page")
    model = build_model(ckpt)
    model.eval()
    regime = MaskRegime.from_string(ckpt.config.inference_regime)
    blocks = [_compress_one(model, ckpt.vocab, page, instruction, regime)
              for page in pages]
    return CompressedOcr(vectors=torch.stack(blocks, dim=0),
                         doc_ids=tuple(p.doc_id for p in pages),
                         instruction=instruction)


# ---------------------------------------------------------------------------
# Input assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AssembledInput:
    """Ordered embedding slots the downstream LM would receive."""

    mode: str
    slots: tuple[tuple[str, int], ...]
    seq_len: int
    pages: int
    k: int
    ocr_len: int     # raw OCR tokens per page
    instr_len: int


def assemble_dims(mode: str, ocr_len: int, k: int, instr_len: int,
                  pages: int = 1, raw_ocr_first: bool = False,
                  visual_tokens: int = 0) -> AssembledInput:
    """Slot layout from lengths alone; no model required.

    ``visual_tokens`` optionally prepends a fixed per-page slot standing
    in for a vision encoder's output; it participates in the sequence
    length but is otherwise opaque here.
    """
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}; expected one of {MODES}")
    if min(ocr_len, k, instr_len, visual_tokens) < 0 or pages < 1:
        raise ConfigurationError("lengths must be nonnegative and pages >= 1")
    queries = ("queries", pages * k)
    raw = ("raw_ocr", pages * ocr_len)
    instr = ("instruction", instr_len)
    if mode == "baseline":
        slots = (raw, instr)
    elif mode == "light":
        slots = (queries, instr)
    elif raw_ocr_first:
        slots = (raw, queries, instr)
    else:
        slots = (queries, raw, instr)
    if visual_tokens:
        slots = (("visual", pages * visual_tokens),) + slots
    seq_len = sum(length for _, length in slots)
    return AssembledInput(mode=mode, slots=slots, seq_len=seq_len, pages=pages,
                          k=k, ocr_len=ocr_len, instr_len=instr_len)


def assemble_llm_input(compressed: CompressedOcr | None, instruction_ids: list[int],
                       raw_ocr_ids: list[int], mode: str,
                       raw_ocr_first: bool = False) -> AssembledInput:
    """Descriptor for a concrete document; baseline needs no compression."""
    if mode != "baseline" and compressed is None:
        raise ConfigurationError(f"mode {mode!r} requires compressed vectors")
    pages = compressed.vectors.shape[0] if compressed is not None else 1
    k = compressed.vectors.shape[1] if compressed is not None else 0
    ocr_total = len(raw_ocr_ids)
    per_page = ocr_total // pages if pages else 0
    assembled = assemble_dims(mode, per_page, k, len(instruction_ids), pages,
                              raw_ocr_first)
    if mode != "light" and ocr_total != per_page * pages:
        # uneven pages: rebuild the raw slot with the exact total
        slots = tuple(("raw_ocr", ocr_total) if kind == "raw_ocr" else (kind, n)
                      for kind, n in assembled.slots)
        assembled = AssembledInput(mode=mode, slots=slots,
                                   seq_len=sum(n for _, n in slots), pages=pages,
                                   k=k, ocr_len=per_page,
                                   instr_len=len(instruction_ids))
    return assembled


# ---------------------------------------------------------------------------
# FLOPs ledger
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LmArch:
    name: str
    d_lm: int
    layers: int
    heads: int
    ff_mult: int

    def __post_init__(self):
        if min(self.d_lm, self.layers, self.heads, self.ff_mult) < 1:
            raise ConfigurationError("LM architecture dims must be positive")


@dataclass(frozen=True)
class OcrModuleArch:
    """Reference OCR-module sizes used when pricing full/light modes."""

    enc_d: int = 1024
    enc_layers: int = 24
    enc_ff_mult: int = 4
    q_d: int = 768
    q_layers: int = 12
    q_ff_mult: int = 4


# Stand-in decoder shapes for the LM scales the method targets.
LM_PRESETS: dict[str, LmArch] = {
    "lm-xl": LmArch("lm-xl", d_lm=2048, layers=24, heads=32, ff_mult=4),
    "lm-xxl": LmArch("lm-xxl", d_lm=4096, layers=24, heads=64, ff_mult=4),
    "lm-7b": LmArch("lm-7b", d_lm=4096, layers=32, heads=32, ff_mult=4),
}


def attention_flops(n: int, d: int) -> int:
    return 8 * n * d * d + 4 * n * n * d


def mlp_flops(n: int, d: int, ff_mult: int) -> int:
    return 4 * n * d * d * ff_mult


def transformer_flops(n: int, d: int, layers: int, ff_mult: int) -> int:
    return layers * (attention_flops(n, d) + mlp_flops(n, d, ff_mult))


@dataclass(frozen=True)
class FlopsProfile:
    mode: str
    arch: str
    seq_len: int
    lm_attention_flops: int
    lm_mlp_flops: int
    lm_flops: int
    ocr_module_flops: int
    total_flops: int

    @property
    def tflops(self) -> float:
        return self.total_flops / 1e12

    def to_json(self) -> str:
        payload = asdict(self)
        payload["tflops"] = self.tflops
        return json.dumps(payload, indent=2)


def flops_report(lm_arch: LmArch, assembled: AssembledInput,
                 ocr_arch: OcrModuleArch | None = None) -> FlopsProfile:
    """Forward-pass FLOPs of the LM over the assembled sequence, plus the
    OCR-module cost when compression is in play."""
    ocr_arch = ocr_arch or OcrModuleArch()
    n = assembled.seq_len
    attn = lm_arch.layers * attention_flops(n, lm_arch.d_lm)
    mlp = lm_arch.layers * mlp_flops(n, lm_arch.d_lm, lm_arch.ff_mult)
    ocr_cost = 0
    if assembled.mode in ("full", "light"):
        per_page = (
            transformer_flops(assembled.ocr_len, ocr_arch.enc_d,
                              ocr_arch.enc_layers, ocr_arch.enc_ff_mult)
            + transformer_flops(assembled.k + assembled.instr_len, ocr_arch.q_d,
                                ocr_arch.q_layers, ocr_arch.q_ff_mult)
        )
        ocr_cost = assembled.pages * per_page
    return FlopsProfile(
        mode=assembled.mode, arch=lm_arch.name, seq_len=n,
        lm_attention_flops=attn, lm_mlp_flops=mlp, lm_flops=attn + mlp,
        ocr_module_flops=ocr_cost, total_flops=attn + mlp + ocr_cost,
    )


def format_flops_table(profiles: list[FlopsProfile]) -> str:
    """Aligned-column text table over a list of profiles."""
    headers = ["mode", "arch", "seq_len", "lm_flops", "ocr_module", "total", "TFLOPs"]
    rows = [[p.mode, p.arch, str(p.seq_len), f"{p.lm_flops:,}",
             f"{p.ocr_module_flops:,}", f"{p.total_flops:,}", f"{p.tflops:.3f}"]
            for p in profiles]
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    def fmt(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths))
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines.extend(fmt(r) for r in rows)
    return "\n".join(lines)
