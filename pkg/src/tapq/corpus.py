"""OCR document model, synthetic layout-rich corpus, and span masking.

Documents are ordered word tokens with normalized [0,1] bounding boxes.
The synthetic generator stands in for a real document corpus: it lays
key/value word pairs onto a page grid so that token content correlates
with position (each key has a "home" cell it lands in with probability
``home_bias``, and its paired value always sits in the horizontally
adjacent box). That correlation is what makes the layout embeddings
learnable and masked spans recoverable.

Span masking replaces sampled token spans with ``<extra_id_i>`` sentinels
and the minimal box covering the span, producing (noisy input, masked
words) training pairs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .exceptions import ConfigurationError, ParseError, ValidationError

SENTINEL_PREFIX = "<extra_id_"


def sentinel_token(i: int) -> str:
    return f"<extra_id_{i}>"


def is_special_form(token: str) -> bool:
    """Strings shaped like special tokens; forbidden as document words."""
    return token.startswith("<") and token.endswith(">")


class BoundingBox(NamedTuple):
    """Normalized page coordinates, 0 <= x0 <= x1 <= 1 and same for y."""

    x0: float
    y0: float
    x1: float
    y1: float

    def validate(self) -> "BoundingBox":
        if not (0.0 <= self.x0 <= self.x1 <= 1.0 and 0.0 <= self.y0 <= self.y1 <= 1.0):
            raise ValidationError(f"bounding box out of range: {tuple(self)}")
        return self


def min_covering_bbox(boxes: Sequence[BoundingBox]) -> BoundingBox:
    """Smallest box containing every input box."""
    if len(boxes) == 0:
        raise ValidationError("min_covering_bbox needs at least one box")
    return BoundingBox(
        min(b.x0 for b in boxes),
        min(b.y0 for b in boxes),
        max(b.x1 for b in boxes),
        max(b.y1 for b in boxes),
    )


@dataclass(frozen=True)
class OcrDocument:
    """Ordered OCR tokens with aligned boxes; the raw unit of every pipeline."""

    doc_id: str
    tokens: tuple[str, ...]
    bboxes: tuple[BoundingBox, ...]
    page_index: int = 0

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise ValidationError(f"{self.doc_id}: document must have at least one token")
        if len(self.tokens) != len(self.bboxes):
            raise ValidationError(
                f"{self.doc_id}: {len(self.tokens)} tokens but {len(self.bboxes)} boxes"
            )
        if self.page_index < 0:
            raise ValidationError(f"{self.doc_id}: negative page_index")
        for tok in self.tokens:
            if is_special_form(tok):
                raise ValidationError(f"{self.doc_id}: token {tok!r} collides with special tokens")
        for box in self.bboxes:
            box.validate()

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class MaskedExample:
    """A document with masked spans, paired with the words they hid.

    ``noisy_tokens`` holds originals plus one ``<extra_id_i>`` per span,
    indices 0..M-1 in left-to-right order. ``target`` lists
    (sentinel index, original span text). ``spans`` holds the inclusive
    (start, end) index pairs in the source document.
    """

    noisy_tokens: tuple[str, ...]
    noisy_bboxes: tuple[BoundingBox, ...]
    target: tuple[tuple[int, str], ...]
    spans: tuple[tuple[int, int], ...]
    source_doc_id: str

    def __post_init__(self):
        if len(self.noisy_tokens) != len(self.noisy_bboxes):
            raise ValidationError("noisy tokens and boxes differ in length")
        seen = [t for t in self.noisy_tokens if t.startswith(SENTINEL_PREFIX)]
        expected = [sentinel_token(i) for i in range(len(self.target))]
        if seen != expected:
            raise ValidationError(f"sentinels {seen} not 0..M-1 in order")

    @property
    def num_spans(self) -> int:
        return len(self.target)


@dataclass(frozen=True)
class LayoutSpec:
    """Parameters of the synthetic page generator.

    Defaults are tuned so masked spans stay recoverable: two key/value
    pairs per document, one key per grid cell, and home placement dialed
    up so a span's covering box pins down its content. Lower
    ``home_bias`` for a noisier layout/content association.
    """

    rows: int = 4
    cols: int = 4
    n_keys: int = 16
    theme_size: int = 2
    min_tokens: int = 24
    max_tokens: int = 48
    home_bias: float = 1.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigurationError("layout grid needs at least one row and one column")
        if self.n_keys < 1:
            raise ConfigurationError("need at least one key word")
        if not (1 <= self.min_tokens <= self.max_tokens):
            raise ConfigurationError("bad tokens-per-document range")
        if not (0.0 <= self.home_bias <= 1.0):
            raise ConfigurationError("home_bias must be in [0,1]")

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols


def key_word(k: int) -> str:
    return f"key{k:03d}"


def value_word(k: int) -> str:
    return f"val{k:03d}"


def home_cell(k: int, layout: LayoutSpec) -> int:
    return k % layout.n_cells


def _generate_page(rng: np.random.Generator, layout: LayoutSpec, doc_id: str,
                   page_index: int) -> OcrDocument:
    n_tokens = int(rng.integers(layout.min_tokens, layout.max_tokens + 1))
    n_pairs = n_tokens // 2
    theme = rng.choice(layout.n_keys, size=min(layout.theme_size, layout.n_keys),
                       replace=False)
    max_slots = max(1, math.ceil(max(1, n_pairs) / layout.n_cells))
    cell_w = 1.0 / layout.cols
    cell_h = 1.0 / layout.rows
    slot_h = cell_h / max_slots

    placed: list[tuple[float, float, list[tuple[str, BoundingBox]]]] = []
    cell_counts = [0] * layout.n_cells

    def place(cell: int, words: list[str]):
        slot = cell_counts[cell] % max_slots
        cell_counts[cell] += 1
        r, c = divmod(cell, layout.cols)
        x0 = c * cell_w
        y0 = r * cell_h + slot * slot_h
        y1 = min(1.0, y0 + slot_h)
        cuts = np.linspace(x0, x0 + cell_w, len(words) + 1)
        boxes = [BoundingBox(float(cuts[i]), y0, float(cuts[i + 1]), y1)
                 for i in range(len(words))]
        placed.append((y0, x0, list(zip(words, boxes))))

    for _ in range(n_pairs):
        k = int(theme[rng.integers(len(theme))])
        if rng.random() < layout.home_bias:
            cell = home_cell(k, layout)
        else:
            cell = int(rng.integers(layout.n_cells))
        place(cell, [key_word(k), value_word(k)])
    if n_tokens % 2 == 1:
        k = int(theme[rng.integers(len(theme))])
        place(home_cell(k, layout), [key_word(k)])

    placed.sort(key=lambda item: (item[0], item[1]))
    tokens: list[str] = []
    boxes: list[BoundingBox] = []
    for _, _, entries in placed:
        for word, box in entries:
            tokens.append(word)
            boxes.append(box)
    return OcrDocument(doc_id=doc_id, tokens=tuple(tokens), bboxes=tuple(boxes),
                       page_index=page_index)


def generate_synthetic_document(seed: int, layout: LayoutSpec | None = None,
                                doc_id: str | None = None) -> OcrDocument:
    """Deterministically generate one layout-correlated page for ``seed``."""
    layout = layout or LayoutSpec()
    rng = np.random.default_rng(seed)
    return _generate_page(rng, layout, doc_id or f"doc-{seed:08d}", page_index=0)


def generate_multipage_document(seed: int, layout: LayoutSpec | None = None,
                                n_pages: int = 2,
                                doc_id: str | None = None) -> list[OcrDocument]:
    """Pages share a doc_id and carry increasing page_index."""
    if n_pages < 1:
        raise ConfigurationError("n_pages must be >= 1")
    layout = layout or LayoutSpec()
    doc_id = doc_id or f"doc-{seed:08d}"
    pages = []
    for p in range(n_pages):
        rng = np.random.default_rng([seed, p])
        pages.append(_generate_page(rng, layout, doc_id, page_index=p))
    return pages


def generate_corpus(n_docs: int, seed: int, layout: LayoutSpec | None = None) -> list[OcrDocument]:
    return [generate_synthetic_document(seed * 1_000_003 + i, layout, doc_id=f"doc-{i:06d}")
            for i in range(n_docs)]


def mask_spans(doc: OcrDocument, mask_density: float, mean_span_len: float,
               rng: np.random.Generator) -> MaskedExample:
    """Sample disjoint spans, replace each with a sentinel and covering box.

    Span lengths are geometric with the given mean, clipped to the
    remaining masking budget; spans are placed by rejection so they never
    overlap. At least one span is always produced.
    """
    if not (0.0 < mask_density < 1.0):
        raise ConfigurationError(f"mask_density must be in (0,1), got {mask_density}")
    if mean_span_len <= 0:
        raise ConfigurationError("mean_span_len must be positive")
    n = len(doc.tokens)
    if n < 2:
        raise ValidationError("cannot mask a document with fewer than 2 tokens")

    budget = max(1, round(n * mask_density))
    p_geom = min(1.0, 1.0 / mean_span_len)
    occupied = np.zeros(n, dtype=bool)
    spans: list[tuple[int, int]] = []
    masked = 0
    attempts = 0
    while masked < budget and attempts < 20 * n:
        length = int(min(rng.geometric(p_geom), budget - masked, n))
        start = int(rng.integers(0, n - length + 1))
        if occupied[start:start + length].any():
            attempts += 1
            continue
        occupied[start:start + length] = True
        spans.append((start, start + length - 1))
        masked += length
    spans.sort()

    noisy_tokens: list[str] = []
    noisy_boxes: list[BoundingBox] = []
    target: list[tuple[int, str]] = []
    pos = 0
    for i, (s, e) in enumerate(spans):
        noisy_tokens.extend(doc.tokens[pos:s])
        noisy_boxes.extend(doc.bboxes[pos:s])
        noisy_tokens.append(sentinel_token(i))
        noisy_boxes.append(min_covering_bbox(doc.bboxes[s:e + 1]))
        target.append((i, " ".join(doc.tokens[s:e + 1])))
        pos = e + 1
    noisy_tokens.extend(doc.tokens[pos:])
    noisy_boxes.extend(doc.bboxes[pos:])

    return MaskedExample(
        noisy_tokens=tuple(noisy_tokens),
        noisy_bboxes=tuple(noisy_boxes),
        target=tuple(target),
        spans=tuple(spans),
        source_doc_id=doc.doc_id,
    )


# ---------------------------------------------------------------------------
# JSONL persistence
# ---------------------------------------------------------------------------

def _doc_to_record(doc: OcrDocument) -> dict:
    return {
        "doc_id": doc.doc_id,
        "page_index": doc.page_index,
        "tokens": list(doc.tokens),
        "bboxes": [list(b) for b in doc.bboxes],
    }


def save_corpus(docs: Iterable[OcrDocument], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(_doc_to_record(doc)) + "\n")


def _parse_boxes(raw, line: int) -> tuple[BoundingBox, ...]:
    boxes = []
    for entry in raw:
        if not isinstance(entry, (list, tuple)) or len(entry) != 4:
            raise ParseError(f"bbox entry {entry!r} is not a 4-list", line)
        boxes.append(BoundingBox(*map(float, entry)))
    return tuple(boxes)


def load_corpus(path: str | Path) -> list[OcrDocument]:
    """Read a JSONL corpus; parse errors name the offending line."""
    docs: list[OcrDocument] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from exc
            try:
                docs.append(OcrDocument(
                    doc_id=str(rec["doc_id"]),
                    tokens=tuple(rec["tokens"]),
                    bboxes=_parse_boxes(rec["bboxes"], lineno),
                    page_index=int(rec.get("page_index", 0)),
                ))
            except KeyError as exc:
                raise ParseError(f"missing field {exc}", lineno) from exc
            except ValidationError as exc:
                raise ValidationError(f"line {lineno}: {exc}") from exc
    return docs


def save_masked_examples(examples: Iterable[MaskedExample], path: str | Path) -> None:
    """Optional cache: corpus format plus target and span fields."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for ex in examples:
            rec = {
                "doc_id": ex.source_doc_id,
                "page_index": 0,
                "tokens": list(ex.noisy_tokens),
                "bboxes": [list(b) for b in ex.noisy_bboxes],
                "target": [[i, text] for i, text in ex.target],
                "spans": [list(s) for s in ex.spans],
            }
            fh.write(json.dumps(rec) + "\n")


def load_masked_examples(path: str | Path) -> list[MaskedExample]:
    examples: list[MaskedExample] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from exc
            try:
                boxes = _parse_boxes(rec["bboxes"], lineno)
                for b in boxes:
                    b.validate()
                examples.append(MaskedExample(
                    noisy_tokens=tuple(rec["tokens"]),
                    noisy_bboxes=boxes,
                    target=tuple((int(i), str(t)) for i, t in rec["target"]),
                    spans=tuple((int(s), int(e)) for s, e in rec["spans"]),
                    source_doc_id=str(rec["doc_id"]),
                ))
            except KeyError as exc:
                raise ParseError(f"missing field {exc}", lineno) from exc
            except ValidationError as exc:
                raise ValidationError(f"line {lineno}: {exc}") from exc
    return examples
