"""Corpus model, synthetic generator, span masking, JSONL round trips."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tapq import (BoundingBox, LayoutSpec, OcrDocument,
                  generate_multipage_document, generate_synthetic_document,
                  load_corpus, mask_spans, min_covering_bbox, save_corpus)
from tapq.corpus import (home_cell, key_word, load_masked_examples,
                         save_masked_examples, value_word)
from tapq.exceptions import ConfigurationError, ParseError, ValidationError

from conftest import make_docs


# ---------------------------------------------------------------------------
# Independent oracle: re-expand a masked example back into the original
# ---------------------------------------------------------------------------

def expand_oracle(noisy_tokens, target):
    """Replace each <extra_id_i> with the i-th span text, word by word.

    Written against the sentinel naming contract only; shares no code
    with mask_spans.
    """
    by_index = dict(target)
    out = []
    for tok in noisy_tokens:
        if tok.startswith("<extra_id_") and tok.endswith(">"):
            out.extend(by_index[int(tok[len("<extra_id_"):-1])].split(" "))
        else:
            out.append(tok)
    return out


# ---------------------------------------------------------------------------
# Bounding boxes
# ---------------------------------------------------------------------------

def test_min_covering_bbox_two_boxes():
    boxes = [BoundingBox(0.1, 0.2, 0.3, 0.25), BoundingBox(0.35, 0.2, 0.5, 0.25)]
    assert min_covering_bbox(boxes) == BoundingBox(0.1, 0.2, 0.5, 0.25)


def test_min_covering_bbox_identity():
    b = BoundingBox(0.25, 0.5, 0.75, 0.9)
    assert min_covering_bbox([b]) == b


def test_min_covering_bbox_empty_rejected():
    with pytest.raises(ValidationError):
        min_covering_bbox([])


@st.composite
def boxes(draw):
    x0, x1 = sorted(draw(st.lists(st.floats(0, 1), min_size=2, max_size=2)))
    y0, y1 = sorted(draw(st.lists(st.floats(0, 1), min_size=2, max_size=2)))
    return BoundingBox(x0, y0, x1, y1)


@given(st.lists(boxes(), min_size=1, max_size=8), st.randoms())
def test_min_covering_bbox_permutation_invariant(box_list, pyrandom):
    shuffled = list(box_list)
    pyrandom.shuffle(shuffled)
    assert min_covering_bbox(shuffled) == min_covering_bbox(box_list)


@given(st.lists(boxes(), min_size=1, max_size=8))
def test_min_covering_bbox_idempotent(box_list):
    once = min_covering_bbox(box_list)
    assert min_covering_bbox([once]) == once


def test_invalid_bbox_rejected():
    with pytest.raises(ValidationError):
        BoundingBox(0.5, 0.0, 0.4, 1.0).validate()
    with pytest.raises(ValidationError):
        BoundingBox(-0.1, 0.0, 0.4, 1.0).validate()


# ---------------------------------------------------------------------------
# Document invariants
# ---------------------------------------------------------------------------

def test_document_rejects_token_box_mismatch():
    with pytest.raises(ValidationError):
        OcrDocument("d", ("a", "b"), (BoundingBox(0, 0, 1, 1),))


def test_document_rejects_special_lookalikes():
    with pytest.raises(ValidationError):
        OcrDocument("d", ("<extra_id_0>",), (BoundingBox(0, 0, 1, 1),))


def test_document_rejects_empty():
    with pytest.raises(ValidationError):
        OcrDocument("d", (), ())


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

def test_generator_exact_token_count_and_box_range():
    layout = LayoutSpec(rows=2, cols=2, min_tokens=8, max_tokens=8)
    doc = generate_synthetic_document(0, layout)
    assert len(doc.tokens) == 8
    assert len(doc.bboxes) == 8
    for b in doc.bboxes:
        assert 0.0 <= b.x0 <= b.x1 <= 1.0
        assert 0.0 <= b.y0 <= b.y1 <= 1.0


def test_generator_deterministic():
    layout = LayoutSpec()
    assert generate_synthetic_document(7, layout) == generate_synthetic_document(7, layout)


def test_generator_rejects_zero_grid():
    with pytest.raises(ConfigurationError):
        LayoutSpec(rows=0, cols=2)


def test_generator_odd_token_count():
    layout = LayoutSpec(rows=2, cols=2, min_tokens=9, max_tokens=9)
    doc = generate_synthetic_document(3, layout)
    assert len(doc.tokens) == 9


def test_multipage_shares_doc_id_increasing_pages():
    pages = generate_multipage_document(11, LayoutSpec(), n_pages=3)
    assert [p.page_index for p in pages] == [0, 1, 2]
    assert len({p.doc_id for p in pages}) == 1


def cell_of(box: BoundingBox, layout: LayoutSpec) -> int:
    cx = min(int((box.x0 + box.x1) / 2 * layout.cols), layout.cols - 1)
    cy = min(int((box.y0 + box.y1) / 2 * layout.rows), layout.rows - 1)
    return cy * layout.cols + cx


def test_layout_content_correlation_probe():
    """Counting probe: values land in their key's home cell far above chance.

    Scans key/value token pairs across a large generated corpus and
    measures how often the value's box falls in home_cell(key).
    """
    layout = LayoutSpec()
    hits = 0
    total = 0
    for i in range(10_000):
        doc = generate_synthetic_document(50_000 + i, layout)
        for tok, box in zip(doc.tokens, doc.bboxes):
            if not tok.startswith("val"):
                continue
            k = int(tok[3:])
            hits += cell_of(box, layout) == home_cell(k, layout)
            total += 1
    excess = hits / total - 1.0 / layout.n_cells
    assert excess > 0.1, f"layout/content association too weak: excess={excess:.3f}"


# ---------------------------------------------------------------------------
# Span masking
# ---------------------------------------------------------------------------

def test_mask_spans_round_trip_thousand_docs():
    rng = np.random.default_rng(0)
    for i in range(1000):
        doc = generate_synthetic_document(i, LayoutSpec())
        ex = mask_spans(doc, 0.15, 3.0, rng)
        assert expand_oracle(ex.noisy_tokens, ex.target) == list(doc.tokens)


def test_mask_spans_sentinel_boxes_cover_spans():
    rng = np.random.default_rng(1)
    doc = generate_synthetic_document(42, LayoutSpec())
    ex = mask_spans(doc, 0.3, 3.0, rng)
    sentinels = [i for i, t in enumerate(ex.noisy_tokens) if t.startswith("<extra_id_")]
    assert len(sentinels) == len(ex.spans)
    for pos, (s, e) in zip(sentinels, ex.spans):
        assert ex.noisy_bboxes[pos] == min_covering_bbox(doc.bboxes[s:e + 1])


def test_mask_spans_two_token_doc_single_unit_span():
    doc = OcrDocument("d", ("alpha", "beta"),
                      (BoundingBox(0, 0, 0.5, 1), BoundingBox(0.5, 0, 1, 1)))
    for seed in range(20):
        ex = mask_spans(doc, 0.15, 3.0, np.random.default_rng(seed))
        assert len(ex.spans) == 1
        s, e = ex.spans[0]
        assert e == s


def test_mask_density_converges():
    layout = LayoutSpec(rows=5, cols=5, min_tokens=100, max_tokens=100)
    rng = np.random.default_rng(2)
    masked = 0
    total = 0
    for i in range(10_000):
        doc = generate_synthetic_document(i, layout)
        ex = mask_spans(doc, 0.15, 3.0, rng)
        masked += sum(e - s + 1 for s, e in ex.spans)
        total += len(doc)
    assert 0.13 <= masked / total <= 0.17


def test_mask_spans_disjoint_sorted():
    rng = np.random.default_rng(3)
    for i in range(200):
        doc = generate_synthetic_document(i, LayoutSpec())
        ex = mask_spans(doc, 0.25, 2.0, rng)
        last_end = -1
        for s, e in ex.spans:
            assert s > last_end and e >= s
            last_end = e


def test_mask_spans_rejects_bad_density():
    doc = generate_synthetic_document(0, LayoutSpec())
    with pytest.raises(ConfigurationError):
        mask_spans(doc, 0.0, 3.0, np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        mask_spans(doc, 1.0, 3.0, np.random.default_rng(0))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 0.5), st.floats(1.0, 5.0))
def test_mask_spans_round_trip_property(seed, density, span_len):
    doc = generate_synthetic_document(seed, LayoutSpec())
    ex = mask_spans(doc, density, span_len, np.random.default_rng(seed))
    assert expand_oracle(ex.noisy_tokens, ex.target) == list(doc.tokens)
    assert ex.num_spans >= 1


# ---------------------------------------------------------------------------
# JSONL round trips
# ---------------------------------------------------------------------------

def test_corpus_round_trip(tmp_path):
    docs = make_docs(100, base_seed=500)
    path = tmp_path / "corpus.jsonl"
    save_corpus(docs, path)
    assert load_corpus(path) == docs


def test_corpus_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert load_corpus(path) == []


def test_corpus_malformed_line_names_line_number(tmp_path):
    docs = make_docs(2, base_seed=9)
    path = tmp_path / "bad.jsonl"
    save_corpus(docs, path)
    with path.open("a") as fh:
        fh.write("{not json\n")
    with pytest.raises(ParseError, match="line 3"):
        load_corpus(path)


def test_corpus_length_mismatch_rejected(tmp_path):
    rec = {"doc_id": "d", "page_index": 0, "tokens": ["a", "b"],
           "bboxes": [[0, 0, 1, 1]]}
    path = tmp_path / "mismatch.jsonl"
    path.write_text(json.dumps(rec) + "\n")
    with pytest.raises(ValidationError, match="line 1"):
        load_corpus(path)


def test_corpus_out_of_range_box_rejected(tmp_path):
    rec = {"doc_id": "d", "page_index": 0, "tokens": ["a"],
           "bboxes": [[0, 0, 1.5, 1]]}
    path = tmp_path / "range.jsonl"
    path.write_text(json.dumps(rec) + "\n")
    with pytest.raises(ValidationError):
        load_corpus(path)


def test_masked_example_cache_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    examples = [mask_spans(d, 0.15, 3.0, rng) for d in make_docs(20, base_seed=40)]
    path = tmp_path / "masked.jsonl"
    save_masked_examples(examples, path)
    assert load_masked_examples(path) == examples


def test_key_value_vocabulary_shapes():
    assert key_word(7) == "key007"
    assert value_word(7) == "val007"
