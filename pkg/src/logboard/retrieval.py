"""Input filtering: BM25 over passages, table slicing, span truncation.

Lexical BM25 only; a dense reranker can be plugged in as a score-adjusting
callback on retrieve(). The tokenizer lowercases, splits on
non-alphanumerics, and keeps numerals intact.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .sources import Image, Passage, Table
from .textutil import parse_numerals, split_sentences, tokenize


@dataclass(frozen=True)
class RetrievalConfig:
    k1: float = 1.2
    b: float = 0.75
    top_n: int = 3
    sentence_window_k: int = 2

    def __post_init__(self) -> None:
        if self.k1 <= 0:
            raise ValueError("k1 must be positive")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must be in [0, 1]")
        if self.top_n < 1:
            raise ValueError("top_n must be >= 1")


@dataclass
class CorpusIndex:
    doc_ids: list[str] = field(default_factory=list)
    doc_freq: dict[str, int] = field(default_factory=dict)
    term_freqs: dict[str, Counter] = field(default_factory=dict)
    doc_len: dict[str, int] = field(default_factory=dict)
    avg_doc_len: float = 0.0

    @property
    def doc_count(self) -> int:
        return len(self.doc_ids)


def index(passages: Sequence[Passage]) -> CorpusIndex:
    """Build exact frequency statistics over the passages."""
    idx = CorpusIndex()
    for passage in passages:
        if passage.id in idx.term_freqs:
            raise ValueError(f"duplicate passage id: {passage.id!r}")
        tokens = tokenize(passage.text)
        idx.doc_ids.append(passage.id)
        idx.term_freqs[passage.id] = Counter(tokens)
        idx.doc_len[passage.id] = len(tokens)
        for term in set(tokens):
            idx.doc_freq[term] = idx.doc_freq.get(term, 0) + 1
    if idx.doc_ids:
        idx.avg_doc_len = sum(idx.doc_len.values()) / len(idx.doc_ids)
    return idx


def _idf(index_: CorpusIndex, term: str) -> float:
    df = index_.doc_freq.get(term, 0)
    # Non-negative variant so the score > 0 cutoff is meaningful.
    return math.log(1.0 + (index_.doc_count - df + 0.5) / (df + 0.5))


def bm25_score(index_: CorpusIndex, query_terms: Sequence[str], doc_id: str,
               k1: float = 1.2, b: float = 0.75) -> float:
    """Direct BM25 of one document; also the enumeration oracle's formula."""
    tf = index_.term_freqs[doc_id]
    dl = index_.doc_len[doc_id]
    norm = k1 * (1.0 - b + b * dl / index_.avg_doc_len) if index_.avg_doc_len else k1
    score = 0.0
    for term in query_terms:
        f = tf.get(term, 0)
        if f == 0:
            continue
        score += _idf(index_, term) * f * (k1 + 1.0) / (f + norm)
    return score


Reranker = Callable[[str, list[tuple[str, float]]], list[tuple[str, float]]]


def retrieve(
    index_: CorpusIndex,
    query: str,
    n: int | None = None,
    config: RetrievalConfig = RetrievalConfig(),
    rerank: Reranker | None = None,
) -> list[tuple[str, float]]:
    """Top-n (doc_id, score) by BM25, descending; ties break on doc_id.

    Only strictly positive scores are returned. The optional rerank hook
    may adjust candidate scores before the cut (dense reranker stand-in).
    """
    n = config.top_n if n is None else n
    if n < 1:
        raise ValueError("n must be >= 1")
    terms = tokenize(query)
    scored = []
    for doc_id in index_.doc_ids:
        score = bm25_score(index_, terms, doc_id, config.k1, config.b)
        if score > 0.0:
            scored.append((doc_id, score))
    if rerank is not None:
        scored = [(d, s) for d, s in rerank(query, scored) if s > 0.0]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:n]


@dataclass(frozen=True)
class TableSlice:
    kept_rows: list[int]
    kept_cols: list[int]


def _is_numeric_column(table: Table, col: int) -> bool:
    cells = [row[col] for row in table.rows if row[col].strip()]
    if not cells:
        return False
    numeric = sum(1 for cell in cells if any(ch.isdigit() for ch in cell))
    return numeric * 2 > len(cells)


def select_table_slice(table: Table, question: str, row_cap: int = 50) -> TableSlice:
    """Columns matching the question plus numeric columns; rows that overlap.

    If no row shares a token with the question, the first rows up to the
    cap are kept. Original order is preserved; the header always survives.
    """
    q_tokens = set(tokenize(question))
    kept_cols = []
    for col, name in enumerate(table.header):
        if set(tokenize(name)) & q_tokens or _is_numeric_column(table, col):
            kept_cols.append(col)
    if not kept_cols:
        kept_cols = list(range(len(table.header)))
    kept_rows = []
    for i, row in enumerate(table.rows):
        if any(set(tokenize(cell)) & q_tokens for cell in row):
            kept_rows.append(i)
    if not kept_rows:
        kept_rows = list(range(min(len(table.rows), row_cap)))
    return TableSlice(kept_rows=kept_rows, kept_cols=kept_cols)


def render_table_slice(table: Table, slice_: TableSlice) -> str:
    def render_row(cells: Sequence[str]) -> str:
        return " | ".join(cells[c] for c in slice_.kept_cols)

    lines = [f"Table {table.id}:", render_row(table.header)]
    for r in slice_.kept_rows:
        lines.append(render_row(table.rows[r]))
    return "\n".join(lines)


def truncate_span(passage: str, match_char_range: tuple[int, int], k: int) -> str:
    """The sentences containing the match plus k sentences on each side."""
    start, end = match_char_range
    if start < 0 or end > len(passage) or start > end:
        raise ValueError("match range outside passage")
    spans = split_sentences(passage)
    if not spans:
        return passage
    touched = [
        i
        for i, (s, e) in enumerate(spans)
        if s < end and start < e or (start == end and s <= start <= e)
    ]
    if not touched:
        # Range falls on inter-sentence whitespace; snap to nearest sentence.
        touched = [min(range(len(spans)), key=lambda i: abs(spans[i][0] - start))]
    lo = max(0, touched[0] - k)
    hi = min(len(spans) - 1, touched[-1] + k)
    return passage[spans[lo][0] : spans[hi][1]].strip()


def render_visual_text(image: Image, max_chars: int | None = None) -> str:
    """Caption plus OCR text; truncation never drops an OCR numeral.

    When the budget is too small for the full OCR text, the caption is cut
    first and the OCR part collapses to its maximal numeric tokens, which
    are always kept whole even if they alone exceed the budget.
    """
    tail = f" OCR text: {image.ocr_text}" if image.ocr_text else ""
    full = image.caption + tail
    if max_chars is None or len(full) <= max_chars:
        return full
    if image.ocr_text:
        if len(tail) <= max_chars:
            head_budget = max_chars - len(tail)
            return image.caption[:head_budget].rstrip() + tail
        numerals = [m.text for m in parse_numerals(image.ocr_text)]
        tail = " OCR numbers: " + " ".join(numerals) if numerals else ""
        head_budget = max(0, max_chars - len(tail))
        return image.caption[:head_budget].rstrip() + tail
    return image.caption[:max_chars].rstrip()
