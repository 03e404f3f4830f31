"""Chunk mining from a corpus.

Two sources: threshold extraction, which keeps maximal runs of tokens whose
teacher-model probability stays at or above a threshold, and expert
extraction, which ingests externally annotated spans verbatim. Either way
each stored occurrence carries the base model's context vector for the
context preceding its entry token, which is what retrieval matches against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lm import LanguageModel


class ExtractionError(ValueError):
    pass


@dataclass(frozen=True)
class ChunkRecord:
    """One stored chunk occurrence.

    `context` is the up-to-context_len tokens preceding the entry token,
    `entry` the single token immediately before the chunk, `chunk` the
    tokens emitted when the record is retrieved. `source` is
    (document id, token offset of the first chunk token).
    """

    context: tuple[int, ...]
    entry: int
    chunk: tuple[int, ...]
    vector: np.ndarray  # float32, unit norm
    source: tuple[int, int]

    def __post_init__(self):
        if len(self.chunk) < 1:
            raise ExtractionError("chunk must contain at least one token")


@dataclass(frozen=True)
class ExtractionParams:
    gamma: float = 0.9  # probability threshold for keeping a token in a run
    window: int = 512
    stride: int = 448
    context_len: int = 64
    min_run_len: int = 2
    store_suffixes: bool = True

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ExtractionError("gamma must lie in (0, 1]")
        if not 0 < self.stride <= self.window:
            raise ExtractionError("stride must satisfy 0 < stride <= window")
        if self.context_len < 1:
            raise ExtractionError("context_len must be >= 1")
        if self.min_run_len < 1:
            raise ExtractionError("min_run_len must be >= 1")


@dataclass(frozen=True)
class AnnotatedSpan:
    doc: int
    start: int
    end: int  # exclusive

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ExtractionError(f"invalid span [{self.start}, {self.end})")


def _context_vector(base_lm: LanguageModel, context: Sequence[int]) -> np.ndarray:
    vec = base_lm.step(context).context_vector
    return np.asarray(vec, dtype=np.float32)


def _emit_run(records: list[ChunkRecord], win: Sequence[int], doc_id: int,
              win_start: int, run_start: int, run_end: int,
              params: ExtractionParams, base_lm: LanguageModel) -> None:
    starts = [run_start]
    if params.store_suffixes:
        starts.extend(range(run_start + 1, run_end))
    for s in starts:
        entry_pos = s - 1
        ctx_lo = max(0, entry_pos - params.context_len)
        context = tuple(win[ctx_lo:entry_pos])
        records.append(ChunkRecord(
            context=context,
            entry=win[entry_pos],
            chunk=tuple(win[s:run_end]),
            vector=_context_vector(base_lm, context),
            source=(doc_id, win_start + s),
        ))


def extract_chunks(corpus: Sequence[Sequence[int]], teacher_lm: LanguageModel,
                   base_lm: LanguageModel, params: ExtractionParams) -> list[ChunkRecord]:
    """Mine threshold runs from every window of every document.

    Within a window, the scanned region starts at `context_len` so every
    stored chunk has enough preceding context. A maximal run is the longest
    contiguous span inside the scanned region where each token's teacher
    probability (conditioned on the window prefix) is >= gamma. Runs of
    length >= min_run_len are stored, plus every proper suffix when
    store_suffixes is set, so retrieval can enter a long chunk mid-way.
    Overlapping windows may re-emit an occurrence; deduplication happens at
    datastore insertion.
    """
    if teacher_lm.vocab.fingerprint != base_lm.vocab.fingerprint:
        raise ExtractionError("teacher and base LM vocabularies do not match")
    records: list[ChunkRecord] = []
    for doc_id, doc in enumerate(corpus):
        start = 0
        while start < len(doc):
            win = doc[start:start + params.window]
            _scan_window(records, win, doc_id, start, teacher_lm, base_lm, params)
            if start + params.window >= len(doc):
                break
            start += params.stride
    return records


def _scan_window(records: list[ChunkRecord], win: Sequence[int], doc_id: int,
                 win_start: int, teacher_lm: LanguageModel,
                 base_lm: LanguageModel, params: ExtractionParams) -> None:
    lo = params.context_len
    if len(win) <= lo:
        return
    above = []
    for i in range(lo, len(win)):
        p = float(teacher_lm.step(win[:i]).probs[win[i]])
        above.append(p >= params.gamma)
    i = 0
    n = len(above)
    while i < n:
        if not above[i]:
            i += 1
            continue
        j = i
        while j < n and above[j]:
            j += 1
        if j - i >= params.min_run_len:
            _emit_run(records, win, doc_id, win_start, lo + i, lo + j, params, base_lm)
        i = j


def extract_expert_chunks(corpus: Sequence[Sequence[int]],
                          spans: Sequence[AnnotatedSpan],
                          base_lm: LanguageModel,
                          context_len: int = 64) -> tuple[list[ChunkRecord], int]:
    """Turn annotated spans into records verbatim; no thresholding.

    Spans starting at a document's first token have no entry token and are
    skipped; the skip count is returned alongside the records.
    """
    records: list[ChunkRecord] = []
    skipped = 0
    for span in spans:
        doc = corpus[span.doc]
        if span.end > len(doc):
            raise ExtractionError(f"span {span} exceeds document length {len(doc)}")
        if span.start == 0:
            skipped += 1
            continue
        entry_pos = span.start - 1
        ctx_lo = max(0, entry_pos - context_len)
        context = tuple(doc[ctx_lo:entry_pos])
        records.append(ChunkRecord(
            context=context,
            entry=doc[entry_pos],
            chunk=tuple(doc[span.start:span.end]),
            vector=_context_vector(base_lm, context),
            source=(span.doc, span.start),
        ))
    return records, skipped
