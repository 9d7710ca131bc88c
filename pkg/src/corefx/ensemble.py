"""Score combination across models and cluster decoding.

An ensemble combines k per-model score sets entry by entry, prunes on
the combined mention scores, scores antecedent pairs per model over that
shared kept set, combines again, and decodes once.  The dummy antecedent
stays at score zero through combination.

The mean combiner guarantees two things beyond plain averaging: if all k
inputs for an entry are equal the output is exactly that value (so an
ensemble of identical models is bit-identical to the single model), and
inputs are sorted before summing (so the result cannot depend on model
order).

The oracle combiner consults the gold annotation: entries that agree
with gold (gold mentions, gold links) take the maximum across models,
all others the minimum.  It bounds what any per-entry selection from the
same k models could achieve.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .corpus import Document, MentionSpan
from .encoder import TokenVectorTable
from .errors import DataError
from .params import ModelParams
from .scorer import (
    DocumentScores,
    PruneStrategy,
    ScoringContext,
    TopLambda,
    build_antecedent_table,
    pair_positions,
    prune_indices,
    span_arrays,
)

__all__ = [
    "MeanCombine",
    "OracleCombine",
    "Combiner",
    "ModelSource",
    "DumpSource",
    "ScoreSource",
    "combine_mean",
    "predict_document",
    "predict_corpus",
    "decode_clusters",
    "EnsembleRun",
]


def combine_mean(matrix: np.ndarray) -> np.ndarray:
    """Column-wise mean of a [k, n] matrix, order-invariant and exact on ties."""
    k = matrix.shape[0]
    if k == 1:
        return matrix[0].copy()
    if matrix.shape[1] == 0:
        return np.zeros(0, dtype=np.float64)
    mean = np.sort(matrix, axis=0).sum(axis=0) / k
    all_equal = matrix.max(axis=0) == matrix.min(axis=0)
    return np.where(all_equal, matrix[0], mean)


@dataclass(frozen=True)
class MeanCombine:
    def mention(self, matrix: np.ndarray, doc: Document, spans) -> np.ndarray:
        return combine_mean(matrix)

    def pairs(self, matrix: np.ndarray, doc: Document, spans, anchor, ante) -> np.ndarray:
        return combine_mean(matrix)


@dataclass(frozen=True)
class OracleCombine:
    """Gold-guided per-entry selection: max for gold entries, min otherwise."""

    def mention(
        self, matrix: np.ndarray, doc: Document, spans: list[MentionSpan]
    ) -> np.ndarray:
        gold = {sp for cl in doc.gold_clusters for sp in cl.spans}
        is_gold = np.array([sp in gold for sp in spans], dtype=bool)
        return np.where(is_gold, matrix.max(axis=0), matrix.min(axis=0))

    def pairs(
        self,
        matrix: np.ndarray,
        doc: Document,
        spans: list[MentionSpan],
        anchor: np.ndarray,
        ante: np.ndarray,
    ) -> np.ndarray:
        cluster_of: dict[MentionSpan, int] = {}
        for ci, cl in enumerate(doc.gold_clusters):
            for sp in cl.spans:
                cluster_of[sp] = ci
        is_gold = np.array(
            [
                cluster_of.get(spans[int(a)], -1) >= 0
                and cluster_of.get(spans[int(a)]) == cluster_of.get(spans[int(b)], -2)
                for a, b in zip(anchor, ante)
            ],
            dtype=bool,
        )
        if matrix.shape[1] == 0:
            return np.zeros(0, dtype=np.float64)
        return np.where(is_gold, matrix.max(axis=0), matrix.min(axis=0))


Combiner = Union[MeanCombine, OracleCombine]


class ModelSource:
    """Scores computed live from a parameter set."""

    def __init__(self, params: ModelParams, vectors: TokenVectorTable | None = None):
        self.params = params
        self.vectors = vectors
        self._ctx: ScoringContext | None = None

    def _context(self, doc: Document) -> ScoringContext:
        if self._ctx is None or self._ctx.doc is not doc:
            self._ctx = ScoringContext.build(doc, self.params, self.vectors)
        return self._ctx

    def candidate_spans(self, doc: Document) -> list[MentionSpan]:
        ctx = self._context(doc)
        return ctx.candidate_spans()

    def mention_scores(
        self, doc: Document, starts: np.ndarray, ends: np.ndarray
    ) -> np.ndarray:
        ctx = self._context(doc)
        if not (
            ctx.starts.shape == starts.shape
            and np.array_equal(ctx.starts, starts)
            and np.array_equal(ctx.ends, ends)
        ):
            raise DataError(
                f"model (span_limit={self.params.config.span_limit}) enumerates "
                f"different candidate spans for document {doc.id} than the ensemble"
            )
        return ctx.mention_scores

    def pair_scores(
        self,
        doc: Document,
        kept: np.ndarray,
        spans: list[MentionSpan],
        anchor: np.ndarray,
        ante: np.ndarray,
    ) -> np.ndarray:
        ctx = self._context(doc)
        return ctx.pair_scores(kept).scores


class DumpSource:
    """Scores replayed from a dump written by an earlier run."""

    def __init__(self, records: dict[str, DocumentScores]):
        self.records = records

    def _record(self, doc: Document) -> DocumentScores:
        if doc.id not in self.records:
            raise DataError(f"score dump has no document {doc.id}")
        rec = self.records[doc.id]
        if rec.n_tokens != len(doc.tokens):
            raise DataError(
                f"score dump for {doc.id} was written for {rec.n_tokens} tokens, "
                f"document has {len(doc.tokens)}"
            )
        return rec

    def candidate_spans(self, doc: Document) -> list[MentionSpan]:
        rec = self._record(doc)
        return [MentionSpan(s, e) for s, e in sorted(rec.mention)]

    def mention_scores(
        self, doc: Document, starts: np.ndarray, ends: np.ndarray
    ) -> np.ndarray:
        return self._record(doc).mention_vector(starts, ends)

    def pair_scores(
        self,
        doc: Document,
        kept: np.ndarray,
        spans: list[MentionSpan],
        anchor: np.ndarray,
        ante: np.ndarray,
    ) -> np.ndarray:
        return self._record(doc).pair_vector(spans, anchor, ante)


ScoreSource = Union[ModelSource, DumpSource]


def _as_source(obj) -> ScoreSource:
    if isinstance(obj, ModelParams):
        return ModelSource(obj)
    if isinstance(obj, (ModelSource, DumpSource)):
        return obj
    raise TypeError(f"cannot use {type(obj).__name__} as a score source")


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # smaller root wins so grouping is order-independent
            if ra < rb:
                self.parent[rb] = ra
            else:
                self.parent[ra] = rb


def decode_clusters(
    spans: list[MentionSpan],
    pair_scores: np.ndarray,
    emit_singletons: bool = True,
) -> list[frozenset[MentionSpan]]:
    """Greedy antecedent decoding over the combined scores.

    Each span takes the highest-scoring entry of its antecedent row,
    ties resolved in favour of the dummy first and then the earlier
    antecedent; chosen links are merged with union-find.  Clusters are
    reported in order of their earliest span.
    """
    m = len(spans)
    table = build_antecedent_table(spans, pair_scores)
    uf = _UnionFind(m)
    for i in range(m):
        row = table.row(i)
        best = int(np.argmax(row))  # first maximum: dummy, then earlier spans
        if best > 0:
            uf.union(i, best - 1)
    groups: dict[int, list[MentionSpan]] = {}
    for i in range(m):
        groups.setdefault(uf.find(i), []).append(spans[i])
    clusters = [frozenset(g) for _, g in sorted(groups.items())]
    if not emit_singletons:
        clusters = [c for c in clusters if len(c) > 1]
    return clusters


@dataclass
class EnsembleRun:
    """Everything produced while predicting one document."""

    doc: Document
    spans: list[MentionSpan]  # candidate enumeration
    per_model_mention: np.ndarray  # [k, n_spans]
    combined_mention: np.ndarray
    kept: np.ndarray
    kept_spans: list[MentionSpan]
    anchor_pos: np.ndarray
    ante_pos: np.ndarray
    per_model_pairs: np.ndarray  # [k, P]
    combined_pairs: np.ndarray
    clusters: list[frozenset[MentionSpan]]


def run_ensemble(
    doc: Document,
    sources: Sequence,
    combine: Combiner | None = None,
    strategy: PruneStrategy | None = None,
    emit_singletons: bool = True,
) -> EnsembleRun:
    if not sources:
        raise DataError("ensemble needs at least one score source")
    combine = combine or MeanCombine()
    strategy = strategy or TopLambda()
    srcs = [_as_source(s) for s in sources]

    spans = srcs[0].candidate_spans(doc)
    starts = np.array([sp.start for sp in spans], dtype=np.int64)
    ends = np.array([sp.end for sp in spans], dtype=np.int64)

    mention_matrix = np.stack(
        [s.mention_scores(doc, starts, ends) for s in srcs]
    )
    combined_mention = combine.mention(mention_matrix, doc, spans)
    kept = prune_indices(combined_mention, len(doc.tokens), strategy)
    kept_spans = [spans[int(k)] for k in kept]

    m = kept.shape[0]
    anchor_pos, ante_pos = pair_positions(m)
    if anchor_pos.shape[0]:
        pair_matrix = np.stack(
            [s.pair_scores(doc, kept, kept_spans, anchor_pos, ante_pos) for s in srcs]
        )
    else:
        pair_matrix = np.zeros((len(srcs), 0), dtype=np.float64)
    combined_pairs = combine.pairs(pair_matrix, doc, kept_spans, anchor_pos, ante_pos)

    clusters = decode_clusters(kept_spans, combined_pairs, emit_singletons)
    return EnsembleRun(
        doc=doc,
        spans=spans,
        per_model_mention=mention_matrix,
        combined_mention=combined_mention,
        kept=kept,
        kept_spans=kept_spans,
        anchor_pos=anchor_pos,
        ante_pos=ante_pos,
        per_model_pairs=pair_matrix,
        combined_pairs=combined_pairs,
        clusters=clusters,
    )


def predict_document(
    doc: Document,
    sources: Sequence,
    combine: Combiner | None = None,
    strategy: PruneStrategy | None = None,
    emit_singletons: bool = True,
    vectors: TokenVectorTable | None = None,
) -> list[frozenset[MentionSpan]]:
    srcs = [
        ModelSource(s, vectors) if isinstance(s, ModelParams) else s for s in sources
    ]
    return run_ensemble(doc, srcs, combine, strategy, emit_singletons).clusters


def predict_corpus(
    corpus_docs: Sequence[Document],
    sources: Sequence,
    combine: Combiner | None = None,
    strategy: PruneStrategy | None = None,
    emit_singletons: bool = True,
    vectors: TokenVectorTable | None = None,
) -> dict[str, list[frozenset[MentionSpan]]]:
    return {
        doc.id: predict_document(
            doc, sources, combine, strategy, emit_singletons, vectors
        )
        for doc in corpus_docs
    }
