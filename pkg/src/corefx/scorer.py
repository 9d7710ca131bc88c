"""Span scoring: enumeration, mention scores, pruning, antecedent tables.

A ScoringContext runs the forward pass for one document under one set of
parameters and keeps every intermediate needed for exact backprop.  The
candidate set is every span up to the configured width limit, ordered by
(start, end); pruning keeps a subset of those indices, and antecedent
scoring considers, for the i-th kept span, the dummy antecedent followed
by all earlier kept spans.  The dummy's score is fixed at zero and never
trained.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import kernels
from .corpus import Document, MentionSpan
from .encoder import (
    TokenVectorTable,
    distance_bucket,
    distance_buckets,
    encode_tokens,
    encode_tokens_backward,
    span_representations,
    span_representations_backward,
)
from .errors import ConfigError, DataError, FormatError
from .params import ModelParams

__all__ = [
    "TopLambda",
    "PositiveScore",
    "PruneStrategy",
    "parse_prune_strategy",
    "enumerate_spans",
    "span_arrays",
    "prune_indices",
    "distance_feature",
    "ScoringContext",
    "PairScores",
    "AntecedentTable",
    "build_antecedent_table",
    "DocumentScores",
    "write_score_dump",
    "read_score_dump",
]


@dataclass(frozen=True)
class TopLambda:
    """Keep the max(1, floor(keep_ratio * n_tokens)) best-scoring spans."""

    keep_ratio: float = 0.18

    def __post_init__(self) -> None:
        if not 0.0 < self.keep_ratio <= 1.0:
            raise ConfigError("keep_ratio must be in (0, 1]")

    def spec(self) -> str:
        return f"top-lambda:{self.keep_ratio!r}"


@dataclass(frozen=True)
class PositiveScore:
    """Keep every span whose mention score is strictly positive."""

    def spec(self) -> str:
        return "positive"


PruneStrategy = Union[TopLambda, PositiveScore]


def parse_prune_strategy(text: str) -> PruneStrategy:
    text = text.strip()
    if text == "positive":
        return PositiveScore()
    if text == "top-lambda":
        return TopLambda()
    if text.startswith("top-lambda:"):
        try:
            return TopLambda(float(text.split(":", 1)[1]))
        except ValueError:
            raise ConfigError(f"bad keep ratio in prune strategy {text!r}") from None
    raise ConfigError(
        f"unknown prune strategy {text!r}; use 'top-lambda[:ratio]' or 'positive'"
    )


def span_arrays(n_tokens: int, span_limit: int) -> tuple[np.ndarray, np.ndarray]:
    """All candidate spans up to the width limit, (start, end) ordered."""
    starts_l: list[int] = []
    ends_l: list[int] = []
    for s in range(n_tokens):
        top = min(n_tokens - 1, s + span_limit - 1)
        for e in range(s, top + 1):
            starts_l.append(s)
            ends_l.append(e)
    return (
        np.array(starts_l, dtype=np.int64),
        np.array(ends_l, dtype=np.int64),
    )


def enumerate_spans(n_tokens: int, span_limit: int) -> list[MentionSpan]:
    starts, ends = span_arrays(n_tokens, span_limit)
    return [MentionSpan(int(s), int(e)) for s, e in zip(starts, ends)]


def prune_indices(
    scores: np.ndarray, n_tokens: int, strategy: PruneStrategy
) -> np.ndarray:
    """Indices (ascending, i.e. span order) of the spans kept by `strategy`.

    Candidates arrive in (start, end) order, so a stable sort on score
    breaks ties in favour of the earlier span.
    """
    if isinstance(strategy, TopLambda):
        k = max(1, int(np.floor(strategy.keep_ratio * n_tokens)))
        k = min(k, scores.shape[0])
        if k == 0:
            return np.zeros(0, dtype=np.int64)
        order = np.argsort(-scores, kind="stable")
        return np.sort(order[:k]).astype(np.int64)
    if isinstance(strategy, PositiveScore):
        return np.nonzero(scores > 0.0)[0].astype(np.int64)
    raise ConfigError(f"unknown prune strategy {strategy!r}")


def distance_feature(
    kept_spans: Sequence[MentionSpan], i: MentionSpan, j: MentionSpan
) -> int:
    """Distance bucket for antecedent j of span i, both in the kept list."""
    pi = kept_spans.index(i)
    pj = kept_spans.index(j)
    if pj >= pi:
        raise ValueError("antecedent must precede the span in the kept order")
    return distance_bucket(pi - pj)


def pair_positions(m: int) -> tuple[np.ndarray, np.ndarray]:
    """(anchor, antecedent) kept-position pairs, grouped by anchor.

    Row i contributes pairs (i, 0..i-1); the flat order matches the
    antecedent table layout with the dummy column removed.
    """
    counts = np.arange(m)
    anchor = np.repeat(np.arange(m, dtype=np.int64), counts)
    base = np.repeat(counts * (counts - 1) // 2, counts)
    ante = np.arange(anchor.shape[0], dtype=np.int64) - base
    return anchor, ante


@dataclass
class PairScores:
    """Pairwise antecedent scores for one kept set, plus backprop state."""

    kept: np.ndarray  # indices into the candidate enumeration
    anchor_pos: np.ndarray  # kept-list position of the later span
    ante_pos: np.ndarray  # kept-list position of the antecedent
    dist_rows: np.ndarray  # distance bucket per pair
    scores: np.ndarray
    features: np.ndarray
    net_cache: list


class ScoringContext:
    """Forward state for one (document, parameters) pair."""

    def __init__(
        self,
        doc: Document,
        params: ModelParams,
        x: np.ndarray,
        enc_cache: dict,
        starts: np.ndarray,
        ends: np.ndarray,
        g: np.ndarray,
        g_cache: dict,
        mention_scores: np.ndarray,
        mention_cache: list,
    ):
        self.doc = doc
        self.params = params
        self.x = x
        self._enc_cache = enc_cache
        self.starts = starts
        self.ends = ends
        self.g = g
        self._g_cache = g_cache
        self.mention_scores = mention_scores
        self._mention_cache = mention_cache

    @classmethod
    def build(
        cls,
        doc: Document,
        params: ModelParams,
        vectors: TokenVectorTable | None = None,
    ) -> "ScoringContext":
        cfg = params.config
        x, enc_cache = encode_tokens(doc, params.embed, cfg.encoder, vectors)
        if vectors is not None and x.shape[1] != cfg.encoder.embed_dim:
            raise DataError(
                f"token vector table has dim {x.shape[1]}, model expects "
                f"{cfg.encoder.embed_dim}"
            )
        starts, ends = span_arrays(len(doc.tokens), cfg.span_limit)
        g, g_cache = span_representations(
            x, starts, ends, params.attn_w, params.width_emb
        )
        mention_scores, mention_cache = params.ffnn_m.forward(g)
        return cls(
            doc, params, x, enc_cache, starts, ends, g, g_cache,
            mention_scores, mention_cache,
        )

    @property
    def n_tokens(self) -> int:
        return len(self.doc.tokens)

    def candidate_spans(self) -> list[MentionSpan]:
        return [MentionSpan(int(s), int(e)) for s, e in zip(self.starts, self.ends)]

    def prune(self, strategy: PruneStrategy) -> np.ndarray:
        return prune_indices(self.mention_scores, self.n_tokens, strategy)

    def kept_spans(self, kept: np.ndarray) -> list[MentionSpan]:
        return [
            MentionSpan(int(self.starts[k]), int(self.ends[k])) for k in kept
        ]

    def pair_scores(self, kept: np.ndarray) -> PairScores:
        m = kept.shape[0]
        anchor_pos, ante_pos = pair_positions(m)
        dist_rows = (
            distance_buckets(anchor_pos - ante_pos)
            if anchor_pos.shape[0]
            else np.zeros(0, dtype=np.int64)
        )
        left = kept[anchor_pos]
        right = kept[ante_pos]
        feats = kernels.pair_features(
            self.g, left, right, self.params.dist_emb[dist_rows]
        )
        scores, cache = self.params.ffnn_s.forward(feats)
        return PairScores(
            kept=kept,
            anchor_pos=anchor_pos,
            ante_pos=ante_pos,
            dist_rows=dist_rows,
            scores=scores,
            features=feats,
            net_cache=cache,
        )

    def backward(
        self,
        d_mention_scores: np.ndarray,
        pairs: PairScores | None = None,
        d_pair_scores: np.ndarray | None = None,
    ) -> dict[str, np.ndarray]:
        """Exact gradients of a scalar whose score-space gradient is given.

        d_mention_scores covers the full candidate enumeration (zeros for
        spans the loss does not touch).
        """
        params = self.params
        grads = params.zero_grads()

        dg, dws, dbs = params.ffnn_m.backward(self._mention_cache, d_mention_scores)
        for i, (dw, db) in enumerate(zip(dws, dbs)):
            grads[f"ffnn_m.w{i}"] += dw
            grads[f"ffnn_m.b{i}"] += db

        if pairs is not None and d_pair_scores is not None and pairs.scores.shape[0]:
            dfeat, dws_s, dbs_s = params.ffnn_s.backward(
                pairs.net_cache, d_pair_scores
            )
            for i, (dw, db) in enumerate(zip(dws_s, dbs_s)):
                grads[f"ffnn_s.w{i}"] += dw
                grads[f"ffnn_s.b{i}"] += db
            left = pairs.kept[pairs.anchor_pos]
            right = pairs.kept[pairs.ante_pos]
            dg_pairs, ddist_rows = kernels.pair_features_backward(
                dfeat, self.g, left, right
            )
            dg += dg_pairs
            kernels.scatter_add_rows(
                grads["dist_emb"], pairs.dist_rows, ddist_rows
            )

        dx, dattn_w, dwidth = span_representations_backward(
            dg, self._g_cache, self.x, params.attn_w
        )
        grads["attn_w"] += dattn_w
        grads["width_emb"] += dwidth
        encode_tokens_backward(dx, self._enc_cache, grads["embed"])
        return grads

    def export_scores(self, kept: np.ndarray) -> "DocumentScores":
        """Everything a later run needs to reuse this model's scores."""
        mention = {
            (int(s), int(e)): float(v)
            for s, e, v in zip(self.starts, self.ends, self.mention_scores)
        }
        pairs_out: dict[tuple[int, int, int, int], float] = {}
        bundle = self.pair_scores(kept)
        spans = self.kept_spans(kept)
        for a, b, v in zip(bundle.anchor_pos, bundle.ante_pos, bundle.scores):
            si, sj = spans[int(a)], spans[int(b)]
            pairs_out[(si.start, si.end, sj.start, sj.end)] = float(v)
        return DocumentScores(
            doc_id=self.doc.id,
            n_tokens=self.n_tokens,
            mention=mention,
            pairs=pairs_out,
        )


@dataclass
class AntecedentTable:
    """Flat ragged antecedent scores: row i is [dummy, kept_0 .. kept_{i-1}]."""

    spans: list[MentionSpan]
    scores: np.ndarray
    offsets: np.ndarray

    @property
    def num_spans(self) -> int:
        return len(self.spans)

    def row(self, i: int) -> np.ndarray:
        return self.scores[self.offsets[i] : self.offsets[i + 1]]

    def probabilities(self) -> np.ndarray:
        return kernels.segment_softmax(self.scores, self.offsets)

    def row_probabilities(self, i: int) -> np.ndarray:
        p = self.probabilities()
        return p[self.offsets[i] : self.offsets[i + 1]]


def table_offsets(m: int) -> np.ndarray:
    out = np.zeros(m + 1, dtype=np.int64)
    np.cumsum(np.arange(1, m + 1), out=out[1:])
    return out


def pair_flat_indices(m: int) -> np.ndarray:
    """Position of each (anchor, antecedent) pair inside the flat table."""
    counts = np.arange(m)
    offs = table_offsets(m)
    base = np.repeat(offs[:-1] + 1, counts)
    within = np.arange(int(counts.sum()), dtype=np.int64) - np.repeat(
        counts * (counts - 1) // 2, counts
    )
    return base + within


def build_antecedent_table(
    spans: list[MentionSpan], pair_scores: np.ndarray
) -> AntecedentTable:
    """Assemble the ragged table from row-major pair scores; dummy entries are 0."""
    m = len(spans)
    offsets = table_offsets(m)
    flat = np.zeros(int(offsets[-1]), dtype=np.float64)
    if m > 1:
        flat[pair_flat_indices(m)] = pair_scores
    return AntecedentTable(spans=spans, scores=flat, offsets=offsets)


@dataclass
class DocumentScores:
    """One model's scores for one document, as dumped to or read from disk."""

    doc_id: str
    n_tokens: int
    mention: dict[tuple[int, int], float]
    pairs: dict[tuple[int, int, int, int], float]

    def mention_vector(self, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
        out = np.empty(starts.shape[0], dtype=np.float64)
        for i, (s, e) in enumerate(zip(starts, ends)):
            key = (int(s), int(e))
            if key not in self.mention:
                raise DataError(
                    f"score dump for {self.doc_id} lacks mention span {key}"
                )
            out[i] = self.mention[key]
        return out

    def pair_vector(
        self,
        spans: list[MentionSpan],
        anchor_pos: np.ndarray,
        ante_pos: np.ndarray,
    ) -> np.ndarray:
        out = np.empty(anchor_pos.shape[0], dtype=np.float64)
        for k, (a, b) in enumerate(zip(anchor_pos, ante_pos)):
            si, sj = spans[int(a)], spans[int(b)]
            key = (si.start, si.end, sj.start, sj.end)
            if key not in self.pairs:
                raise DataError(
                    f"score dump for {self.doc_id} lacks pair "
                    f"({si.start},{si.end})<-({sj.start},{sj.end}); the pruned "
                    "set must match the run that wrote the dump"
                )
            out[k] = self.pairs[key]
        return out


def write_score_dump(path: str, records: Sequence[DocumentScores]) -> None:
    """Plain-text dump; floats use repr so they round-trip bit exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(f"D\t{rec.doc_id}\t{rec.n_tokens}\n")
            for (s, e) in sorted(rec.mention):
                fh.write(f"M\t{s}\t{e}\t{rec.mention[(s, e)]!r}\n")
            for key in sorted(rec.pairs):
                i_s, i_e, j_s, j_e = key
                fh.write(f"P\t{i_s}\t{i_e}\t{j_s}\t{j_e}\t{rec.pairs[key]!r}\n")


def read_score_dump(path: str) -> dict[str, DocumentScores]:
    records: dict[str, DocumentScores] = {}
    current: DocumentScores | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            tag = parts[0]
            try:
                if tag == "D":
                    if len(parts) != 3:
                        raise ValueError("document header needs id and token count")
                    doc_id, n_tokens = parts[1], int(parts[2])
                    if doc_id in records:
                        raise ValueError(f"duplicate document {doc_id!r}")
                    current = DocumentScores(doc_id, n_tokens, {}, {})
                    records[doc_id] = current
                elif tag == "M":
                    if current is None:
                        raise ValueError("mention line before any document header")
                    if len(parts) != 4:
                        raise ValueError("mention line needs start, end, score")
                    key = (int(parts[1]), int(parts[2]))
                    if key in current.mention:
                        raise ValueError(f"duplicate mention score for span {key}")
                    current.mention[key] = float(parts[3])
                elif tag == "P":
                    if current is None:
                        raise ValueError("pair line before any document header")
                    if len(parts) != 6:
                        raise ValueError("pair line needs four offsets and a score")
                    pkey = tuple(int(v) for v in parts[1:5])
                    if pkey in current.pairs:
                        raise ValueError(f"duplicate pair score for {pkey}")
                    current.pairs[pkey] = float(parts[5])
                else:
                    raise ValueError(f"unknown record tag {tag!r}")
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return records
