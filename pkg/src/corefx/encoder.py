"""Lightweight token and span encoding.

Tokens are embedded through a hash-bucket table (FNV-1a over the token
bytes, so ids are stable across processes) and mixed with the mean of
their context-window neighbours.  Span representations concatenate the
start vector, end vector, an attention-weighted head vector, and a
bucketed width embedding.  A table of precomputed per-token vectors can
replace the hash pathway for plugging in external encoders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .corpus import Document, MentionSpan
from .errors import ConfigError, DataError, FormatError

__all__ = [
    "EncoderConfig",
    "TokenVectorTable",
    "fnv1a64",
    "token_hash_ids",
    "encode_tokens",
    "encode_tokens_backward",
    "width_bucket",
    "distance_bucket",
    "head_attention",
    "span_representations",
    "WIDTH_BUCKET_COUNT",
    "DIST_BUCKET_COUNT",
]

# Bucket lower edges for span widths 1,2,3,4,5-7,8-15,16-31,32+.
_WIDTH_EDGES = np.array([1, 2, 3, 4, 5, 8, 16, 32], dtype=np.int64)
WIDTH_BUCKET_COUNT = len(_WIDTH_EDGES)

# Antecedent distance buckets 1,2,3,4,5-7,8-15,16-31,32-63,64+.
_DIST_EDGES = np.array([1, 2, 3, 4, 5, 8, 16, 32, 64], dtype=np.int64)
DIST_BUCKET_COUNT = len(_DIST_EDGES)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class EncoderConfig:
    """Token encoder settings.

    vectors_file switches token encoding to a precomputed-vector table;
    the hash table settings are ignored in that mode but kept so model
    shapes stay well defined.
    """

    embed_dim: int = 32
    context_window: int = 1
    vocab_hash_buckets: int = 4096
    vectors_file: str | None = None

    def __post_init__(self) -> None:
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be at least 1")
        if self.context_window < 0:
            raise ConfigError("context_window must be non-negative")
        if self.vocab_hash_buckets < 1:
            raise ConfigError("vocab_hash_buckets must be at least 1")


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash; deterministic across processes and platforms."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def token_hash_ids(words: list[str], buckets: int) -> np.ndarray:
    return np.array(
        [fnv1a64(w.encode("utf-8")) % buckets for w in words], dtype=np.int64
    )


def width_bucket(length: int) -> int:
    """Bucket id for a span width (length >= 1)."""
    if length < 1:
        raise ValueError("span width must be at least 1")
    return int(np.searchsorted(_WIDTH_EDGES, length, side="right") - 1)


def width_buckets(lengths: np.ndarray) -> np.ndarray:
    return np.searchsorted(_WIDTH_EDGES, lengths, side="right") - 1


def distance_bucket(distance: int) -> int:
    """Bucket id for an antecedent distance (>= 1, in kept-span positions)."""
    if distance < 1:
        raise ValueError("antecedent distance must be at least 1")
    return int(np.searchsorted(_DIST_EDGES, distance, side="right") - 1)


def distance_buckets(distances: np.ndarray) -> np.ndarray:
    return np.searchsorted(_DIST_EDGES, distances, side="right") - 1


class TokenVectorTable:
    """Precomputed token vectors keyed by (document id, token index)."""

    def __init__(self, dim: int, vectors: dict[tuple[str, int], np.ndarray]):
        self.dim = dim
        self._vectors = vectors

    @classmethod
    def load(cls, path: str) -> "TokenVectorTable":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
            if not header.startswith("dim="):
                raise FormatError(f"{path}: first line must be 'dim=<d>', got {header!r}")
            try:
                dim = int(header[4:])
            except ValueError:
                raise FormatError(f"{path}: bad dimension in header {header!r}") from None
            if dim < 1:
                raise FormatError(f"{path}: dimension must be positive")
            vectors: dict[tuple[str, int], np.ndarray] = {}
            for lineno, line in enumerate(fh, start=2):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise FormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
                doc_id, idx_s, comps = parts
                try:
                    idx = int(idx_s)
                    vec = np.array([float(c) for c in comps.split(",")], dtype=np.float64)
                except ValueError:
                    raise FormatError(f"{path}:{lineno}: malformed token vector") from None
                if vec.shape[0] != dim:
                    raise FormatError(
                        f"{path}:{lineno}: vector has {vec.shape[0]} components, header says {dim}"
                    )
                key = (doc_id, idx)
                if key in vectors:
                    raise FormatError(f"{path}:{lineno}: duplicate vector for {key}")
                vectors[key] = vec
        return cls(dim, vectors)

    def for_document(self, doc: Document) -> np.ndarray:
        rows = []
        for tok in doc.tokens:
            key = (doc.id, tok.index)
            if key not in self._vectors:
                raise DataError(
                    f"no precomputed vector for token {tok.index} of document {doc.id}"
                )
            rows.append(self._vectors[key])
        if not rows:
            return np.zeros((0, self.dim), dtype=np.float64)
        return np.stack(rows)


def _neighbour_counts(n: int, window: int) -> np.ndarray:
    t = np.arange(n)
    return np.minimum(t, window) + np.minimum(n - 1 - t, window)


def encode_tokens(
    doc: Document,
    embed: np.ndarray,
    cfg: EncoderConfig,
    vectors: TokenVectorTable | None = None,
) -> tuple[np.ndarray, dict]:
    """Per-token vectors x_t plus a cache for the backward pass.

    x_t is the token's own embedding plus the plain mean of its
    neighbours' embeddings within the context window; the token itself is
    excluded from the mean and an empty neighbourhood contributes zero.
    With a vector table the rows come straight from the table and the
    embedding table receives no gradient.
    """
    n = len(doc.tokens)
    if vectors is not None:
        x = vectors.for_document(doc)
        return x, {"mode": "table", "n": n}
    words = [t.text for t in doc.tokens]
    ids = token_hash_ids(words, cfg.vocab_hash_buckets)
    e_doc = embed[ids]
    w = cfg.context_window
    nsum = np.zeros_like(e_doc)
    for delta in range(1, w + 1):
        if delta >= n:
            break
        nsum[delta:] += e_doc[:-delta]
        nsum[:-delta] += e_doc[delta:]
    cnt = _neighbour_counts(n, w)
    inv = np.where(cnt > 0, 1.0 / np.maximum(cnt, 1), 0.0)
    x = e_doc + nsum * inv[:, None]
    return x, {"mode": "hash", "n": n, "ids": ids, "inv": inv, "window": w}


def encode_tokens_backward(
    dx: np.ndarray, cache: dict, dembed: np.ndarray
) -> None:
    """Accumulate d(loss)/d(embed) into dembed given d(loss)/dx."""
    if cache["mode"] == "table":
        return
    n = cache["n"]
    if n == 0:
        return
    de_doc = dx.copy()
    weighted = dx * cache["inv"][:, None]
    for delta in range(1, cache["window"] + 1):
        if delta >= n:
            break
        de_doc[:-delta] += weighted[delta:]
        de_doc[delta:] += weighted[:-delta]
    kernels.scatter_add_rows(dembed, cache["ids"], de_doc)


def head_attention(
    x: np.ndarray, span: MentionSpan, attn_w: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Attention-weighted head vector for one span; returns (vector, weights)."""
    u = x @ attn_w
    starts = np.array([span.start], dtype=np.int64)
    ends = np.array([span.end], dtype=np.int64)
    offsets = np.array([0, span.length], dtype=np.int64)
    xhat, alpha = kernels.attention_forward(x, u, starts, ends, offsets)
    return xhat[0], alpha


def span_representations(
    x: np.ndarray,
    starts: np.ndarray,
    ends: np.ndarray,
    attn_w: np.ndarray,
    width_emb: np.ndarray,
) -> tuple[np.ndarray, dict]:
    """Rows [x_start, x_end, head, width_embedding] for each span.

    Returns (g [m, 3*d + width_dim], cache).  Spans must satisfy
    0 <= start <= end < n; the caller enforces the width limit.
    """
    d = x.shape[1]
    m = starts.shape[0]
    u = x @ attn_w
    lengths = ends - starts + 1
    offsets = np.zeros(m + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    xhat, alpha = kernels.attention_forward(x, u, starts, ends, offsets)
    wb = width_buckets(lengths)
    g = np.empty((m, 3 * d + width_emb.shape[1]), dtype=np.float64)
    g[:, :d] = x[starts]
    g[:, d : 2 * d] = x[ends]
    g[:, 2 * d : 3 * d] = xhat
    g[:, 3 * d :] = width_emb[wb]
    cache = {
        "starts": starts,
        "ends": ends,
        "offsets": offsets,
        "alpha": alpha,
        "u": u,
        "width_buckets": wb,
        "d": d,
    }
    return g, cache


def span_representations_backward(
    dg: np.ndarray,
    cache: dict,
    x: np.ndarray,
    attn_w: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients w.r.t. x, attn_w and the width embedding table.

    Returns (dx [n,d], dattn_w [d], dwidth_emb rows summed per bucket).
    """
    d = cache["d"]
    n = x.shape[0]
    dx = np.zeros_like(x)
    kernels.scatter_add_rows(dx, cache["starts"], np.ascontiguousarray(dg[:, :d]))
    kernels.scatter_add_rows(dx, cache["ends"], np.ascontiguousarray(dg[:, d : 2 * d]))
    dx_att, du = kernels.attention_backward(
        x,
        cache["starts"],
        cache["ends"],
        cache["offsets"],
        cache["alpha"],
        np.ascontiguousarray(dg[:, 2 * d : 3 * d]),
    )
    dx += dx_att
    dx += du[:, None] * attn_w[None, :]
    dattn_w = x.T @ du
    width_dim = dg.shape[1] - 3 * d
    dwidth = np.zeros((WIDTH_BUCKET_COUNT, width_dim), dtype=np.float64)
    kernels.scatter_add_rows(
        dwidth, cache["width_buckets"].astype(np.int64), np.ascontiguousarray(dg[:, 3 * d :])
    )
    return dx, dattn_w, dwidth
