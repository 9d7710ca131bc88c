"""Document and corpus data model plus CoNLL-2012 style serialization.

Spans are end-inclusive token index pairs everywhere in the toolkit, which
matches the bracket semantics of the CoNLL coreference column.  Documents
and corpora are immutable once built and safe to share across workers.

Only the token text and the coreference column are interpreted when
parsing; any other columns are ignored (they are not preserved on
round-trip).  An optional ``#language <tag>`` comment directly after the
``#begin document`` line carries the document language tag.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import FormatError

__all__ = [
    "Token",
    "MentionSpan",
    "Cluster",
    "Document",
    "Corpus",
    "parse_conll",
    "emit_conll",
]


@dataclass(frozen=True)
class Token:
    text: str
    index: int

    def __post_init__(self):
        if not self.text:
            raise ValueError("token text must be non-empty")
        if self.index < 0:
            raise ValueError("token index must be >= 0")


@dataclass(frozen=True, order=True)
class MentionSpan:
    """End-inclusive token span."""

    start: int
    end: int

    def __post_init__(self):
        if not (0 <= self.start <= self.end):
            raise ValueError(f"invalid span ({self.start}, {self.end})")

    @property
    def length(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True)
class Cluster:
    """A set of mention spans referring to the same entity."""

    spans: frozenset[MentionSpan]

    def __post_init__(self):
        if not self.spans:
            raise ValueError("cluster must be non-empty")

    @classmethod
    def of(cls, *pairs: tuple[int, int]) -> "Cluster":
        return cls(frozenset(MentionSpan(s, e) for s, e in pairs))

    def sorted_spans(self) -> list[MentionSpan]:
        return sorted(self.spans)

    def __len__(self) -> int:
        return len(self.spans)


@dataclass(frozen=True)
class Document:
    id: str
    tokens: tuple[Token, ...]
    gold_clusters: tuple[Cluster, ...]
    language: str = ""

    def __post_init__(self):
        n = len(self.tokens)
        for i, tok in enumerate(self.tokens):
            if tok.index != i:
                raise ValueError(
                    f"document {self.id!r}: token index {tok.index} at position {i}"
                )
        seen: set[MentionSpan] = set()
        for cluster in self.gold_clusters:
            for span in cluster.spans:
                if span.end >= n:
                    raise ValueError(
                        f"document {self.id!r}: span ({span.start}, {span.end}) "
                        f"out of bounds for length {n}"
                    )
                if span in seen:
                    raise ValueError(
                        f"document {self.id!r}: span ({span.start}, {span.end}) "
                        f"appears in more than one cluster"
                    )
                seen.add(span)

    def __len__(self) -> int:
        return len(self.tokens)

    def token_texts(self) -> list[str]:
        return [t.text for t in self.tokens]

    def cluster_partition(self) -> set[frozenset[MentionSpan]]:
        """Label-free view of the clustering, for equality checks."""
        return {c.spans for c in self.gold_clusters}

    def with_clusters(self, clusters: tuple[Cluster, ...]) -> "Document":
        return Document(self.id, self.tokens, clusters, self.language)


@dataclass(frozen=True)
class Corpus:
    documents: tuple[Document, ...]
    split: str = "train"

    def __post_init__(self):
        if self.split not in ("train", "dev", "test"):
            raise ValueError(f"unknown split {self.split!r}")
        ids = [d.id for d in self.documents]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate document ids in corpus: {dup}")

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    def by_id(self) -> dict[str, Document]:
        return {d.id: d for d in self.documents}


_BEGIN_RE = re.compile(r"^#begin document \(?([^);]*)\)?.*$")
_COREF_PART_RE = re.compile(r"^(\((\d+)\)|\((\d+)|(\d+)\))$")


def make_document(
    doc_id: str,
    words: list[str],
    clusters: list[list[tuple[int, int]]],
    language: str = "",
) -> Document:
    """Convenience constructor from plain lists; validates invariants."""
    tokens = tuple(Token(w, i) for i, w in enumerate(words))
    built = tuple(Cluster.of(*spans) for spans in clusters)
    return Document(doc_id, tokens, built, language)


def parse_conll(text: str) -> Corpus:
    """Parse CoNLL-2012 style text into a Corpus (split defaults to train).

    Accepted line shapes inside a ``#begin document`` block:

    * ``#`` comment lines (``#language <tag>`` is interpreted, others skipped),
    * token lines with >= 4 whitespace-separated columns: token text is
      column 4 and the coreference column is the last one (CoNLL-2012),
    * token lines with 2 or 3 columns: token text is the first column and
      the coreference column is the last.

    The coreference column holds ``-`` or ``|``-separated entries of the
    forms ``(k``, ``k)``, ``(k)``.  Brackets for one cluster id close in
    LIFO order.  Unbalanced brackets and spans assigned to two clusters
    are hard errors naming the document and line.
    """
    documents: list[Document] = []
    doc_id: str | None = None
    language = ""
    words: list[str] = []
    open_stacks: dict[str, list[int]] = {}
    cluster_spans: dict[str, list[tuple[int, int]]] = {}
    begin_line = 0

    def close_document(line_no: int):
        nonlocal doc_id, language, words, open_stacks, cluster_spans
        assert doc_id is not None
        pending = {k: v for k, v in open_stacks.items() if v}
        if pending:
            key = sorted(pending)[0]
            raise FormatError(
                f"document {doc_id!r}: cluster {key} opened at token "
                f"{pending[key][-1]} never closed (line {line_no})"
            )
        seen: dict[tuple[int, int], str] = {}
        for key, spans in cluster_spans.items():
            for span in spans:
                if span in seen:
                    raise FormatError(
                        f"document {doc_id!r}: span {span} assigned to clusters "
                        f"{seen[span]} and {key} (line {line_no})"
                    )
                seen[span] = key
        ordered = sorted(cluster_spans.items(), key=lambda kv: (min(kv[1]), kv[0]))
        try:
            documents.append(
                make_document(doc_id, words, [spans for _, spans in ordered], language)
            )
        except ValueError as exc:
            raise FormatError(str(exc)) from exc
        doc_id = None
        language = ""
        words = []
        open_stacks = {}
        cluster_spans = {}

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip()
        if not line.strip():
            continue
        if line.startswith("#begin document"):
            if doc_id is not None:
                raise FormatError(
                    f"line {line_no}: '#begin document' inside document {doc_id!r}"
                )
            m = _BEGIN_RE.match(line)
            if m is None:
                raise FormatError(f"line {line_no}: malformed begin line {line!r}")
            doc_id = m.group(1).strip()
            begin_line = line_no
            continue
        if line.startswith("#end document"):
            if doc_id is None:
                raise FormatError(f"line {line_no}: '#end document' without begin")
            close_document(line_no)
            continue
        if line.startswith("#"):
            if doc_id is not None and line.startswith("#language"):
                language = line[len("#language"):].strip()
            continue
        if doc_id is None:
            raise FormatError(f"line {line_no}: token line outside any document")
        cols = line.split()
        if len(cols) < 2:
            raise FormatError(
                f"document {doc_id!r}, line {line_no}: need at least token and "
                f"coreference columns, got {line!r}"
            )
        word = cols[3] if len(cols) >= 4 else cols[0]
        coref = cols[-1]
        index = len(words)
        words.append(word)
        if coref == "-" or coref == "_":
            continue
        for part in coref.split("|"):
            m = _COREF_PART_RE.match(part)
            if m is None:
                raise FormatError(
                    f"document {doc_id!r}, line {line_no}: malformed coreference "
                    f"entry {part!r}"
                )
            if m.group(2) is not None:  # (k)
                cluster_spans.setdefault(m.group(2), []).append((index, index))
            elif m.group(3) is not None:  # (k
                open_stacks.setdefault(m.group(3), []).append(index)
            else:  # k)
                key = m.group(4)
                stack = open_stacks.get(key)
                if not stack:
                    raise FormatError(
                        f"document {doc_id!r}, line {line_no}: closing bracket for "
                        f"cluster {key} with no open bracket"
                    )
                start = stack.pop()
                cluster_spans.setdefault(key, []).append((start, index))

    if doc_id is not None:
        raise FormatError(
            f"document {doc_id!r} beginning at line {begin_line} has no "
            f"'#end document'"
        )
    try:
        return Corpus(tuple(documents))
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def emit_conll(corpus: Corpus) -> str:
    """Serialize a corpus; parse_conll(emit_conll(c)) reproduces tokens and
    cluster structure exactly (cluster ids are renumbered).

    One caveat: two strictly crossing spans in the same cluster (a starts
    first, b starts inside a and ends after it) produce the identical
    bracket stream as their nested counterparts, so they read back as the
    nested pair.  Bracket notation cannot distinguish the two."""
    out: list[str] = []
    for doc in corpus.documents:
        out.append(f"#begin document ({doc.id}); part 000")
        if doc.language:
            out.append(f"#language {doc.language}")
        starts: dict[int, list[tuple[int, int]]] = {}
        ends: dict[int, list[int]] = {}
        singles: dict[int, list[int]] = {}
        ordered = sorted(
            doc.gold_clusters, key=lambda c: (min(c.spans), c.sorted_spans()[0].end)
        )
        for cid, cluster in enumerate(ordered):
            for span in cluster.sorted_spans():
                if span.start == span.end:
                    singles.setdefault(span.start, []).append(cid)
                else:
                    starts.setdefault(span.start, []).append((span.end, cid))
                    ends.setdefault(span.end, []).append(cid)
        for tok in doc.tokens:
            parts: list[str] = []
            # closers first so a span ending here never swallows one opening here
            for cid in ends.get(tok.index, []):
                parts.append(f"{cid})")
            # openers for longer spans first so nested brackets close LIFO
            for _, cid in sorted(starts.get(tok.index, []), reverse=True):
                parts.append(f"({cid}")
            for cid in singles.get(tok.index, []):
                parts.append(f"({cid})")
            coref = "|".join(parts) if parts else "-"
            out.append(f"{doc.id}\t0\t{tok.index}\t{tok.text}\t{coref}")
        out.append("#end document")
    return "\n".join(out) + ("\n" if out else "")
