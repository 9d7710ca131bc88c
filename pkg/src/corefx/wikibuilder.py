"""Distantly-supervised coreference corpora from Wikipedia anchor text.

Anchor texts inside one article that link to the same target page are
taken to corefer: every anchor becomes a mention, and mentions are
clustered by normalized link target.  Articles whose anchors never agree
on a target (singleton-only documents) carry no usable signal and are
filtered out before splitting.

Input is either a record file (one ``title<TAB>text`` line per article,
newlines escaped as ``\\n``) or a directory of wikitext files named by
title.  Output is a train/dev/test triple of CoNLL files plus a stats
table.  Raw XML dump parsing is out of scope; run an extractor first.

Character ranges in this module are half-open ``[start, end)`` offsets
into plain text; token spans follow the corpus convention and are
end-inclusive.
"""

from __future__ import annotations

import bisect
import logging
import re
import unicodedata
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Corpus, Document, emit_conll, make_document
from .errors import ConfigError, DataError, FormatError

__all__ = [
    "WikiArticle",
    "Anchor",
    "WikiCorpusSpec",
    "DEFAULT_NAMESPACES",
    "normalize_target",
    "parse_wikitext_links",
    "tokenize",
    "build_document",
    "build_document_with_anchors",
    "filter_and_split",
    "load_redirect_map",
    "stream_build",
]

log = logging.getLogger(__name__)

# Link-target prefixes (before the first colon, case-insensitive) that
# denote media, navigation, or project pages rather than articles.
# Canonical English names plus common aliases for the languages this
# toolkit is typically pointed at; extend per wiki via the `namespaces`
# argument.
DEFAULT_NAMESPACES = frozenset(
    map(
        str.casefold,
        (
            "File", "Image", "Media", "Category", "Template", "Help",
            "Portal", "Special", "User", "Talk", "Wikipedia", "Draft",
            "Module", "TimedText", "MediaWiki",
            # Spanish
            "Archivo", "Imagen", "Categoría", "Plantilla", "Ayuda",
            "Especial", "Usuario", "Usuaria", "Discusión", "Anexo",
            # Dutch
            "Bestand", "Afbeelding", "Categorie", "Sjabloon", "Gebruiker",
            "Overleg", "Portaal",
            # Italian
            "Categoria", "Immagine", "Utente", "Discussione", "Aiuto",
            "Speciale", "Portale",
            # Arabic
            "ملف", "تصنيف", "قالب", "مستخدم", "مستخدمة", "نقاش",
            "مساعدة", "خاص", "بوابة", "وسائط",
        ),
    )
)


@dataclass(frozen=True)
class WikiArticle:
    """One extracted article: a title and body text with inline anchors."""

    title: str
    body: str = ""

    def __post_init__(self):
        if not self.title.strip():
            raise DataError("article title must be non-empty")


@dataclass(frozen=True)
class Anchor:
    """A resolved anchor: normalized target plus an end-inclusive token span."""

    target: str
    start: int
    end: int

    def __post_init__(self):
        if not self.target:
            raise DataError("anchor target must be non-empty")
        if not (0 <= self.start <= self.end):
            raise DataError(f"invalid anchor span ({self.start}, {self.end})")


@dataclass(frozen=True)
class WikiCorpusSpec:
    """Split sizes and the article filter threshold."""

    dev_docs: int = 250
    test_docs: int = 250
    min_nonsingleton_clusters: int = 1
    seed: int = 0

    def __post_init__(self):
        for name in ("dev_docs", "test_docs", "min_nonsingleton_clusters"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")


def normalize_target(
    raw: str,
    namespaces: frozenset[str] = DEFAULT_NAMESPACES,
    redirects: dict[str, str] | None = None,
) -> str | None:
    """Canonicalize a link target so page identity is decidable textually.

    Applies the redirect map (exact raw-string keys) first, then strips
    any ``#fragment``, turns underscores into spaces, collapses
    whitespace, and uppercases the first character.  Returns None for
    targets in a non-article namespace and for targets that normalize to
    the empty string; rejection is a value, never an error.
    """
    if redirects:
        raw = redirects.get(raw, raw)
    raw = raw.split("#", 1)[0]
    raw = " ".join(raw.replace("_", " ").split())
    raw = raw.lstrip(":").strip()
    if not raw:
        return None
    head, sep, _ = raw.partition(":")
    if sep and head.strip().casefold() in namespaces:
        return None
    return raw[0].upper() + raw[1:]


_COMMENT_RE = re.compile(r"<!--.*?(?:-->|$)", re.S)
_INNER_TEMPLATE_RE = re.compile(r"\{\{[^{}]*\}\}")


def _strip_templates(text: str) -> str:
    # innermost-first removal of balanced {{...}}; unbalanced braces are
    # left as literal text rather than guessed at
    while True:
        text, n = _INNER_TEMPLATE_RE.subn("", text)
        if n == 0:
            return text


def _matching_close(text: str, open_pos: int) -> int:
    """Index of the ``]]`` closing the ``[[`` at open_pos, honoring nesting.

    Returns -1 when unterminated.  A newline terminates the search: links
    do not span lines, and letting one swallow the rest of a document
    would corrupt every anchor after it.
    """
    depth = 1
    k = open_pos + 2
    n = len(text)
    while k < n:
        ch = text[k]
        if ch == "\n":
            return -1
        if text.startswith("[[", k):
            depth += 1
            k += 2
        elif text.startswith("]]", k):
            depth -= 1
            if depth == 0:
                return k
            k += 2
        else:
            k += 1
    return -1


def _top_level_pipe(content: str) -> int:
    """Position of the first ``|`` outside any nested ``[[...]]``, or -1."""
    depth = 0
    k = 0
    while k < len(content):
        if content.startswith("[[", k):
            depth += 1
            k += 2
        elif content.startswith("]]", k):
            depth -= 1
            k += 2
        elif content[k] == "|" and depth == 0:
            return k
        else:
            k += 1
    return -1


def _flatten_links(text: str) -> str:
    # reduce any nested [[T]] / [[T|s]] inside a target expression to its
    # display text; targets almost never contain links, but a malformed
    # page must not crash the build
    out = []
    i = 0
    while i < len(text):
        j = text.find("[[", i)
        if j < 0:
            out.append(text[i:])
            break
        out.append(text[i:j])
        end = _matching_close(text, j)
        if end < 0:
            out.append(text[j:])
            break
        content = text[j + 2 : end]
        pipe = _top_level_pipe(content)
        out.append(_flatten_links(content[pipe + 1 :] if pipe >= 0 else content))
        i = end + 2
    return "".join(out)


def _scan_links(
    text: str,
    namespaces: frozenset[str],
    redirects: dict[str, str] | None,
    warnings: list[str],
) -> tuple[str, list[tuple[str, int, int]]]:
    out: list[str] = []
    anchors: list[tuple[str, int, int]] = []
    pos = 0  # chars emitted so far
    i = 0
    n = len(text)
    while i < n:
        j = text.find("[[", i)
        if j < 0:
            out.append(text[i:])
            break
        out.append(text[i:j])
        pos += j - i
        end = _matching_close(text, j)
        if end < 0:
            warnings.append("unterminated [[ kept as literal text; anchor dropped")
            out.append("[[")
            pos += 2
            i = j + 2
            continue
        content = text[j + 2 : end]
        pipe = _top_level_pipe(content)
        target_part = content[:pipe] if pipe >= 0 else content
        surface_part = content[pipe + 1 :] if pipe >= 0 else content
        target = normalize_target(_flatten_links(target_part), namespaces, redirects)
        if target is None:
            # media/navigation links contribute neither text nor anchors,
            # including any links nested inside their captions
            i = end + 2
            continue
        sub_plain, sub_anchors = _scan_links(surface_part, namespaces, redirects, warnings)
        out.append(sub_plain)
        for tgt, cs, ce in sub_anchors:  # inner anchors first
            anchors.append((tgt, pos + cs, pos + ce))
        stripped = sub_plain.strip()
        if stripped:
            lead = len(sub_plain) - len(sub_plain.lstrip())
            anchors.append((target, pos + lead, pos + lead + len(stripped)))
        else:
            warnings.append(f"anchor for {target!r} has an empty surface; dropped")
        pos += len(sub_plain)
        i = end + 2
    return "".join(out), anchors


def parse_wikitext_links(
    body: str,
    namespaces: frozenset[str] = DEFAULT_NAMESPACES,
    redirects: dict[str, str] | None = None,
    warnings: list[str] | None = None,
) -> tuple[str, list[tuple[str, int, int]]]:
    """Resolve ``[[Target]]`` / ``[[Target|surface]]`` anchors to plain text.

    Returns the plain text and a list of (normalized_target, char_start,
    char_end) triples with half-open character ranges into it.  Comments
    and balanced ``{{...}}`` templates are removed first; links to
    non-article namespaces vanish entirely; nested links are resolved
    innermost-first, so an inner anchor precedes its enclosing one in the
    returned list.  Malformed markup degrades to literal text with a
    warning, never an exception.
    """
    if warnings is None:
        warnings = []
    text = _COMMENT_RE.sub("", body)
    text = _strip_templates(text)
    return _scan_links(text, namespaces, redirects, warnings)


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> tuple[list[str], list[tuple[int, int]]]:
    """Language-agnostic tokenizer with character alignment.

    Splits on Unicode whitespace, then peels leading and trailing
    punctuation characters off each chunk as single-character tokens
    (interior punctuation stays attached, so ``U.S.`` yields ``U.S``
    and ``.``).  Returns (tokens, offsets) with half-open char ranges.
    """
    tokens: list[str] = []
    offsets: list[tuple[int, int]] = []
    for m in re.finditer(r"\S+", text):
        chunk, base = m.group(), m.start()
        lo, hi = 0, len(chunk)
        lead: list[tuple[str, int, int]] = []
        trail: list[tuple[str, int, int]] = []
        while lo < hi and _is_punct(chunk[lo]):
            lead.append((chunk[lo], base + lo, base + lo + 1))
            lo += 1
        while hi > lo and _is_punct(chunk[hi - 1]):
            trail.append((chunk[hi - 1], base + hi - 1, base + hi))
            hi -= 1
        pieces = lead
        if hi > lo:
            pieces = lead + [(chunk[lo:hi], base + lo, base + hi)]
        for piece in pieces + trail[::-1]:
            tokens.append(piece[0])
            offsets.append((piece[1], piece[2]))
    return tokens, offsets


def _covering_token_span(
    offsets: list[tuple[int, int]], cs: int, ce: int
) -> tuple[int, int, bool] | None:
    """Smallest token span covering chars [cs, ce); None if no overlap.

    The flag reports whether the range sat exactly on token boundaries.
    """
    if ce <= cs or not offsets:
        return None
    ends = [e for _, e in offsets]
    first = bisect.bisect_right(ends, cs)
    if first == len(offsets) or offsets[first][0] >= ce:
        return None
    last = first
    while last + 1 < len(offsets) and offsets[last + 1][0] < ce:
        last += 1
    exact = offsets[first][0] == cs and offsets[last][1] == ce
    return first, last, exact


def build_document_with_anchors(
    article: WikiArticle,
    namespaces: frozenset[str] = DEFAULT_NAMESPACES,
    redirects: dict[str, str] | None = None,
    warnings: list[str] | None = None,
    language: str = "",
) -> tuple[Document, list[Anchor]]:
    """Build a document and also return its resolved anchors.

    Two token spans land in the same cluster exactly when their
    normalized targets are equal; singleton clusters are kept (they are
    real mentions) and only matter later, at filtering time.  Anchor
    ranges that cut through a token are widened to whole tokens with a
    warning; an anchor whose span would duplicate an earlier one is
    dropped with a warning, since one span cannot carry two targets.
    """
    if warnings is None:
        warnings = []
    plain, raw_anchors = parse_wikitext_links(article.body, namespaces, redirects, warnings)
    tokens, offsets = tokenize(plain)
    anchors: list[Anchor] = []
    taken: dict[tuple[int, int], str] = {}
    for target, cs, ce in raw_anchors:
        span = _covering_token_span(offsets, cs, ce)
        if span is None:
            warnings.append(
                f"{article.title}: anchor for {target!r} covers no tokens; dropped"
            )
            continue
        ts, te, exact = span
        if not exact:
            warnings.append(
                f"{article.title}: anchor for {target!r} widened to token "
                f"boundaries ({ts}, {te})"
            )
        if (ts, te) in taken:
            warnings.append(
                f"{article.title}: span ({ts}, {te}) already anchored to "
                f"{taken[(ts, te)]!r}; anchor for {target!r} dropped"
            )
            continue
        taken[(ts, te)] = target
        anchors.append(Anchor(target, ts, te))
    grouped: dict[str, list[tuple[int, int]]] = {}
    for a in anchors:
        grouped.setdefault(a.target, []).append((a.start, a.end))
    ordered = sorted(grouped.values(), key=min)  # first-mention order
    return make_document(article.title, tokens, ordered, language), anchors


def build_document(
    article: WikiArticle,
    namespaces: frozenset[str] = DEFAULT_NAMESPACES,
    redirects: dict[str, str] | None = None,
    warnings: list[str] | None = None,
    language: str = "",
) -> Document:
    doc, _ = build_document_with_anchors(article, namespaces, redirects, warnings, language)
    return doc


def nonsingleton_clusters(doc: Document) -> int:
    return sum(1 for c in doc.gold_clusters if len(c) >= 2)


def filter_and_split(
    docs: list[Document], spec: WikiCorpusSpec
) -> tuple[Corpus, Corpus, Corpus]:
    """Drop under-linked documents and cut deterministic splits.

    Documents with fewer than ``min_nonsingleton_clusters`` clusters of
    size >= 2 are removed.  Survivors are ordered by id, shuffled by the
    spec seed, and cut as dev, then test, then the remainder as train, so
    membership is a pure function of (ids, seed, spec).
    """
    kept = [d for d in docs if nonsingleton_clusters(d) >= spec.min_nonsingleton_clusters]
    kept.sort(key=lambda d: d.id)
    need = spec.dev_docs + spec.test_docs
    if len(kept) < need:
        raise DataError(
            f"only {len(kept)} documents survive filtering; need at least "
            f"{need} (dev={spec.dev_docs}, test={spec.test_docs})"
        )
    order = np.random.default_rng(spec.seed).permutation(len(kept))
    shuffled = [kept[int(i)] for i in order]
    dev = shuffled[: spec.dev_docs]
    test = shuffled[spec.dev_docs : need]
    train = shuffled[need:]
    return (
        Corpus(tuple(train), "train"),
        Corpus(tuple(dev), "dev"),
        Corpus(tuple(test), "test"),
    )


def load_redirect_map(path: str | Path) -> dict[str, str]:
    """Read a ``from<TAB>to`` redirect table; blank lines are skipped."""
    redirects: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            src, sep, dst = line.partition("\t")
            if not sep or not src.strip() or not dst.strip():
                raise FormatError(f"{path}:{line_no}: expected 'from<TAB>to', got {line!r}")
            redirects[src] = dst.strip()
    return redirects


def _unescape(text: str) -> str:
    # record files escape newline, tab, backslash; single left-to-right pass
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            if nxt == "n":
                out.append("\n")
                i += 2
                continue
            if nxt == "t":
                out.append("\t")
                i += 2
                continue
            if nxt == "\\":
                out.append("\\")
                i += 2
                continue
        out.append(ch)
        i += 1
    return "".join(out)


_WIKITEXT_SUFFIXES = (".txt", ".wiki", ".wikitext")


def _iter_records(path: Path, warnings: list[str]) -> tuple[list[WikiArticle], int]:
    """Read article records; returns (articles, skipped_count)."""
    articles: list[WikiArticle] = []
    seen: set[str] = set()
    skipped = 0

    def push(title: str, body: str, where: str):
        nonlocal skipped
        title = title.strip()
        if not title:
            warnings.append(f"{where}: empty title; record skipped")
            skipped += 1
            return
        if title in seen:
            warnings.append(f"{where}: duplicate title {title!r}; record skipped")
            skipped += 1
            return
        seen.add(title)
        articles.append(WikiArticle(title, body))

    if path.is_dir():
        for child in sorted(path.iterdir()):
            if not child.is_file():
                continue
            title = child.name
            for suffix in _WIKITEXT_SUFFIXES:
                if title.endswith(suffix):
                    title = title[: -len(suffix)]
                    break
            try:
                body = child.read_text(encoding="utf-8")
            except (OSError, UnicodeDecodeError) as exc:
                warnings.append(f"{child}: unreadable ({exc}); record skipped")
                skipped += 1
                continue
            push(title, body, str(child))
    else:
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                title, sep, text = line.partition("\t")
                if not sep:
                    warnings.append(f"{path}:{line_no}: missing tab; record skipped")
                    skipped += 1
                    continue
                push(title, _unescape(text), f"{path}:{line_no}")
    return articles, skipped


def stream_build(
    input_path: str | Path,
    spec: WikiCorpusSpec | None = None,
    output_dir: str | Path = ".",
    redirects_path: str | Path | None = None,
    namespaces: frozenset[str] = DEFAULT_NAMESPACES,
    language: str = "",
) -> dict[str, int]:
    """Build a corpus triple from extracted articles and write it out.

    Writes ``train.conll``, ``dev.conll``, ``test.conll``, and a
    ``stats.tsv`` of key<TAB>value rows into output_dir.  Unreadable
    records are skipped with a warning; a skip rate above 10% aborts the
    build, as does an input with no records at all.  Identical inputs,
    spec, and redirect map reproduce identical bytes.
    """
    spec = spec or WikiCorpusSpec()
    path = Path(input_path)
    if not path.exists():
        raise DataError(f"input path {path} does not exist")
    redirects = load_redirect_map(redirects_path) if redirects_path else None
    warnings: list[str] = []

    articles, skipped = _iter_records(path, warnings)
    total = len(articles) + skipped
    if total == 0:
        raise DataError(f"no documents in {path}")
    if skipped > 0.10 * total:
        raise DataError(
            f"{skipped} of {total} records unreadable (>10%); aborting, "
            f"first problem: {warnings[0]}"
        )

    docs: list[Document] = []
    anchor_total = 0
    for article in articles:
        doc, anchors = build_document_with_anchors(
            article, namespaces, redirects, warnings, language
        )
        anchor_total += len(anchors)
        docs.append(doc)

    train, dev, test = filter_and_split(docs, spec)
    kept_docs = [d for corpus in (train, dev, test) for d in corpus]

    for warning in warnings:
        log.warning("%s", warning)

    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for corpus, name in ((train, "train"), (dev, "dev"), (test, "test")):
        (out / f"{name}.conll").write_text(emit_conll(corpus), encoding="utf-8")

    stats = {
        "docs_in": len(articles),
        "skipped": skipped,
        "kept": len(kept_docs),
        "anchors": anchor_total,
        "mentions": sum(sum(len(c) for c in d.gold_clusters) for d in kept_docs),
        "clusters": sum(len(d.gold_clusters) for d in kept_docs),
        "train_docs": len(train),
        "dev_docs": len(dev),
        "test_docs": len(test),
        "warnings": len(warnings),
    }
    lines = [f"{key}\t{value}" for key, value in stats.items()]
    (out / "stats.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return stats
