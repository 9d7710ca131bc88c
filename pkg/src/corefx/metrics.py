"""Reference coreference metrics: MUC, B-cubed, entity-alignment CEAF.

All three are computed per document as (numerator, denominator) count
pairs for precision and recall, pooled across a corpus by summing the
counts (micro-averaging), and only then turned into P/R/F1.  AVG is the
plain mean of the three pooled F1 scores.

Conventions:

- a mention listed on one side but absent from the other counts as a
  singleton on the side that lacks it (the B-cubed and MUC treatments
  below follow from that);
- a degenerate ratio (0 denominator) scores 0 and is flagged in the
  report notes;
- two empty partitions compare as a perfect match under the alignment
  metric and are flagged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .corpus import Corpus
from .errors import DataError

__all__ = [
    "Triple",
    "CountPair",
    "DocumentTallies",
    "CorpusReport",
    "muc_counts",
    "b3_counts",
    "ceaf4_counts",
    "phi4",
    "score_document",
    "score_corpus",
    "format_report",
]

Partition = Sequence[frozenset]


@dataclass(frozen=True)
class Triple:
    precision: float
    recall: float
    f1: float


@dataclass
class CountPair:
    """Micro-averagable precision/recall counts."""

    p_num: float = 0.0
    p_den: float = 0.0
    r_num: float = 0.0
    r_den: float = 0.0

    def add(self, other: "CountPair") -> None:
        self.p_num += other.p_num
        self.p_den += other.p_den
        self.r_num += other.r_num
        self.r_den += other.r_den

    def triple(self, notes: list[str] | None = None, label: str = "") -> Triple:
        p = self.p_num / self.p_den if self.p_den > 0 else 0.0
        r = self.r_num / self.r_den if self.r_den > 0 else 0.0
        if notes is not None:
            if self.p_den <= 0:
                notes.append(f"{label}: precision denominator is 0, scored 0")
            if self.r_den <= 0:
                notes.append(f"{label}: recall denominator is 0, scored 0")
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return Triple(p, r, f1)


def _validate_partition(clusters: Partition, side: str) -> None:
    seen = set()
    for cl in clusters:
        if not cl:
            raise DataError(f"{side} partition contains an empty cluster")
        for m in cl:
            if m in seen:
                raise DataError(f"{side} partition lists mention {m!r} twice")
            seen.add(m)


def _mention_map(clusters: Partition) -> dict:
    return {m: cl for cl in clusters for m in cl}


def muc_counts(gold: Partition, response: Partition) -> CountPair:
    """Link-based counts: each cluster needs |c| - p(c) links recovered,
    where p(c) partitions c by the other side's clustering and unlisted
    mentions each form their own part."""

    def side(sum_over: Partition, other: Partition) -> tuple[float, float]:
        other_idx = {m: i for i, cl in enumerate(other) for m in cl}
        num = 0.0
        den = 0.0
        for cl in sum_over:
            parts = set()
            unlisted = 0
            for m in cl:
                if m in other_idx:
                    parts.add(other_idx[m])
                else:
                    unlisted += 1
            num += len(cl) - (len(parts) + unlisted)
            den += len(cl) - 1
        return num, den

    r_num, r_den = side(gold, response)
    p_num, p_den = side(response, gold)
    return CountPair(p_num=p_num, p_den=p_den, r_num=r_num, r_den=r_den)


def b3_counts(gold: Partition, response: Partition) -> CountPair:
    """Per-mention overlap counts; mentions missing from the other side
    are treated as singletons there."""

    def side(sum_over: Partition, other: Partition) -> tuple[float, float]:
        other_of = _mention_map(other)
        num = 0.0
        den = 0.0
        for cl in sum_over:
            for m in cl:
                other_cl = other_of.get(m)
                overlap = len(cl & other_cl) if other_cl is not None else 1
                num += overlap / len(cl)
                den += 1
        return num, den

    p_num, p_den = side(response, gold)
    r_num, r_den = side(gold, response)
    return CountPair(p_num=p_num, p_den=p_den, r_num=r_num, r_den=r_den)


def phi4(a: frozenset, b: frozenset) -> float:
    return 2.0 * len(a & b) / (len(a) + len(b))


def ceaf4_counts(gold: Partition, response: Partition) -> tuple[CountPair, list[str]]:
    """Entity-alignment counts under the normalised-overlap similarity.

    The one-to-one alignment between gold and response clusters is chosen
    to maximise total similarity.
    """
    notes: list[str] = []
    if not gold and not response:
        notes.append("alignment metric compared two empty partitions, scored 1")
        return CountPair(p_num=1.0, p_den=1.0, r_num=1.0, r_den=1.0), notes
    total = 0.0
    if gold and response:
        sim = np.array([[phi4(k, r) for r in response] for k in gold])
        rows, cols = linear_sum_assignment(-sim)
        total = float(sim[rows, cols].sum())
    return (
        CountPair(
            p_num=total, p_den=float(len(response)),
            r_num=total, r_den=float(len(gold)),
        ),
        notes,
    )


@dataclass
class DocumentTallies:
    muc: CountPair = field(default_factory=CountPair)
    b3: CountPair = field(default_factory=CountPair)
    ceaf: CountPair = field(default_factory=CountPair)
    notes: list[str] = field(default_factory=list)


def _drop_singletons(clusters: Partition) -> list[frozenset]:
    return [cl for cl in clusters if len(cl) > 1]


def score_document(
    gold: Iterable[frozenset],
    response: Iterable[frozenset],
    include_singletons: bool = True,
    doc_id: str = "",
) -> DocumentTallies:
    gold = [frozenset(cl) for cl in gold]
    response = [frozenset(cl) for cl in response]
    _validate_partition(gold, f"gold ({doc_id})" if doc_id else "gold")
    _validate_partition(response, f"response ({doc_id})" if doc_id else "response")
    if not include_singletons:
        gold = _drop_singletons(gold)
        response = _drop_singletons(response)
    ceaf, notes = ceaf4_counts(gold, response)
    if doc_id:
        notes = [f"{doc_id}: {n}" for n in notes]
    return DocumentTallies(
        muc=muc_counts(gold, response),
        b3=b3_counts(gold, response),
        ceaf=ceaf,
        notes=notes,
    )


@dataclass
class CorpusReport:
    muc: Triple
    b3: Triple
    ceaf: Triple
    avg: float
    notes: list[str]


def score_corpus(
    gold: Corpus,
    predictions: Mapping[str, Iterable[frozenset]],
    include_singletons: bool = True,
) -> CorpusReport:
    """Pool per-document counts over a corpus and report P/R/F1 plus AVG.

    `predictions` maps document id to the predicted clusters; every
    document in `gold` must be present (an empty list is a valid
    prediction).
    """
    pooled = DocumentTallies()
    for doc in gold.documents:
        if doc.id not in predictions:
            raise DataError(f"no prediction supplied for document {doc.id}")
        tallies = score_document(
            doc.cluster_partition(),
            predictions[doc.id],
            include_singletons=include_singletons,
            doc_id=doc.id,
        )
        pooled.muc.add(tallies.muc)
        pooled.b3.add(tallies.b3)
        pooled.ceaf.add(tallies.ceaf)
        pooled.notes.extend(tallies.notes)
    notes = list(pooled.notes)
    muc = pooled.muc.triple(notes, "MUC")
    b3 = pooled.b3.triple(notes, "B3")
    ceaf = pooled.ceaf.triple(notes, "CEAF")
    avg = (muc.f1 + b3.f1 + ceaf.f1) / 3.0
    return CorpusReport(muc=muc, b3=b3, ceaf=ceaf, avg=avg, notes=notes)


def format_report(report: CorpusReport) -> str:
    lines = ["metric\tP\tR\tF1"]
    for name, t in (("MUC", report.muc), ("B3", report.b3), ("CEAF", report.ceaf)):
        lines.append(f"{name}\t{t.precision:.4f}\t{t.recall:.4f}\t{t.f1:.4f}")
    lines.append(f"AVG\t\t\t{report.avg:.4f}")
    for note in report.notes:
        lines.append(f"# {note}")
    return "\n".join(lines) + "\n"
