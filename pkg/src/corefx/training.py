"""Losses, SGD updates, and the transfer-learning training regimes.

The loss for a document is the sum of a mention detection term (binary
cross-entropy of the mention scores of the kept spans, averaged over the
kept set) and an antecedent clustering term (negative marginal
log-likelihood of the gold antecedents, summed over kept spans).  Both
are computed on the pruned set only.

Regimes:

- Baseline:      train on the target set.
- Continued:     train on the source set, then keep training on target.
- Joint:         train on the shuffled union, every document once per epoch.
- WikiPretrain:  a short pass over distant-supervision data, then target.

Every stage picks the checkpoint with the best dev AVG, evaluated after
each epoch; ties go to the earlier epoch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import ClassVar, Union

import numpy as np

from .corpus import Corpus, Document, MentionSpan
from .encoder import TokenVectorTable
from .errors import ConfigError, GradientError
from . import kernels
from .params import LOWER_GROUP, ModelConfig, ModelParams, init_params
from .scorer import (
    PruneStrategy,
    ScoringContext,
    TopLambda,
    pair_flat_indices,
    table_offsets,
)

__all__ = [
    "TrainConfig",
    "Baseline",
    "Continued",
    "Joint",
    "WikiPretrain",
    "Regime",
    "TrainResult",
    "train",
    "step",
    "document_loss",
    "detection_loss",
    "clustering_loss",
    "gold_structures",
]

LOG_FLOAT_FORMAT = "{:.6f}"
_CLAMP = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings.

    Plain SGD with two learning-rate groups: the token embedding table
    moves at lower_lr, everything else at upper_lr.  The defaults are
    sized for the hash-bucket encoder; paper_defaults records the rates
    used with a large pretrained encoder (same 10x ratio).

    epochs applies to every ordinary stage; pretrain_epochs and
    finetune_epochs apply to the two stages of distant-supervision
    pretraining.  grad_clip, when set, rescales each document's gradient
    so its global L2 norm is at most that value; it defaults to off.
    emit_singletons controls whether dev-selection scoring keeps
    predicted and gold singleton clusters; corpora without singleton
    annotation are scored without them.
    """

    lower_lr: float = 1e-2
    upper_lr: float = 1e-1
    epochs: int = 25
    pretrain_epochs: int = 5
    finetune_epochs: int = 50
    seed: int = 0
    prune: PruneStrategy = field(default_factory=TopLambda)
    emit_singletons: bool = False
    grad_clip: float | None = None

    paper_defaults: ClassVar[dict[str, float]] = {
        "lower_lr": 1e-5,
        "upper_lr": 1e-4,
    }

    def __post_init__(self) -> None:
        if self.lower_lr <= 0 or self.upper_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if min(self.epochs, self.pretrain_epochs, self.finetune_epochs) < 1:
            raise ConfigError("epoch counts must be at least 1")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive when set")


@dataclass(frozen=True)
class Baseline:
    target: Corpus

    def stages(self, cfg: TrainConfig) -> list[tuple[str, list[Document], int]]:
        return [("target", list(self.target.documents), cfg.epochs)]


@dataclass(frozen=True)
class Continued:
    """Train to convergence on source, then continue on target."""

    source: Corpus
    target: Corpus

    def stages(self, cfg: TrainConfig) -> list[tuple[str, list[Document], int]]:
        return [
            ("source", list(self.source.documents), cfg.epochs),
            ("target", list(self.target.documents), cfg.epochs),
        ]


@dataclass(frozen=True)
class Joint:
    """Single stage over the shuffled union of source and target."""

    source: Corpus
    target: Corpus

    def stages(self, cfg: TrainConfig) -> list[tuple[str, list[Document], int]]:
        docs = list(self.target.documents) + list(self.source.documents)
        return [("joint", docs, cfg.epochs)]


@dataclass(frozen=True)
class WikiPretrain:
    """Short distant-supervision pretraining pass, then target training."""

    wiki: Corpus
    target: Corpus

    def stages(self, cfg: TrainConfig) -> list[tuple[str, list[Document], int]]:
        return [
            ("wiki", list(self.wiki.documents), cfg.pretrain_epochs),
            ("target", list(self.target.documents), cfg.finetune_epochs),
        ]


Regime = Union[Baseline, Continued, Joint, WikiPretrain]


def gold_structures(
    doc: Document, kept_spans: list[MentionSpan]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Detection labels and the gold antecedent mask over the kept set.

    Returns (y [m], gold_mask [m(m+1)/2] uint8, offsets [m+1]).  A kept
    span with no kept gold antecedent in its own cluster (or that is not
    a gold mention at all) has the dummy marked gold.
    """
    cluster_of: dict[MentionSpan, int] = {}
    for ci, cl in enumerate(doc.gold_clusters):
        for sp in cl.spans:
            cluster_of[sp] = ci
    m = len(kept_spans)
    kept_cluster = np.array(
        [cluster_of.get(sp, -1) for sp in kept_spans], dtype=np.int64
    )
    y = (kept_cluster >= 0).astype(np.float64)
    offsets = table_offsets(m)
    gold = np.zeros(int(offsets[-1]), dtype=np.uint8)
    for i in range(m):
        base = int(offsets[i])
        found = False
        if kept_cluster[i] >= 0:
            same = np.nonzero(kept_cluster[:i] == kept_cluster[i])[0]
            if same.shape[0]:
                gold[base + 1 + same] = 1
                found = True
        if not found:
            gold[base] = 1
    return y, gold, offsets


def _sigmoid(s: np.ndarray) -> np.ndarray:
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    es = np.exp(s[~pos])
    out[~pos] = es / (1.0 + es)
    return out


def detection_loss(scores: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy over the kept spans.

    The value clamps probabilities at 1e-12 before the log; the gradient
    is the exact unclamped (sigmoid(s) - y) / m.
    """
    m = scores.shape[0]
    if m == 0:
        return 0.0, np.zeros(0, dtype=np.float64)
    p = _sigmoid(scores)
    terms = y * np.log(np.maximum(p, _CLAMP)) + (1.0 - y) * np.log(
        np.maximum(1.0 - p, _CLAMP)
    )
    loss = -float(terms.mean())
    return loss, (p - y) / m


def clustering_loss(
    flat_scores: np.ndarray, offsets: np.ndarray, gold_mask: np.ndarray
) -> tuple[float, np.ndarray]:
    """Marginal log-likelihood loss over the antecedent table rows."""
    if offsets.shape[0] <= 1:
        return 0.0, np.zeros(0, dtype=np.float64)
    return kernels.marginal_log_loss(flat_scores, offsets, gold_mask)


@dataclass
class DocumentLoss:
    total: float
    detection: float
    clustering: float
    grads: dict[str, np.ndarray] | None


def document_loss(
    doc: Document,
    params: ModelParams,
    strategy: PruneStrategy,
    vectors: TokenVectorTable | None = None,
    want_grads: bool = True,
) -> DocumentLoss:
    ctx = ScoringContext.build(doc, params, vectors)
    kept = ctx.prune(strategy)
    m = int(kept.shape[0])
    kept_spans = ctx.kept_spans(kept)
    y, gold_mask, offsets = gold_structures(doc, kept_spans)

    d_loss, d_detect = detection_loss(ctx.mention_scores[kept], y)

    pairs = ctx.pair_scores(kept) if m > 1 else None
    flat = np.zeros(int(offsets[-1]), dtype=np.float64)
    if pairs is not None:
        flat[pair_flat_indices(m)] = pairs.scores
    c_loss, d_flat = clustering_loss(flat, offsets, gold_mask)

    grads = None
    if want_grads:
        d_mention = np.zeros_like(ctx.mention_scores)
        if m:
            d_mention[kept] = d_detect
        d_pair = d_flat[pair_flat_indices(m)] if pairs is not None else None
        grads = ctx.backward(d_mention, pairs, d_pair)
    return DocumentLoss(
        total=d_loss + c_loss, detection=d_loss, clustering=c_loss, grads=grads
    )


def apply_sgd(params: ModelParams, grads: dict[str, np.ndarray], cfg: TrainConfig) -> None:
    for name in grads:
        if not np.all(np.isfinite(grads[name])):
            raise GradientError(f"non-finite gradient in parameter block {name!r}")
    scale = 1.0
    if cfg.grad_clip is not None:
        norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
        if norm > cfg.grad_clip:
            scale = cfg.grad_clip / norm
    for name, arr in params.blocks():
        lr = cfg.lower_lr if name in LOWER_GROUP else cfg.upper_lr
        arr -= (lr * scale) * grads[name]
    params.version += 1


def step(
    params: ModelParams,
    doc: Document,
    cfg: TrainConfig,
    vectors: TokenVectorTable | None = None,
) -> float:
    """One SGD update on one document; returns the pre-update loss."""
    result = document_loss(doc, params, cfg.prune, vectors, want_grads=True)
    apply_sgd(params, result.grads, cfg)
    return result.total


@dataclass
class StageResult:
    name: str
    best_epoch: int
    best_avg: float


@dataclass
class TrainResult:
    params: ModelParams
    log_lines: list[str]
    stages: list[StageResult]

    @property
    def best_avg(self) -> float:
        return self.stages[-1].best_avg


def _evaluate_dev(
    params: ModelParams,
    dev: Corpus,
    cfg: TrainConfig,
    vectors: TokenVectorTable | None,
) -> dict[str, float]:
    from . import ensemble, metrics

    predictions = {
        doc.id: ensemble.predict_document(
            doc,
            [params],
            strategy=cfg.prune,
            emit_singletons=cfg.emit_singletons,
            vectors=vectors,
        )
        for doc in dev.documents
    }
    report = metrics.score_corpus(
        dev, predictions, include_singletons=cfg.emit_singletons
    )
    return {
        "MUC": report.muc.f1,
        "B3": report.b3.f1,
        "CEAF": report.ceaf.f1,
        "AVG": report.avg,
    }


def _run_stage(
    params: ModelParams,
    docs: list[Document],
    dev: Corpus,
    cfg: TrainConfig,
    epochs: int,
    rng: np.random.Generator,
    vectors: TokenVectorTable | None,
    lines: list[str],
) -> tuple[ModelParams, int, float]:
    if not docs:
        raise ConfigError("training stage received an empty document list")
    best_params = params.clone()
    best_avg = -1.0
    best_epoch = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(docs))
        losses = [step(params, docs[int(k)], cfg, vectors) for k in order]
        dev_scores = _evaluate_dev(params, dev, cfg, vectors)
        train_loss = float(np.mean(losses))
        lines.append(
            "\t".join(
                [
                    str(epoch),
                    LOG_FLOAT_FORMAT.format(train_loss),
                    "{:.4f}".format(dev_scores["MUC"]),
                    "{:.4f}".format(dev_scores["B3"]),
                    "{:.4f}".format(dev_scores["CEAF"]),
                    "{:.4f}".format(dev_scores["AVG"]),
                ]
            )
        )
        if dev_scores["AVG"] > best_avg:
            best_avg = dev_scores["AVG"]
            best_epoch = epoch
            best_params = params.clone()
    return best_params, best_epoch, best_avg


def train(
    regime: Regime,
    model_config: ModelConfig,
    dev: Corpus,
    cfg: TrainConfig | None = None,
    vectors: TokenVectorTable | None = None,
    stage_dev: dict[str, Corpus] | None = None,
) -> TrainResult:
    """Run a regime end to end and return the selected checkpoint.

    `dev` drives checkpoint selection; stage_dev can override it for a
    named earlier stage (for instance a source-language dev set during
    the source stage of Continued).  Epoch log lines are
    epoch<TAB>train_loss<TAB>dev_MUC<TAB>dev_B3<TAB>dev_CEAF<TAB>dev_AVG,
    with a `# stage <name>` marker line opening each stage.
    """
    cfg = cfg or TrainConfig()
    params = init_params(model_config, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    lines: list[str] = []
    stages: list[StageResult] = []
    for stage_name, docs, epochs in regime.stages(cfg):
        stage_dev_corpus = (stage_dev or {}).get(stage_name, dev)
        lines.append(f"# stage {stage_name}")
        params, best_epoch, best_avg = _run_stage(
            params, docs, stage_dev_corpus, cfg, epochs, rng, vectors, lines
        )
        stages.append(StageResult(stage_name, best_epoch, best_avg))
    return TrainResult(params=params, log_lines=lines, stages=stages)
