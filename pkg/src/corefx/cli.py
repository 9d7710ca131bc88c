"""Command-line entry point wiring every module together.

Subcommands::

    corefx build-wiki   anchor-text corpus from extracted articles
    corefx synth-gen    deterministic synthetic corpora
    corefx train        baseline / continued / joint / wiki-pretrain
    corefx evaluate     single models, mean ensembles, the oracle bound
    corefx score        standalone metric report for two CoNLL files

Exit codes are a stable contract: 0 success, 1 internal error, 2 usage
or data error.  Every command is reproducible: identical inputs, flags,
and seed yield byte-identical outputs, checkpoints included.

Options may come from a ``--config`` file of ``key = value`` lines
(``#`` comments allowed; keys are option names with ``-`` or ``_``);
explicit flags override the file.  Commands that write to ``--out``
also echo the effective configuration to ``config.txt`` there, in the
same format, so a run records exactly what produced it.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from .corpus import Cluster, Corpus, emit_conll, parse_conll
from .encoder import EncoderConfig, TokenVectorTable
from .ensemble import DumpSource, MeanCombine, ModelSource, OracleCombine, run_ensemble
from .errors import CorefxError, DataError
from .metrics import format_report, score_corpus
from .params import ModelConfig, load_checkpoint, save_checkpoint
from .scorer import DocumentScores, parse_prune_strategy, read_score_dump, write_score_dump
from .synth import SynthConfig, generate_synthetic
from .training import Baseline, Continued, Joint, TrainConfig, WikiPretrain, train
from .wikibuilder import WikiCorpusSpec, stream_build

__all__ = ["main"]

log = logging.getLogger(__name__)

_REQUIRED = object()


@dataclass(frozen=True)
class _Opt:
    """One command option: argparse wiring plus config-file conversion."""

    dest: str
    kind: str  # int | float | str | path | bool | float? | path? | ints | paths | choice
    default: object
    help: str
    choices: tuple[str, ...] = ()
    positional: bool = False

    @property
    def flag(self) -> str:
        return self.dest if self.positional else "--" + self.dest.replace("_", "-")


def _opt(dest, kind, default, help, choices=(), positional=False) -> _Opt:
    return _Opt(dest, kind, default, help, tuple(choices), positional)


def _add_option(parser: argparse.ArgumentParser, opt: _Opt) -> None:
    if opt.positional:
        parser.add_argument(opt.flag, help=opt.help)
        return
    kwargs: dict = {"dest": opt.dest, "help": opt.help, "default": argparse.SUPPRESS}
    if opt.kind == "bool":
        kwargs["action"] = "store_true"
    elif opt.kind in ("paths",):
        kwargs["action"] = "append"
        kwargs["metavar"] = "PATH"
    elif opt.kind == "choice":
        kwargs["choices"] = opt.choices
    elif opt.kind == "int":
        kwargs["type"] = int
    elif opt.kind in ("float", "float?"):
        kwargs["type"] = float
    elif opt.kind == "ints":
        kwargs["type"] = _parse_ints
        kwargs["metavar"] = "N[,N...]"
    parser.add_argument(opt.flag, **kwargs)


def _parse_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _convert(opt: _Opt, text: str) -> object:
    """Parse a config-file value for this option."""
    text = text.strip()
    if opt.kind in ("float?", "path?") and text.lower() in ("", "none"):
        return None
    try:
        if opt.kind == "int":
            return int(text)
        if opt.kind in ("float", "float?"):
            return float(text)
        if opt.kind == "bool":
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if opt.kind == "ints":
            return tuple(int(part) for part in text.split(","))
        if opt.kind == "paths":
            return [part.strip() for part in text.split(",") if part.strip()]
        if opt.kind == "choice":
            if text not in opt.choices:
                raise ValueError(text)
            return text
    except ValueError:
        raise DataError(f"bad value {text!r} for config key {opt.dest!r}") from None
    return text


def _format_value(value: object) -> str:
    if value is None:
        return "none"
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return str(value)


def _read_config_file(path: str) -> dict[str, str]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"config file {p} does not exist")
    out: dict[str, str] = {}
    for line_no, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DataError(f"{p}:{line_no}: expected 'key = value', got {line!r}")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _effective(ns: argparse.Namespace, opts: list[_Opt], command: str) -> dict:
    """Defaults, overridden by the config file, overridden by real flags."""
    by_dest = {o.dest: o for o in opts}
    eff = {o.dest: o.default for o in opts}
    ns_d = vars(ns)
    if ns_d.get("config"):
        for key, text in _read_config_file(ns_d["config"]).items():
            opt = by_dest.get(key)
            if opt is None or opt.positional:
                raise DataError(f"unknown config key {key!r} for corefx {command}")
            eff[key] = _convert(opt, text)
    for opt in opts:
        if opt.dest in ns_d:
            eff[opt.dest] = ns_d[opt.dest]
    missing = sorted(o.flag for o in opts if eff[o.dest] is _REQUIRED)
    if missing:
        raise DataError(f"corefx {command}: missing required option(s) {', '.join(missing)}")
    return eff


def _echo_config(out_dir: Path, command: str, eff: dict) -> None:
    lines = [f"# corefx {command}"]
    for key in sorted(eff):
        lines.append(f"{key} = {_format_value(eff[key])}")
    (out_dir / "config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _out_dir(eff: dict) -> Path:
    out = Path(eff["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_corpus(path: object, split: str = "train") -> Corpus:
    p = Path(str(path))
    if not p.exists():
        raise DataError(f"corpus file {p} does not exist")
    corpus = parse_conll(p.read_text(encoding="utf-8"))
    return Corpus(corpus.documents, split)


# ---------------------------------------------------------------- build-wiki

_BUILD_WIKI_OPTS = [
    _opt("input", "path", _REQUIRED, "record file (title<TAB>text) or directory of wikitext files", positional=True),
    _opt("out", "path", _REQUIRED, "output directory for the corpus triple and stats"),
    _opt("dev_docs", "int", 250, "documents in the dev split"),
    _opt("test_docs", "int", 250, "documents in the test split"),
    _opt("min_nonsingleton_clusters", "int", 1, "keep articles with at least this many clusters of size >= 2"),
    _opt("seed", "int", 0, "split shuffle seed"),
    _opt("redirects", "path?", None, "optional from<TAB>to redirect table applied to link targets"),
    _opt("language", "str", "", "language tag stamped on built documents"),
]


def cmd_build_wiki(ns: argparse.Namespace) -> int:
    eff = _effective(ns, _BUILD_WIKI_OPTS, "build-wiki")
    spec = WikiCorpusSpec(
        dev_docs=eff["dev_docs"],
        test_docs=eff["test_docs"],
        min_nonsingleton_clusters=eff["min_nonsingleton_clusters"],
        seed=eff["seed"],
    )
    out = _out_dir(eff)
    stats = stream_build(
        eff["input"], spec, out, redirects_path=eff["redirects"], language=eff["language"]
    )
    _echo_config(out, "build-wiki", eff)
    for key, value in stats.items():
        print(f"{key}\t{value}")
    return 0


# ----------------------------------------------------------------- synth-gen

_SYNTH_OPTS = [
    _opt("out", "path", _REQUIRED, "output directory for train/dev/test CoNLL files"),
    _opt("train_docs", "int", 20, "documents in the train split"),
    _opt("dev_docs", "int", 5, "documents in the dev split"),
    _opt("test_docs", "int", 10, "documents in the test split"),
    _opt("doc_len", "int", 60, "tokens per document"),
    _opt("num_entities", "int", 2, "entities per document"),
    _opt("mentions_per_entity", "int", 2, "mentions for each non-singleton entity"),
    _opt("vocab_size", "int", 8, "filler vocabulary size"),
    _opt("name_pool_size", "int", 4, "distinct entity names shared across the corpus"),
    _opt("singleton_fraction", "float", 0.0, "fraction of entities left as singletons"),
    _opt("two_token_fraction", "float", 0.0, "fraction of the name pool that is two tokens long"),
    _opt("language", "str", "xx", "language tag"),
    _opt("id_prefix", "str", "synth", "document id prefix"),
    _opt("seed", "int", 0, "generator seed"),
]


def cmd_synth_gen(ns: argparse.Namespace) -> int:
    eff = _effective(ns, _SYNTH_OPTS, "synth-gen")
    n_train, n_dev, n_test = eff["train_docs"], eff["dev_docs"], eff["test_docs"]
    cfg = SynthConfig(
        num_docs=n_train + n_dev + n_test,
        doc_len=eff["doc_len"],
        num_entities=eff["num_entities"],
        mentions_per_entity=eff["mentions_per_entity"],
        vocab_size=eff["vocab_size"],
        name_pool_size=eff["name_pool_size"],
        singleton_fraction=eff["singleton_fraction"],
        two_token_fraction=eff["two_token_fraction"],
        language=eff["language"],
        id_prefix=eff["id_prefix"],
    )
    corpus = generate_synthetic(cfg, eff["seed"])
    docs = corpus.documents
    splits = (
        Corpus(docs[:n_train], "train"),
        Corpus(docs[n_train : n_train + n_dev], "dev"),
        Corpus(docs[n_train + n_dev :], "test"),
    )
    out = _out_dir(eff)
    for split in splits:
        (out / f"{split.split}.conll").write_text(emit_conll(split), encoding="utf-8")
    _echo_config(out, "synth-gen", eff)
    print(f"train\t{n_train}\ndev\t{n_dev}\ntest\t{n_test}")
    return 0


# --------------------------------------------------------------------- train

_TRAIN_OPTS = [
    _opt("regime", "choice", _REQUIRED, "training regime",
         choices=("baseline", "continued", "joint", "wiki-pretrain")),
    _opt("target", "path", _REQUIRED, "target-language training corpus (CoNLL)"),
    _opt("dev", "path", _REQUIRED, "development corpus driving checkpoint selection"),
    _opt("source", "path?", None, "source-language corpus (continued and joint regimes)"),
    _opt("wiki", "path?", None, "distant-supervision corpus (wiki-pretrain regime)"),
    _opt("out", "path", _REQUIRED, "output directory for checkpoint and log"),
    _opt("embed_dim", "int", 32, "token embedding dimension"),
    _opt("context_window", "int", 1, "neighbor tokens averaged on each side"),
    _opt("hash_buckets", "int", 4096, "token hash table size"),
    _opt("vectors", "path?", None, "precomputed token vector table (switches encoder mode)"),
    _opt("width_dim", "int", 8, "span width feature dimension"),
    _opt("dist_dim", "int", 8, "antecedent distance feature dimension"),
    _opt("hidden", "ints", (64,), "feed-forward hidden layer sizes"),
    _opt("span_limit", "int", 30, "maximum candidate span width in tokens"),
    _opt("lower_lr", "float", 1e-2, "learning rate for the token embedding table"),
    _opt("upper_lr", "float", 1e-1, "learning rate for every other block"),
    _opt("epochs", "int", 25, "epochs per ordinary training stage"),
    _opt("pretrain_epochs", "int", 5, "epochs for the distant-supervision stage"),
    _opt("finetune_epochs", "int", 50, "target epochs after distant-supervision pretraining"),
    _opt("seed", "int", 0, "initialization and shuffling seed"),
    _opt("prune", "str", "top-lambda:0.18", "span pruning: top-lambda[:ratio] or positive"),
    _opt("grad_clip", "float?", None, "cap on each document's global gradient norm"),
    _opt("emit_singletons", "bool", False, "keep singleton clusters in dev-selection scoring"),
]


def cmd_train(ns: argparse.Namespace) -> int:
    eff = _effective(ns, _TRAIN_OPTS, "train")
    eff["prune"] = parse_prune_strategy(eff["prune"]).spec()
    target = _read_corpus(eff["target"])
    dev = _read_corpus(eff["dev"], "dev")
    regime_name = eff["regime"]
    if regime_name == "baseline":
        regime = Baseline(target)
    elif regime_name in ("continued", "joint"):
        if not eff["source"]:
            raise DataError(f"the {regime_name} regime requires a labeled source corpus (--source)")
        source = _read_corpus(eff["source"])
        regime = Continued(source, target) if regime_name == "continued" else Joint(source, target)
    else:
        if not eff["wiki"]:
            raise DataError("the wiki-pretrain regime requires a distant-supervision corpus (--wiki)")
        regime = WikiPretrain(_read_corpus(eff["wiki"]), target)

    model_config = ModelConfig(
        encoder=EncoderConfig(
            embed_dim=eff["embed_dim"],
            context_window=eff["context_window"],
            vocab_hash_buckets=eff["hash_buckets"],
            vectors_file=eff["vectors"],
        ),
        width_dim=eff["width_dim"],
        dist_dim=eff["dist_dim"],
        hidden_sizes=tuple(eff["hidden"]),
        span_limit=eff["span_limit"],
    )
    train_config = TrainConfig(
        lower_lr=eff["lower_lr"],
        upper_lr=eff["upper_lr"],
        epochs=eff["epochs"],
        pretrain_epochs=eff["pretrain_epochs"],
        finetune_epochs=eff["finetune_epochs"],
        seed=eff["seed"],
        prune=parse_prune_strategy(eff["prune"]),
        emit_singletons=eff["emit_singletons"],
        grad_clip=eff["grad_clip"],
    )
    vectors = TokenVectorTable.load(eff["vectors"]) if eff["vectors"] else None

    result = train(regime, model_config, dev, train_config, vectors)

    out = _out_dir(eff)
    checkpoint_path = out / "checkpoint.ckpt"
    save_checkpoint(result.params, str(checkpoint_path))
    (out / "train.log").write_text("\n".join(result.log_lines) + "\n", encoding="utf-8")
    _echo_config(out, "train", eff)
    for stage in result.stages:
        print(f"stage {stage.name}: best epoch {stage.best_epoch} dev AVG {stage.best_avg:.4f}")
    print(f"checkpoint\t{checkpoint_path}")
    return 0


# ------------------------------------------------------------------ evaluate

_EVALUATE_OPTS = [
    _opt("checkpoint", "paths", None, "model checkpoint; repeat for an ensemble"),
    _opt("from_dump", "paths", None, "score dump standing in for a model; repeatable"),
    _opt("test", "path", _REQUIRED, "gold corpus to evaluate on (CoNLL)"),
    _opt("out", "path", _REQUIRED, "output directory for report and predictions"),
    _opt("ensemble", "choice", "mean", "score combination rule", choices=("mean", "oracle")),
    _opt("dump_scores", "path?", None,
         "write each model's scores here (k > 1 inserts .1, .2, ... before the suffix)"),
    _opt("prune", "str", "top-lambda:0.18", "span pruning: top-lambda[:ratio] or positive"),
    _opt("emit_singletons", "bool", False, "emit singleton clusters and score both sides with them"),
    _opt("vectors", "path?", None, "override the token vector table recorded in the checkpoints"),
]


def _dump_paths(base: str, k: int) -> list[Path]:
    p = Path(base)
    if k == 1:
        return [p]
    return [p.with_name(f"{p.stem}.{i}{p.suffix}") for i in range(1, k + 1)]


def _model_scores(run, source_index: int) -> DocumentScores:
    mention = {
        (sp.start, sp.end): float(v)
        for sp, v in zip(run.spans, run.per_model_mention[source_index])
    }
    pairs = {}
    for a, b, v in zip(run.anchor_pos, run.ante_pos, run.per_model_pairs[source_index]):
        si, sj = run.kept_spans[int(a)], run.kept_spans[int(b)]
        pairs[(si.start, si.end, sj.start, sj.end)] = float(v)
    return DocumentScores(
        doc_id=run.doc.id, n_tokens=len(run.doc.tokens), mention=mention, pairs=pairs
    )


def cmd_evaluate(ns: argparse.Namespace) -> int:
    eff = _effective(ns, _EVALUATE_OPTS, "evaluate")
    eff["prune"] = parse_prune_strategy(eff["prune"]).spec()
    checkpoints = eff["checkpoint"] or []
    dumps = eff["from_dump"] or []
    if not checkpoints and not dumps:
        raise DataError("evaluate needs at least one --checkpoint or --from-dump")

    loaded = [(path, load_checkpoint(str(path))) for path in checkpoints]
    fingerprints = {params.config.fingerprint() for _, params in loaded}
    if len(fingerprints) > 1:
        detail = ", ".join(f"{path}: {params.config.fingerprint()}" for path, params in loaded)
        raise DataError(f"incompatible checkpoints (config fingerprints differ): {detail}")

    vector_files = {p.config.encoder.vectors_file for _, p in loaded} - {None}
    if eff["vectors"]:
        vectors = TokenVectorTable.load(eff["vectors"])
    elif vector_files:
        if len(vector_files) > 1:
            raise DataError(f"checkpoints disagree on vector tables: {sorted(vector_files)}")
        vectors = TokenVectorTable.load(vector_files.pop())
    else:
        vectors = None

    sources = [ModelSource(params, vectors) for _, params in loaded]
    sources += [DumpSource(read_score_dump(str(path))) for path in dumps]
    combine = MeanCombine() if eff["ensemble"] == "mean" else OracleCombine()
    strategy = parse_prune_strategy(eff["prune"])

    gold = _read_corpus(eff["test"], "test")
    runs = {
        doc.id: run_ensemble(doc, sources, combine, strategy, eff["emit_singletons"])
        for doc in gold
    }
    predictions = {doc_id: run.clusters for doc_id, run in runs.items()}
    report = score_corpus(gold, predictions, include_singletons=eff["emit_singletons"])

    out = _out_dir(eff)
    pred_docs = tuple(
        doc.with_clusters(tuple(Cluster(spans) for spans in runs[doc.id].clusters))
        for doc in gold
    )
    (out / "predicted.conll").write_text(
        emit_conll(Corpus(pred_docs, "test")), encoding="utf-8"
    )
    text = format_report(report)
    (out / "report.tsv").write_text(text, encoding="utf-8")
    if eff["dump_scores"]:
        for index, path in enumerate(_dump_paths(eff["dump_scores"], len(sources))):
            write_score_dump(str(path), [_model_scores(runs[d.id], index) for d in gold])
    _echo_config(out, "evaluate", eff)
    print(text, end="")
    return 0


# --------------------------------------------------------------------- score

_SCORE_OPTS = [
    _opt("gold", "path", _REQUIRED, "gold CoNLL file", positional=True),
    _opt("pred", "path", _REQUIRED, "predicted CoNLL file", positional=True),
    _opt("drop_singletons", "bool", False, "exclude singleton clusters from both sides"),
    _opt("out", "path?", None, "optional directory for report.tsv and config echo"),
]


def cmd_score(ns: argparse.Namespace) -> int:
    eff = _effective(ns, _SCORE_OPTS, "score")
    gold = _read_corpus(eff["gold"])
    pred = _read_corpus(eff["pred"])
    pred_by_id = pred.by_id()
    gold_ids = {d.id for d in gold}
    extra = sorted(set(pred_by_id) - gold_ids)
    if extra:
        raise DataError(f"predicted file has documents missing from gold: {extra}")
    for doc in gold:
        other = pred_by_id.get(doc.id)
        if other is None:
            raise DataError(f"no prediction supplied for document {doc.id}")
        if doc.token_texts() != other.token_texts():
            raise DataError(f"document {doc.id}: token sequences differ between files")
    predictions = {d.id: list(pred_by_id[d.id].cluster_partition()) for d in gold}
    report = score_corpus(gold, predictions, include_singletons=not eff["drop_singletons"])
    text = format_report(report)
    if eff["out"]:
        out = Path(eff["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.tsv").write_text(text, encoding="utf-8")
        _echo_config(out, "score", eff)
    print(text, end="")
    return 0


# ---------------------------------------------------------------------- main

_COMMANDS = [
    ("build-wiki", cmd_build_wiki, _BUILD_WIKI_OPTS,
     "Build a distantly-supervised corpus from extracted Wikipedia articles"),
    ("synth-gen", cmd_synth_gen, _SYNTH_OPTS,
     "Generate a deterministic synthetic corpus triple"),
    ("train", cmd_train, _TRAIN_OPTS,
     "Train a model under one of the four regimes"),
    ("evaluate", cmd_evaluate, _EVALUATE_OPTS,
     "Evaluate checkpoints or score dumps, singly or as an ensemble"),
    ("score", cmd_score, _SCORE_OPTS,
     "Score a predicted CoNLL file against gold"),
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corefx",
        description="Multilingual coreference resolution toolkit",
    )
    parser.add_argument(
        "-v", "--verbose", action="count", default=0,
        help="log more to stderr (repeat for debug output)",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, func, opts, help_text in _COMMANDS:
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", default=None, metavar="FILE",
                       help="key = value file supplying option defaults")
        for opt in opts:
            _add_option(p, opt)
        p.set_defaults(func=func)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CorefxError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
