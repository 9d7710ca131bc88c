"""End-to-end command-line tests; every command runs through main()."""

import filecmp
from pathlib import Path

import pytest

from corefx.cli import main
from corefx.corpus import Corpus, emit_conll, make_document, parse_conll
from corefx.params import load_checkpoint


SMALL_MODEL = [
    "--embed-dim", "6",
    "--hash-buckets", "48",
    "--width-dim", "3",
    "--dist-dim", "3",
    "--hidden", "8",
    "--span-limit", "4",
]


def _dir_bytes(path: Path) -> dict[str, bytes]:
    return {
        p.relative_to(path).as_posix(): p.read_bytes()
        for p in sorted(path.rglob("*"))
        if p.is_file()
    }


def _synth(tmp_path: Path, name: str = "data", **over) -> Path:
    out = tmp_path / name
    args = [
        "synth-gen", "--out", str(out),
        "--train-docs", "6", "--dev-docs", "2", "--test-docs", "3",
        "--doc-len", "20", "--vocab-size", "6", "--name-pool-size", "3",
    ]
    for key, value in over.items():
        args += [f"--{key.replace('_', '-')}", str(value)]
    assert main(args) == 0
    return out


def _train(tmp_path: Path, data: Path, name: str = "model", extra=()) -> Path:
    out = tmp_path / name
    args = [
        "train", "--regime", "baseline",
        "--target", str(data / "train.conll"),
        "--dev", str(data / "dev.conll"),
        "--out", str(out),
        "--epochs", "2",
        *SMALL_MODEL,
        *extra,
    ]
    assert main(args) == 0
    return out / "checkpoint.ckpt"


# --- synth-gen --------------------------------------------------------------


def test_synth_gen_writes_three_splits_and_stats(tmp_path, capsys):
    out = _synth(tmp_path)
    for name in ("train", "dev", "test"):
        assert (out / f"{name}.conll").exists()
    assert (out / "config.txt").exists()
    stdout = capsys.readouterr().out
    assert "train\t6" in stdout and "test\t3" in stdout
    assert len(parse_conll((out / "train.conll").read_text())) == 6


def test_synth_gen_rerun_is_byte_identical(tmp_path):
    # same arguments, same --out: the second run must reproduce every byte
    a = _synth(tmp_path, "a")
    first = _dir_bytes(a)
    _synth(tmp_path, "a")
    assert _dir_bytes(a) == first


def test_synth_gen_seed_changes_output(tmp_path):
    a = _synth(tmp_path, "a")
    b = _synth(tmp_path, "b", seed=9)
    assert (a / "train.conll").read_bytes() != (b / "train.conll").read_bytes()


# --- config files -------------------------------------------------------------


def test_config_file_supplies_defaults_and_flags_win(tmp_path):
    cfg = tmp_path / "gen.cfg"
    cfg.write_text(
        "# generator settings\ndoc-len = 30\nseed = 4\n", encoding="utf-8"
    )
    out = tmp_path / "out"
    assert main([
        "synth-gen", "--config", str(cfg), "--out", str(out),
        "--train-docs", "2", "--dev-docs", "0", "--test-docs", "0",
        "--doc-len", "40",
    ]) == 0
    echoed = (out / "config.txt").read_text()
    assert "doc_len = 40" in echoed  # flag beat the file
    assert "seed = 4" in echoed  # file beat the default
    doc = parse_conll((out / "train.conll").read_text()).documents[0]
    assert len(doc.tokens) == 40


def test_config_echo_is_reconsumable(tmp_path):
    first = _synth(tmp_path, "first", seed=3)
    again = tmp_path / "again"
    assert main([
        "synth-gen", "--config", str(first / "config.txt"), "--out", str(again),
    ]) == 0
    for name in ("train.conll", "dev.conll", "test.conll"):
        assert (first / name).read_bytes() == (again / name).read_bytes()


def test_unknown_config_key_is_a_usage_error(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("sneed = 3\n", encoding="utf-8")
    code = main(["synth-gen", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "unknown config key 'sneed'" in capsys.readouterr().err


def test_malformed_config_line_is_a_usage_error(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("seed 3\n", encoding="utf-8")
    assert main(["synth-gen", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert ":1:" in capsys.readouterr().err


def test_missing_required_option_is_a_usage_error(capsys):
    assert main(["synth-gen"]) == 2
    assert "--out" in capsys.readouterr().err


# --- train ------------------------------------------------------------------


def test_train_writes_checkpoint_log_and_config(tmp_path, capsys):
    data = _synth(tmp_path)
    ckpt = _train(tmp_path, data)
    assert ckpt.exists()
    params = load_checkpoint(str(ckpt))
    assert params.config.encoder.embed_dim == 6
    log_text = (ckpt.parent / "train.log").read_text()
    lines = log_text.splitlines()
    assert lines[0] == "# stage target"
    assert len(lines) == 1 + 2  # marker + one line per epoch
    fields = lines[1].split("\t")
    assert len(fields) == 6
    stdout = capsys.readouterr().out
    assert "stage target: best epoch" in stdout
    assert "checkpoint\t" in stdout


def test_train_rerun_is_byte_identical(tmp_path):
    data = _synth(tmp_path)
    a = _train(tmp_path, data, "a")
    b = _train(tmp_path, data, "b")
    assert a.read_bytes() == b.read_bytes()
    assert (a.parent / "train.log").read_bytes() == (b.parent / "train.log").read_bytes()


def test_train_continued_requires_source(tmp_path, capsys):
    data = _synth(tmp_path)
    code = main([
        "train", "--regime", "continued",
        "--target", str(data / "train.conll"),
        "--dev", str(data / "dev.conll"),
        "--out", str(tmp_path / "m"),
    ])
    assert code == 2
    err = capsys.readouterr().err
    assert "error: the continued regime requires a labeled source corpus (--source)" in err


def test_train_wiki_pretrain_requires_wiki(tmp_path, capsys):
    data = _synth(tmp_path)
    code = main([
        "train", "--regime", "wiki-pretrain",
        "--target", str(data / "train.conll"),
        "--dev", str(data / "dev.conll"),
        "--out", str(tmp_path / "m"),
    ])
    assert code == 2
    assert "requires a distant-supervision corpus (--wiki)" in capsys.readouterr().err


def test_train_missing_corpus_file(tmp_path, capsys):
    code = main([
        "train", "--regime", "baseline",
        "--target", str(tmp_path / "absent.conll"),
        "--dev", str(tmp_path / "absent.conll"),
        "--out", str(tmp_path / "m"),
    ])
    assert code == 2
    assert "does not exist" in capsys.readouterr().err


def test_train_continued_runs_two_stages(tmp_path, capsys):
    target = _synth(tmp_path, "tgt")
    source = _synth(tmp_path, "src", seed=5, id_prefix="src")
    out = tmp_path / "m"
    assert main([
        "train", "--regime", "continued",
        "--target", str(target / "train.conll"),
        "--dev", str(target / "dev.conll"),
        "--source", str(source / "train.conll"),
        "--out", str(out),
        "--epochs", "2",
        *SMALL_MODEL,
    ]) == 0
    log = (out / "train.log").read_text().splitlines()
    assert log.count("# stage source") == 1
    assert log.count("# stage target") == 1
    stdout = capsys.readouterr().out
    assert "stage source:" in stdout and "stage target:" in stdout


def test_unknown_flag_exits_via_argparse(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["synth-gen", "--out", str(tmp_path / "o"), "--bogus", "1"])
    assert exc.value.code == 2


# --- evaluate ------------------------------------------------------------------


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """One synthetic corpus and two distinct checkpoints, shared per module."""
    tmp_path = tmp_path_factory.mktemp("cli_trained")
    data = _synth(tmp_path)
    ckpt_a = _train(tmp_path, data, "model_a", extra=["--seed", "0"])
    ckpt_b = _train(tmp_path, data, "model_b", extra=["--seed", "1"])
    return tmp_path, data, ckpt_a, ckpt_b


def _evaluate(out: Path, data: Path, *extra) -> int:
    return main([
        "evaluate",
        "--test", str(data / "test.conll"),
        "--out", str(out),
        *extra,
    ])


def test_evaluate_single_checkpoint(trained, tmp_path, capsys):
    _, data, ckpt_a, _ = trained
    out = tmp_path / "eval"
    assert _evaluate(out, data, "--checkpoint", str(ckpt_a)) == 0
    report = (out / "report.tsv").read_text()
    assert report.splitlines()[0] == "metric\tP\tR\tF1"
    assert "AVG\t" in report
    assert capsys.readouterr().out == report
    assert (out / "predicted.conll").exists()
    parse_conll((out / "predicted.conll").read_text())  # well-formed


def test_evaluate_mean_of_identical_checkpoints_matches_single(trained, tmp_path):
    _, data, ckpt_a, _ = trained
    single = tmp_path / "single"
    triple = tmp_path / "triple"
    assert _evaluate(single, data, "--checkpoint", str(ckpt_a)) == 0
    assert _evaluate(
        triple, data,
        "--checkpoint", str(ckpt_a),
        "--checkpoint", str(ckpt_a),
        "--checkpoint", str(ckpt_a),
    ) == 0
    assert (single / "report.tsv").read_bytes() == (triple / "report.tsv").read_bytes()
    assert (single / "predicted.conll").read_bytes() == (triple / "predicted.conll").read_bytes()


def test_evaluate_oracle_at_least_mean(trained, tmp_path):
    _, data, ckpt_a, ckpt_b = trained
    results = {}
    for rule in ("mean", "oracle"):
        out = tmp_path / rule
        assert _evaluate(
            out, data,
            "--checkpoint", str(ckpt_a),
            "--checkpoint", str(ckpt_b),
            "--ensemble", rule,
        ) == 0
        avg_line = [
            line for line in (out / "report.tsv").read_text().splitlines()
            if line.startswith("AVG")
        ][0]
        results[rule] = float(avg_line.split("\t")[-1])
    assert results["oracle"] >= results["mean"]


def test_evaluate_dump_round_trip(trained, tmp_path):
    _, data, ckpt_a, _ = trained
    direct = tmp_path / "direct"
    dump = tmp_path / "scores.tsv"
    assert _evaluate(
        direct, data, "--checkpoint", str(ckpt_a), "--dump-scores", str(dump)
    ) == 0
    assert dump.exists()
    redone = tmp_path / "redone"
    assert _evaluate(redone, data, "--from-dump", str(dump)) == 0
    assert (direct / "report.tsv").read_bytes() == (redone / "report.tsv").read_bytes()
    assert (direct / "predicted.conll").read_bytes() == (redone / "predicted.conll").read_bytes()


def test_evaluate_dump_paths_get_numbered_for_ensembles(trained, tmp_path):
    _, data, ckpt_a, ckpt_b = trained
    out = tmp_path / "eval"
    dump = tmp_path / "scores.tsv"
    assert _evaluate(
        out, data,
        "--checkpoint", str(ckpt_a), "--checkpoint", str(ckpt_b),
        "--dump-scores", str(dump),
    ) == 0
    assert not dump.exists()
    assert (tmp_path / "scores.1.tsv").exists()
    assert (tmp_path / "scores.2.tsv").exists()


def test_evaluate_rejects_mismatched_checkpoints(trained, tmp_path, capsys):
    root, data, ckpt_a, _ = trained
    other = _train(root, data, "model_wide", extra=["--embed-dim", "8"])
    code = _evaluate(
        tmp_path / "o", data, "--checkpoint", str(ckpt_a), "--checkpoint", str(other)
    )
    assert code == 2
    assert "incompatible checkpoints (config fingerprints differ)" in capsys.readouterr().err


def test_evaluate_needs_some_model(trained, tmp_path, capsys):
    _, data, _, _ = trained
    assert _evaluate(tmp_path / "o", data) == 2
    assert "at least one --checkpoint or --from-dump" in capsys.readouterr().err


# --- score ----------------------------------------------------------------------


def _write_corpus(path: Path, docs) -> Path:
    path.write_text(emit_conll(Corpus(tuple(docs), "test")), encoding="utf-8")
    return path


def test_score_gold_against_itself(tmp_path, capsys):
    doc = make_document("d", ["a", "b", "c"], [[(0, 0), (1, 1)], [(2, 2)]])
    gold = _write_corpus(tmp_path / "gold.conll", [doc])
    assert main(["score", str(gold), str(gold)]) == 0
    out = capsys.readouterr().out
    assert "AVG\t\t\t1.0000" in out
    assert "MUC\t1.0000\t1.0000\t1.0000" in out


def test_score_link_metric_hand_example(tmp_path, capsys):
    # gold chains {a,b,c}; prediction splits off {c}: link F1 is 2/3
    gold_doc = make_document("d", ["a", "b", "c"], [[(0, 0), (1, 1), (2, 2)]])
    pred_doc = make_document("d", ["a", "b", "c"], [[(0, 0), (1, 1)], [(2, 2)]])
    gold = _write_corpus(tmp_path / "gold.conll", [gold_doc])
    pred = _write_corpus(tmp_path / "pred.conll", [pred_doc])
    assert main(["score", str(gold), str(pred)]) == 0
    muc = [
        line for line in capsys.readouterr().out.splitlines()
        if line.startswith("MUC")
    ][0]
    assert muc.split("\t")[3] == f"{2 / 3:.4f}"


def test_score_mention_metric_hand_example(tmp_path, capsys):
    # gold {a,b},{c}; prediction fuses everything: mention-weighted F1 is 5/7
    gold_doc = make_document("d", ["a", "b", "c"], [[(0, 0), (1, 1)], [(2, 2)]])
    pred_doc = make_document("d", ["a", "b", "c"], [[(0, 0), (1, 1), (2, 2)]])
    gold = _write_corpus(tmp_path / "gold.conll", [gold_doc])
    pred = _write_corpus(tmp_path / "pred.conll", [pred_doc])
    assert main(["score", str(gold), str(pred)]) == 0
    b3 = [
        line for line in capsys.readouterr().out.splitlines()
        if line.startswith("B3")
    ][0]
    assert b3.split("\t")[3] == f"{5 / 7:.4f}"


def test_score_drop_singletons_changes_the_report(tmp_path, capsys):
    gold_doc = make_document("d", ["a", "b", "c"], [[(0, 0), (1, 1)], [(2, 2)]])
    pred_doc = make_document("d", ["a", "b", "c"], [[(0, 0), (1, 1)]])
    gold = _write_corpus(tmp_path / "gold.conll", [gold_doc])
    pred = _write_corpus(tmp_path / "pred.conll", [pred_doc])
    assert main(["score", str(gold), str(pred)]) == 0
    kept = capsys.readouterr().out
    assert main(["score", str(gold), str(pred), "--drop-singletons"]) == 0
    dropped = capsys.readouterr().out
    assert kept != dropped
    assert "AVG\t\t\t1.0000" in dropped  # without {c} the files agree


def test_score_writes_report_when_out_given(tmp_path, capsys):
    doc = make_document("d", ["a", "b"], [[(0, 0), (1, 1)]])
    gold = _write_corpus(tmp_path / "gold.conll", [doc])
    out = tmp_path / "report"
    assert main(["score", str(gold), str(gold), "--out", str(out)]) == 0
    assert (out / "report.tsv").read_text() == capsys.readouterr().out
    assert (out / "config.txt").exists()


def test_score_token_mismatch_is_a_usage_error(tmp_path, capsys):
    gold = _write_corpus(
        tmp_path / "gold.conll", [make_document("d", ["a", "b"], [[(0, 0), (1, 1)]])]
    )
    pred = _write_corpus(
        tmp_path / "pred.conll", [make_document("d", ["a", "x"], [[(0, 0), (1, 1)]])]
    )
    assert main(["score", str(gold), str(pred)]) == 2
    assert "token sequences differ" in capsys.readouterr().err


def test_score_missing_document_is_a_usage_error(tmp_path, capsys):
    gold = _write_corpus(
        tmp_path / "gold.conll",
        [
            make_document("d1", ["a", "b"], [[(0, 0), (1, 1)]]),
            make_document("d2", ["a", "b"], [[(0, 0), (1, 1)]]),
        ],
    )
    pred = _write_corpus(
        tmp_path / "pred.conll", [make_document("d1", ["a", "b"], [[(0, 0), (1, 1)]])]
    )
    assert main(["score", str(gold), str(pred)]) == 2
    assert "no prediction supplied for document d2" in capsys.readouterr().err


# --- build-wiki --------------------------------------------------------------


def _wiki_records(path: Path) -> Path:
    path.write_text(
        "One\t[[A]] y [[A]].\n"
        "Two\t[[B]] y [[B]] y [[C]].\n"
        "Three\t[[D]] solo.\n",
        encoding="utf-8",
    )
    return path


def test_build_wiki_end_to_end(tmp_path, capsys):
    src = _wiki_records(tmp_path / "articles.tsv")
    out = tmp_path / "corpus"
    assert main([
        "build-wiki", str(src), "--out", str(out),
        "--dev-docs", "0", "--test-docs", "0",
    ]) == 0
    stdout = capsys.readouterr().out
    stats = dict(line.split("\t") for line in stdout.strip().splitlines())
    assert stats["kept"] == "2"
    assert (out / "train.conll").exists()
    assert (out / "config.txt").exists()


def test_build_wiki_threshold_can_filter_everything(tmp_path, capsys):
    src = _wiki_records(tmp_path / "articles.tsv")
    out = tmp_path / "corpus"
    assert main([
        "build-wiki", str(src), "--out", str(out),
        "--dev-docs", "0", "--test-docs", "0",
        "--min-nonsingleton-clusters", "2",
    ]) == 0
    stats = dict(
        line.split("\t") for line in capsys.readouterr().out.strip().splitlines()
    )
    assert stats["kept"] == "0"


def test_build_wiki_rerun_is_byte_identical(tmp_path):
    src = _wiki_records(tmp_path / "articles.tsv")
    out = tmp_path / "corpus"
    args = [
        "build-wiki", str(src), "--out", str(out),
        "--dev-docs", "1", "--test-docs", "1", "--seed", "3",
    ]
    assert main(args) == 0
    first = _dir_bytes(out)
    assert main(args) == 0
    assert _dir_bytes(out) == first


def test_build_wiki_missing_input(tmp_path, capsys):
    assert main([
        "build-wiki", str(tmp_path / "absent.tsv"), "--out", str(tmp_path / "o"),
    ]) == 2
    assert "does not exist" in capsys.readouterr().err
