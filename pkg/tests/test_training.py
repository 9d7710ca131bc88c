"""Loss, gradient, optimizer, and training-regime tests."""

import numpy as np
import pytest

from conftest import fd_gradient_check, small_model_config, small_params, tiny_corpus

from corefx.corpus import Corpus, MentionSpan, make_document
from corefx.errors import ConfigError, GradientError
from corefx.params import init_params, save_checkpoint
from corefx.scorer import PositiveScore, TopLambda, table_offsets
from corefx.training import (
    Baseline,
    Continued,
    Joint,
    TrainConfig,
    WikiPretrain,
    apply_sgd,
    clustering_loss,
    detection_loss,
    document_loss,
    gold_structures,
    step,
    train,
)


# --- gold structures -------------------------------------------------------


def test_gold_structures_marks_earlier_cluster_mates():
    doc = make_document("d", list("abcd"), [[(0, 0), (2, 2)], [(1, 1)]])
    kept = [MentionSpan(0, 0), MentionSpan(1, 1), MentionSpan(2, 2)]
    y, gold, offsets = gold_structures(doc, kept)
    assert list(y) == [1.0, 1.0, 1.0]
    assert list(offsets) == list(table_offsets(3))
    # span 0: no earlier mate -> dummy; span 1: singleton cluster -> dummy;
    # span 2: links to span 0
    assert list(gold) == [1, 1, 0, 0, 1, 0]


def test_gold_structures_non_mention_takes_dummy():
    doc = make_document("d", list("abc"), [[(0, 0), (1, 1)]])
    kept = [MentionSpan(0, 0), MentionSpan(2, 2)]  # second is not a mention
    y, gold, offsets = gold_structures(doc, kept)
    assert list(y) == [1.0, 0.0]
    assert list(gold) == [1, 1, 0]


def test_gold_structures_mate_pruned_away_falls_back_to_dummy():
    doc = make_document("d", list("abc"), [[(0, 0), (2, 2)]])
    kept = [MentionSpan(2, 2)]  # partner span (0,0) was pruned
    y, gold, _ = gold_structures(doc, kept)
    assert list(y) == [1.0]
    assert list(gold) == [1]


# --- losses ----------------------------------------------------------------


def test_detection_loss_value_and_gradient():
    scores = np.array([0.5, -1.0, 2.0])
    y = np.array([1.0, 0.0, 1.0])
    loss, grad = detection_loss(scores, y)
    p = 1.0 / (1.0 + np.exp(-scores))
    want = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
    assert loss == pytest.approx(want, rel=1e-12)
    assert np.allclose(grad, (p - y) / 3, atol=1e-15)


def test_detection_loss_clamps_extreme_scores():
    loss, grad = detection_loss(np.array([-80.0]), np.array([1.0]))
    assert np.isfinite(loss)
    assert loss == pytest.approx(-np.log(1e-12), rel=1e-6)
    assert grad[0] == pytest.approx(-1.0, abs=1e-12)


def test_detection_loss_empty():
    loss, grad = detection_loss(np.zeros(0), np.zeros(0))
    assert loss == 0.0 and grad.shape == (0,)


def test_clustering_loss_two_span_hand_case():
    # row 0: [dummy]; row 1: [dummy, s]; gold antecedent is span 0
    offsets = table_offsets(2)
    s = 0.7
    flat = np.array([0.0, 0.0, s])
    gold = np.array([1, 0, 1], dtype=np.uint8)
    loss, grad = clustering_loss(flat, offsets, gold)
    assert loss == pytest.approx(np.log(1.0 + np.exp(-s)), rel=1e-12)
    p1 = np.exp(s) / (1.0 + np.exp(s))
    # grad = p_all - p_gold: row 0 cancels, row 1 dummy keeps (1-p1),
    # gold entry gets p1 - 1
    assert grad[0] == pytest.approx(0.0, abs=1e-15)
    assert grad[1] == pytest.approx(1.0 - p1, rel=1e-12)
    assert grad[2] == pytest.approx(p1 - 1.0, rel=1e-12)


# --- full-model gradients ----------------------------------------------------


@pytest.mark.parametrize("seed,strategy", [
    (0, TopLambda(1.0)),
    (1, TopLambda(0.5)),
    (2, PositiveScore()),
])
def test_document_loss_gradients_match_finite_differences(seed, strategy):
    docs = tiny_corpus(num_docs=1, seed=seed, doc_len=10)
    params = small_params(seed=seed)
    fd_gradient_check(docs.documents[0], params, strategy, seed=seed)


def test_document_loss_reports_components():
    doc = tiny_corpus(num_docs=1, seed=3).documents[0]
    result = document_loss(doc, small_params(seed=3), TopLambda(0.5))
    assert result.total == pytest.approx(result.detection + result.clustering)
    assert result.grads is not None
    assert set(result.grads) == {n for n, _ in small_params(seed=3).blocks()}
    cheap = document_loss(doc, small_params(seed=3), TopLambda(0.5), want_grads=False)
    assert cheap.grads is None
    assert cheap.total == result.total


# --- optimizer ---------------------------------------------------------------


def test_apply_sgd_group_learning_rates():
    params = small_params(seed=0)
    before = {n: a.copy() for n, a in params.blocks()}
    grads = {n: np.ones_like(a) for n, a in params.blocks()}
    cfg = TrainConfig(lower_lr=0.5, upper_lr=0.25)
    version = params.version
    apply_sgd(params, grads, cfg)
    assert params.version == version + 1
    for name, arr in params.blocks():
        lr = 0.5 if name == "embed" else 0.25
        assert np.allclose(before[name] - arr, lr, atol=1e-15)


def test_apply_sgd_grad_clip_rescales_to_norm():
    params = small_params(seed=0)
    before = {n: a.copy() for n, a in params.blocks()}
    grads = {n: np.full_like(a, 2.0) for n, a in params.blocks()}
    norm = np.sqrt(sum((g ** 2).sum() for g in grads.values()))
    clip = float(norm / 4.0)
    cfg = TrainConfig(lower_lr=1.0, upper_lr=1.0, grad_clip=clip)
    apply_sgd(params, grads, cfg)
    for name, arr in params.blocks():
        assert np.allclose(before[name] - arr, 2.0 * 0.25, atol=1e-12)


def test_apply_sgd_grad_clip_leaves_small_gradients_alone():
    params = small_params(seed=0)
    before = {n: a.copy() for n, a in params.blocks()}
    grads = {n: np.full_like(a, 1e-3) for n, a in params.blocks()}
    apply_sgd(params, grads, TrainConfig(lower_lr=1.0, upper_lr=1.0, grad_clip=1e9))
    for name, arr in params.blocks():
        assert np.allclose(before[name] - arr, 1e-3, atol=1e-15)


def test_apply_sgd_rejects_non_finite_gradients():
    params = small_params(seed=0)
    grads = {n: np.zeros_like(a) for n, a in params.blocks()}
    grads["attn_w"][0] = np.inf
    with pytest.raises(GradientError, match="attn_w"):
        apply_sgd(params, grads, TrainConfig())


def test_step_returns_pre_update_loss():
    doc = tiny_corpus(num_docs=1, seed=4).documents[0]
    params = small_params(seed=4)
    cfg = TrainConfig()
    expected = document_loss(doc, params, cfg.prune, want_grads=False).total
    got = step(params, doc, cfg)
    assert got == expected


def test_loss_decreases_under_training():
    # median over three seeds: fifty steps on one document should cut the loss
    drops = []
    for seed in range(3):
        doc = tiny_corpus(num_docs=1, seed=seed).documents[0]
        params = small_params(seed=seed)
        cfg = TrainConfig(lower_lr=1e-3, upper_lr=1e-2)
        first = step(params, doc, cfg)
        last = first
        for _ in range(49):
            last = step(params, doc, cfg)
        drops.append(first - last)
    assert np.median(drops) > 0.0


# --- config and regimes -----------------------------------------------------


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lower_lr=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(grad_clip=-1.0)
    assert TrainConfig(grad_clip=None).grad_clip is None


def test_train_config_pinned_defaults():
    cfg = TrainConfig()
    assert cfg.lower_lr == 1e-2
    assert cfg.upper_lr == 1e-1
    assert cfg.epochs == 25
    assert cfg.pretrain_epochs == 5
    assert cfg.finetune_epochs == 50
    assert TrainConfig.paper_defaults == {"lower_lr": 1e-5, "upper_lr": 1e-4}


def test_regime_stage_composition():
    target = tiny_corpus(num_docs=2, seed=0)
    source = tiny_corpus(num_docs=3, seed=1)
    cfg = TrainConfig(epochs=7, pretrain_epochs=2, finetune_epochs=9)
    assert [(n, len(d), e) for n, d, e in Baseline(target).stages(cfg)] == [
        ("target", 2, 7)
    ]
    assert [(n, len(d), e) for n, d, e in Continued(source, target).stages(cfg)] == [
        ("source", 3, 7), ("target", 2, 7)
    ]
    assert [(n, len(d), e) for n, d, e in Joint(source, target).stages(cfg)] == [
        ("joint", 5, 7)
    ]
    assert [(n, len(d), e) for n, d, e in WikiPretrain(source, target).stages(cfg)] == [
        ("wiki", 3, 2), ("target", 2, 9)
    ]


def _split(corpus, n_train):
    docs = list(corpus)
    return Corpus(tuple(docs[:n_train])), Corpus(tuple(docs[n_train:]))


def test_train_deterministic(tmp_path):
    data, dev = _split(tiny_corpus(num_docs=6, seed=7), 4)
    cfg = TrainConfig(epochs=3)
    a = train(Baseline(data), small_model_config(), dev, cfg)
    b = train(Baseline(data), small_model_config(), dev, cfg)
    assert a.log_lines == b.log_lines
    pa, pb = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(a.params, str(pa))
    save_checkpoint(b.params, str(pb))
    assert pa.read_bytes() == pb.read_bytes()


def test_joint_with_empty_source_equals_baseline(tmp_path):
    data, dev = _split(tiny_corpus(num_docs=6, seed=8), 4)
    cfg = TrainConfig(epochs=3)
    base = train(Baseline(data), small_model_config(), dev, cfg)
    joint = train(Joint(Corpus(()), data), small_model_config(), dev, cfg)
    pa, pb = tmp_path / "base.ckpt", tmp_path / "joint.ckpt"
    save_checkpoint(base.params, str(pa))
    save_checkpoint(joint.params, str(pb))
    assert pa.read_bytes() == pb.read_bytes()
    # identical numbers, different stage marker
    assert base.log_lines[0] == "# stage target"
    assert joint.log_lines[0] == "# stage joint"
    assert base.log_lines[1:] == joint.log_lines[1:]


def test_log_lines_structure_and_stage_markers():
    data, dev = _split(tiny_corpus(num_docs=4, seed=9), 3)
    cfg = TrainConfig(epochs=2, pretrain_epochs=3, finetune_epochs=2)
    result = train(WikiPretrain(data, data), small_model_config(), dev, cfg)
    lines = result.log_lines
    assert lines[0] == "# stage wiki"
    assert lines[4] == "# stage target"
    assert len(lines) == 1 + 3 + 1 + 2
    for line in lines[1:4] + lines[5:]:
        fields = line.split("\t")
        assert len(fields) == 6
        int(fields[0])
        for v in fields[1:]:
            float(v)
    assert [s.name for s in result.stages] == ["wiki", "target"]
    assert result.best_avg == result.stages[-1].best_avg


def test_best_epoch_ties_resolve_earlier():
    # tiny task saturates dev AVG quickly; once the score plateaus the
    # earlier epoch must keep the checkpoint
    data, dev = _split(tiny_corpus(num_docs=6, seed=1), 4)
    cfg = TrainConfig(epochs=6)
    result = train(Baseline(data), small_model_config(), dev, cfg)
    stage = result.stages[0]
    avgs = [float(line.split("\t")[5]) for line in result.log_lines[1:]]
    best = max(avgs)
    assert stage.best_epoch == avgs.index(best) + 1


def test_empty_stage_raises():
    dev = tiny_corpus(num_docs=1, seed=0)
    with pytest.raises(ConfigError, match="empty document list"):
        train(Baseline(Corpus(())), small_model_config(), dev, TrainConfig(epochs=1))


def test_stage_dev_overrides_selection_corpus():
    data, dev = _split(tiny_corpus(num_docs=5, seed=2), 3)
    # a clusterless dev corpus scores a constant AVG of 1/3 (empty gold
    # against empty prediction counts as a perfect alignment), which no
    # early-epoch model reaches on the real dev set
    bare = Corpus((make_document("bare-0", [f"w{i}" for i in range(8)], []),))
    cfg = TrainConfig(epochs=2)
    plain = train(Continued(data, data), small_model_config(), dev, cfg)
    routed = train(
        Continued(data, data),
        small_model_config(),
        dev,
        cfg,
        stage_dev={"source": bare},
    )
    assert plain.stages[0].best_avg == 0.0
    assert routed.stages[0].best_avg == pytest.approx(1 / 3, abs=1e-12)
    assert plain.log_lines[0] == routed.log_lines[0] == "# stage source"
    assert plain.log_lines[1] != routed.log_lines[1]
