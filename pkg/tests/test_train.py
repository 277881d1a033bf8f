import itertools
import math

import numpy as np
import pytest

from chainfraud.exceptions import ConfigError, DataError
from chainfraud.ingest import EdgeRecord
from chainfraud.model import DualPathParams, TextEmbedder, assemble_features, forward
from chainfraud.policy import (FEATURE_NAMES, SplitPolicy, featurize_sentences,
                               split_summary)
from chainfraud.subgraph import Subgraph
from chainfraud.summary import TransactionSummary
from chainfraud.train import (AdamW, BaselineState, TrainConfig, TrainingData,
                              alternate_train, reinforce_objective,
                              reward_from_loss, stage1_epoch, stage2_epoch,
                              update_baseline)


def test_reward_examples():
    assert reward_from_loss(0.0) == 1.0
    assert reward_from_loss(math.log(2)) == pytest.approx(0.5, abs=1e-12)
    assert reward_from_loss(1.0) == pytest.approx(0.367879, abs=1e-6)
    with pytest.raises(DataError):
        reward_from_loss(float("nan"))


def test_baseline_examples():
    state = BaselineState(value=0.5, momentum=0.9)
    new, adv = update_baseline(state, 1.0)
    assert new.value == pytest.approx(0.55, abs=1e-12)
    assert adv == pytest.approx(0.5, abs=1e-12)

    state = BaselineState(value=0.3, momentum=0.0)
    new, _ = update_baseline(state, 0.8)
    assert new.value == 0.8

    state = BaselineState(value=0.7, momentum=0.9)
    new, adv = update_baseline(state, 0.7)
    assert new.value == pytest.approx(0.7) and adv == 0.0

    # first observed reward initializes the baseline: zero first advantage
    state = BaselineState(momentum=0.9)
    new, adv = update_baseline(state, 0.42)
    assert adv == 0.0 and new.value == pytest.approx(0.42)
    assert new.step == 1


def test_reinforce_objective_examples():
    assert reinforce_objective(0.0, -1.0, -2.0) == 0.0
    assert reinforce_objective(0.5, -1.0, -2.0) == pytest.approx(1.5)
    assert reinforce_objective(0.9, 0.0, 0.0) == 0.0


def test_adamw_quadratic_bowl_closed_form():
    lr, b1, b2, eps, wd = 0.1, 0.9, 0.999, 1e-8, 0.01
    x0 = 3.0
    params = {"x": np.array([x0])}
    opt = AdamW(lr=lr, beta1=b1, beta2=b2, eps=eps, weight_decay=wd)
    g = x0  # gradient of 0.5 x^2
    opt.step(params, {"x": np.array([g])})
    m_hat = ((1 - b1) * g) / (1 - b1)
    v_hat = ((1 - b2) * g * g) / (1 - b2)
    expected = x0 - lr * (m_hat / (math.sqrt(v_hat) + eps) + wd * x0)
    assert params["x"][0] == pytest.approx(expected, abs=1e-12)

    # second step with accumulated moments
    x1 = params["x"][0]
    g2 = x1
    opt.step(params, {"x": np.array([g2])})
    m = b1 * ((1 - b1) * g) + (1 - b1) * g2
    v = b2 * ((1 - b2) * g * g) + (1 - b2) * g2 * g2
    m_hat = m / (1 - b1 ** 2)
    v_hat = v / (1 - b2 ** 2)
    expected2 = x1 - lr * (m_hat / (math.sqrt(v_hat) + eps) + wd * x1)
    assert params["x"][0] == pytest.approx(expected2, abs=1e-12)


# -- toy worlds ----------------------------------------------------------------

def single_node_world(sentences_by_node, labels, embed_dim=24, seed=0):
    """Every account is its own one-node subgraph; summaries handcrafted."""
    subgraphs = {}
    summaries = {}
    for node, sentences in sentences_by_node.items():
        subgraphs[node] = Subgraph(node, [node], [], {node: 0})
        summaries[node] = TransactionSummary(
            account=node, text=" ".join(sentences), sentences=list(sentences),
            backend_tag="mock", cache_key=node)
    embedder = TextEmbedder(dim=embed_dim, seed=seed)
    return TrainingData(subgraphs=subgraphs, summaries=summaries,
                        labels=dict(labels), embedder=embedder)


def keyword_world(n_per_class=8):
    """The 'mixer' sentence is the single discriminative cue: fraud and
    benign summaries are identical apart from it."""
    common = ["Dozens of transfers were recorded on the account.",
              "Activity is spread across many days at a steady pace."]
    sentences_by_node = {}
    labels = {}
    for i in range(n_per_class):
        sentences_by_node[f"fraud{i}"] = common + [
            "The account interacted with a known mixer service."]
        labels[f"fraud{i}"] = 1
        sentences_by_node[f"benign{i}"] = list(common)
        labels[f"benign{i}"] = 0
    return single_node_world(sentences_by_node, labels)


def pretrain_encoder(data, nodes, cfg, epochs=30):
    params = DualPathParams.init(data.embedder.dim, cfg.hidden_dim,
                                 seed=cfg.seed)
    policy = SplitPolicy()  # bias 1.0: everything discriminative
    opt = AdamW(lr=0.01)
    rng = np.random.default_rng(cfg.seed)
    for _ in range(epochs):
        stage2_epoch(nodes, policy, params, cfg, data, opt, rng)
    return params


def test_stage1_freezes_encoder_and_stage2_freezes_policy(small_corpus):
    graph, data, splits = small_corpus
    cfg = TrainConfig(hidden_dim=32, seed=1)
    params = DualPathParams.init(data.embedder.dim, 32, seed=1)
    policy = SplitPolicy()
    rng = np.random.default_rng(0)

    before = params.digest()
    baseline = BaselineState(momentum=cfg.ema_momentum)
    stage1_epoch(splits[0][:20], policy, params, baseline, cfg, data,
                 AdamW(lr=1e-4), rng)
    assert params.digest() == before  # encoder untouched by stage 1

    policy_digest = policy.digest()
    stage2_epoch(splits[0][:20], policy, params, cfg, data, AdamW(lr=1e-3), rng)
    assert policy.digest() == policy_digest  # policy untouched by stage 2
    assert params.digest() != before


def test_missing_summary_is_fatal(small_corpus):
    graph, data, splits = small_corpus
    cfg = TrainConfig(hidden_dim=32)
    broken = TrainingData(subgraphs=data.subgraphs,
                          summaries={}, labels=data.labels,
                          embedder=data.embedder)
    with pytest.raises(DataError, match="no cached summary"):
        stage2_epoch(splits[0][:3], SplitPolicy(),
                     DualPathParams.init(32, 32), cfg, broken,
                     AdamW(lr=1e-3), np.random.default_rng(0))


def test_zero_epochs_no_op(small_corpus):
    graph, data, splits = small_corpus
    cfg = TrainConfig(outer_epochs=0, hidden_dim=32, seed=5)
    result = alternate_train(data, splits, cfg)
    fresh_policy = SplitPolicy()
    assert result.policy.digest() == fresh_policy.digest()
    assert result.log == []


def test_alternate_train_determinism(small_corpus):
    graph, data, splits = small_corpus
    cfg = TrainConfig(outer_epochs=1, inner_epochs=2, hidden_dim=32, seed=9)
    a = alternate_train(data, splits, cfg)
    b = alternate_train(data, splits, cfg)
    assert a.log == b.log
    assert a.params.digest() == b.params.digest()
    assert a.policy.digest() == b.policy.digest()


def test_alternate_train_schedule_and_log(small_corpus):
    graph, data, splits = small_corpus
    cfg = TrainConfig(outer_epochs=2, inner_epochs=3, hidden_dim=32, seed=4,
                      early_stop_patience=50)
    result = alternate_train(data, splits, cfg)
    stage1_rows = [r for r in result.log if r["stage"] == "stage1"]
    stage2_rows = [r for r in result.log if r["stage"] == "stage2"]
    assert len(stage1_rows) == 2
    assert len(stage2_rows) == 6
    assert [r["timestamp"] for r in result.log] == list(range(1, 9))
    for row in stage2_rows:
        assert row["val_f1"] is not None


def test_early_stopping_cuts_schedule(small_corpus):
    graph, data, splits = small_corpus
    # lr 0 on the encoder: validation F1 can never improve after epoch 1
    cfg = TrainConfig(outer_epochs=2, inner_epochs=10, hidden_dim=32,
                      lr_gnn=1e-30, early_stop_patience=2, seed=3)
    result = alternate_train(data, splits, cfg)
    stage2_rows = [r for r in result.log if r["stage"] == "stage2"]
    assert result.stopped_early
    assert len(stage2_rows) < 20


def test_empty_validation_split_fatal(small_corpus):
    graph, data, splits = small_corpus
    with pytest.raises(ConfigError):
        alternate_train(data, (splits[0], [], splits[2]),
                        TrainConfig(hidden_dim=32))


def test_single_sample_overfit():
    sentences = ["The account interacted with a known mixer service.",
                 "Funds were collected from 12 distinct source accounts "
                 "in a fan-in pattern."]
    data = single_node_world({"n0": sentences}, {"n0": 1})
    cfg = TrainConfig(hidden_dim=16, seed=0)
    params = DualPathParams.init(data.embedder.dim, 16, seed=0)
    policy = SplitPolicy()
    opt = AdamW(lr=0.01)
    rng = np.random.default_rng(0)
    loss_d = None
    for _ in range(50):
        stage2_epoch(["n0"], policy, params, cfg, data, opt, rng)
    split = split_summary(data.summaries["n0"], policy, mode="deterministic")
    a_hat, base, idx = data.prepared("n0")
    x_disc = assemble_features(base, idx, data.embedder.embed(split.disc_text))
    x_resi = assemble_features(
        base, idx, data.embedder.embed(split.resi_text)
        if split.resi_text.strip() else None)
    res = forward(params, a_hat, x_disc, x_resi, base, idx, 1,
                  cfg.lambda_resi, cfg.lambda_orth)
    assert res.loss_disc < 0.01


def test_stage2_loss_decreases_smoothed(small_corpus):
    graph, data, splits = small_corpus
    cfg = TrainConfig(hidden_dim=32, seed=6)
    params = DualPathParams.init(data.embedder.dim, 32, seed=6)
    policy = SplitPolicy()
    opt = AdamW(lr=cfg.lr_gnn)
    rng = np.random.default_rng(6)
    losses = []
    for _ in range(10):
        stats = stage2_epoch(splits[0], policy, params, cfg, data, opt, rng)
        losses.append(stats["mean_loss"])
    smoothed = [np.mean(losses[i:i + 3]) for i in range(8)]
    assert all(smoothed[i + 1] <= smoothed[i] + 1e-9 for i in range(7))


def exact_expected_reward_grad(policy, data, node, params, cfg):
    """Enumerate all 2^n splits: E[R] and its gradient w.r.t. the policy."""
    summary = data.summaries[node]
    sentences = summary.sentences
    n = len(sentences)
    feats = featurize_sentences(sentences)
    probs = policy.inclusion_probs(sentences)
    a_hat, base, idx = data.prepared(node)
    y = data.labels[node]

    grad = np.zeros_like(policy.weights)
    expected = 0.0
    for mask in itertools.product([0, 1], repeat=n):
        sel = np.array(mask, dtype=bool)
        prob = float(np.prod(np.where(sel, probs, 1 - probs)))
        effective = sel if sel.any() else np.eye(n, dtype=bool)[int(np.argmax(probs))]
        disc = " ".join(s for s, k in zip(sentences, effective) if k)
        resi = " ".join(s for s, k in zip(sentences, effective) if not k)
        x_disc = assemble_features(base, idx, data.embedder.embed(disc))
        x_resi = assemble_features(base, idx, data.embedder.embed(resi)
                                   if resi.strip() else None)
        res = forward(params, a_hat, x_disc, x_resi, base, idx, y,
                      cfg.lambda_resi, cfg.lambda_orth)
        reward = math.exp(-res.loss)
        score = feats.T @ ((sel - probs) / policy.temperature)
        expected += prob * reward
        grad += prob * reward * score
    return expected, grad


def test_stage1_keyword_weight_increases():
    data = keyword_world()
    nodes = sorted(data.labels)
    cfg = TrainConfig(hidden_dim=16, seed=0)
    params = pretrain_encoder(data, nodes, cfg, epochs=40)

    policy = SplitPolicy()
    mixer_idx = FEATURE_NAMES.index("mixer")

    # enumeration oracle: including the keyword raises expected reward
    fraud_node = "fraud0"
    _, grad = exact_expected_reward_grad(policy, data, fraud_node, params, cfg)
    assert grad[mixer_idx] > 0

    w_before = policy.weights[mixer_idx]
    opt = AdamW(lr=cfg.lr_policy)
    baseline = BaselineState(momentum=cfg.ema_momentum)
    rng = np.random.default_rng(1)
    for _ in range(12):  # 12 epochs x 16 accounts ~ 200 steps
        baseline, _ = stage1_epoch(nodes, policy, params, baseline, cfg, data,
                                   opt, rng)
    assert policy.weights[mixer_idx] > w_before
