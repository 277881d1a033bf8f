"""Two-stage alternating training.

Stage 1 (outer loop) treats the sentence-selection policy as a REINFORCE
agent: sample a split, run the frozen encoder, convert the tri-view loss to
a reward exp(-L), subtract an EMA baseline, and ascend the sequence
log-probability. Stage 2 (inner loop) freezes the policy, splits
deterministically, and trains the encoder by full backprop with a decoupled
weight-decay adaptive-moment update. Validation F1 after every inner epoch
drives early stopping and best-checkpoint retention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .exceptions import ConfigError, DataError
from .ingest import TransactionGraph
from .metrics import ScoreSet, compute_metrics
from .model import (DualPathParams, TextEmbedder, assemble_features, backward,
                    forward, forward_infer, normalized_adjacency)
from .policy import SplitPolicy, split_logp_grad, split_summary
from .subgraph import Subgraph
from .summary import TransactionSummary
from .utils import stable_json


@dataclass(frozen=True)
class TrainConfig:
    outer_epochs: int = 2
    inner_epochs: int = 10
    lr_policy: float = 5e-6
    lr_gnn: float = 1e-3
    ema_momentum: float = 0.9
    lambda_resi: float = 0.05
    lambda_orth: float = 0.3
    weight_decay: float = 0.0
    seed: int = 0
    early_stop_patience: int = 5
    hidden_dim: int = 64

    def __post_init__(self):
        if self.lr_policy <= 0 or self.lr_gnn <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0.0 <= self.ema_momentum < 1.0:
            raise ConfigError("ema_momentum must lie in [0, 1)")
        if self.lambda_resi < 0 or self.lambda_orth < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.outer_epochs < 0 or self.inner_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")


@dataclass
class BaselineState:
    value: Optional[float] = None
    step: int = 0
    momentum: float = 0.9


def reward_from_loss(loss: float) -> float:
    if not math.isfinite(loss):
        raise DataError(f"loss is not finite: {loss}")
    return math.exp(-loss)


def update_baseline(state: BaselineState, reward: float
                    ) -> tuple[BaselineState, float]:
    """EMA update; the advantage uses the pre-update baseline, initialized
    to the first observed reward (first advantage is exactly zero)."""
    pre = reward if state.value is None else state.value
    advantage = reward - pre
    new_value = state.momentum * pre + (1.0 - state.momentum) * reward
    return BaselineState(new_value, state.step + 1, state.momentum), advantage


def reinforce_objective(advantage: float, logp_disc: float,
                        logp_resi: float) -> float:
    return -advantage * (logp_disc + logp_resi)


class AdamW:
    """Adaptive-moment update with bias correction and decoupled weight
    decay applied to the pre-step parameter value."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray],
             grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self._m:
                self._m[name] = np.zeros_like(p)
                self._v[name] = np.zeros_like(p)
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            p -= self.lr * (m_hat / (np.sqrt(v_hat) + self.eps)
                            + self.weight_decay * p)


# -- training data bundle ------------------------------------------------------

@dataclass
class TrainingData:
    """Everything the trainer needs, precomputed per center account:
    normalized adjacency, base feature rows (each node's full-summary
    embedding), and the center's index."""

    subgraphs: dict[str, Subgraph]
    summaries: dict[str, TransactionSummary]
    labels: dict[str, int]
    embedder: TextEmbedder
    _prepared: dict[str, tuple[np.ndarray, np.ndarray, int]] = field(
        default_factory=dict)

    def prepared(self, center: str) -> tuple[np.ndarray, np.ndarray, int]:
        hit = self._prepared.get(center)
        if hit is not None:
            return hit
        sub = self.subgraphs.get(center)
        if sub is None:
            raise DataError(f"no cached subgraph for account {center!r}")
        a_hat = normalized_adjacency(sub)
        rows = []
        for node in sub.nodes:
            summary = self.summaries.get(node)
            if summary is None:
                raise DataError(
                    f"no cached summary for account {node!r} "
                    f"(subgraph of {center!r})")
            rows.append(self.embedder.embed(summary.text))
        base = np.stack(rows)
        entry = (a_hat, base, sub.index_of(center))
        self._prepared[center] = entry
        return entry

    def summary_of(self, center: str) -> TransactionSummary:
        summary = self.summaries.get(center)
        if summary is None:
            raise DataError(f"no cached summary for account {center!r}")
        return summary

    def label_of(self, center: str) -> int:
        try:
            return self.labels[center]
        except KeyError:
            raise DataError(f"account {center!r} has no label") from None


def _branch_features(data: TrainingData, center: str, split) -> tuple:
    a_hat, base, center_idx = data.prepared(center)
    disc_vec = data.embedder.embed(split.disc_text)
    resi_vec = (data.embedder.embed(split.resi_text)
                if split.resi_text.strip() else None)
    x_disc = assemble_features(base, center_idx, disc_vec)
    x_resi = assemble_features(base, center_idx, resi_vec)
    return a_hat, x_disc, x_resi, base, center_idx


# -- stages ---------------------------------------------------------------------

def stage1_epoch(train_nodes: Iterable[str], policy: SplitPolicy,
                 frozen_params: DualPathParams, baseline: BaselineState,
                 cfg: TrainConfig, data: TrainingData,
                 optimizer: AdamW, rng: np.random.Generator
                 ) -> tuple[BaselineState, dict]:
    """One REINFORCE pass over the training nodes; mutates the policy in
    place, never the encoder parameters."""
    nodes = list(train_nodes)
    order = rng.permutation(len(nodes))
    rewards, losses = [], []
    policy_view = {"w": policy.weights, "b": np.array(policy.bias)}
    for pos in order:
        node = nodes[pos]
        summary = data.summary_of(node)
        split = split_summary(summary, policy, mode="sample", rng=rng)
        a_hat, x_disc, x_resi, base, center_idx = _branch_features(
            data, node, split)
        res = forward(frozen_params, a_hat, x_disc, x_resi, base, center_idx,
                      data.label_of(node), cfg.lambda_resi, cfg.lambda_orth)
        reward = reward_from_loss(res.loss)
        baseline, advantage = update_baseline(baseline, reward)
        glogp_w, glogp_b = split_logp_grad(policy, summary.sentences,
                                           split.selections)
        grads = {"w": -advantage * glogp_w,
                 "b": np.array(-advantage * glogp_b)}
        optimizer.step(policy_view, grads)
        policy.bias = float(policy_view["b"])
        rewards.append(reward)
        losses.append(res.loss)
    stats = {"mean_reward": float(np.mean(rewards)) if rewards else None,
             "mean_loss": float(np.mean(losses)) if losses else None}
    return baseline, stats


def stage2_epoch(train_nodes: Iterable[str], frozen_policy: SplitPolicy,
                 params: DualPathParams, cfg: TrainConfig, data: TrainingData,
                 optimizer: AdamW, rng: np.random.Generator) -> dict:
    """One backprop pass over the training nodes with deterministic splits;
    mutates the encoder parameters in place, never the policy."""
    nodes = list(train_nodes)
    order = rng.permutation(len(nodes))
    losses, correct = [], 0
    for pos in order:
        node = nodes[pos]
        summary = data.summary_of(node)
        split = split_summary(summary, frozen_policy, mode="deterministic")
        a_hat, x_disc, x_resi, base, center_idx = _branch_features(
            data, node, split)
        y = data.label_of(node)
        res = forward(params, a_hat, x_disc, x_resi, base, center_idx, y,
                      cfg.lambda_resi, cfg.lambda_orth)
        grads = backward(params, res)
        optimizer.step(params.arrays, grads)
        losses.append(res.loss)
        correct += int((res.p_disc >= 0.5) == bool(y))
    stats = {"mean_loss": float(np.mean(losses)) if losses else None,
             "train_acc": correct / len(nodes) if nodes else None}
    return stats


def predict_nodes(nodes: Iterable[str], policy: SplitPolicy,
                  params: DualPathParams, data: TrainingData
                  ) -> list[tuple[str, float]]:
    """Deterministic inference path: forensic summary + deterministic
    discriminative split through both branches to the classifier head.
    Labels are not consulted."""
    out = []
    for node in nodes:
        summary = data.summary_of(node)
        split = split_summary(summary, policy, mode="deterministic")
        a_hat, base, center_idx = data.prepared(node)
        disc_vec = data.embedder.embed(split.disc_text)
        x_disc = assemble_features(base, center_idx, disc_vec)
        p = forward_infer(params, a_hat, x_disc, base, center_idx)
        out.append((node, p))
    return out


def validation_f1(nodes: list[str], policy: SplitPolicy,
                  params: DualPathParams, data: TrainingData) -> float:
    scored = [(node, data.label_of(node), p)
              for node, p in predict_nodes(nodes, policy, params, data)]
    report = compute_metrics(ScoreSet(scored))
    return report.f1 if report.f1 is not None else 0.0


# -- alternating schedule --------------------------------------------------------

@dataclass
class TrainResult:
    params: DualPathParams
    policy: SplitPolicy
    log: list[dict]
    best_val_f1: float
    best_epoch: tuple[int, int]
    stopped_early: bool


def alternate_train(data: TrainingData,
                    splits: tuple[list[str], list[str], list[str]],
                    cfg: TrainConfig,
                    params: Optional[DualPathParams] = None,
                    policy: Optional[SplitPolicy] = None) -> TrainResult:
    """outer_epochs x [stage1, inner_epochs x stage2] with validation-F1
    early stopping; returns the best-validation checkpoint."""
    train_nodes, val_nodes, _ = splits
    if not val_nodes:
        raise ConfigError("validation split is empty")
    if not train_nodes:
        raise ConfigError("training split is empty")

    if params is None:
        params = DualPathParams.init(data.embedder.dim, cfg.hidden_dim,
                                     seed=cfg.seed)
    if policy is None:
        policy = SplitPolicy()
    rng = np.random.default_rng(cfg.seed)
    baseline = BaselineState(momentum=cfg.ema_momentum)
    opt_policy = AdamW(lr=cfg.lr_policy)
    opt_gnn = AdamW(lr=cfg.lr_gnn, weight_decay=cfg.weight_decay)

    log: list[dict] = []
    clock = 0
    best_f1 = -1.0
    best_epoch = (0, 0)
    best_params = params.copy()
    best_policy = policy.copy()
    stale = 0
    stopped_early = False

    for outer in range(1, cfg.outer_epochs + 1):
        baseline, s1_stats = stage1_epoch(train_nodes, policy, params,
                                          baseline, cfg, data, opt_policy, rng)
        clock += 1
        log.append({"outer": outer, "inner": 0, "stage": "stage1",
                    "mean_loss": s1_stats["mean_loss"],
                    "mean_reward": s1_stats["mean_reward"],
                    "val_f1": None, "timestamp": clock})
        for inner in range(1, cfg.inner_epochs + 1):
            s2_stats = stage2_epoch(train_nodes, policy, params, cfg, data,
                                    opt_gnn, rng)
            val_f1 = validation_f1(val_nodes, policy, params, data)
            clock += 1
            log.append({"outer": outer, "inner": inner, "stage": "stage2",
                        "mean_loss": s2_stats["mean_loss"],
                        "mean_reward": None, "val_f1": val_f1,
                        "timestamp": clock})
            if val_f1 > best_f1 + 1e-12:
                best_f1 = val_f1
                best_epoch = (outer, inner)
                best_params = params.copy()
                best_policy = policy.copy()
                stale = 0
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    stopped_early = True
                    break
        if stopped_early:
            break

    return TrainResult(params=best_params, policy=best_policy, log=log,
                       best_val_f1=max(best_f1, 0.0), best_epoch=best_epoch,
                       stopped_early=stopped_early)


def write_training_log(log: list[dict], path: str) -> None:
    from .utils import atomic_write_text

    atomic_write_text(path, "".join(stable_json(row) + "\n" for row in log))


# -- assembling TrainingData -----------------------------------------------------

def subgraph_node_universe(subgraphs: dict[str, Subgraph]) -> list[str]:
    """Every account appearing in any cached subgraph, sorted."""
    universe = set()
    for sub in subgraphs.values():
        universe.update(sub.nodes)
    return sorted(universe)


def build_training_data(graph: TransactionGraph,
                        subgraphs: dict[str, Subgraph],
                        summaries: dict[str, TransactionSummary],
                        embedder: TextEmbedder) -> TrainingData:
    return TrainingData(subgraphs=subgraphs, summaries=summaries,
                        labels=dict(graph.labels), embedder=embedder)
