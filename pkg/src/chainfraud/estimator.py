"""Scikit-learn style front end for the whole detection pipeline.

``FraudAccountDetector.fit`` takes a labeled TransactionGraph, builds the
account subgraphs, generates summaries through the configured backend, runs
the two-stage alternating schedule, and keeps the best-validation
checkpoint. ``predict_proba`` follows the deterministic inference path and
returns sklearn-shaped (n, 2) class probabilities with fraud as column 1.
"""

from __future__ import annotations

from typing import Iterable, Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .exceptions import ConfigError, DataError
from .ingest import TransactionGraph, split_dataset
from .model import TextEmbedder
from .subgraph import SamplingConfig, build_subgraph
from .summary import (MemoryStore, MockSummarizer, RemoteConfig,
                      RemoteSummarizer, generate_summaries)
from .train import (TrainConfig, alternate_train, build_training_data,
                    predict_nodes, subgraph_node_universe)


class FraudAccountDetector(BaseEstimator):
    """Fraud account classifier over a blockchain transaction graph.

    Parameters mirror the pipeline defaults: 2-hop sampling with 10
    neighbors per hop, compression budget 10, a 2x64 dual-path encoder, and
    the 2-outer/10-inner alternating schedule.
    """

    def __init__(self, hops=2, neighbors_per_hop=10, compression_budget=10,
                 structure_weight=2.0, embed_dim=64, hidden_dim=64,
                 outer_epochs=2, inner_epochs=10, lr_policy=5e-6, lr_gnn=1e-3,
                 ema_momentum=0.9, lambda_resi=0.05, lambda_orth=0.3,
                 weight_decay=0.0, early_stop_patience=5,
                 split_ratios=(0.8, 0.1, 0.1), backend="mock",
                 remote_url=None, row_budget=200, seed=0):
        self.hops = hops
        self.neighbors_per_hop = neighbors_per_hop
        self.compression_budget = compression_budget
        self.structure_weight = structure_weight
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.outer_epochs = outer_epochs
        self.inner_epochs = inner_epochs
        self.lr_policy = lr_policy
        self.lr_gnn = lr_gnn
        self.ema_momentum = ema_momentum
        self.lambda_resi = lambda_resi
        self.lambda_orth = lambda_orth
        self.weight_decay = weight_decay
        self.early_stop_patience = early_stop_patience
        self.split_ratios = split_ratios
        self.backend = backend
        self.remote_url = remote_url
        self.row_budget = row_budget
        self.seed = seed

    # -- configuration plumbing ------------------------------------------------

    def _sampling_config(self) -> SamplingConfig:
        return SamplingConfig(hops=self.hops,
                              neighbors_per_hop=self.neighbors_per_hop,
                              compression_budget=self.compression_budget,
                              structure_weight=self.structure_weight)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(outer_epochs=self.outer_epochs,
                           inner_epochs=self.inner_epochs,
                           lr_policy=self.lr_policy, lr_gnn=self.lr_gnn,
                           ema_momentum=self.ema_momentum,
                           lambda_resi=self.lambda_resi,
                           lambda_orth=self.lambda_orth,
                           weight_decay=self.weight_decay, seed=self.seed,
                           early_stop_patience=self.early_stop_patience,
                           hidden_dim=self.hidden_dim)

    def _backend(self):
        if self.backend == "mock":
            return MockSummarizer()
        if self.backend == "remote":
            if not self.remote_url:
                raise ConfigError("remote backend needs remote_url")
            return RemoteSummarizer(RemoteConfig(url=self.remote_url))
        raise ConfigError(f"unknown backend {self.backend!r}")

    # -- estimator API -----------------------------------------------------------

    def fit(self, X: TransactionGraph, y: Optional[dict] = None):
        """Train on a labeled transaction graph.

        ``y`` may carry labels as {account: 0/1} for accounts in the graph;
        labels already attached to the graph are used as-is.
        """
        if not isinstance(X, TransactionGraph):
            raise ConfigError("X must be a TransactionGraph")
        graph = X
        if y:
            for account, label in dict(y).items():
                if account in graph.nodes:
                    existing = graph.labels.get(account)
                    if existing is not None and existing != int(label):
                        raise DataError(f"conflicting labels for {account!r}")
                    graph.labels[account] = int(label)
        if not graph.labels:
            raise DataError("graph carries no labels to train on")

        sampling = self._sampling_config()
        splits = split_dataset(graph.labels, self.split_ratios, self.seed)

        subgraphs = {a: build_subgraph(graph, a, sampling)
                     for a in graph.labeled_nodes()}
        self.store_ = MemoryStore()
        backend = self._backend()
        universe = subgraph_node_universe(subgraphs)
        summaries = generate_summaries(graph, universe, backend, self.store_,
                                       row_budget=self.row_budget)
        embedder = TextEmbedder(dim=self.embed_dim, seed=self.seed)
        data = build_training_data(graph, subgraphs, summaries, embedder)

        result = alternate_train(data, splits, self._train_config())

        self.graph_ = graph
        self.sampling_ = sampling
        self.backend_ = backend
        self.data_ = data
        self.splits_ = splits
        self.params_ = result.params
        self.policy_ = result.policy
        self.history_ = result.log
        self.best_val_f1_ = result.best_val_f1
        self.classes_ = np.array([0, 1])
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("fit the detector before predicting")

    def _ensure_account(self, account: str) -> None:
        """Make subgraph + summaries available for an account of the fitted
        graph that was not a training center."""
        if account in self.data_.subgraphs:
            return
        if account not in self.graph_.nodes:
            raise DataError(f"account {account!r} not present in the graph")
        sub = build_subgraph(self.graph_, account, self.sampling_)
        missing = [n for n in sub.nodes if n not in self.data_.summaries]
        if missing:
            fresh = generate_summaries(self.graph_, missing, self.backend_,
                                       self.store_, row_budget=self.row_budget)
            self.data_.summaries.update(fresh)
        self.data_.subgraphs[account] = sub

    def predict_proba(self, accounts: Optional[Iterable[str]] = None
                      ) -> np.ndarray:
        """(n, 2) array of [P(benign), P(fraud)]; defaults to the held-out
        test split of the fitted graph."""
        self._check_fitted()
        nodes = list(accounts) if accounts is not None else list(self.splits_[2])
        for node in nodes:
            self._ensure_account(node)
        scored = predict_nodes(nodes, self.policy_, self.params_, self.data_)
        fraud = np.array([p for _, p in scored], dtype=np.float64)
        return np.column_stack([1.0 - fraud, fraud])

    def predict(self, accounts: Optional[Iterable[str]] = None) -> np.ndarray:
        return (self.predict_proba(accounts)[:, 1] >= 0.5).astype(np.int64)

    def decision_scores(self, accounts: Optional[Iterable[str]] = None
                        ) -> list[tuple[str, float]]:
        """(account, fraud probability) pairs, same order as the input."""
        self._check_fitted()
        nodes = list(accounts) if accounts is not None else list(self.splits_[2])
        for node in nodes:
            self._ensure_account(node)
        return predict_nodes(nodes, self.policy_, self.params_, self.data_)
