"""Binary classification metrics with fraud as the positive class.

AUC uses the rank statistic with half credit for ties (Mann-Whitney); KS is
the maximum absolute gap between the two classes' empirical score CDFs,
evaluated at every distinct score.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import DataError

HIST_BINS = 10


@dataclass
class ScoreSet:
    """(account, true label, predicted fraud probability) triples."""

    entries: list[tuple[str, int, float]]
    threshold: float = 0.5

    def __post_init__(self):
        for acct, label, prob in self.entries:
            if label not in (0, 1):
                raise DataError(f"label for {acct!r} must be 0 or 1")
            if not 0.0 <= prob <= 1.0:
                raise DataError(f"probability for {acct!r} out of [0, 1]: {prob}")

    def labels(self) -> np.ndarray:
        return np.array([e[1] for e in self.entries], dtype=np.int64)

    def probs(self) -> np.ndarray:
        return np.array([e[2] for e in self.entries], dtype=np.float64)


@dataclass
class EvalReport:
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    auc: Optional[float]
    ks: Optional[float]
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    fraud_hist: list[int] = field(default_factory=list)
    benign_hist: list[int] = field(default_factory=list)

    def to_rows(self) -> list[tuple[str, str]]:
        def cell(v):
            return "undefined" if v is None else f"{v:.6f}"
        rows = [("precision", cell(self.precision)), ("recall", cell(self.recall)),
                ("f1", cell(self.f1)), ("auc", cell(self.auc)), ("ks", cell(self.ks)),
                ("tp", str(self.tp)), ("fp", str(self.fp)),
                ("tn", str(self.tn)), ("fn", str(self.fn))]
        return rows


def auc_score(labels: np.ndarray, probs: np.ndarray) -> float:
    """Rank-statistic AUC; tied scores receive midranks (0.5 per tied pair)."""
    labels = np.asarray(labels)
    probs = np.asarray(probs, dtype=np.float64)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both classes present")
    order = np.argsort(probs, kind="mergesort")
    sorted_probs = probs[order]
    ranks = np.empty(len(probs), dtype=np.float64)
    i = 0
    while i < len(sorted_probs):
        j = i
        while j + 1 < len(sorted_probs) and sorted_probs[j + 1] == sorted_probs[i]:
            j += 1
        # midrank of the tie block [i, j], 1-based
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    rank_sum_pos = ranks[labels == 1].sum()
    return float((rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def ks_score(labels: np.ndarray, probs: np.ndarray) -> float:
    """Max gap between the empirical CDFs of fraud and benign scores."""
    labels = np.asarray(labels)
    probs = np.asarray(probs, dtype=np.float64)
    pos = np.sort(probs[labels == 1])
    neg = np.sort(probs[labels == 0])
    if len(pos) == 0 or len(neg) == 0:
        raise DataError("KS needs both classes present")
    cutpoints = np.unique(probs)
    cdf_pos = np.searchsorted(pos, cutpoints, side="right") / len(pos)
    cdf_neg = np.searchsorted(neg, cutpoints, side="right") / len(neg)
    return float(np.max(np.abs(cdf_pos - cdf_neg)))


def compute_metrics(scores: ScoreSet) -> EvalReport:
    """Threshold metrics plus AUC/KS; AUC and KS come back None (flagged
    undefined) when only one class is present."""
    if not scores.entries:
        raise DataError("empty score set")
    labels = scores.labels()
    probs = scores.probs()
    predicted = probs >= scores.threshold

    tp = int(np.sum(predicted & (labels == 1)))
    fp = int(np.sum(predicted & (labels == 0)))
    tn = int(np.sum(~predicted & (labels == 0)))
    fn = int(np.sum(~predicted & (labels == 1)))

    precision = tp / (tp + fp) if (tp + fp) > 0 else None
    recall = tp / (tp + fn) if (tp + fn) > 0 else None
    if precision is not None and recall is not None and (precision + recall) > 0:
        f1 = 2 * precision * recall / (precision + recall)
    elif precision is not None and recall is not None:
        f1 = 0.0
    else:
        f1 = None

    both_classes = 0 < int((labels == 1).sum()) < len(labels)
    auc = auc_score(labels, probs) if both_classes else None
    ks = ks_score(labels, probs) if both_classes else None

    edges = np.linspace(0.0, 1.0, HIST_BINS + 1)
    fraud_hist = np.histogram(probs[labels == 1], bins=edges)[0]
    benign_hist = np.histogram(probs[labels == 0], bins=edges)[0]

    return EvalReport(precision=precision, recall=recall, f1=f1, auc=auc, ks=ks,
                      tp=tp, fp=fp, tn=tn, fn=fn,
                      fraud_hist=[int(x) for x in fraud_hist],
                      benign_hist=[int(x) for x in benign_hist])


def read_scores_csv(path: str) -> ScoreSet:
    import csv

    entries = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().lower() == "account":
                continue
            entries.append((row[0].strip(), int(row[1]), float(row[2])))
    return ScoreSet(entries)


def write_scores_csv(entries: Sequence[tuple[str, int, float]], path: str) -> None:
    from .utils import atomic_write_text

    lines = ["account,label,probability"]
    lines += [f"{a},{l},{p:.10f}" for a, l, p in entries]
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_report_csv(report: EvalReport, path: str) -> None:
    from .utils import atomic_write_text

    lines = ["metric,value"]
    lines += [f"{k},{v}" for k, v in report.to_rows()]
    atomic_write_text(path, "\n".join(lines) + "\n")
