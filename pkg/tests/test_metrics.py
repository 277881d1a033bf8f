import numpy as np
import pytest

from chainfraud.exceptions import DataError
from chainfraud.metrics import ScoreSet, auc_score, compute_metrics, ks_score


def score_set(fraud, benign, threshold=0.5):
    entries = [(f"f{i}", 1, p) for i, p in enumerate(fraud)]
    entries += [(f"b{i}", 0, p) for i, p in enumerate(benign)]
    return ScoreSet(entries, threshold=threshold)


def brute_force_auc(labels, probs):
    """O(n^2) pairwise comparison with half credit for ties."""
    pos = [p for l, p in zip(labels, probs) if l == 1]
    neg = [p for l, p in zip(labels, probs) if l == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def brute_force_ks(labels, probs):
    """Evaluate |F_fraud - F_benign| at every distinct score."""
    pos = [p for l, p in zip(labels, probs) if l == 1]
    neg = [p for l, p in zip(labels, probs) if l == 0]
    best = 0.0
    for x in set(probs):
        cdf_p = sum(1 for p in pos if p <= x) / len(pos)
        cdf_n = sum(1 for q in neg if q <= x) / len(neg)
        best = max(best, abs(cdf_p - cdf_n))
    return best


def test_perfect_separation():
    report = compute_metrics(score_set([0.9, 0.8], [0.1, 0.2]))
    assert report.auc == 1.0
    assert report.ks == 1.0


def test_identical_distributions():
    report = compute_metrics(score_set([0.1, 0.5, 0.9], [0.1, 0.5, 0.9]))
    assert report.ks == 0.0
    assert report.auc == 0.5


def test_worked_ks_example():
    report = compute_metrics(score_set([0.9, 0.8, 0.4], [0.7, 0.3, 0.2]))
    assert report.ks == pytest.approx(2.0 / 3.0, abs=1e-12)


def test_oracle_agreement_random():
    rng = np.random.default_rng(42)
    for trial in range(100):
        n = int(rng.integers(4, 120))
        labels = rng.integers(0, 2, size=n)
        if labels.sum() in (0, n):
            labels[0] = 1
            labels[-1] = 0
        # quantized probs so ties actually occur
        probs = np.round(rng.random(n), 2)
        assert auc_score(labels, probs) == pytest.approx(
            brute_force_auc(labels, probs), abs=1e-12)
        assert ks_score(labels, probs) == pytest.approx(
            brute_force_ks(labels, probs), abs=1e-12)


def test_monotone_transform_invariance():
    rng = np.random.default_rng(7)
    for trial in range(20):
        n = int(rng.integers(6, 80))
        labels = rng.integers(0, 2, size=n)
        if labels.sum() in (0, n):
            labels[0] = 1
            labels[-1] = 0
        probs = rng.random(n)
        cubed = probs ** 3
        assert auc_score(labels, probs) == pytest.approx(
            auc_score(labels, cubed), abs=1e-12)
        assert ks_score(labels, probs) == pytest.approx(
            ks_score(labels, cubed), abs=1e-12)


def test_f1_harmonic_consistency():
    rng = np.random.default_rng(3)
    for trial in range(30):
        n = int(rng.integers(6, 60))
        labels = rng.integers(0, 2, size=n)
        if labels.sum() in (0, n):
            labels[0] = 1
            labels[-1] = 0
        probs = rng.random(n)
        report = compute_metrics(score_set(
            [p for l, p in zip(labels, probs) if l == 1],
            [p for l, p in zip(labels, probs) if l == 0]))
        if report.precision is not None and report.recall is not None \
                and report.precision + report.recall > 0:
            expected = (2 * report.precision * report.recall
                        / (report.precision + report.recall))
            assert report.f1 == pytest.approx(expected, abs=1e-12)


def test_single_class_flagged_undefined():
    report = compute_metrics(ScoreSet([("a", 1, 0.9), ("b", 1, 0.7)]))
    assert report.auc is None and report.ks is None
    assert report.recall is not None


def test_empty_scores_error():
    with pytest.raises(DataError):
        compute_metrics(ScoreSet([]))


def test_threshold_confusion():
    report = compute_metrics(score_set([0.9, 0.4], [0.6, 0.1]))
    assert (report.tp, report.fp, report.tn, report.fn) == (1, 1, 1, 1)
