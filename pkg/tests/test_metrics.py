"""Confusion matrices and scores against a brute-force recount."""

import numpy as np
import pytest

from core.labels import build_spaces
from core.metrics import binary_counts, confusion, joint_eval, scores, target_eval


def brute_force(truth, predicted, k):
    """Per-class TP/FP/TN/FN and the metric formulas, one sample at a time."""
    present = sorted(set(truth))
    per_class = {}
    for c in range(k):
        tp = fp = tn = fn = 0
        for t, p in zip(truth, predicted):
            if t == c and p == c:
                tp += 1
            elif t != c and p == c:
                fp += 1
            elif t == c and p != c:
                fn += 1
            else:
                tn += 1
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        fpr = fp / (fp + tn) if fp + tn else 0.0
        per_class[c] = (precision, recall, f1, fpr)

    def macro(i):
        return sum(per_class[c][i] for c in present) / len(present) if present else 0.0

    accuracy = sum(1 for t, p in zip(truth, predicted) if t == p) / len(truth)
    return accuracy, macro(0), macro(1), macro(2), macro(3)


def test_confusion_examples():
    np.testing.assert_array_equal(confusion([0, 1], [0, 1], 2).counts, [[1, 0], [0, 1]])
    np.testing.assert_array_equal(confusion([0, 0], [1, 1], 2).counts, [[0, 2], [0, 0]])


def test_confusion_rejects_length_mismatch():
    with pytest.raises(ValueError):
        confusion([0, 1], [0], 2)


def test_confusion_matches_recount(rng):
    truth = rng.integers(0, 5, 100)
    predicted = rng.integers(0, 5, 100)
    counts = confusion(truth, predicted, 5).counts
    for i in range(5):
        for j in range(5):
            assert counts[i, j] == sum(1 for t, p in zip(truth, predicted) if t == i and p == j)
    assert counts.sum() == 100


def test_binary_counts_examples():
    perfect = binary_counts(confusion([0, 0, 0, 1, 1], [0, 0, 0, 1, 1], 2))
    assert perfect.for_class(0) == {"tp": 3, "fp": 0, "tn": 2, "fn": 0}

    mixed = binary_counts(confusion([0, 0, 1, 1], [0, 1, 0, 1], 2))
    for c in range(2):
        assert mixed.for_class(c) == {"tp": 1, "fp": 1, "tn": 1, "fn": 1}


def test_binary_count_identities(rng):
    cm = confusion(rng.integers(0, 4, 60), rng.integers(0, 4, 60), 4)
    counts = binary_counts(cm)
    np.testing.assert_array_equal(counts.tp + counts.fn, cm.counts.sum(axis=1))
    np.testing.assert_array_equal(counts.tp + counts.fp, cm.counts.sum(axis=0))
    np.testing.assert_array_equal(counts.tp + counts.fp + counts.tn + counts.fn, np.full(4, 60))


def test_scores_direct_substitution():
    result = scores(binary_counts(confusion([0, 0, 1, 1], [0, 1, 0, 1], 2)))
    assert (result.macro_precision, result.macro_recall, result.macro_f1, result.macro_fpr) == (0.5, 0.5, 0.5, 0.5)
    assert result.accuracy == 0.5


def test_perfect_predictions():
    metrics = target_eval([0, 1, 2, 2], [0, 1, 2, 2], ["a", "b", "c"])
    assert (metrics.accuracy, metrics.f1, metrics.fpr) == (1.0, 1.0, 0.0)


def test_zero_division_yields_zero():
    result = scores(binary_counts(confusion([0, 0], [1, 1], 3)))
    assert result.precision[2] == 0.0
    assert result.macro_f1 == 0.0


@pytest.mark.parametrize("trial", range(200))
def test_metrics_match_brute_force_oracle(trial):
    rng = np.random.default_rng(trial)
    k = int(rng.integers(2, 21))
    n = int(rng.integers(1, 1001))
    truth = rng.integers(0, k, n).tolist()
    predicted = np.where(rng.random(n) < 0.6, truth, rng.integers(0, k, n)).tolist()

    metrics = target_eval(truth, predicted, [str(i) for i in range(k)])
    accuracy, precision, recall, f1, fpr = brute_force(truth, predicted, k)
    assert metrics.accuracy == pytest.approx(accuracy, abs=1e-12)
    assert metrics.precision == pytest.approx(precision, abs=1e-12)
    assert metrics.recall == pytest.approx(recall, abs=1e-12)
    assert metrics.f1 == pytest.approx(f1, abs=1e-12)
    assert metrics.fpr == pytest.approx(fpr, abs=1e-12)


def test_macro_f1_is_permutation_invariant(rng):
    truth = rng.integers(0, 6, 300)
    predicted = np.where(rng.random(300) < 0.5, truth, rng.integers(0, 6, 300))
    relabel = rng.permutation(6)
    names = [str(i) for i in range(6)]
    original = target_eval(truth, predicted, names)
    permuted = target_eval(relabel[truth], relabel[predicted], names)
    assert permuted.f1 == pytest.approx(original.f1, abs=1e-12)
    assert permuted.fpr == pytest.approx(original.fpr, abs=1e-12)


def test_micro_f1_equals_accuracy_for_single_label():
    metrics = target_eval([0, 1, 2, 1], [0, 2, 2, 1], ["a", "b", "c"])
    assert metrics.micro_f1 == pytest.approx(metrics.accuracy)


@pytest.fixture
def pair_space():
    space, _ = build_spaces([
        ("1", "apple", "healthy"), ("2", "apple", "scab"),
        ("3", "grape", "healthy"), ("4", "grape", "rot"),
    ])
    return space


def test_both_requires_plant_and_disease(pair_space):
    # truth (apple, scab); plant right, disease wrong
    plant, disease = pair_space.plant.ordinal("apple"), pair_space.disease.ordinal("scab")
    wrong = pair_space.disease.ordinal("healthy")
    report = joint_eval([plant], [disease], [plant], [wrong], pair_space)
    assert report.plant.accuracy == 1.0
    assert report.disease.accuracy == 0.0
    assert report.both.accuracy == 0.0


def test_unknown_pair_counts_as_wrong(pair_space):
    apple, grape = pair_space.plant.ordinal("apple"), pair_space.plant.ordinal("grape")
    scab = pair_space.disease.ordinal("scab")
    report = joint_eval([apple, grape], [scab, scab - 1], [grape, grape], [scab, scab - 1], pair_space, per_class=True)
    assert report.both.accuracy <= 0.5
    assert len(report.both.per_class) == len(pair_space)


def test_all_targets_perfect(pair_space):
    plants = [p for p, _ in pair_space.pairs]
    diseases = [d for _, d in pair_space.pairs]
    report = joint_eval(plants, diseases, plants, diseases, pair_space)
    assert report.plant.f1 == report.disease.f1 == report.both.f1 == 1.0


def test_joint_eval_rejects_misaligned(pair_space):
    with pytest.raises(ValueError):
        joint_eval([0, 1], [0], [0, 1], [0, 1], pair_space)


@pytest.mark.parametrize("trial", range(100))
def test_both_accuracy_bounded_by_targets(trial, pair_space):
    rng = np.random.default_rng(1000 + trial)
    n = 50
    truth = [pair_space.pairs[i] for i in rng.integers(0, len(pair_space), n)]
    plants, diseases = [t[0] for t in truth], [t[1] for t in truth]
    predicted_plants = rng.integers(0, len(pair_space.plant), n)
    predicted_diseases = rng.integers(0, len(pair_space.disease), n)
    report = joint_eval(plants, diseases, predicted_plants, predicted_diseases, pair_space)
    assert report.both.accuracy <= min(report.plant.accuracy, report.disease.accuracy)
    for target in (report.plant, report.disease, report.both):
        for value in (target.accuracy, target.precision, target.recall, target.f1, target.fpr):
            assert 0.0 <= value <= 1.0
