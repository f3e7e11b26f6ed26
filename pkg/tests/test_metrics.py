from __future__ import annotations

import numpy as np
import pytest

from oracles import mann_whitney_auc
from restaware.metrics import (
    EmptyInput,
    LengthMismatch,
    accuracy_from_counts,
    auc_trapezoid,
    compute_metrics,
    confusion_matrix,
    f1_from_counts,
    format_confusion_table,
    precision_from_counts,
    recall_from_counts,
    roc_curve,
)


def binary_example():
    # TP=8, TN=5, FP=2, FN=1 with class 1 as positive
    y_true = [1] * 8 + [0] * 5 + [0] * 2 + [1] * 1
    y_pred = [1] * 8 + [0] * 5 + [1] * 2 + [0] * 1
    return np.array(y_true), np.array(y_pred)


class TestFormulas:
    def test_hand_computed_counts(self):
        assert accuracy_from_counts(8, 5, 2, 1) == pytest.approx(13 / 16)
        assert precision_from_counts(8, 2) == pytest.approx(0.8)
        assert recall_from_counts(8, 1) == pytest.approx(8 / 9)
        assert f1_from_counts(8, 2, 1) == pytest.approx(16 / 19)

    def test_from_label_vectors(self):
        y_true, y_pred = binary_example()
        m = compute_metrics(y_true, y_pred, n_classes=2)
        assert m.counts(1) == (8, 5, 2, 1)
        assert m.accuracy == pytest.approx(0.8125)
        assert m.precision[1] == pytest.approx(0.8)
        assert m.recall[1] == pytest.approx(0.8889, abs=1e-4)
        assert m.f1[1] == pytest.approx(0.8421, abs=1e-4)

    def test_zero_division_is_zero(self):
        assert precision_from_counts(0, 0) == 0.0
        assert f1_from_counts(0, 0, 0) == 0.0


class TestComputeMetrics:
    def test_perfect(self):
        y = np.arange(40) % 8
        scores = np.eye(8)[y]
        m = compute_metrics(y, y, scores)
        assert m.accuracy == m.macro_f1 == m.macro_auc == 1.0

    def test_perfect_on_subset_of_classes(self):
        y = np.array([0, 2, 2, 5])
        m = compute_metrics(y, y, np.eye(8)[y])
        assert m.macro_f1 == 1.0 and m.macro_auc == 1.0

    def test_uniform_scores_give_half(self):
        y = np.arange(64) % 8
        m = compute_metrics(y, np.zeros(64, dtype=int), np.full((64, 8), 1 / 8))
        assert m.auc == [0.5] * 8

    def test_auc_matches_mann_whitney(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            positive = rng.random(60) < 0.4
            scores = np.round(rng.random(60), 1)  # coarse, to force ties
            fpr, tpr = roc_curve(positive, scores)
            assert auc_trapezoid(fpr, tpr) == pytest.approx(mann_whitney_auc(positive, scores), abs=1e-12)

    def test_confusion_invariants(self):
        rng = np.random.default_rng(0)
        y_true = rng.integers(0, 8, 300)
        y_pred = rng.integers(0, 8, 300)
        m = compute_metrics(y_true, y_pred)
        np.testing.assert_array_equal(m.confusion.sum(axis=1), np.bincount(y_true, minlength=8))
        for c in range(8):
            assert sum(m.counts(c)) == 300

    def test_confusion_rows_are_truth(self):
        cm = confusion_matrix([0, 0, 1], [1, 1, 1], n_classes=2)
        assert cm.tolist() == [[0, 2], [0, 1]]

    def test_errors(self):
        with pytest.raises(LengthMismatch):
            compute_metrics([0, 1], [0])
        with pytest.raises(EmptyInput):
            compute_metrics([], [])

    def test_to_dict_replaces_nan(self):
        m = compute_metrics([0, 0], [0, 0], np.eye(8)[[0, 0]])
        d = m.to_dict()
        assert d["macro_auc"] is None and d["auc"][0] is None


def test_confusion_table_layout():
    table = format_confusion_table(np.array([[1, 2], [3, 4]]), ["prone", "supine"])
    lines = table.splitlines()
    assert len(lines) == 3
    assert lines[1].split() == ["prone", "1", "2"]
