import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imgbk.metrics import (
    accuracy,
    auc_ovr_macro,
    binary_auc,
    confusion_matrix,
    macro_f1,
    per_class_f1,
    report,
    softmax_rows,
)


def auc_pairs(scores, positive):
    """Fraction of (positive, negative) pairs ranked correctly; ties count half."""
    pos = [s for s, p in zip(scores, positive) if p]
    neg = [s for s, p in zip(scores, positive) if not p]
    win = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in itertools.product(pos, neg))
    return win / (len(pos) * len(neg))


def test_accuracy_and_confusion():
    pred, truth = [0, 1, 1, 2], [0, 1, 2, 2]
    assert accuracy(pred, truth) == 0.75
    assert confusion_matrix(pred, truth, 3).tolist() == [[1, 0, 0], [0, 1, 0], [0, 1, 1]]


def test_majority_predictor():
    truth = np.array([0] * 90 + [1] * 10)
    pred = np.zeros(100, dtype=int)
    assert accuracy(pred, truth) == 0.9
    # class 0: F1 = 180/190, class 1: 0
    assert macro_f1(pred, truth, 2) == pytest.approx(0.47368421052631576, abs=1e-12)


def test_absent_class_scores_zero():
    assert per_class_f1([0, 0], [0, 0], 2).tolist() == [1.0, 0.0]


def test_perfect_predictor():
    truth = np.array([0, 1, 2, 1, 0])
    logits = np.eye(3)[truth] * 5
    r = report(logits, truth, 3)
    assert (r.accuracy, r.macro_f1, r.auc_ovr_macro) == (1.0, 1.0, 1.0)


def test_auc_one_inversion():
    assert binary_auc([0.1, 0.4, 0.35, 0.8], [False, False, True, True]) == 0.75


def test_auc_ties_and_inverse():
    assert binary_auc([0.5, 0.5, 0.5], [True, False, False]) == 0.5
    assert binary_auc([0.9, 0.1], [False, True]) == 0.0


@settings(max_examples=100, deadline=None)
@given(
    scores=st.lists(st.integers(0, 6), min_size=2, max_size=25),
    flags=st.lists(st.booleans(), min_size=2, max_size=25),
)
def test_auc_matches_pair_count(scores, flags):
    k = min(len(scores), len(flags))
    scores, flags = [s / 6 for s in scores[:k]], flags[:k]
    if all(flags) or not any(flags):
        return
    assert binary_auc(scores, flags) == pytest.approx(auc_pairs(scores, flags), abs=1e-12)


def test_auc_ovr_skips_missing_class():
    scores = softmax_rows(np.array([[2.0, 0, 0], [0, 2.0, 0], [1.0, 0, 0]]))
    with pytest.warns(RuntimeWarning, match=r"\[2\]"):
        v = auc_ovr_macro(scores, np.array([0, 1, 0]))
    assert v == 1.0


def test_auc_rejects_unnormalised():
    with pytest.raises(ValueError):
        auc_ovr_macro(np.ones((2, 2)), np.array([0, 1]))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 40))
def test_metrics_in_unit_interval(seed, n):
    rng = np.random.default_rng(seed)
    truth = rng.integers(0, 3, size=n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            r = report(rng.normal(size=(n, 3)), truth, 3)
        except ValueError:
            return
    for v in (r.accuracy, r.macro_f1, r.auc_ovr_macro):
        assert 0.0 <= v <= 1.0


def test_length_mismatch():
    with pytest.raises(ValueError):
        accuracy([0, 1], [0])
    with pytest.raises(ValueError):
        accuracy([], [])
