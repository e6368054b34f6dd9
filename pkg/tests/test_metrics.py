import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deatt.metrics import (
    PredictionSet,
    UndefinedMetricError,
    auc,
    auc_pairwise,
    gauc,
    logloss,
)


def test_hand_auc():
    # pairs (pos, neg): (0.8,0.1)+ (0.8,0.5)+ (0.4,0.1)+ (0.4,0.5)- -> 3/4
    assert auc([0.8, 0.4, 0.1, 0.5], [1, 1, 0, 0]) == 0.75


def test_ties_count_half():
    assert auc([0.5, 0.5], [1, 0]) == 0.5
    assert auc([0.3, 0.3, 0.9], [1, 0, 1]) == 0.75


def test_perfect_and_inverted():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0


def test_single_class_undefined():
    with pytest.raises(UndefinedMetricError):
        auc([0.1, 0.2], [1, 1])


def test_bad_labels():
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [0, 2])


def test_rank_auc_equals_pair_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(300):
        n = int(rng.integers(2, 60))
        y = rng.integers(0, 2, size=n)
        if y.min() == y.max():
            y[0] = 1 - y[0]
        # coarse scores force ties
        s = rng.integers(0, 5, size=n) / 4.0
        assert auc(s, y) == auc_pairwise(s, y)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 1)), min_size=2, max_size=40))
def test_rank_auc_property(rows):
    s = np.array([r[0] for r in rows], dtype=float)
    y = np.array([r[1] for r in rows])
    if y.min() == y.max():
        return
    assert auc(s, y) == pytest.approx(auc_pairwise(s, y), abs=1e-12)
    # strictly monotone transform leaves AUC unchanged
    assert auc(np.exp(s) * 3 - 1, y) == pytest.approx(auc(s, y), abs=1e-12)


def test_gauc_single_session_equals_auc():
    rng = np.random.default_rng(1)
    s, y = rng.random(50), rng.integers(0, 2, 50)
    assert gauc(PredictionSet(s, y, np.zeros(50))) == auc(s, y)


def test_gauc_hand_case():
    # session 0: AUC 0.75 over 4 logs, session 1: AUC 0.5 over 4 logs
    scores = [0.8, 0.4, 0.1, 0.5, 0.6, 0.2, 0.6, 0.2]
    labels = [1, 1, 0, 0, 1, 1, 0, 0]
    sessions = [0, 0, 0, 0, 1, 1, 1, 1]
    assert auc(scores[4:], labels[4:]) == 0.5
    assert gauc(PredictionSet(scores, labels, sessions)) == 0.625


def test_gauc_skips_single_class_sessions():
    scores = [0.9, 0.1, 0.3, 0.7]
    labels = [1, 0, 1, 1]
    assert gauc(PredictionSet(scores, labels, [0, 0, 1, 1])) == 1.0
    with pytest.raises(UndefinedMetricError):
        gauc(PredictionSet([0.1, 0.2], [1, 0], [0, 1]))


def test_gauc_weights_by_log_count():
    # session a: 2 logs AUC 1; session b: 6 logs AUC 0
    scores = [0.9, 0.1] + [0.1, 0.2, 0.3, 0.7, 0.8, 0.9]
    labels = [1, 0] + [1, 1, 1, 0, 0, 0]
    assert gauc(PredictionSet(scores, labels, [5, 5, 2, 2, 2, 2, 2, 2])) == 0.25


def test_prediction_set_lengths():
    with pytest.raises(ValueError):
        PredictionSet([0.1], [1, 0], [0, 0])


def test_logloss_values():
    assert logloss([0.5, 0.5], [1, 0]) == pytest.approx(np.log(2))
    assert np.isfinite(logloss([0.0, 1.0], [1, 0]))
    assert logloss([1.0, 0.0], [1, 0]) < 1e-11
