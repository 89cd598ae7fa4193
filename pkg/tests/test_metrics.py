import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import auc_pairs, aupr_sweep
from stemtox.metrics import (DEFAULT_SEEDS, ConfusionCounts, LengthMismatch, NoPositives,
                             SingleClassError, auc_pr, auc_roc, evaluate_scores,
                             metrics_from_counts, repeated_eval, threshold_metrics)


def test_counts_example():
    m = metrics_from_counts(ConfusionCounts(tp=50, tn=40, fp=10, fn=0))
    assert m.accuracy == pytest.approx(0.9)
    assert m.precision == pytest.approx(0.8333, abs=1e-4)
    assert m.recall == 1.0
    assert m.f1 == pytest.approx(0.90909, abs=1e-5)


def test_all_correct():
    y = np.array([0, 1, 1, 0, 1])
    m = threshold_metrics(y.astype(float), y)
    assert (m.accuracy, m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0, 1.0)


def test_no_predicted_positives_gives_zero_precision():
    m = threshold_metrics([0.1, 0.2, 0.3], [0, 1, 1])
    assert m.precision == 0.0 and m.f1 == 0.0


def test_threshold_is_inclusive():
    assert threshold_metrics([0.5], [1]).counts.tp == 1


def test_separated_and_tied_auc():
    assert auc_roc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc_roc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5


def test_aupr_positives_first():
    assert auc_pr([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]) == 1.0


def test_aupr_single_positive_last():
    n = 8
    scores = np.linspace(1, 0, n)
    labels = np.zeros(n, int)
    labels[-1] = 1
    assert auc_pr(scores, labels) == pytest.approx(1 / n)


def test_errors():
    with pytest.raises(SingleClassError):
        auc_roc([0.1, 0.2], [1, 1])
    with pytest.raises(NoPositives):
        auc_pr([0.1, 0.2], [0, 0])
    with pytest.raises(LengthMismatch):
        auc_roc([0.1], [0, 1])


def test_default_seed_list():
    assert DEFAULT_SEEDS == (42, 123, 567, 789, 999, 111, 222, 333, 444, 555)


def test_single_seed_has_zero_std():
    report = repeated_eval(lambda s: evaluate_scores([0.2, 0.7, 0.9], [0, 1, 0], s), [42])
    assert all(v == 0.0 for v in report.std.values())
    assert report.mean["auc"] == 0.5


def test_report_uses_sample_std():
    values = {1: [0.2, 0.9], 2: [0.9, 0.2]}
    report = repeated_eval(lambda s: evaluate_scores(values[s], [0, 1], s), [1, 2])
    assert report.mean["auc"] == 0.5
    assert report.std["auc"] == pytest.approx(np.std([1.0, 0.0], ddof=1))
    assert report.to_csv(per_seed=True).splitlines()[0] == "seed,accuracy,precision,recall,f1,auc,aupr"


@st.composite
def cases(draw):
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    n = int(rng.integers(2, 201))
    y = np.r_[0, 1, rng.integers(0, 2, n - 2)]
    rng.shuffle(y)
    levels = int(rng.choice([3, 10, 1000]))  # coarse levels force ties
    return rng.integers(0, levels, n) / levels, y


@settings(max_examples=150, deadline=None)
@given(cases())
def test_auc_matches_pair_count(case):
    s, y = case
    assert abs(auc_roc(s, y) - auc_pairs(s, y)) <= 1e-12


@settings(max_examples=150, deadline=None)
@given(cases())
def test_aupr_matches_threshold_sweep(case):
    s, y = case
    assert abs(auc_pr(s, y) - aupr_sweep(s, y)) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(cases())
def test_auc_invariant_to_monotone_transform(case):
    s, y = case
    assert auc_roc(np.exp(3 * s) - 2, y) == auc_roc(s, y)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_auc_of_negated_scores_complements(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 100))
    y = np.r_[0, 1, rng.integers(0, 2, n - 2)]
    s = rng.permutation(n).astype(float)  # tie-free
    assert auc_roc(s, y) + auc_roc(-s, y) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_f1_is_harmonic_mean(seed):
    rng = np.random.default_rng(seed)
    m = threshold_metrics(rng.random(50), rng.integers(0, 2, 50))
    expected = 2 * m.precision * m.recall / (m.precision + m.recall) if m.precision + m.recall else 0.0
    assert m.f1 == pytest.approx(expected)
