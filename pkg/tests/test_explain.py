import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stemtox.explain import (TooManyFeatures, make_background, rank_classifiers, shap_exact,
                             shap_sampled, summarize)
from stemtox.stacker import MetaNet, init_meta, meta_forward


def nonlinear(Z):
    """Uses features 0-2 with interactions; feature 3 is a dummy."""
    return np.tanh(Z[:, 0] * Z[:, 1]) + Z[:, 2] ** 2 - 0.5 * Z[:, 0]


def test_dummy_feature_gets_zero():
    rng = np.random.default_rng(0)
    res = shap_exact(nonlinear, rng.normal(size=(3, 4)), rng.normal(size=(20, 4)))
    assert np.abs(res.phi[:, 3]).max() == 0.0


def test_exchangeable_features_share_credit():
    rng = np.random.default_rng(1)
    model = lambda Z: Z[:, 0] * Z[:, 1] + np.sin(Z[:, 0] + Z[:, 1])
    x = np.array([[0.7, 0.7, 2.0]])
    bg = rng.normal(size=(15, 3))
    bg[:, 1] = bg[:, 0]
    phi = shap_exact(model, x, bg).phi[0]
    assert phi[0] == pytest.approx(phi[1], abs=1e-12)


def test_linear_closed_form():
    rng = np.random.default_rng(2)
    w, b = rng.normal(size=5), 0.3
    x, bg = rng.normal(size=(4, 5)), rng.normal(size=(30, 5))
    res = shap_exact(lambda Z: Z @ w + b, x, bg)
    assert np.allclose(res.phi, w * (x - bg.mean(axis=0)), atol=1e-6)


def test_efficiency_exact():
    rng = np.random.default_rng(3)
    res = shap_exact(nonlinear, rng.normal(size=(5, 4)), rng.normal(size=(25, 4)))
    assert np.abs(res.phi.sum(axis=1) + res.base_value - res.output).max() <= 1e-9


def test_sampled_agrees_with_exact():
    rng = np.random.default_rng(4)
    x, bg = rng.normal(size=(1, 4)), rng.normal(size=(20, 4))
    exact = shap_exact(nonlinear, x, bg).phi[0]
    est = shap_sampled(nonlinear, x, bg, 2000, seed=0)
    # a dummy feature has zero spread, hence the small additive slack
    assert (np.abs(est.phi[0] - exact) <= 3 * est.std_err[0] + 1e-12).all()


def test_sampled_is_seeded():
    rng = np.random.default_rng(5)
    x, bg = rng.normal(size=(2, 4)), rng.normal(size=(10, 4))
    a = shap_sampled(nonlinear, x, bg, 100, seed=9)
    b = shap_sampled(nonlinear, x, bg, 100, seed=9)
    assert np.array_equal(a.phi, b.phi)


def test_sampled_efficiency_per_draw():
    rng = np.random.default_rng(6)
    bg = rng.normal(size=(1, 4))  # one reference row makes every draw exact in sum
    res = shap_sampled(nonlinear, rng.normal(size=(3, 4)), bg, 50, seed=0)
    assert np.abs(res.phi.sum(axis=1) + res.base_value - res.output).max() <= 1e-9


def test_exact_feature_limit():
    with pytest.raises(TooManyFeatures):
        shap_exact(lambda Z: Z.sum(axis=1), np.zeros((1, 17)), np.zeros((2, 17)))


def test_background_row_order_irrelevant():
    rng = np.random.default_rng(7)
    x, bg = rng.normal(size=(2, 4)), rng.normal(size=(12, 4))
    a = shap_exact(nonlinear, x, bg).phi
    b = shap_exact(nonlinear, x, bg[rng.permutation(12)]).phi
    assert np.allclose(a, b, atol=1e-12)


def test_null_player_ignores_its_background_column():
    rng = np.random.default_rng(8)
    x, bg = rng.normal(size=(2, 4)), rng.normal(size=(12, 4))
    shuffled = bg.copy()
    shuffled[:, 3] = rng.permutation(shuffled[:, 3])
    a = shap_exact(nonlinear, x, bg).phi
    b = shap_exact(nonlinear, x, shuffled).phi
    assert np.array_equal(a[:, 3], b[:, 3]) and np.allclose(a, b, atol=1e-12)


def test_background_subsample():
    X = np.arange(600.0).reshape(300, 2)
    bg = make_background(X, seed=0, max_rows=50)
    assert len(bg) == 50 and (np.diff(bg[:, 0]) > 0).all()
    assert np.array_equal(bg, make_background(X, seed=0, max_rows=50))
    assert len(make_background(X[:10], seed=0)) == 10


NAMES = ["svm", "rf", "extratrees", "histgbdt", "obliviousgbdt"]


def test_ranking_puts_the_used_input_first():
    net = init_meta(5, seed=0, hidden=8)
    net.W1[[0, 1, 3, 4]] = 0.0  # only the extratrees column reaches the hidden layer
    rng = np.random.default_rng(0)
    ranking = rank_classifiers(lambda Z: meta_forward(net, Z), rng.random((10, 5)),
                               rng.random((30, 5)), NAMES)
    assert [name for name, _ in ranking][0] == "extratrees"
    assert len(ranking) == 5 and {n for n, _ in ranking} == set(NAMES)
    assert all(score == 0.0 for name, score in ranking if name != "extratrees")


def test_identical_columns_score_equally():
    W1 = np.random.default_rng(1).normal(size=(5, 6))
    W1[1] = W1[0]
    net = MetaNet(W1, np.zeros(6), np.ones((6, 1)), np.zeros(1))
    rng = np.random.default_rng(2)
    samples, bg = rng.random((8, 5)), rng.random((20, 5))
    samples[:, 1], bg[:, 1] = samples[:, 0], bg[:, 0]
    scores = dict(rank_classifiers(lambda Z: meta_forward(net, Z), samples, bg, NAMES))
    assert scores["svm"] == pytest.approx(scores["rf"], abs=1e-9)


def test_summary_sorted_descending():
    rng = np.random.default_rng(3)
    res = shap_exact(nonlinear, rng.normal(size=(4, 4)), rng.normal(size=(10, 4)))
    scores = [s for _, s in summarize(res)]
    assert scores == sorted(scores, reverse=True)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_axioms_on_random_meta_nets(seed, M):
    rng = np.random.default_rng(seed)
    net = init_meta(M + 1, seed, hidden=5)
    net.W1[M] = 0.0  # last input is a null player
    f = lambda Z: meta_forward(net, Z)
    x, bg = rng.random((2, M + 1)), rng.random((int(rng.integers(1, 20)), M + 1))
    res = shap_exact(f, x, bg)
    assert np.abs(res.phi.sum(axis=1) + res.base_value - res.output).max() <= 1e-9
    assert (res.phi[:, M] == 0).all()
