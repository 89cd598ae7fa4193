import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import central_differences, relative_error
from stemtox.learners import LearnerSpec
from stemtox.metrics import auc_roc
from stemtox.stacker import (MetaConfig, MetaNet, ShapeMismatch, StackingFitError, TooFewSamples,
                             build_meta_features, init_meta, make_folds, meta_forward,
                             meta_loss_and_grads, train_meta)


class MeanModel:
    """Stub learner: predicts its training-label mean, shifted by the row's first feature."""

    def __init__(self, X, y):
        self.rate = float(np.mean(y))
        self.rows = len(y)


def fit_mean(spec, X, y, seed):
    return MeanModel(X, y)


def predict_mean(model, X):
    return np.full(len(X), model.rate) + 0.001 * X[:, 0]


def test_fold_sizes():
    assert make_folds(np.arange(100) % 2, 0).sizes.tolist() == [20] * 5
    assert sorted(make_folds(np.arange(101) % 2, 0).sizes.tolist()) == [20, 20, 20, 20, 21]
    with pytest.raises(TooFewSamples):
        make_folds([0, 1, 0], 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(5, 300), st.floats(0.05, 0.95))
def test_folds_are_stratified(seed, n, rate):
    y = (np.random.default_rng(seed).random(n) < rate).astype(int)
    plan = make_folds(y, seed)
    sizes = plan.sizes
    pos = np.bincount(plan.fold_ids[y == 1], minlength=5)
    assert sizes.max() - sizes.min() <= 1 and pos.max() - pos.min() <= 1
    assert np.array_equal(plan.fold_ids, make_folds(y, seed).fold_ids)


def test_constant_predictor_fills_columns():
    X = np.zeros((30, 2))
    y = np.arange(30) % 2
    meta = build_meta_features([LearnerSpec("svm")], X, y, np.zeros((7, 2)), make_folds(y, 0),
                               fit_fn=lambda *a: None, predict_fn=lambda m, X: np.full(len(X), 0.7))
    assert (meta.train == 0.7).all() and (meta.test == 0.7).all()


def test_width_equals_learner_count():
    rng = np.random.default_rng(0)
    X, y = rng.normal(size=(40, 3)), np.arange(40) % 2
    specs = [LearnerSpec(k) for k in ("svm", "rf", "extratrees", "histgbdt", "obliviousgbdt")]
    meta = build_meta_features(specs, X, y, X[:6], make_folds(y, 0),
                               fit_fn=fit_mean, predict_fn=predict_mean)
    assert meta.train.shape == (40, 5) and meta.test.shape == (6, 5)
    assert meta.names == [s.kind for s in specs]


def test_test_column_is_mean_of_fold_models():
    rng = np.random.default_rng(1)
    X, y = rng.normal(size=(53, 2)), rng.integers(0, 2, 53)
    Xt = rng.normal(size=(9, 2))
    meta = build_meta_features([LearnerSpec("rf")], X, y, Xt, make_folds(y, 3),
                               fit_fn=fit_mean, predict_fn=predict_mean)
    folds = meta.models["rf"]
    assert len(folds) == 5
    expected = np.mean([predict_mean(m, Xt) for m in folds], axis=0)
    assert np.array_equal(meta.test[:, 0], expected)


def test_held_out_rows_never_fit():
    rng = np.random.default_rng(2)
    X, y = rng.normal(size=(60, 2)), rng.integers(0, 2, 60)
    plan = make_folds(y, 0)
    meta = build_meta_features([LearnerSpec("svm"), LearnerSpec("rf")], X, y, X[:3], plan,
                               fit_fn=fit_mean, predict_fn=predict_mean)
    assert len(meta.audit) == 10
    for rec in meta.audit:
        assert not set(rec.train_rows) & set(rec.predicted_rows)
        assert set(rec.train_rows) | set(rec.predicted_rows) == set(range(60))
        # the stub's prediction depends only on the rows it was fit on
        assert meta.train[rec.predicted_rows[0], meta.names.index(rec.kind)] == pytest.approx(
            y[list(rec.train_rows)].mean() + 0.001 * X[rec.predicted_rows[0], 0])


def test_unique_id_feature_cannot_leak_labels():
    rng = np.random.default_rng(5)
    n = 200
    X = np.arange(n, dtype=float)[:, None]
    y = rng.permutation(np.arange(n) % 2)
    meta = build_meta_features([LearnerSpec("rf", {"n_estimators": 30})], X, y, X[:5],
                               make_folds(y, 0), seed=1)
    assert auc_roc(meta.train[:, 0], y) < 0.75


def test_parallel_matches_serial():
    rng = np.random.default_rng(3)
    X, y = rng.normal(size=(50, 4)), np.arange(50) % 2
    specs = [LearnerSpec("rf", {"n_estimators": 5}), LearnerSpec("svm")]
    a = build_meta_features(specs, X, y, X[:8], make_folds(y, 0), seed=4)
    b = build_meta_features(specs, X, y, X[:8], make_folds(y, 0), seed=4, n_jobs=4)
    assert np.array_equal(a.train, b.train) and np.array_equal(a.test, b.test)


def test_fit_failure_is_wrapped():
    def boom(spec, X, y, seed):
        raise RuntimeError("nope")
    y = np.arange(10) % 2
    with pytest.raises(StackingFitError) as info:
        build_meta_features([LearnerSpec("svm")], np.zeros((10, 1)), y, np.zeros((2, 1)),
                            make_folds(y, 0), fit_fn=boom)
    assert info.value.kind == "svm" and info.value.fold == 0


def test_zero_weights_give_one_half():
    net = MetaNet(np.zeros((3, 4)), np.zeros(4), np.zeros((4, 1)), np.zeros(1))
    assert meta_forward(net, [0.2, 0.9, 0.4]) == 0.5


def test_dead_hidden_layer_gives_output_bias():
    net = MetaNet(-np.ones((2, 3)), -np.ones(3), np.ones((3, 1)), np.array([0.8]))
    assert meta_forward(net, [0.3, 0.6]) == pytest.approx(1 / (1 + np.exp(-0.8)))


def test_hand_computed_forward():
    net = MetaNet(np.array([[1.0, -1.0], [2.0, 0.5]]), np.array([0.1, 0.2]),
                  np.array([[0.5], [-1.5]]), np.array([-0.2]))
    x = np.array([0.4, 0.3])
    # hidden = relu([0.4 + 0.6 + 0.1, -0.4 + 0.15 + 0.2]) = [1.1, 0]
    z = 0.5 * 1.1 - 0.2
    assert meta_forward(net, x) == pytest.approx(1 / (1 + np.exp(-z)), abs=1e-15)
    with pytest.raises(ShapeMismatch):
        meta_forward(net, [0.1, 0.2, 0.3])


def test_meta_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    net = init_meta(4, seed=1, hidden=6)
    params = {k: v.copy() for k, v in net.params().items()}
    X, y = rng.random((12, 4)), rng.integers(0, 2, 12)
    _, grads = meta_loss_and_grads(params, X, y)
    for name, arr in params.items():
        numeric = central_differences(lambda: meta_loss_and_grads(params, X, y)[0], arr)
        assert relative_error(grads[name], numeric) < 1e-4, name


def test_meta_learns_single_informative_column():
    rng = np.random.default_rng(7)
    n = 600
    y = rng.integers(0, 2, n)
    signal = np.clip(0.5 + (y - 0.5) * 0.5 + rng.normal(scale=0.25, size=n), 0, 1)
    X = np.column_stack([rng.random(n), signal, rng.random(n)])
    tr, te = slice(0, 400), slice(400, None)
    net = train_meta(init_meta(3, 0), X[tr], y[tr], MetaConfig(epochs=300), seed=0)
    assert auc_roc(meta_forward(net, X[te]), y[te]) >= auc_roc(X[te, 1], y[te]) - 0.01
    assert net.loss_history[-1] < net.loss_history[0]


def test_meta_training_is_seeded():
    rng = np.random.default_rng(0)
    X, y = rng.random((50, 3)), np.arange(50) % 2
    cfg = MetaConfig(epochs=5, hidden=8)
    a = train_meta(init_meta(3, 1, 8), X, y, cfg, seed=2)
    b = train_meta(init_meta(3, 1, 8), X, y, cfg, seed=2)
    assert all(np.array_equal(a.params()[k], b.params()[k]) for k in a.params())
