"""Out-of-fold stacking of the base learners and the neural meta-learner.

For each base learner and each of the five folds, a model is fit on the
other four folds; it predicts the held-out fold (filling that learner's
training meta-column) and the test set. Test meta-columns are the mean of
the five fold models. A one-hidden-layer network then maps the meta-feature
rows to a final probability.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import learners, tape
from .learners import LearnerSpec, TrainedLearner
from .seeding import derive_seed
from .tape import Var

log = logging.getLogger(__name__)

N_FOLDS = 5


class TooFewSamples(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


class StackingFitError(RuntimeError):
    """A base learner failed on one fold; the original error is the cause."""

    def __init__(self, kind: str, fold: int, cause: Exception):
        super().__init__(f"{kind} on fold {fold}: {type(cause).__name__}: {cause}")
        self.kind, self.fold = kind, fold


@dataclass(frozen=True)
class FoldPlan:
    n_folds: int
    fold_ids: np.ndarray
    seed: int

    def rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_ids == fold)

    def rows_excluding(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_ids != fold)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_ids, minlength=self.n_folds)


def make_folds(labels: Sequence[int], seed: int, n_folds: int = N_FOLDS) -> FoldPlan:
    """Stratified fold assignment.

    Positives and negatives are shuffled separately, laid end to end and
    dealt round-robin, so both fold sizes and per-fold positive counts differ
    by at most one.
    """
    y = np.asarray(labels)
    n = len(y)
    if n < n_folds:
        raise TooFewSamples(f"{n} samples cannot fill {n_folds} folds")
    rng = np.random.default_rng(seed)
    pos = rng.permutation(np.flatnonzero(y == 1))
    neg = rng.permutation(np.flatnonzero(y != 1))
    fold_ids = np.empty(n, dtype=np.int64)
    fold_ids[np.concatenate([pos, neg])] = np.arange(n) % n_folds
    return FoldPlan(n_folds, fold_ids, seed)


@dataclass(frozen=True)
class FitRecord:
    """Rows used to fit one (learner, fold) model and rows it predicted."""

    kind: str
    fold: int
    train_rows: tuple[int, ...]
    predicted_rows: tuple[int, ...]


@dataclass
class MetaFeatures:
    train: np.ndarray  # (P, M) out-of-fold probabilities
    test: np.ndarray  # (P', M) mean of the fold models
    names: list[str]
    audit: list[FitRecord] = field(default_factory=list)
    models: dict[str, list[TrainedLearner]] = field(default_factory=dict)  # per kind, by fold


FitFn = Callable[[LearnerSpec, np.ndarray, np.ndarray, int], TrainedLearner]
PredictFn = Callable[[TrainedLearner, np.ndarray], np.ndarray]


def build_meta_features(specs: Sequence[LearnerSpec], X_train, y_train, X_test,
                        plan: FoldPlan, seed: int = 0, fit_fn: FitFn | None = None,
                        predict_fn: PredictFn | None = None, n_jobs: int = 1) -> MetaFeatures:
    """Fill the out-of-fold training matrix and the fold-averaged test matrix.

    ``fit_fn``/``predict_fn`` default to the learner functions and may be
    replaced to instrument or stub the base models. With ``n_jobs > 1`` the
    (learner, fold) fits run on a thread pool; each has its own derived seed
    and results are assembled in a fixed order, so output does not depend on
    scheduling.
    """
    fit_fn = fit_fn or learners.fit
    predict_fn = predict_fn or learners.predict_proba
    X_train = np.asarray(X_train, dtype=np.float64)
    X_test = np.asarray(X_test, dtype=np.float64)
    y_train = np.asarray(y_train)
    if len(X_train) != len(y_train) or len(plan.fold_ids) != len(y_train):
        raise ShapeMismatch("training rows, labels and fold plan differ in length")
    P, M = len(y_train), len(specs)
    train = np.full((P, M), np.nan)
    test = np.zeros((len(X_test), M))

    def job(c: int, f: int):
        spec = specs[c]
        fit_rows, held = plan.rows_excluding(f), plan.rows(f)
        try:
            model = fit_fn(spec, X_train[fit_rows], y_train[fit_rows],
                           derive_seed(seed, "stack", c, spec.kind, f))
            held_pred = np.asarray(predict_fn(model, X_train[held]), dtype=np.float64)
            test_pred = np.asarray(predict_fn(model, X_test), dtype=np.float64)
        except Exception as exc:
            raise StackingFitError(spec.kind, f, exc) from exc
        log.debug("stacked %s fold %d", spec.kind, f)
        return model, fit_rows, held, held_pred, test_pred

    keys = [(c, f) for c in range(M) for f in range(plan.n_folds)]
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(lambda k: job(*k), keys))
    else:
        results = [job(*k) for k in keys]

    audit, models = [], {}
    for (c, f), (model, fit_rows, held, held_pred, test_pred) in zip(keys, results):
        train[held, c] = held_pred
        audit.append(FitRecord(specs[c].kind, f, tuple(fit_rows.tolist()), tuple(held.tolist())))
        models.setdefault(specs[c].kind, []).append(model)
    for c in range(M):
        fold_preds = [results[c * plan.n_folds + f][4] for f in range(plan.n_folds)]
        test[:, c] = np.mean(np.stack(fold_preds), axis=0)
    return MetaFeatures(train, test, [s.kind for s in specs], audit, models)


def write_meta_csv(meta: MetaFeatures, train_path, test_path,
                   train_labels=None, test_labels=None) -> None:
    for path, mat, labels in ((train_path, meta.train, train_labels),
                              (test_path, meta.test, test_labels)):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", *meta.names] + (["label"] if labels is not None else []))
            for i, row in enumerate(mat):
                extra = [int(labels[i])] if labels is not None else []
                w.writerow([i, *(repr(float(v)) for v in row), *extra])


# Meta-learner

@dataclass(frozen=True)
class MetaConfig:
    hidden: int = 100
    learning_rate: float = 0.001
    epochs: int = 200
    batch_size: int | None = None  # None: min(200, n)


@dataclass
class MetaNet:
    W1: np.ndarray  # (M, hidden)
    b1: np.ndarray
    W2: np.ndarray  # (hidden, 1)
    b2: np.ndarray
    loss_history: list[float] = field(default_factory=list)

    @property
    def n_inputs(self) -> int:
        return self.W1.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}


def init_meta(n_inputs: int, seed: int, hidden: int = 100) -> MetaNet:
    rng = np.random.default_rng(seed)
    l1 = np.sqrt(6.0 / (n_inputs + hidden))
    l2 = np.sqrt(6.0 / (hidden + 1))
    return MetaNet(rng.uniform(-l1, l1, (n_inputs, hidden)), np.zeros(hidden),
                   rng.uniform(-l2, l2, (hidden, 1)), np.zeros(1))


def meta_forward(net: MetaNet, x) -> np.ndarray | float:
    """sigmoid(W2 . relu(W1 . x + b1) + b2) for one row or a matrix of rows."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != net.n_inputs:
        raise ShapeMismatch(f"expected {net.n_inputs} inputs per row, got shape {x.shape}")
    # explicit sums keep each row's output independent of the other rows (BLAS is not)
    pre = np.broadcast_to(net.b1, (len(X), len(net.b1))).copy()
    for j in range(net.n_inputs):
        pre += X[:, j, None] * net.W1[j]
    hidden = np.maximum(pre, 0.0)
    out = tape.sigmoid((hidden * net.W2[:, 0]).sum(axis=1) + net.b2)
    return float(out[0]) if single else out


def meta_loss_and_grads(params: dict[str, np.ndarray], X: np.ndarray,
                        y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    pv = {k: Var(v) for k, v in params.items()}
    hidden = tape.relu(tape.add(tape.matmul(Var(X), pv["W1"]), pv["b1"]))
    logits = tape.add(tape.matmul(hidden, pv["W2"]), pv["b2"])
    loss = tape.bce_with_logits(logits, np.asarray(y, dtype=np.float64).reshape(-1, 1))
    tape.backward(loss)
    return float(loss.value), {k: v.grad for k, v in pv.items()}


def train_meta(net: MetaNet, X, y, cfg: MetaConfig = MetaConfig(), seed: int = 0) -> MetaNet:
    """Mini-batch Adam on BCE; returns a new trained network."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.n_inputs or len(X) != len(y):
        raise ShapeMismatch(f"meta inputs {X.shape} do not fit a {net.n_inputs}-input net")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    params = {k: v.copy() for k, v in net.params().items()}
    opt = tape.Adam(params, lr=cfg.learning_rate)
    rng = np.random.default_rng(seed)
    n = len(y)
    bs = cfg.batch_size or min(200, n)
    history = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, bs):
            idx = perm[lo:lo + bs]
            loss, grads = meta_loss_and_grads(params, X[idx], y[idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"meta loss became {loss} at epoch {epoch + 1}")
            opt.step(params, grads)
            total += loss * len(idx)
        history.append(total / n)
    return MetaNet(params["W1"], params["b1"], params["W2"], params["b2"], history)
