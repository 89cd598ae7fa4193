"""The five base classifiers and importance-driven feature selection.

``fit(spec, X, y, seed)`` returns an immutable :class:`TrainedLearner`;
``predict_proba`` maps rows to positive-class probabilities in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from ..tape import sigmoid
from .boosting import BoostedTrees, fit_leafwise, fit_oblivious
from .svm import fit_linear_svm
from .trees import PackedTrees, TreeArrays, build_tree, gini

__all__ = [
    "KINDS", "DEFAULT_PARAMS", "LearnerSpec", "TrainedLearner", "fit", "predict_proba",
    "feature_importance", "select_features", "learner_to_state", "learner_from_state",
    "SingleClassError", "NonFiniteFeature", "SchemaMismatch", "UnsupportedKind", "gini",
]


class SingleClassError(ValueError):
    pass


class NonFiniteFeature(ValueError):
    pass


class SchemaMismatch(ValueError):
    pass


class UnsupportedKind(ValueError):
    pass


KINDS = ("svm", "rf", "extratrees", "histgbdt", "obliviousgbdt")

DEFAULT_PARAMS: dict[str, dict[str, Any]] = {
    "svm": {"kernel": "linear", "C": 1.0, "epochs": 60},
    "rf": {"n_estimators": 120, "max_depth": 17, "min_samples_split": 2,
           "min_samples_leaf": 1, "criterion": "gini", "bootstrap": True},
    "extratrees": {"n_estimators": 350, "max_depth": None, "min_samples_split": 2,
                   "min_samples_leaf": 1, "criterion": "gini", "bootstrap": False},
    "histgbdt": {"num_leaves": 31, "learning_rate": 0.1, "feature_fraction": 0.9,
                 "n_estimators": 200, "objective": "logloss", "max_bins": 256,
                 "min_data_in_leaf": 20, "lambda_l2": 0.0},
    "obliviousgbdt": {"iterations": 40, "learning_rate": 0.2, "depth": 6,
                      "max_bins": 256, "l2_leaf_reg": 3.0},
}

_FIXED = {"kernel": "linear", "criterion": "gini", "objective": "logloss"}


@dataclass(frozen=True)
class LearnerSpec:
    """A learner kind plus hyperparameters; omitted ones take the defaults."""

    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DEFAULT_PARAMS:
            raise UnsupportedKind(f"unknown learner kind {self.kind!r}")
        defaults = DEFAULT_PARAMS[self.kind]
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ValueError(f"unknown {self.kind} parameters: {sorted(unknown)}")
        merged = {**defaults, **self.params}
        for key, fixed in _FIXED.items():
            if key in merged and merged[key] != fixed:
                raise ValueError(f"{self.kind}: only {key}={fixed!r} is supported")
        object.__setattr__(self, "params", merged)

    def __getitem__(self, name: str) -> Any:
        return self.params[name]


def default_specs() -> list[LearnerSpec]:
    return [LearnerSpec(k) for k in KINDS]


@dataclass(frozen=True)
class _Forest:
    trees: tuple[TreeArrays, ...]
    packed: PackedTrees

    def proba(self, X: np.ndarray) -> np.ndarray:
        return self.packed.leaf_values(X).mean(axis=0)


@dataclass(frozen=True)
class _Linear:
    w: np.ndarray
    b: float

    def margin(self, X: np.ndarray) -> np.ndarray:
        # a row sum rather than BLAS gemv, whose rounding depends on the row's batch position
        return (X * self.w).sum(axis=1) + self.b

    def proba(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(self.margin(X))


@dataclass(frozen=True)
class TrainedLearner:
    spec: LearnerSpec
    n_features: int
    model: Any
    importances: np.ndarray | None  # raw split gains, None for svm

    @property
    def kind(self) -> str:
        return self.spec.kind


def _check_xy(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D matrix")
    if len(X) != len(y):
        raise ValueError(f"{len(X)} rows but {len(y)} labels")
    if len(y) < 2:
        raise ValueError("need at least two rows")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    if len(np.unique(y)) < 2:
        raise SingleClassError("training labels contain a single class")
    _check_finite(X)
    return X, y.astype(np.float64)


def _check_finite(X: np.ndarray) -> None:
    if not np.isfinite(X).all():
        r, c = np.argwhere(~np.isfinite(X))[0]
        raise NonFiniteFeature(f"non-finite value at row {r}, column {c}")


def _fit_forest(spec: LearnerSpec, X: np.ndarray, y: np.ndarray, seed: int) -> tuple[_Forest, np.ndarray]:
    p = spec.params
    n, d = X.shape
    max_features = max(1, int(np.sqrt(d)))
    importances = np.zeros(d)
    trees = []
    for child in np.random.SeedSequence(seed).spawn(p["n_estimators"]):
        rng = np.random.default_rng(child)
        rows = rng.integers(0, n, n) if p["bootstrap"] else np.arange(n)
        trees.append(build_tree(X, y, rows, rng, max_features, p["max_depth"],
                                p["min_samples_split"], p["min_samples_leaf"],
                                random_thresholds=spec.kind == "extratrees",
                                importances=importances))
    return _Forest(tuple(trees), PackedTrees.pack(trees)), importances


def fit(spec: LearnerSpec, X, y, seed: int) -> TrainedLearner:
    X, y = _check_xy(X, y)
    p = spec.params
    if spec.kind == "svm":
        w, b = fit_linear_svm(X, y, seed, C=p["C"], epochs=p["epochs"])
        return TrainedLearner(spec, X.shape[1], _Linear(w, b), None)
    if spec.kind in ("rf", "extratrees"):
        model, imp = _fit_forest(spec, X, y, seed)
        return TrainedLearner(spec, X.shape[1], model, imp)
    if spec.kind == "histgbdt":
        model = fit_leafwise(X, y, seed, num_leaves=p["num_leaves"],
                             learning_rate=p["learning_rate"], n_estimators=p["n_estimators"],
                             feature_fraction=p["feature_fraction"], max_bins=p["max_bins"],
                             min_data_in_leaf=p["min_data_in_leaf"], lambda_l2=p["lambda_l2"])
    else:
        model = fit_oblivious(X, y, seed, iterations=p["iterations"],
                              learning_rate=p["learning_rate"], depth=p["depth"],
                              max_bins=p["max_bins"], l2_leaf_reg=p["l2_leaf_reg"])
    return TrainedLearner(spec, X.shape[1], model, model.importances)


def predict_proba(model: TrainedLearner, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise SchemaMismatch(f"model expects {model.n_features} columns, got shape {X.shape}")
    _check_finite(X)
    return np.clip(model.model.proba(X), 0.0, 1.0)


def feature_importance(model: TrainedLearner) -> np.ndarray:
    """Total split gain per feature normalised to sum 1 (all zeros if no split)."""
    if model.importances is None:
        raise UnsupportedKind(f"{model.kind} has no split-based importance")
    imp = np.asarray(model.importances, dtype=np.float64)
    total = imp.sum()
    return imp / total if total > 0 else np.zeros_like(imp)


def select_features(X, y, k: int = 1024, seed: int = 0,
                    spec: LearnerSpec | None = None) -> np.ndarray:
    """Ascending indices of the ``k`` columns with the highest histgbdt importance.

    Ties are broken in favour of the lower column index.
    """
    X = np.asarray(X, dtype=np.float64)
    d = X.shape[1]
    if not 1 <= k <= d:
        raise ValueError(f"k={k} must lie in [1, {d}]")
    if k == d:
        return np.arange(d)
    imp = feature_importance(fit(spec or LearnerSpec("histgbdt"), X, y, seed))
    order = np.lexsort((np.arange(d), -imp))
    return np.sort(order[:k])


# Serialization to plain dicts of arrays and scalars.

_TREE_FIELDS = ("feature", "threshold", "left", "right", "value")


def _trees_state(trees) -> dict:
    """Concatenate tree arrays; ``tree_offsets`` delimits each tree."""
    offsets = np.cumsum([0] + [t.n_nodes for t in trees]).astype(np.int64)
    state = {"tree_offsets": offsets}
    for k in _TREE_FIELDS:
        parts = [getattr(t, k) for t in trees]
        state[f"tree_{k}"] = np.concatenate(parts) if parts else np.zeros(0)
    return state


def _trees_from(state: dict) -> list[TreeArrays]:
    off = np.asarray(state["tree_offsets"])
    return [TreeArrays(*(np.asarray(state[f"tree_{k}"])[lo:hi] for k in _TREE_FIELDS))
            for lo, hi in zip(off[:-1], off[1:])]


def learner_to_state(model: TrainedLearner) -> dict:
    state: dict[str, Any] = {"kind": model.kind, "params": dict(model.spec.params),
                             "n_features": model.n_features}
    m = model.model
    if isinstance(m, _Linear):
        state.update(w=m.w, b=m.b)
    elif isinstance(m, _Forest):
        state.update(_trees_state(m.trees))
    else:
        state.update(base=m.base, train_loss=np.array(m.train_loss), **_trees_state(m.trees),
                     split_bins=[np.asarray(b) for b in m.split_bins])
    if model.importances is not None:
        state["importances"] = model.importances
    return state


def learner_from_state(state: dict) -> TrainedLearner:
    spec = LearnerSpec(state["kind"], state["params"])
    imp = np.asarray(state["importances"]) if "importances" in state else None
    if spec.kind == "svm":
        model: Any = _Linear(np.asarray(state["w"], dtype=np.float64), float(state["b"]))
    elif spec.kind in ("rf", "extratrees"):
        trees = _trees_from(state)
        model = _Forest(tuple(trees), PackedTrees.pack(trees))
    else:
        model = BoostedTrees(float(state["base"]), _trees_from(state),
                             [np.asarray(b) for b in state["split_bins"]],
                             imp, [float(v) for v in np.asarray(state["train_loss"])])
    return TrainedLearner(spec, int(state["n_features"]), model, imp)
