"""Gini decision trees for random forests and extremely randomized trees."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def gini(p: float | np.ndarray) -> float | np.ndarray:
    """Binary Gini impurity for positive-class fraction ``p``."""
    return 2.0 * p * (1.0 - p)


@dataclass
class TreeArrays:
    """Flat binary tree; ``feature < 0`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def to_state(self) -> dict:
        return {k: getattr(self, k) for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_state(cls, state: dict) -> "TreeArrays":
        return cls(**{k: np.asarray(state[k]) for k in ("feature", "threshold", "left", "right", "value")})


class _Builder:
    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def add(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1

    def finish(self) -> TreeArrays:
        return TreeArrays(
            np.array(self.feature, dtype=np.int64),
            np.array(self.threshold, dtype=np.float64),
            np.array(self.left, dtype=np.int64),
            np.array(self.right, dtype=np.int64),
            np.array(self.value, dtype=np.float64),
        )


def _candidate_features(X: np.ndarray, idx: np.ndarray, rng: np.random.Generator,
                        max_features: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``max_features`` columns without replacement, continuing past the
    budget until at least one non-constant column has been seen.

    Returns the non-constant drawn columns and their values on ``idx``.
    """
    d = X.shape[1]
    perm = rng.permutation(d)
    for lo in range(0, d, max_features):
        chunk = perm[lo:lo + max_features]
        Xs = X[np.ix_(idx, chunk)]
        ok = Xs.min(axis=0) < Xs.max(axis=0)
        if ok.any():
            # past the first chunk only one column is needed to continue
            keep = np.flatnonzero(ok) if lo == 0 else np.flatnonzero(ok)[:1]
            return chunk[keep], Xs[:, keep]
    return perm[:0], X[np.ix_(idx, perm[:0])]


def _best_exact(Xs: np.ndarray, y: np.ndarray, min_leaf: int):
    """Best Gini split over every midpoint of the candidate columns ``Xs``."""
    n, k = Xs.shape
    order = np.argsort(Xs, axis=0, kind="stable")
    vals = np.take_along_axis(Xs, order, axis=0)
    ys = y[order]
    pos_left = np.cumsum(ys, axis=0)[:-1]
    nl = np.arange(1, n, dtype=np.float64)[:, None]
    nr = n - nl
    total = y.sum()
    pos_right = total - pos_left
    child = 2 * pos_left * (nl - pos_left) / nl + 2 * pos_right * (nr - pos_right) / nr
    valid = (vals[:-1] < vals[1:]) & (nl >= min_leaf) & (nr >= min_leaf)
    if not valid.any():
        return None
    child = np.where(valid, child, np.inf)
    flat = int(np.argmin(child.T))  # column-major: lowest candidate column first
    col, i = divmod(flat, n - 1)
    lo_v, hi_v = vals[i, col], vals[i + 1, col]
    thr = lo_v + (hi_v - lo_v) / 2.0
    if thr >= hi_v:
        thr = lo_v
    return col, float(thr), float(child[i, col])


def _best_random(Xs: np.ndarray, y: np.ndarray, rng: np.random.Generator, min_leaf: int):
    """Best Gini split among one uniform random threshold per candidate column."""
    n = Xs.shape[0]
    lo, hi = Xs.min(axis=0), Xs.max(axis=0)
    thr = lo + rng.random(Xs.shape[1]) * (hi - lo)
    mask = Xs <= thr
    nl = mask.sum(axis=0).astype(np.float64)
    nr = n - nl
    pl = (mask * y[:, None]).sum(axis=0)
    pr = y.sum() - pl
    with np.errstate(divide="ignore", invalid="ignore"):
        child = 2 * pl * (nl - pl) / nl + 2 * pr * (nr - pr) / nr
    valid = (nl >= min_leaf) & (nr >= min_leaf)
    if not valid.any():
        return None
    child = np.where(valid, child, np.inf)
    col = int(np.argmin(child))
    return col, float(thr[col]), float(child[col])


def build_tree(X: np.ndarray, y: np.ndarray, rows: np.ndarray, rng: np.random.Generator,
               max_features: int, max_depth: int | None, min_samples_split: int,
               min_samples_leaf: int, random_thresholds: bool,
               importances: np.ndarray) -> TreeArrays:
    """Grow one classification tree on ``rows`` (duplicates allowed).

    Leaves hold the positive-class fraction. ``importances`` receives the
    weighted impurity decrease of every split.
    """
    b = _Builder()
    root = b.add(0.0)
    stack = [(root, rows, 0)]
    depth_cap = max_depth if max_depth is not None else np.iinfo(np.int64).max
    while stack:
        node, idx, depth = stack.pop()
        yn = y[idx]
        n = len(idx)
        p = float(yn.mean())
        b.value[node] = p
        if n < min_samples_split or depth >= depth_cap or p == 0.0 or p == 1.0 or n < 2 * min_samples_leaf:
            continue
        feats, Xs = _candidate_features(X, idx, rng, max_features)
        if feats.size == 0:
            continue
        found = (_best_random(Xs, yn, rng, min_samples_leaf) if random_thresholds
                 else _best_exact(Xs, yn, min_samples_leaf))
        if found is None:
            continue
        col, thr, child_imp = found
        f = int(feats[col])
        go_left = Xs[:, col] <= thr
        importances[f] += n * gini(p) - child_imp
        left, right = b.add(0.0), b.add(0.0)
        b.feature[node], b.threshold[node] = f, thr
        b.left[node], b.right[node] = left, right
        stack.append((right, idx[~go_left], depth + 1))
        stack.append((left, idx[go_left], depth + 1))
    return b.finish()


@dataclass
class PackedTrees:
    """Several trees concatenated into one node table for joint traversal."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    roots: np.ndarray

    @classmethod
    def pack(cls, trees: list[TreeArrays]) -> "PackedTrees":
        offsets = np.cumsum([0] + [t.n_nodes for t in trees])[:-1]
        shift = lambda arr, off: np.where(arr >= 0, arr + off, -1)  # noqa: E731
        return cls(
            np.concatenate([t.feature for t in trees]),
            np.concatenate([t.threshold for t in trees]),
            np.concatenate([shift(t.left, o) for t, o in zip(trees, offsets)]),
            np.concatenate([shift(t.right, o) for t, o in zip(trees, offsets)]),
            np.concatenate([t.value for t in trees]),
            offsets.astype(np.int64),
        )

    def leaf_values(self, X: np.ndarray) -> np.ndarray:
        """(n_trees, n_rows) leaf values reached by each row in each tree."""
        n = X.shape[0]
        nodes = np.repeat(self.roots[:, None], n, axis=1)
        cols = np.broadcast_to(np.arange(n), nodes.shape)
        while True:
            f = self.feature[nodes]
            internal = f >= 0
            if not internal.any():
                break
            x = X[cols, np.maximum(f, 0)]
            nxt = np.where(x <= self.threshold[nodes], self.left[nodes], self.right[nodes])
            nodes = np.where(internal, nxt, nodes)
        return self.value[nodes]
