"""Gradient-boosted trees on logistic loss over histogram-binned features.

Two tree shapes are grown:

* leaf-wise trees: repeatedly split the leaf with the largest gain until
  ``num_leaves`` leaves exist;
* oblivious trees: one (feature, threshold) pair per depth level, shared by
  every node of that level.

Bin edges are actual training values picked by rank, so any strictly
increasing transform of a column produces the same bins and the same trees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tape import sigmoid
from .trees import TreeArrays


@dataclass
class Binner:
    """Per-column upper bin edges; value ``x`` lands in bin ``searchsorted(edges, x)``."""

    edges: list[np.ndarray]

    @classmethod
    def fit(cls, X: np.ndarray, max_bins: int = 256) -> "Binner":
        edges = []
        for col in X.T:
            uniq = np.unique(col)
            if len(uniq) <= max_bins:
                edges.append(uniq[:-1])
                continue
            s = np.sort(col)
            n = len(s)
            picks = s[(np.arange(1, max_bins) * n) // max_bins - 1]
            e = np.unique(picks)
            edges.append(e[e < uniq[-1]])
        return cls(edges)

    @property
    def n_bins(self) -> np.ndarray:
        return np.array([len(e) + 1 for e in self.edges], dtype=np.int64)

    def transform(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape, dtype=np.int32)
        for j, e in enumerate(self.edges):
            out[:, j] = np.searchsorted(e, X[:, j], side="left")
        return out


def logloss(F: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.maximum(F, 0) - F * y + np.log1p(np.exp(-np.abs(F)))))


def _base_score(y: np.ndarray) -> float:
    p = float(np.clip(y.mean(), 1e-12, 1 - 1e-12))
    return float(np.log(p / (1 - p)))


class _Histograms:
    """Gradient, hessian and count histograms for a column subset.

    Columns are laid out back to back with only as many slots as they have
    bins, so binary columns cost two slots rather than ``max_bins``.
    """

    def __init__(self, Xb: np.ndarray, cols: np.ndarray, n_bins: np.ndarray):
        sizes = n_bins[cols]
        self.cols = cols
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.width = int(self.offsets[-1])
        self.k = len(cols)
        self.flat = Xb[:, cols] + self.offsets[:-1].astype(np.int32)[None, :]
        self.sizes = sizes
        self.col_of = np.repeat(np.arange(self.k), sizes)
        self.bin_of = np.arange(self.width) - self.offsets[:-1][self.col_of]
        # a split after the last bin of a column sends everything left
        self.usable = self.bin_of < (sizes - 1)[self.col_of]

    def build(self, rows: np.ndarray, g: np.ndarray, h: np.ndarray) -> np.ndarray:
        idx = self.flat[rows].ravel()
        return np.stack([
            np.bincount(idx, weights=np.repeat(g[rows], self.k), minlength=self.width),
            np.bincount(idx, weights=np.repeat(h[rows], self.k), minlength=self.width),
            np.bincount(idx, minlength=self.width).astype(np.float64),
        ])

    def left_and_total(self, hist: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Cumulative (left-of-split) sums and per-column totals, both (3, width)."""
        c = np.cumsum(hist, axis=1)
        before = np.concatenate([np.zeros((3, 1)), c[:, self.offsets[1:-1] - 1]], axis=1)
        left = c - np.repeat(before, self.sizes, axis=1)
        total = np.repeat(c[:, self.offsets[1:] - 1] - before, self.sizes, axis=1)
        return left, total


@dataclass
class _Split:
    gain: float
    col: int  # column index into the full matrix
    bin: int


def _best_leafwise(hists: _Histograms, hist: np.ndarray, min_data: int,
                   min_hess: float, lam: float) -> _Split | None:
    (gl, hl, nl), (G, H, N) = hists.left_and_total(hist)
    gr, hr, nr = G - gl, H - hl, N - nl
    ok = hists.usable & (nl >= min_data) & (nr >= min_data) & (hl >= min_hess) & (hr >= min_hess)
    if not ok.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = gl ** 2 / (hl + lam) + gr ** 2 / (hr + lam) - G ** 2 / (H + lam)
    gain = np.where(ok, gain, -np.inf)
    pos = int(np.argmax(gain))
    if not gain[pos] > 0:
        return None
    return _Split(float(gain[pos]), int(hists.cols[hists.col_of[pos]]), int(hists.bin_of[pos]))


@dataclass
class BoostedTrees:
    """Additive model ``base + sum(tree values)`` in log-odds."""

    base: float
    trees: list[TreeArrays]
    split_bins: list[np.ndarray]
    importances: np.ndarray
    train_loss: list[float]

    def raw(self, X: np.ndarray) -> np.ndarray:
        F = np.full(X.shape[0], self.base)
        for t in self.trees:
            F += predict_tree(t, X)
        return F

    def proba(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(self.raw(X))


def predict_tree(t: TreeArrays, X: np.ndarray) -> np.ndarray:
    node = np.zeros(X.shape[0], dtype=np.int64)
    rows = np.arange(X.shape[0])
    while True:
        f = t.feature[node]
        internal = f >= 0
        if not internal.any():
            return t.value[node]
        go_left = X[rows, np.maximum(f, 0)] <= t.threshold[node]
        node = np.where(internal, np.where(go_left, t.left[node], t.right[node]), node)


def fit_leafwise(X: np.ndarray, y: np.ndarray, seed: int, num_leaves: int = 31,
                 learning_rate: float = 0.1, n_estimators: int = 200,
                 feature_fraction: float = 0.9, max_bins: int = 256,
                 min_data_in_leaf: int = 20, min_sum_hessian: float = 1e-3,
                 lambda_l2: float = 0.0) -> BoostedTrees:
    """Leaf-wise (best-first) boosting with per-tree column subsampling."""
    rng = np.random.default_rng(seed)
    n, d = X.shape
    binner = Binner.fit(X, max_bins)
    Xb = binner.transform(X)
    n_bins = binner.n_bins
    base = _base_score(y)
    F = np.full(n, base)
    trees, split_bins, losses = [], [], []
    importances = np.zeros(d)
    n_cols = max(1, int(np.ceil(feature_fraction * d)))
    for _ in range(n_estimators):
        p = sigmoid(F)
        g, h = p - y, p * (1 - p)
        cols = np.sort(rng.choice(d, n_cols, replace=False)) if n_cols < d else np.arange(d)
        hists = _Histograms(Xb, cols, n_bins)

        feature, threshold, left, right, value, bins = [-1], [0.0], [-1], [-1], [0.0], [-1]
        all_rows = np.arange(n)
        root_hist = hists.build(all_rows, g, h)
        # open leaves: node id -> (rows, hist, best split)
        leaves = {0: (all_rows, root_hist, _best_leafwise(hists, root_hist, min_data_in_leaf,
                                                          min_sum_hessian, lambda_l2))}
        if leaves[0][2] is None:
            break  # nothing left to split; a root-only tree would only add noise
        n_leaves = 1
        while n_leaves < num_leaves:
            cands = [(s.gain, -nid, nid) for nid, (_, _, s) in leaves.items() if s is not None]
            if not cands:
                break
            _, _, nid = max(cands)
            rows, hist, s = leaves.pop(nid)
            f = s.col
            go_left = Xb[rows, f] <= s.bin
            lrows, rrows = rows[go_left], rows[~go_left]
            splittable = [len(r) >= 2 * min_data_in_leaf for r in (lrows, rrows)]
            lh = rh = None
            if any(splittable):
                small_left = len(lrows) <= len(rrows)
                small = hists.build(lrows if small_left else rrows, g, h)
                lh, rh = (small, hist - small) if small_left else (hist - small, small)
            feature[nid], threshold[nid], bins[nid] = f, float(binner.edges[f][s.bin]), s.bin
            importances[f] += s.gain
            for child_rows, child_hist, ok in ((lrows, lh, splittable[0]), (rrows, rh, splittable[1])):
                cid = len(feature)
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                value.append(0.0)
                bins.append(-1)
                best = (_best_leafwise(hists, child_hist, min_data_in_leaf, min_sum_hessian,
                                       lambda_l2) if ok else None)
                leaves[cid] = (child_rows, child_hist if ok else None, best)
            left[nid], right[nid] = len(feature) - 2, len(feature) - 1
            n_leaves += 1
        for nid, (rows, _, _) in leaves.items():
            value[nid] = -learning_rate * g[rows].sum() / (h[rows].sum() + lambda_l2)
        tree = TreeArrays(np.array(feature, dtype=np.int64), np.array(threshold),
                          np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                          np.array(value))
        F = F + predict_tree(tree, X)
        trees.append(tree)
        split_bins.append(np.array(bins, dtype=np.int64))
        losses.append(logloss(F, y))
    return BoostedTrees(base, trees, split_bins, importances, losses)


def oblivious_to_tree(features: list[int], thresholds: list[float], leaf_values: np.ndarray) -> TreeArrays:
    """Expand a symmetric tree to node arrays; leaf index bit ``l`` is set when
    level ``l`` sent the row right."""
    depth = len(features)
    n_internal = 2 ** depth - 1
    total = 2 ** (depth + 1) - 1
    feature = np.full(total, -1, dtype=np.int64)
    threshold = np.zeros(total)
    left = np.full(total, -1, dtype=np.int64)
    right = np.full(total, -1, dtype=np.int64)
    value = np.zeros(total)
    for node in range(n_internal):
        level = int(np.floor(np.log2(node + 1)))
        feature[node], threshold[node] = features[level], thresholds[level]
        left[node], right[node] = 2 * node + 1, 2 * node + 2
    for leaf in range(2 ** depth):
        # heap position: path bits from the root, most significant first
        pos = 0
        for level in range(depth):
            bit = (leaf >> level) & 1
            pos = 2 * pos + 1 + bit
        value[pos] = leaf_values[leaf]
    return TreeArrays(feature, threshold, left, right, value)


def fit_oblivious(X: np.ndarray, y: np.ndarray, seed: int, iterations: int = 40,
                  learning_rate: float = 0.2, depth: int = 6, max_bins: int = 256,
                  l2_leaf_reg: float = 3.0) -> BoostedTrees:
    """Boosting with symmetric trees; each level picks the split maximising
    the summed Newton gain over all current leaves."""
    del seed  # split search is exhaustive, so no randomness is consumed
    n, d = X.shape
    binner = Binner.fit(X, max_bins)
    Xb = binner.transform(X)
    hists = _Histograms(Xb, np.arange(d), binner.n_bins)
    lam = l2_leaf_reg
    base = _base_score(y)
    F = np.full(n, base)
    trees, split_bins, losses = [], [], []
    importances = np.zeros(d)
    for _ in range(iterations):
        p = sigmoid(F)
        g, h = p - y, p * (1 - p)
        leaf = np.zeros(n, dtype=np.int64)
        feats, thrs, bins = [], [], []
        for level in range(depth):
            total_gain = np.zeros(hists.width)
            for lid in range(2 ** level):
                rows = np.flatnonzero(leaf == lid)
                if rows.size == 0:
                    continue
                (gl, hl, _), (G, H, _) = hists.left_and_total(hists.build(rows, g, h))
                total_gain += (gl ** 2 / (hl + lam) + (G - gl) ** 2 / (H - hl + lam)
                               - G ** 2 / (H + lam))
            total_gain = np.where(hists.usable, total_gain, -np.inf)
            pos = int(np.argmax(total_gain))
            f, b = int(hists.col_of[pos]), int(hists.bin_of[pos])
            if not total_gain[pos] > 0:
                break
            importances[f] += total_gain[pos]
            feats.append(f)
            thrs.append(float(binner.edges[f][b]))
            bins.append(b)
            leaf |= (Xb[:, f] > b).astype(np.int64) << level
        n_leaf = 2 ** len(feats)
        G = np.bincount(leaf, weights=g, minlength=n_leaf)
        H = np.bincount(leaf, weights=h, minlength=n_leaf)
        values = -learning_rate * G / (H + lam)
        tree = oblivious_to_tree(feats, thrs, values)
        F = F + values[leaf]
        trees.append(tree)
        split_bins.append(np.array(bins, dtype=np.int64))
        losses.append(logloss(F, y))
    return BoostedTrees(base, trees, split_bins, importances, losses)
