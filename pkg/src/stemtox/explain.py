"""Interventional Shapley attributions, exact and permutation-sampled.

The value of a coalition ``S`` for input ``x`` is the model output averaged
over background rows with the features in ``S`` replaced by ``x``'s values.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from math import factorial
from typing import Callable, Sequence

import numpy as np

Model = Callable[[np.ndarray], np.ndarray]

MAX_EXACT_FEATURES = 16
MAX_BACKGROUND = 256
_ELEMENTS_PER_CALL = 1 << 22  # caps the size of each batched model call


class TooManyFeatures(ValueError):
    pass


@dataclass(frozen=True)
class ShapResult:
    phi: np.ndarray  # (n_samples, M)
    base_value: float
    names: list[str]
    output: np.ndarray  # model output per sample
    std_err: np.ndarray | None = None  # sampled mode only

    def mean_abs(self) -> np.ndarray:
        return np.abs(self.phi).mean(axis=0)


def make_background(X, seed: int, max_rows: int = MAX_BACKGROUND) -> np.ndarray:
    """Up to ``max_rows`` rows drawn without replacement, kept in source order."""
    X = np.asarray(X, dtype=np.float64)
    if len(X) == 0:
        raise ValueError("background set is empty")
    if len(X) <= max_rows:
        return X.copy()
    idx = np.sort(np.random.default_rng(seed).choice(len(X), max_rows, replace=False))
    return X[idx]


def _prepare(x, background, names) -> tuple[np.ndarray, np.ndarray, list[str]]:
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    bg = np.atleast_2d(np.asarray(background, dtype=np.float64))
    if len(bg) == 0:
        raise ValueError("background set is empty")
    if bg.shape[1] != X.shape[1]:
        raise ValueError(f"background has {bg.shape[1]} columns, samples have {X.shape[1]}")
    M = X.shape[1]
    names = list(names) if names is not None else [f"f{i}" for i in range(M)]
    if len(names) != M:
        raise ValueError("one name per feature required")
    return X, bg, names


def coalition_values(model: Model, x: np.ndarray, background: np.ndarray) -> np.ndarray:
    """v(S) for every coalition mask S in 0 .. 2^M - 1 (bit i = feature i kept)."""
    M = len(x)
    B = len(background)
    masks = np.arange(2 ** M)
    bits = ((masks[:, None] >> np.arange(M)) & 1).astype(bool)
    values = np.empty(len(masks))
    per_call = max(1, _ELEMENTS_PER_CALL // (B * M))
    for lo in range(0, len(masks), per_call):
        chunk = bits[lo:lo + per_call]
        Z = np.where(chunk[:, None, :], x[None, None, :], background[None, :, :])
        out = np.asarray(model(Z.reshape(-1, M)), dtype=np.float64).reshape(len(chunk), B)
        values[lo:lo + len(chunk)] = out.mean(axis=1)
    return values


def shapley_from_values(values: np.ndarray, M: int) -> np.ndarray:
    masks = np.arange(2 ** M)
    sizes = np.array([bin(m).count("1") for m in masks])
    weight = np.array([factorial(s) * factorial(M - s - 1) / factorial(M) if s < M else 0.0
                       for s in range(M + 1)])
    phi = np.zeros(M)
    for i in range(M):
        without = masks[(masks >> i) & 1 == 0]
        phi[i] = np.sum(weight[sizes[without]] * (values[without | (1 << i)] - values[without]))
    return phi


def shap_exact(model: Model, x, background, names: Sequence[str] | None = None) -> ShapResult:
    """Exact interventional Shapley values by full coalition enumeration."""
    X, bg, names = _prepare(x, background, names)
    M = X.shape[1]
    if M > MAX_EXACT_FEATURES:
        raise TooManyFeatures(f"{M} features exceeds the exact limit of {MAX_EXACT_FEATURES}")
    phi = np.zeros(X.shape)
    base = float(np.mean(np.asarray(model(bg), dtype=np.float64)))
    for r, row in enumerate(X):
        phi[r] = shapley_from_values(coalition_values(model, row, bg), M)
    return ShapResult(phi, base, names, np.asarray(model(X), dtype=np.float64))


def shap_sampled(model: Model, x, background, n_permutations: int, seed: int,
                 names: Sequence[str] | None = None) -> ShapResult:
    """Monte-Carlo Shapley: each draw pairs a random feature order with a
    random background row and credits each feature its marginal change as
    features switch from the background row to ``x`` in that order."""
    if n_permutations < 1:
        raise ValueError("n_permutations must be >= 1")
    X, bg, names = _prepare(x, background, names)
    M = X.shape[1]
    rng = np.random.default_rng(seed)
    phi = np.zeros(X.shape)
    se = np.zeros(X.shape)
    base = float(np.mean(np.asarray(model(bg), dtype=np.float64)))
    per_call = max(1, _ELEMENTS_PER_CALL // ((M + 1) * M))
    for r, row in enumerate(X):
        deltas = np.empty((n_permutations, M))
        for lo in range(0, n_permutations, per_call):
            k = min(per_call, n_permutations - lo)
            perms = np.argsort(rng.random((k, M)), axis=1)
            refs = bg[rng.integers(0, len(bg), k)]
            # position of each feature within its permutation
            rank = np.argsort(perms, axis=1)
            steps = np.arange(M + 1)
            switched = rank[:, None, :] < steps[None, :, None]  # (k, M+1, M)
            Z = np.where(switched, row[None, None, :], refs[:, None, :])
            out = np.asarray(model(Z.reshape(-1, M)), dtype=np.float64).reshape(k, M + 1)
            gain = np.diff(out, axis=1)  # gain[:, j] from adding perms[:, j]
            np.put_along_axis(deltas[lo:lo + k], perms, gain, axis=1)
        phi[r] = deltas.mean(axis=0)
        se[r] = (deltas.std(axis=0, ddof=1) / np.sqrt(n_permutations)
                 if n_permutations > 1 else np.full(M, np.inf))
    return ShapResult(phi, base, names, np.asarray(model(X), dtype=np.float64), se)


def rank_classifiers(model: Model, samples, background,
                     names: Sequence[str]) -> list[tuple[str, float]]:
    """Base learners ordered by mean |phi| over ``samples`` (descending, ties by name)."""
    res = shap_exact(model, samples, background, names)
    scores = res.mean_abs()
    return sorted(zip(res.names, scores.tolist()), key=lambda t: (-t[1], t[0]))


def shap_csv(result: ShapResult, sample_ids: Sequence | None = None) -> str:
    ids = list(sample_ids) if sample_ids is not None else list(range(len(result.phi)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_id", "feature", "phi", "base_value"])
    for sid, row in zip(ids, result.phi):
        for name, v in zip(result.names, row):
            w.writerow([sid, name, repr(float(v)), repr(result.base_value)])
    return buf.getvalue()


def summary_csv(ranking: Sequence[tuple[str, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["feature", "mean_abs_phi"])
    for name, v in ranking:
        w.writerow([name, repr(float(v))])
    return buf.getvalue()


def summarize(result: ShapResult) -> list[tuple[str, float]]:
    scores = result.mean_abs()
    return sorted(zip(result.names, scores.tolist()), key=lambda t: (-t[1], t[0]))
