"""Threshold metrics, ranking metrics and repeated-seed aggregation."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

METRIC_NAMES = ("accuracy", "precision", "recall", "f1", "auc", "aupr")
DEFAULT_SEEDS = (42, 123, 567, 789, 999, 111, 222, 333, 444, 555)


class LengthMismatch(ValueError):
    pass


class SingleClassError(ValueError):
    pass


class NoPositives(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class ThresholdMetrics:
    counts: ConfusionCounts
    accuracy: float
    precision: float
    recall: float
    f1: float


def _pair(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if len(s) != len(y):
        raise LengthMismatch(f"{len(s)} scores but {len(y)} labels")
    if len(s) == 0:
        raise LengthMismatch("no samples")
    return s, (y == 1)


def metrics_from_counts(c: ConfusionCounts) -> ThresholdMetrics:
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ThresholdMetrics(c, (c.tp + c.tn) / c.n, precision, recall, f1)


def threshold_metrics(scores, labels, threshold: float = 0.5) -> ThresholdMetrics:
    """Confusion counts with ``score >= threshold`` predicted positive."""
    s, y = _pair(scores, labels)
    pred = s >= threshold
    counts = ConfusionCounts(int(np.sum(pred & y)), int(np.sum(~pred & ~y)),
                             int(np.sum(pred & ~y)), int(np.sum(~pred & y)))
    return metrics_from_counts(counts)


def auc_roc(scores, labels) -> float:
    """Probability a random positive outscores a random negative, ties counted half."""
    s, y = _pair(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("ROC AUC needs both classes")
    order = np.argsort(s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    # sweep tie groups in ascending score order
    bounds = np.flatnonzero(np.diff(s_sorted)) + 1
    starts = np.concatenate([[0], bounds])
    pos_in = np.add.reduceat(y_sorted.astype(np.int64), starts)
    size = np.diff(np.append(starts, len(s)))
    neg_in = size - pos_in
    neg_below = np.concatenate([[0], np.cumsum(neg_in)[:-1]])
    wins = np.sum(pos_in * neg_below) + 0.5 * np.sum(pos_in * neg_in)
    return float(wins / (n_pos * n_neg))


def auc_pr(scores, labels) -> float:
    """Step-interpolated area under the precision-recall curve.

    Thresholds sweep distinct scores from high to low; each tie group adds
    (recall gain) x (precision after the group).
    """
    s, y = _pair(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise NoPositives("precision-recall needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order].astype(np.int64)
    ends = np.append(np.flatnonzero(np.diff(s_sorted)), len(s) - 1)
    tp = np.cumsum(y_sorted)[ends]
    seen = ends + 1
    precision = tp / seen
    recall_gain = np.diff(np.concatenate([[0], tp])) / n_pos
    return float(np.sum(recall_gain * precision))


@dataclass(frozen=True)
class SeedMetrics:
    seed: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float
    aupr: float


def evaluate_scores(scores, labels, seed: int = 0, threshold: float = 0.5) -> SeedMetrics:
    t = threshold_metrics(scores, labels, threshold)
    return SeedMetrics(seed, t.accuracy, t.precision, t.recall, t.f1,
                       auc_roc(scores, labels), auc_pr(scores, labels))


@dataclass
class EvalReport:
    per_seed: list[SeedMetrics]
    mean: dict[str, float] = field(init=False)
    std: dict[str, float] = field(init=False)

    def __post_init__(self):
        if not self.per_seed:
            raise ValueError("report needs at least one seed")
        table = np.array([[getattr(r, m) for m in METRIC_NAMES] for r in self.per_seed])
        means = table.mean(axis=0)
        stds = table.std(axis=0, ddof=1) if len(table) > 1 else np.zeros(len(METRIC_NAMES))
        self.mean = dict(zip(METRIC_NAMES, means.tolist()))
        self.std = dict(zip(METRIC_NAMES, stds.tolist()))

    def to_csv(self, per_seed: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed", *METRIC_NAMES])
        if per_seed:
            for r in self.per_seed:
                w.writerow([r.seed, *(f"{getattr(r, m):.6f}" for m in METRIC_NAMES)])
        w.writerow(["mean", *(f"{self.mean[m]:.6f}" for m in METRIC_NAMES)])
        w.writerow(["std", *(f"{self.std[m]:.6f}" for m in METRIC_NAMES)])
        return buf.getvalue()

    def to_table(self) -> str:
        head = f"{'metric':<10} {'mean':>8} {'std':>8}"
        lines = [head, "-" * len(head)]
        for m in METRIC_NAMES:
            lines.append(f"{m:<10} {self.mean[m]:>8.4f} {self.std[m]:>8.4f}")
        lines.append(f"seeds: {', '.join(str(r.seed) for r in self.per_seed)}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"per_seed": [asdict(r) for r in self.per_seed], "mean": self.mean, "std": self.std}


def repeated_eval(run_seed: Callable[[int], SeedMetrics], seeds: Sequence[int]) -> EvalReport:
    """Evaluate one run per seed and aggregate mean and sample std."""
    if len(seeds) == 0:
        raise ValueError("need at least one seed")
    return EvalReport([run_seed(int(s)) for s in seeds])

