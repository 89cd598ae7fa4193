"""Linear soft-margin SVM trained by stochastic subgradient descent."""

from __future__ import annotations

import numpy as np


def fit_linear_svm(X: np.ndarray, y: np.ndarray, seed: int, C: float = 1.0,
                   epochs: int = 60) -> tuple[np.ndarray, float]:
    """Minimise ``lam/2 |w|^2 + mean(hinge)`` with ``lam = 1/(C n)``.

    Pegasos step sizes ``1/(lam t)`` with projection onto the ball of radius
    ``1/sqrt(lam)``; rows are visited in a fresh permutation each epoch. The
    bias is an extra weight on a constant column. Returns the iterate
    averaged over the second half of training.
    """
    n, d = X.shape
    lam = 1.0 / (C * n)
    radius = 1.0 / np.sqrt(lam)
    Xa = np.hstack([X, np.ones((n, 1))])
    ys = np.where(y > 0, 1.0, -1.0)
    rng = np.random.default_rng(seed)
    w = np.zeros(d + 1)
    avg = np.zeros(d + 1)
    n_avg = 0
    t = 0
    start_avg = (epochs // 2) * n
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            xi = Xa[i]
            violated = ys[i] * (w @ xi) < 1.0
            w *= 1.0 - eta * lam
            if violated:
                w += (eta * ys[i]) * xi
            norm = np.sqrt(w @ w)
            if norm > radius:
                w *= radius / norm
            if t > start_avg:
                avg += w
                n_avg += 1
    w = avg / max(n_avg, 1)
    return w[:-1].copy(), float(w[-1])
