"""A minimal reverse-mode gradient tape over numpy arrays.

Each op returns a :class:`Var` holding its value, its parent Vars and a
closure mapping the output gradient to parent gradients. ``backward`` walks
the recorded graph in reverse topological order. Only the ops the GAT
encoder and the meta network need are provided; each has a hand-written
gradient that is checked against finite differences in the test suite.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp


class Var:
    __slots__ = ("value", "grad", "parents", "backward_fn")

    def __init__(self, value, parents: Sequence["Var"] = (),
                 backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None):
        self.value = np.asarray(value)
        self.grad: np.ndarray | None = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn

    @property
    def shape(self):
        return self.value.shape


def backward(root: Var) -> None:
    """Accumulate d(root)/d(v) into ``v.grad`` for every Var reachable from root."""
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        v, done = stack.pop()
        if done:
            order.append(v)
            continue
        if id(v) in seen:
            continue
        seen.add(id(v))
        stack.append((v, True))
        for p in v.parents:
            if id(p) not in seen:
                stack.append((p, False))
    for v in order:
        v.grad = None
    root.grad = np.ones_like(root.value, dtype=np.float64)
    for v in reversed(order):
        if v.backward_fn is None or v.grad is None:
            continue
        for p, g in zip(v.parents, v.backward_fn(v.grad)):
            if g is None:
                continue
            p.grad = g if p.grad is None else p.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Var, b: Var) -> Var:
    out = a.value + b.value
    return Var(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul_const(a: Var, c: np.ndarray) -> Var:
    return Var(a.value * c, (a,), lambda g: (_unbroadcast(g * c, a.shape),))


def matmul(a: Var, b: Var) -> Var:
    """``a @ b`` for 2-D ``a`` and 2-D or head-stacked 3-D ``b``."""
    av, bv = a.value, b.value
    out = av @ bv

    def bw(g):
        if bv.ndim == 3 and av.ndim == 2:
            ga = np.matmul(g, np.swapaxes(bv, 1, 2)).sum(axis=0)
            gb = np.matmul(av.T, g)
            return ga, gb
        return g @ np.swapaxes(bv, -1, -2), np.swapaxes(av, -1, -2) @ g

    return Var(out, (a, b), bw)


def leaky_relu(a: Var, slope: float) -> Var:
    x = a.value
    pos = x > 0
    return Var(np.where(pos, x, slope * x), (a,), lambda g: (np.where(pos, g, slope * g),))


def relu(a: Var) -> Var:
    pos = a.value > 0
    return Var(np.where(pos, a.value, 0.0), (a,), lambda g: (np.where(pos, g, 0.0),))


def elu(a: Var) -> Var:
    x = a.value
    neg = np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, x, neg)
    return Var(out, (a,), lambda g: (np.where(x > 0, g, g * (neg + 1.0)),))


def mean_axis0(a: Var) -> Var:
    n = a.shape[0]
    return Var(a.value.mean(axis=0), (a,),
               lambda g: (np.broadcast_to(g / n, a.shape).copy(),))


class EdgeIndex:
    """Directed edges of a symmetric graph with self-loops, grouped by target.

    ``starts[v]`` is the first edge whose target is ``v``; every node has at
    least its self-loop so no group is empty. ``rev[e]`` is the index of the
    reverse of edge ``e``.
    """

    def __init__(self, n_nodes: int, src: np.ndarray, dst: np.ndarray):
        self.n_nodes = n_nodes
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        if np.any(np.diff(self.dst) < 0):
            raise ValueError("edges must be sorted by target")
        self.starts = np.searchsorted(self.dst, np.arange(n_nodes))
        lookup = {(int(s), int(d)): e for e, (s, d) in enumerate(zip(self.src, self.dst))}
        self.rev = np.array([lookup[(int(d), int(s))] for s, d in zip(self.src, self.dst)],
                            dtype=np.int64)
        self.counts = np.diff(np.append(self.starts, len(self.dst)))

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def sum_by_target(self, vals: np.ndarray, axis: int) -> np.ndarray:
        return np.add.reduceat(vals, self.starts, axis=axis)

    def sum_by_source(self, vals: np.ndarray, axis: int) -> np.ndarray:
        return np.add.reduceat(np.take(vals, self.rev, axis=axis), self.starts, axis=axis)


def edge_scores(x: Var, att: Var, edges: EdgeIndex) -> Var:
    """Per-head raw attention ``att_h . [x_h[dst] || x_h[src]]``.

    ``x`` is (H, N, D), ``att`` is (H, 2D); returns (H, E).
    """
    xv, av = x.value, att.value
    D = xv.shape[2]
    a_dst, a_src = av[:, :D], av[:, D:]
    s_dst = np.matmul(xv, a_dst[:, :, None])[:, :, 0]
    s_src = np.matmul(xv, a_src[:, :, None])[:, :, 0]
    out = s_dst[:, edges.dst] + s_src[:, edges.src]

    def bw(g):
        g_dst = edges.sum_by_target(g, axis=1)
        g_src = edges.sum_by_source(g, axis=1)
        gx = g_dst[:, :, None] * a_dst[:, None, :] + g_src[:, :, None] * a_src[:, None, :]
        ga = np.concatenate([np.matmul(g_dst[:, None, :], xv)[:, 0, :],
                             np.matmul(g_src[:, None, :], xv)[:, 0, :]], axis=1)
        return gx, ga

    return Var(out, (x, att), bw)


def softmax_by_target_values(e: np.ndarray, edges: EdgeIndex) -> np.ndarray:
    """Softmax of (H, E) scores over each target's incoming edges."""
    m = np.maximum.reduceat(e, edges.starts, axis=1)
    z = np.exp(e - m[:, edges.dst])
    s = edges.sum_by_target(z, axis=1)
    return z / s[:, edges.dst]


def softmax_by_target(e: Var, edges: EdgeIndex) -> Var:
    alpha = softmax_by_target_values(e.value, edges)

    def bw(g):
        inner = edges.sum_by_target(alpha * g, axis=1)
        return (alpha * (g - inner[:, edges.dst]),)

    return Var(alpha, (e,), bw)


def _block_matrix(alpha: np.ndarray, edges: EdgeIndex) -> sp.csr_matrix:
    H, E = alpha.shape
    N = edges.n_nodes
    indptr = np.concatenate([[0], np.tile(np.append(edges.starts[1:], E), H)
                             + np.repeat(np.arange(H) * E, N)])
    indices = (edges.src[None, :] + (np.arange(H) * N)[:, None]).ravel()
    return sp.csr_matrix((alpha.ravel(), indices, indptr), shape=(H * N, H * N))


def aggregate(alpha: Var, x: Var, edges: EdgeIndex) -> Var:
    """out[h, v] = sum over edges e into v of alpha[h, e] * x[h, src_e]."""
    H, N, D = x.shape
    A = _block_matrix(alpha.value, edges)
    xv = x.value
    out = (A @ xv.reshape(H * N, D)).reshape(H, N, D)

    def bw(g):
        gx = (A.T @ g.reshape(H * N, D)).reshape(H, N, D)
        ga = (g[:, edges.dst, :] * xv[:, edges.src, :]).sum(axis=2)
        return ga, gx

    return Var(out, (alpha, x), bw)


def segment_mean(x: Var, ptr: np.ndarray) -> Var:
    """Mean of consecutive row blocks ``x[ptr[i]:ptr[i+1]]``."""
    counts = np.diff(ptr).astype(np.float64)
    out = np.add.reduceat(x.value, ptr[:-1], axis=0) / counts[:, None]
    seg = np.repeat(np.arange(len(counts)), np.diff(ptr))
    return Var(out, (x,), lambda g: ((g / counts[:, None])[seg],))


def bce_with_logits(z: Var, y: np.ndarray) -> Var:
    """Mean binary cross-entropy of ``sigmoid(z)`` against labels ``y``."""
    zv = z.value
    loss = np.mean(np.maximum(zv, 0) - zv * y + np.log1p(np.exp(-np.abs(zv))))
    p = sigmoid(zv)
    return Var(loss, (z,), lambda g: (g * (p - y) / zv.size,))


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def numeric_grad(f: Callable[[], float], arr: np.ndarray, eps: float = 1e-5,
                 index: Sequence[tuple] | None = None) -> np.ndarray:
    """Central finite differences of ``f`` w.r.t. entries of ``arr`` (in place)."""
    grad = np.zeros_like(arr, dtype=np.float64)
    idxs = index if index is not None else list(np.ndindex(arr.shape))
    for ix in idxs:
        old = arr[ix]
        arr[ix] = old + eps
        fp = f()
        arr[ix] = old - eps
        fm = f()
        arr[ix] = old
        grad[ix] = (fp - fm) / (2 * eps)
    return grad
