"""Multi-head graph attention encoder producing per-molecule embeddings.

Each layer, for every head ``k``::

    phi_uv   = LeakyReLU(a_k . [W_k h_v || W_k h_u])     (u ranges over N(v) + v)
    alpha_uv = softmax over u of phi_uv
    h'_v     = mean_k ELU(sum_u alpha_uv W_k h_u)

The graph embedding is the mean of the final node states. For training a
linear head with a sigmoid output is attached and optimised with Adam on
binary cross-entropy; :func:`embed` returns the pre-head mean readout.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import tape
from .chem import MolGraph, atom_features
from .tape import EdgeIndex, Var

log = logging.getLogger(__name__)


class NonFiniteLoss(FloatingPointError):
    pass


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class GatConfig:
    heads: int = 8
    hidden_size: int = 300
    n_layers: int = 2
    dropout: float = 0.2
    batch_size: int = 32
    epochs: int = 40
    learning_rate: float = 0.001
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.heads < 1 or self.hidden_size < 1 or self.n_layers < 1:
            raise ValueError("heads, hidden_size and n_layers must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


@dataclass
class GatModel:
    config: GatConfig
    params: dict[str, np.ndarray]
    input_dim: int
    loss_history: list[float] = field(default_factory=list)

    def layer(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        return self.params[f"W{i}"], self.params[f"a{i}"]


@dataclass
class GraphBatch:
    x: np.ndarray
    edges: EdgeIndex
    ptr: np.ndarray  # atom offsets, one block per molecule

    @property
    def n_graphs(self) -> int:
        return len(self.ptr) - 1


def _glorot(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_model(input_dim: int, cfg: GatConfig, seed: int) -> GatModel:
    rng = np.random.default_rng(seed)
    H, D = cfg.heads, cfg.hidden_size
    params = {}
    fan_in = input_dim
    for i in range(cfg.n_layers):
        params[f"W{i}"] = _glorot(rng, (H, fan_in, D), fan_in, D)
        params[f"a{i}"] = _glorot(rng, (H, 2 * D), 2 * D, 1)
        fan_in = D
    params["w_out"] = _glorot(rng, (D, 1), D, 1)
    params["b_out"] = np.zeros(1)
    return GatModel(cfg, params, input_dim)


def mol_edges(mol: MolGraph) -> tuple[np.ndarray, np.ndarray]:
    """Directed (src, dst) edges including self-loops, grouped by dst."""
    src, dst = [], []
    for v in range(mol.n_atoms):
        for u in sorted((v,) + mol.neighbors[v]):
            src.append(u)
            dst.append(v)
    return np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64)


@dataclass(frozen=True)
class _Prepared:
    x: np.ndarray
    src: np.ndarray
    dst: np.ndarray


def prepare(mols: Sequence[MolGraph]) -> list[_Prepared]:
    return [_Prepared(atom_features(m), *mol_edges(m)) for m in mols]


def make_batch(items: Sequence[_Prepared]) -> GraphBatch:
    xs, srcs, dsts, ptr = [], [], [], [0]
    for it in items:
        off = ptr[-1]
        xs.append(it.x)
        srcs.append(it.src + off)
        dsts.append(it.dst + off)
        ptr.append(off + len(it.x))
    n = ptr[-1]
    return GraphBatch(np.concatenate(xs), EdgeIndex(n, np.concatenate(srcs), np.concatenate(dsts)),
                      np.array(ptr, dtype=np.int64))


def _forward(params: dict[str, Var], cfg: GatConfig, batch: GraphBatch,
             rng: np.random.Generator | None) -> tuple[Var, Var]:
    """Return (embeddings, logits). Dropout on attention iff ``rng`` is given."""
    h = Var(batch.x)
    for i in range(cfg.n_layers):
        wh = tape.matmul(h, params[f"W{i}"])
        scores = tape.leaky_relu(tape.edge_scores(wh, params[f"a{i}"], batch.edges), cfg.leaky_slope)
        alpha = tape.softmax_by_target(scores, batch.edges)
        if rng is not None and cfg.dropout > 0:
            keep = 1.0 - cfg.dropout
            mask = (rng.random(alpha.shape) < keep) / keep
            alpha = tape.mul_const(alpha, mask)
        h = tape.mean_axis0(tape.elu(tape.aggregate(alpha, wh, batch.edges)))
    emb = tape.segment_mean(h, batch.ptr)
    logits = tape.add(tape.matmul(emb, params["w_out"]), params["b_out"])
    return emb, logits


def loss_and_grads(model: GatModel, batch: GraphBatch, y: np.ndarray,
                   rng: np.random.Generator | None = None) -> tuple[float, dict[str, np.ndarray]]:
    pv = {k: Var(v) for k, v in model.params.items()}
    _, logits = _forward(pv, model.config, batch, rng)
    loss = tape.bce_with_logits(logits, np.asarray(y, dtype=np.float64).reshape(-1, 1))
    tape.backward(loss)
    return float(loss.value), {k: v.grad for k, v in pv.items()}


def batch_loss(model: GatModel, batch: GraphBatch, y: np.ndarray) -> float:
    pv = {k: Var(v) for k, v in model.params.items()}
    _, logits = _forward(pv, model.config, batch, None)
    return float(tape.bce_with_logits(logits, np.asarray(y, dtype=np.float64).reshape(-1, 1)).value)


def train_gat(mols: Sequence[MolGraph], labels: Sequence[int], cfg: GatConfig,
              seed: int) -> GatModel:
    """Mini-batch Adam on BCE of the linear head; deterministic for a seed."""
    y = np.asarray(labels, dtype=np.float64)
    if len(y) != len(mols) or len(y) == 0:
        raise ValueError("need one label per molecule")
    rng = np.random.default_rng(seed)
    prepared = prepare(mols)
    model = init_model(prepared[0].x.shape[1], cfg, int(rng.integers(2**63)))
    opt = tape.Adam(model.params, lr=cfg.learning_rate)
    n = len(prepared)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            batch = make_batch([prepared[i] for i in idx])
            loss, grads = loss_and_grads(model, batch, y[idx], rng)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NonFiniteLoss(f"non-finite loss/gradient at epoch {epoch + 1}, batch {lo // cfg.batch_size}")
            opt.step(model.params, grads)
            total += loss * len(idx)
        model.loss_history.append(total / n)
        log.debug("gat epoch %d loss %.5f", epoch + 1, model.loss_history[-1])
    return model


def embed_many(model: GatModel, mols: Sequence[MolGraph]) -> np.ndarray:
    """Evaluation-mode embeddings, one row of length hidden_size per molecule.

    Molecules are embedded one at a time: BLAS rounding depends on where a
    row sits in a batch, and a molecule's embedding must not depend on its
    neighbours in the input list.
    """
    pv = {k: Var(v) for k, v in model.params.items()}
    out = []
    for item in prepare(mols):
        batch = make_batch([item])
        if batch.x.shape[1] != model.input_dim:
            raise ShapeMismatch(f"feature width {batch.x.shape[1]} != {model.input_dim}")
        emb, _ = _forward(pv, model.config, batch, None)
        out.append(emb.value)
    if not out:
        return np.zeros((0, model.config.hidden_size))
    return np.concatenate(out)


def embed(model: GatModel, mol: MolGraph) -> np.ndarray:
    return embed_many(model, [mol])[0]


def predict_proba(model: GatModel, mols: Sequence[MolGraph]) -> np.ndarray:
    emb = embed_many(model, mols)
    w = np.ravel(model.params["w_out"])
    return tape.sigmoid((emb * w).sum(axis=1) + np.ravel(model.params["b_out"]))


def embedding_names(cfg: GatConfig) -> list[str]:
    return [f"emb_{i}" for i in range(cfg.hidden_size)]


# Single-molecule views of the layer computations, for inspection and tests.

def attention_logits(model: GatModel, mol: MolGraph, head: int, layer: int = 0,
                     h: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (src, dst, phi) for every ordered neighbor pair plus self-loops."""
    W, a = model.layer(layer)
    h = atom_features(mol) if h is None else h
    if h.shape[1] != W.shape[1]:
        raise ShapeMismatch(f"node features have width {h.shape[1]}, W expects {W.shape[1]}")
    src, dst = mol_edges(mol)
    wh = h @ W[head]
    D = W.shape[2]
    z = wh[dst] @ a[head, :D] + wh[src] @ a[head, D:]
    phi = np.where(z > 0, z, model.config.leaky_slope * z)
    return src, dst, phi


def attention_softmax(phi: np.ndarray, dst: np.ndarray, n_nodes: int) -> np.ndarray:
    """Normalise logits over each target's incoming edges (``dst`` sorted)."""
    return tape.softmax_by_target_values(phi[None, :], _TargetGroups(dst, n_nodes))[0]


class _TargetGroups:
    def __init__(self, dst: np.ndarray, n_nodes: int):
        self.dst = np.asarray(dst, dtype=np.int64)
        self.starts = np.searchsorted(self.dst, np.arange(n_nodes))

    def sum_by_target(self, vals, axis):
        return np.add.reduceat(vals, self.starts, axis=axis)


def node_update(model: GatModel, mol: MolGraph, layer: int = 0,
                h: np.ndarray | None = None) -> np.ndarray:
    """One attention layer in evaluation mode: head-averaged ELU updates."""
    W, _ = model.layer(layer)
    h = atom_features(mol) if h is None else h
    n = mol.n_atoms
    out = np.zeros((n, W.shape[2]))
    for k in range(W.shape[0]):
        src, dst, phi = attention_logits(model, mol, k, layer, h)
        alpha = attention_softmax(phi, dst, n)
        wh = h @ W[k]
        agg = np.zeros_like(out)
        np.add.at(agg, dst, alpha[:, None] * wh[src])
        out += np.where(agg > 0, agg, np.expm1(np.minimum(agg, 0)))
    return out / W.shape[0]


def node_states(model: GatModel, mol: MolGraph) -> np.ndarray:
    h = atom_features(mol)
    for i in range(model.config.n_layers):
        h = node_update(model, mol, i, h)
    return h


def readout(states: np.ndarray) -> np.ndarray:
    if len(states) == 0:
        raise ValueError("readout needs at least one node")
    return states.mean(axis=0)


def with_config(model: GatModel, **changes) -> GatModel:
    return GatModel(replace(model.config, **changes), dict(model.params), model.input_dim,
                    list(model.loss_history))
