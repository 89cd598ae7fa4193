"""Independent brute-force references and random input generators for tests."""

from __future__ import annotations

import itertools

import numpy as np

from stemtox.chem import Bond, MolGraph

# Random molecules

_ALIPHATIC = ("C", "C", "C", "N", "O", "S", "Cl")
_DOUBLE_OK = {"C", "N", "O"}
_RINGS = ("c1ccccc1", "c1ccncc1", "c1ccoc1", "c1ccsc1")


def random_chain(rng: np.random.Generator, n_atoms: int, ring_prob: float = 0.3) -> str:
    """A random aliphatic tree of ``n_atoms`` heavy atoms with optional ring closures."""
    elems = [str(rng.choice(_ALIPHATIC)) for _ in range(n_atoms)]
    parent = [-1] + [int(rng.integers(0, i)) for i in range(1, n_atoms)]
    children: dict[int, list[int]] = {i: [] for i in range(n_atoms)}
    for i in range(1, n_atoms):
        children[parent[i]].append(i)
    bond = {}
    for i in range(1, n_atoms):
        p = parent[i]
        if elems[i] in _DOUBLE_OK and elems[p] in _DOUBLE_OK and rng.random() < 0.15:
            bond[i] = "="
        else:
            bond[i] = ""
    closures: dict[int, list[str]] = {i: [] for i in range(n_atoms)}
    if n_atoms >= 3 and rng.random() < ring_prob:
        adjacent = {(min(i, parent[i]), max(i, parent[i])) for i in range(1, n_atoms)}
        pairs = [(a, b) for a in range(n_atoms) for b in range(a + 1, n_atoms) if (a, b) not in adjacent]
        if pairs:
            a, b = pairs[int(rng.integers(len(pairs)))]
            closures[a].append("1")
            closures[b].append("1")
            for k in (a, b):
                if elems[k] == "Cl":
                    elems[k] = "C"

    def write(i: int) -> str:
        out = elems[i] + "".join(closures[i])
        kids = children[i]
        for c in kids[:-1]:
            out += "(" + bond[c] + write(c) + ")"
        if kids:
            out += bond[kids[-1]] + write(kids[-1])
        return out

    return write(0)


def random_smiles(rng: np.random.Generator, max_atoms: int = 12) -> str:
    """Aliphatic trees, rings, charged nitro groups and aromatic rings with substituents."""
    r = rng.random()
    if r < 0.35 and max_atoms >= 5:
        ring = str(rng.choice([s for s in _RINGS if sum(ch.isalpha() for ch in s) <= max_atoms]))
        tokens = [ch for ch in ring if ch.isalpha()]
        room = max_atoms - len(tokens)
        subs = {}
        for pos in range(1, len(tokens)):
            if room <= 0 or tokens[pos] != "c" or rng.random() < 0.6:
                continue
            k = int(rng.integers(1, min(room, 3) + 1))
            subs[pos] = random_chain(rng, k, ring_prob=0.0)
            room -= k
        out = tokens[0] + "1"
        for pos in range(1, len(tokens)):
            out += tokens[pos] + (f"({subs[pos]})" if pos in subs else "")
        return out + "1"
    if r < 0.45 and max_atoms >= 4:
        return random_chain(rng, int(rng.integers(1, max_atoms - 2)), 0.0) + "[N+](=O)[O-]"
    return random_chain(rng, int(rng.integers(1, max_atoms + 1)))


def permute_mol(mol: MolGraph, perm: np.ndarray) -> MolGraph:
    """Relabel atoms: old atom ``i`` becomes atom ``perm[i]``."""
    atoms = [None] * mol.n_atoms
    for i, a in enumerate(mol.atoms):
        atoms[perm[i]] = a
    bonds = tuple(Bond(int(perm[b.begin]), int(perm[b.end]), b.order) for b in mol.bonds)
    rings = tuple(tuple(int(perm[i]) for i in ring) for ring in mol.rings)
    return MolGraph(tuple(atoms), bonds, rings, mol.source_smiles)


# Metric references

def auc_pairs(scores, labels) -> float:
    """ROC AUC as the fraction of (positive, negative) pairs ranked correctly, ties 1/2."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    pos, neg = s[y == 1], s[y == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))


def aupr_sweep(scores, labels) -> float:
    """Average precision by trying every distinct score as a threshold."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    n_pos = int(y.sum())
    area, prev_recall = 0.0, 0.0
    for t in sorted(set(s.tolist()), reverse=True):
        predicted = s >= t
        tp = int((predicted & (y == 1)).sum())
        precision = tp / int(predicted.sum())
        recall = tp / n_pos
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return area


# Graph references

def wiener_floyd(mol: MolGraph) -> int:
    n = mol.n_atoms
    D = np.full((n, n), np.inf)
    np.fill_diagonal(D, 0)
    for b in mol.bonds:
        D[b.begin, b.end] = D[b.end, b.begin] = 1
    for k in range(n):
        D = np.minimum(D, D[:, [k]] + D[[k], :])
    finite = D[np.triu_indices(n, 1)]
    return int(finite[np.isfinite(finite)].sum())


HALOGENS = {"F", "Cl", "Br", "I"}


def atom_compatible(q, qa, ma) -> bool:
    """Pattern-atom semantics as documented in the catalog header."""
    if q.wildcard == "any":
        return True
    if q.wildcard == "halogen":
        return ma.element in HALOGENS
    same = qa.element == ma.element and qa.is_aromatic == ma.is_aromatic
    charge_ok = not q.charge_fixed or qa.formal_charge == ma.formal_charge
    h_ok = q.h_count is None or q.h_count == ma.explicit_h + ma.implicit_h
    return same and charge_ok and h_ok


def brute_force_atom_sets(pattern, mol: MolGraph) -> set[frozenset[int]]:
    """Atom sets of every injective map that preserves atom and bond constraints."""
    q = pattern.graph
    bonds = {frozenset((b.begin, b.end)): b.order for b in mol.bonds}
    found = set()
    for image in itertools.permutations(range(mol.n_atoms), q.n_atoms):
        if not all(atom_compatible(pattern.queries[i], q.atoms[i], mol.atoms[image[i]])
                   for i in range(q.n_atoms)):
            continue
        if all(bonds.get(frozenset((image[b.begin], image[b.end]))) == b.order for b in q.bonds):
            found.add(frozenset(image))
    return found


_PATTERN_PREFIXES = ("", "", "[WILDCARD:any]", "[WILDCARD:halogen]", "[CH2]", "[NH2]", "c", "[N+]", "[O-]")


def random_pattern_text(rng: np.random.Generator, max_atoms: int = 4) -> str:
    """A small connected query, optionally led by a wildcard or constrained atom."""
    prefix = str(rng.choice(_PATTERN_PREFIXES))
    body = random_chain(rng, int(rng.integers(1, max_atoms)), ring_prob=0.1)
    return prefix + body


_BOND_TEXT = {"single": "-", "double": "=", "triple": "#", "aromatic": ":"}


def subgraph_pattern_text(rng: np.random.Generator, mol: MolGraph, max_atoms: int = 4) -> str:
    """Query text for a random connected piece of ``mol`` (a spanning tree of it),
    with one atom sometimes swapped for a wildcard."""
    k = int(rng.integers(1, min(max_atoms, mol.n_atoms) + 1))
    start = int(rng.integers(mol.n_atoms))
    order, parent = [start], {start: -1}
    while len(order) < k:
        frontier = [(w, u) for u in order for w in mol.neighbors[u] if w not in parent]
        if not frontier:
            break
        w, u = frontier[int(rng.integers(len(frontier)))]
        parent[w] = u
        order.append(w)
    wild = order[int(rng.integers(len(order)))] if rng.random() < 0.3 else None

    def symbol(i: int) -> str:
        if i == wild:
            return "[WILDCARD:any]"
        a = mol.atoms[i]
        text = a.element.lower() if a.is_aromatic else a.element
        if a.formal_charge:
            return f"[{text}{'+' if a.formal_charge > 0 else '-'}]"
        return text

    def write(u: int) -> str:
        kids = [w for w in order if parent.get(w) == u]
        out = symbol(u)
        for j, w in enumerate(kids):
            piece = _BOND_TEXT[mol.bond_between(u, w).order] + write(w)
            out += piece if j == len(kids) - 1 else f"({piece})"
        return out

    return write(start)


# Gradient checking

def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|, |n|, floor); the floor keeps near-zero entries meaningful."""
    a, n = np.asarray(analytic, float), np.asarray(numeric, float)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def central_differences(f, arr: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(arr, dtype=float)
    for ix in np.ndindex(arr.shape):
        old = arr[ix]
        arr[ix] = old + eps
        up = f()
        arr[ix] = old - eps
        down = f()
        arr[ix] = old
        grad[ix] = (up - down) / (2 * eps)
    return grad
