"""Constitutional and topological descriptors with train-only scaling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chem import ATOMIC_MASS, ELEMENT_VOCAB, HALOGENS, MolGraph, distance_matrix


class EmptyAfterFilter(ValueError):
    pass


class SchemaMismatch(ValueError):
    pass


@dataclass(frozen=True)
class DescriptorVector:
    values: np.ndarray
    names: tuple[str, ...]


DESCRIPTOR_NAMES: tuple[str, ...] = (
    "mol_weight", "heavy_atoms", "n_hydrogens", "n_bonds", "n_rings",
    "n_aromatic_rings", "n_ring_atoms", "n_aromatic_atoms",
    *(f"count_{e}" for e in ELEMENT_VOCAB), "count_other",
    "n_heteroatoms", "n_halogens", "hbond_donors", "hbond_acceptors",
    "n_single_bonds", "n_double_bonds", "n_triple_bonds", "n_aromatic_bonds",
    "n_rotatable_bonds", "formal_charge_sum", "n_charged_atoms", "n_components",
    "wiener_index", "zagreb1", "zagreb2", "randic_index",
    "graph_radius", "graph_diameter", "fraction_sp3_carbon",
)


def wiener_index(mol: MolGraph) -> int:
    D = distance_matrix(mol)
    return int(D[np.triu_indices(mol.n_atoms, 1)].clip(min=0).sum())


def compute_descriptors(mol: MolGraph) -> DescriptorVector:
    atoms = mol.atoms
    n = mol.n_atoms
    deg = np.array([a.degree for a in atoms], dtype=np.float64)
    n_h = sum(a.total_h for a in atoms)
    mw = sum(ATOMIC_MASS[a.element] for a in atoms) + n_h * ATOMIC_MASS["H"]

    counts = {e: 0 for e in ELEMENT_VOCAB}
    other = 0
    for a in atoms:
        if a.element in counts:
            counts[a.element] += 1
        else:
            other += 1

    order_counts = {"single": 0, "double": 0, "triple": 0, "aromatic": 0}
    for b in mol.bonds:
        order_counts[b.order] += 1

    ring_bonds = mol.ring_bonds
    rotatable = sum(
        1 for b in mol.bonds
        if b.order == "single" and frozenset(b.endpoints) not in ring_bonds
        and deg[b.begin] > 1 and deg[b.end] > 1
    )

    D = distance_matrix(mol)
    finite = D >= 0
    wiener = int(D[np.triu_indices(n, 1)].clip(min=0).sum())
    ecc = np.where(finite, D, 0).max(axis=1)
    n_comp = len({tuple(np.flatnonzero(row)) for row in finite})

    zagreb1 = float((deg ** 2).sum())
    zagreb2 = float(sum(deg[b.begin] * deg[b.end] for b in mol.bonds))
    randic = float(sum(1.0 / np.sqrt(deg[b.begin] * deg[b.end]) for b in mol.bonds
                       if deg[b.begin] > 0 and deg[b.end] > 0))

    carbons = [i for i, a in enumerate(atoms) if a.element == "C"]
    sp3 = 0
    for i in carbons:
        if atoms[i].is_aromatic:
            continue
        if all(mol.bond_between(i, j).order == "single" for j in mol.neighbors[i]):
            sp3 += 1

    values = [
        mw, n, n_h, len(mol.bonds), len(mol.rings),
        sum(1 for r in mol.rings if all(atoms[i].is_aromatic for i in r)),
        sum(a.in_ring for a in atoms), sum(a.is_aromatic for a in atoms),
        *(counts[e] for e in ELEMENT_VOCAB), other,
        sum(a.element not in ("C", "H") for a in atoms),
        sum(a.element in HALOGENS for a in atoms),
        sum(a.element in ("N", "O") and a.total_h > 0 for a in atoms),
        sum(a.element in ("N", "O") for a in atoms),
        order_counts["single"], order_counts["double"], order_counts["triple"],
        order_counts["aromatic"], rotatable,
        sum(a.formal_charge for a in atoms), sum(a.formal_charge != 0 for a in atoms),
        n_comp, wiener, zagreb1, zagreb2, randic,
        float(ecc.min()), float(ecc.max()),
        sp3 / len(carbons) if carbons else 0.0,
    ]
    return DescriptorVector(np.asarray(values, dtype=np.float64), DESCRIPTOR_NAMES)


@dataclass(frozen=True)
class ScalerState:
    n_columns: int
    kept_columns: np.ndarray
    mins: np.ndarray
    maxs: np.ndarray
    threshold: float = 0.05


def fit_filter_scale(train: np.ndarray, threshold: float = 0.05) -> ScalerState:
    """Fit the variance filter and min-max ranges on training rows.

    Columns with any non-finite value are dropped, as are columns whose
    population variance on raw values is below ``threshold`` or whose range
    is zero.
    """
    train = np.asarray(train, dtype=np.float64)
    if train.ndim != 2 or train.shape[0] < 2:
        raise ValueError("need a 2-D matrix with at least two rows")
    finite = np.isfinite(train).all(axis=0)
    safe = np.where(np.isfinite(train), train, 0.0)
    var = safe.var(axis=0)
    lo, hi = safe.min(axis=0), safe.max(axis=0)
    keep = finite & (var >= threshold) & (hi > lo)
    kept = np.flatnonzero(keep)
    if kept.size == 0:
        raise EmptyAfterFilter("every descriptor column was removed by the filter")
    return ScalerState(train.shape[1], kept, lo[kept], hi[kept], threshold)


def apply_scale(state: ScalerState, rows: np.ndarray) -> np.ndarray:
    """Project onto kept columns, min-max scale, and clip to [0, 1]."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != state.n_columns:
        raise SchemaMismatch(f"expected {state.n_columns} columns, got {rows.shape}")
    sub = rows[:, state.kept_columns]
    scaled = (sub - state.mins) / (state.maxs - state.mins)
    return np.clip(np.nan_to_num(scaled, nan=0.0), 0.0, 1.0)
