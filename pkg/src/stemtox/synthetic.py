"""Seeded generator of small labelled molecules for end-to-end checks.

Molecules are built from ring or chain scaffolds carrying one to three
substituents. The label is 1 when the molecule contains an aromatic nitro
group or a primary aromatic amine, decided by substructure match rather than
by how the molecule was assembled. Negatives include near misses such as
aliphatic amines, aliphatic nitro groups and anilides.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .alerts import has_match, make_pattern
from .chem import parse_smiles

AROMATIC_NITRO = make_pattern("aromatic_nitro", "c[N+](=O)[O-]")
AROMATIC_AMINE = make_pattern("aromatic_amine", "[NH2]c")

TOXIC_GROUPS = ("N", "[N+](=O)[O-]")
DECOY_GROUPS = (
    "C", "CC", "O", "OC", "Cl", "F", "Br", "C(=O)O", "C(=O)N", "NC(=O)C", "CN",
    "C[N+](=O)[O-]", "S(=O)(=O)N", "C#N", "N(C)C", "OCC", "C=O", "CCN", "NC",
    "c2ccccc2", "Oc2ccccc2", "CC(=O)OC", "I", "C(F)(F)F",
)

# ring atom tokens; the symbol at each position may carry a substituent
AROMATIC_SCAFFOLDS = (
    ("c", "c", "c", "c", "c", "c"),  # benzene
    ("n", "c", "c", "c", "c", "c"),  # pyridine
    ("c", "c", "s", "c", "c"),  # thiophene
    ("c", "c", "o", "c", "c"),  # furan
)
ALIPHATIC_SCAFFOLDS = (
    ("C", "C", "C", "C", "C", "C"),
    ("C", "C", "C", "C", "C"),
    ("C", "C", "N", "C", "C", "C"),
    ("C", "C", "O", "C", "C", "C"),
)


def true_label(smiles: str) -> int:
    mol = parse_smiles(smiles)
    return int(has_match(AROMATIC_NITRO, mol) or has_match(AROMATIC_AMINE, mol))


def _ring_smiles(tokens: tuple[str, ...], subs: dict[int, str]) -> str:
    last = len(tokens) - 1
    parts = []
    for i, tok in enumerate(tokens):
        closure = "1" if i in (0, last) else ""
        branch = f"({subs[i]})" if i in subs else ""
        parts.append(tok + closure + branch)
    return "".join(parts)


def _substitutable(tokens: tuple[str, ...]) -> list[int]:
    return [i for i, t in enumerate(tokens) if t in ("c", "C")]


def _one(rng: np.random.Generator, positive: bool) -> str:
    kind = rng.random()
    if positive:
        tokens = AROMATIC_SCAFFOLDS[rng.integers(len(AROMATIC_SCAFFOLDS))]
        sites = _substitutable(tokens)
        n_sub = int(rng.integers(1, min(3, len(sites)) + 1))
        chosen = rng.choice(sites, n_sub, replace=False)
        subs = {int(chosen[0]): TOXIC_GROUPS[rng.integers(2)]}
        for s in chosen[1:]:
            pool = TOXIC_GROUPS + DECOY_GROUPS
            subs[int(s)] = pool[rng.integers(len(pool))]
        return _ring_smiles(tokens, subs)
    if kind < 0.55:
        tokens = AROMATIC_SCAFFOLDS[rng.integers(len(AROMATIC_SCAFFOLDS))]
    elif kind < 0.9:
        tokens = ALIPHATIC_SCAFFOLDS[rng.integers(len(ALIPHATIC_SCAFFOLDS))]
    else:
        chain = "C" * int(rng.integers(2, 6))
        pool = DECOY_GROUPS + TOXIC_GROUPS
        return chain + pool[rng.integers(len(pool))]
    sites = _substitutable(tokens)
    n_sub = int(rng.integers(1, min(3, len(sites)) + 1))
    chosen = rng.choice(sites, n_sub, replace=False)
    aliphatic = tokens[0] == "C" or tokens[1] == "C"
    pool = DECOY_GROUPS + (TOXIC_GROUPS if aliphatic else ())
    return _ring_smiles(tokens, {int(s): pool[rng.integers(len(pool))] for s in chosen})


def make_dataset(n: int = 400, seed: int = 0, positive_fraction: float = 0.5) -> list[tuple[str, int]]:
    """``n`` distinct SMILES with labels from the substructure oracle."""
    rng = np.random.default_rng(seed)
    out: dict[str, int] = {}
    n_pos_target = int(round(n * positive_fraction))
    n_pos = 0
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 200 * n:
            raise RuntimeError("could not generate enough distinct molecules")
        want_pos = n_pos < n_pos_target and (len(out) - n_pos >= n - n_pos_target or rng.random() < 0.5)
        smi = _one(rng, want_pos)
        if smi in out:
            continue
        label = true_label(smi)
        if label != want_pos:
            continue
        out[smi] = label
        n_pos += label
    return list(out.items())


def write_csv(rows: list[tuple[str, int]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["smiles", "label"])
        w.writerows(rows)
