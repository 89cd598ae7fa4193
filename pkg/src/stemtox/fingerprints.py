"""Binary substructure fingerprints.

Three kinds are produced per molecule:

* ``path``: hashed linear paths of heavy atoms (0..max_path_len bonds);
* ``pathring``: the same path features hashed into a separate space, plus
  ring descriptors (size, aromaticity, element multiset);
* ``keys``: one bit per catalog pattern, set when the pattern embeds.

Hashing uses keyed BLAKE2b truncated to 64 bits, reduced modulo the bit
count, so bits are identical across platforms and Python versions.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .alerts import Pattern, has_match
from .chem import MolGraph

log = logging.getLogger(__name__)

PATH, PATHRING, KEYS = "path", "pathring", "keys"
MAX_PATHS = 100_000
_BOND_TOKEN = {"single": "-", "double": "=", "triple": "#", "aromatic": ":"}


class KindMismatch(ValueError):
    pass


@dataclass(frozen=True)
class FingerprintConfig:
    path_bits: int = 1024
    pathring_bits: int = 1024
    max_path_len: int = 7
    key_catalog: tuple[Pattern, ...] = ()
    hash_seed: int = 0x5EED

    def __post_init__(self):
        for bits in (self.path_bits, self.pathring_bits):
            if bits < 1 or bits & (bits - 1):
                raise ValueError(f"bit count {bits} is not a power of two")
        if self.max_path_len < 1:
            raise ValueError("max_path_len must be >= 1")


@dataclass(frozen=True)
class BitFingerprint:
    bits: np.ndarray
    kind: str

    def __len__(self) -> int:
        return len(self.bits)


@dataclass
class FeatureBlock:
    """A row (or matrix) of features with named columns and segment ranges."""

    values: np.ndarray
    names: list[str]
    segments: dict[str, tuple[int, int]] = field(default_factory=dict)

    @property
    def width(self) -> int:
        return len(self.names)

    def column_name(self, i: int) -> str:
        return self.names[i]

    def segment_of(self, i: int) -> str:
        for seg, (lo, hi) in self.segments.items():
            if lo <= i < hi:
                return seg
        raise IndexError(i)


def stable_hash(text: str, seed: int) -> int:
    key = int(seed).to_bytes(8, "little", signed=False)
    digest = hashlib.blake2b(text.encode(), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little")


def _atom_token(mol: MolGraph, i: int) -> str:
    a = mol.atoms[i]
    return a.element + ("a" if a.is_aromatic else "")


def path_strings(mol: MolGraph, max_len: int, limit: int = MAX_PATHS) -> list[str]:
    """Canonical strings of every simple heavy-atom path with 0..max_len bonds.

    Each undirected path is written in both directions and the
    lexicographically smaller token sequence is kept.
    """
    heavy = [i for i, a in enumerate(mol.atoms) if a.element != "H"]
    heavy_set = set(heavy)
    nbrs = mol.neighbors
    seen: set[tuple[int, ...]] = set()
    out: list[str] = []

    def tokens(path: list[int]) -> list[str]:
        toks = [_atom_token(mol, path[0])]
        for a, b in zip(path, path[1:]):
            toks.append(_BOND_TOKEN[mol.bond_between(a, b).order])
            toks.append(_atom_token(mol, b))
        return toks

    truncated = False
    stack = [[i] for i in reversed(heavy)]
    while stack:
        path = stack.pop()
        key = tuple(path) if path[0] <= path[-1] else tuple(reversed(path))
        if key not in seen:
            if len(seen) >= limit:
                truncated = True
                break
            seen.add(key)
            fwd = tokens(path)
            rev = fwd[::-1]
            out.append("".join(min(fwd, rev)))
        if len(path) - 1 < max_len:
            for w in reversed(nbrs[path[-1]]):
                if w in heavy_set and w not in path:
                    stack.append(path + [w])
    if truncated:
        log.warning("path enumeration capped at %d paths for %s", limit, mol.source_smiles)
    return out


def _hash_into(features: Sequence[str], prefix: str, n_bits: int, seed: int) -> np.ndarray:
    bits = np.zeros(n_bits, dtype=np.uint8)
    for f in features:
        bits[stable_hash(prefix + f, seed) % n_bits] = 1
    return bits


def path_fingerprint(mol: MolGraph, cfg: FingerprintConfig) -> BitFingerprint:
    feats = path_strings(mol, cfg.max_path_len)
    return BitFingerprint(_hash_into(feats, "path:", cfg.path_bits, cfg.hash_seed), PATH)


def ring_features(mol: MolGraph) -> list[str]:
    out = []
    for ring in mol.rings:
        arom = all(mol.atoms[i].is_aromatic for i in ring)
        elems = ".".join(sorted(mol.atoms[i].element for i in ring))
        kind = "arom" if arom else "aliph"
        out.append(f"ring:{len(ring)}:{kind}")
        out.append(f"ring:{len(ring)}:{kind}:{elems}")
    return out


def pathring_fingerprint(mol: MolGraph, cfg: FingerprintConfig) -> BitFingerprint:
    feats = path_strings(mol, cfg.max_path_len)
    bits = _hash_into(feats, "pathring:", cfg.pathring_bits, cfg.hash_seed)
    bits |= _hash_into(ring_features(mol), "pathring:", cfg.pathring_bits, cfg.hash_seed)
    return BitFingerprint(bits, PATHRING)


def key_fingerprint(mol: MolGraph, cfg: FingerprintConfig) -> BitFingerprint:
    bits = np.array([has_match(p, mol) for p in cfg.key_catalog], dtype=np.uint8)
    return BitFingerprint(bits, KEYS)


def fingerprint_names(cfg: FingerprintConfig) -> dict[str, list[str]]:
    return {
        KEYS: [f"key_{p.id}" for p in cfg.key_catalog],
        PATH: [f"path_{i}" for i in range(cfg.path_bits)],
        PATHRING: [f"pathring_{i}" for i in range(cfg.pathring_bits)],
    }


def concat_fp(a: BitFingerprint, b: BitFingerprint, c: BitFingerprint,
              names: dict[str, list[str]] | None = None) -> FeatureBlock:
    """Concatenate the three kinds in the fixed order keys, path, pathring."""
    by_kind = {}
    for fp in (a, b, c):
        if fp.kind in by_kind:
            raise KindMismatch(f"duplicate fingerprint kind {fp.kind!r}")
        by_kind[fp.kind] = fp
    if set(by_kind) != {KEYS, PATH, PATHRING}:
        raise KindMismatch(f"expected kinds keys/path/pathring, got {sorted(by_kind)}")
    values, cols, segments = [], [], {}
    start = 0
    for kind in (KEYS, PATH, PATHRING):
        fp = by_kind[kind]
        n = len(fp)
        if names is not None and len(names[kind]) == n:
            cols.extend(names[kind])
        else:
            cols.extend(f"{kind}_{i}" for i in range(n))
        values.append(fp.bits)
        segments[kind] = (start, start + n)
        start += n
    return FeatureBlock(np.concatenate(values).astype(np.uint8), cols, segments)


def fingerprint_block(mol: MolGraph, cfg: FingerprintConfig) -> FeatureBlock:
    return concat_fp(
        key_fingerprint(mol, cfg),
        path_fingerprint(mol, cfg),
        pathring_fingerprint(mol, cfg),
        names=fingerprint_names(cfg),
    )
