"""Substructure matching against a catalog of query patterns.

Used for structural-alert screening and, through
:func:`stemtox.fingerprints.key_fingerprint`, for substructure keys.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .chem import HALOGENS, AtomQuery, MolGraph, SmilesError, parse_query


class CatalogLoadError(ValueError):
    pass


@dataclass(frozen=True)
class Pattern:
    id: str
    pattern: str
    graph: MolGraph
    queries: tuple[AtomQuery, ...]
    description: str = ""

    @property
    def n_atoms(self) -> int:
        return self.graph.n_atoms


@dataclass(frozen=True)
class AlertHit:
    pattern_id: str
    mapping: tuple[int, ...]  # query atom index -> molecule atom index


def make_pattern(pid: str, text: str, description: str = "") -> Pattern:
    graph, queries = parse_query(text)
    if not _connected(graph):
        raise ValueError(f"pattern {pid!r} is not connected")
    return Pattern(pid, text, graph, tuple(queries), description)


def _connected(g: MolGraph) -> bool:
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for w in g.neighbors[u]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == g.n_atoms


def parse_catalog(text: str) -> list[Pattern]:
    patterns = []
    names = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.rstrip("\n").split("\t")
        if len(fields) < 2 or not fields[0] or not fields[1]:
            raise CatalogLoadError(f"line {lineno}: expected NAME<TAB>PATTERN")
        name, pat = fields[0].strip(), fields[1].strip()
        if name in names:
            raise CatalogLoadError(f"line {lineno}: duplicate pattern name {name!r}")
        try:
            patterns.append(make_pattern(name, pat, fields[2].strip() if len(fields) > 2 else ""))
        except (SmilesError, ValueError) as exc:
            raise CatalogLoadError(f"line {lineno}: {exc}") from exc
        names.add(name)
    return patterns


def load_catalog(path: str | Path | None = None) -> list[Pattern]:
    """Load a pattern file; ``None`` loads the shipped catalog."""
    return parse_catalog(catalog_text(path))


def catalog_text(path: str | Path | None = None) -> str:
    if path is None:
        return resources.files("stemtox").joinpath("data/catalog.tsv").read_text()
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise CatalogLoadError(str(exc)) from exc


def catalog_hash(patterns: Sequence[Pattern]) -> str:
    h = hashlib.sha256()
    for p in patterns:
        h.update(f"{p.id}\t{p.pattern}\n".encode())
    return h.hexdigest()


def atom_matches(q: AtomQuery, qatom, matom) -> bool:
    if q.wildcard == "any":
        return True
    if q.wildcard == "halogen":
        return matom.element in HALOGENS
    if qatom.element != matom.element or qatom.is_aromatic != matom.is_aromatic:
        return False
    if q.charge_fixed and qatom.formal_charge != matom.formal_charge:
        return False
    if q.h_count is not None and q.h_count != matom.total_h:
        return False
    return True


def _search_order(pattern: Pattern, cand_count: list[int]) -> list[int]:
    g = pattern.graph
    start = min(range(g.n_atoms), key=lambda i: (cand_count[i], i))
    order = [start]
    placed = {start}
    while len(order) < g.n_atoms:
        frontier = {w for u in order for w in g.neighbors[u] if w not in placed}
        nxt = min(frontier, key=lambda i: (cand_count[i], i))
        order.append(nxt)
        placed.add(nxt)
    return order


def match(pattern: Pattern, mol: MolGraph, first_only: bool = False) -> list[AlertHit]:
    """All embeddings of ``pattern`` in ``mol``, one per distinct atom set.

    Backtracking search: the query atom with the fewest compatible molecule
    atoms is placed first, then atoms adjacent to already-placed ones, each
    candidate checked against every bond to a placed neighbor.
    """
    q = pattern.graph
    if q.n_atoms > mol.n_atoms:
        return []
    compat = [
        [j for j in range(mol.n_atoms) if atom_matches(pattern.queries[i], q.atoms[i], mol.atoms[j])]
        for i in range(q.n_atoms)
    ]
    if any(not c for c in compat):
        return []
    compat_sets = [set(c) for c in compat]
    order = _search_order(pattern, [len(c) for c in compat])
    # for each position, the earlier-placed query neighbors and their bonds
    back = []
    for k, qi in enumerate(order):
        earlier = [(qj, q.bond_between(qi, qj).order) for qj in order[:k] if q.bond_between(qi, qj)]
        back.append(earlier)

    mapping = [-1] * q.n_atoms
    used: set[int] = set()
    hits: list[AlertHit] = []
    seen_sets: set[frozenset[int]] = set()

    def extend(k: int) -> bool:
        if k == len(order):
            key = frozenset(mapping)
            if key not in seen_sets:
                seen_sets.add(key)
                hits.append(AlertHit(pattern.id, tuple(mapping)))
            return first_only
        qi = order[k]
        if back[k]:
            anchor = mapping[back[k][0][0]]
            candidates = sorted(mol.neighbors[anchor])
        else:
            candidates = compat[qi]
        for mj in candidates:
            if mj in used or mj not in compat_sets[qi]:
                continue
            ok = True
            for qj, order_ in back[k]:
                b = mol.bond_between(mj, mapping[qj])
                if b is None or b.order != order_:
                    ok = False
                    break
            if not ok:
                continue
            mapping[qi] = mj
            used.add(mj)
            stop = extend(k + 1)
            used.discard(mj)
            mapping[qi] = -1
            if stop:
                return True
        return False

    extend(0)
    return hits


def has_match(pattern: Pattern, mol: MolGraph) -> bool:
    return bool(match(pattern, mol, first_only=True))


def screen(mol: MolGraph, catalog: Iterable[Pattern]) -> list[AlertHit]:
    """Hits of every catalog pattern, in catalog order."""
    out: list[AlertHit] = []
    for p in catalog:
        out.extend(match(p, mol))
    return out


def alert_patterns(catalog: Iterable[Pattern]) -> list[Pattern]:
    """The toxicophore entries (ids starting with ``TA``)."""
    return [p for p in catalog if p.id.startswith("TA")]
