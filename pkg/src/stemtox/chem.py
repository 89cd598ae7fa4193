"""SMILES parsing into molecular graphs.

Supported grammar: organic-subset atoms (aliphatic and aromatic), bracket
atoms with explicit hydrogens and formal charge, ring closures (``1``..``9``
and ``%nn``), branches, the bond symbols ``- = # :`` and ``.`` for
disconnected components. Stereochemistry, isotopes, atom classes and
wildcards are rejected.

Aromaticity is read from lowercase notation and checked against ring
membership; it is never recomputed from electron counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

SINGLE, DOUBLE, TRIPLE, AROMATIC = "single", "double", "triple", "aromatic"
BOND_ORDER = {SINGLE: 1.0, DOUBLE: 2.0, TRIPLE: 3.0, AROMATIC: 1.5}
_BOND_SYMBOLS = {"-": SINGLE, "=": DOUBLE, "#": TRIPLE, ":": AROMATIC}

# standard atomic weights
ATOMIC_MASS = {
    "H": 1.008, "Li": 6.94, "Be": 9.012, "B": 10.81, "C": 12.011, "N": 14.007,
    "O": 15.999, "F": 18.998, "Na": 22.990, "Mg": 24.305, "Al": 26.982,
    "Si": 28.085, "P": 30.974, "S": 32.06, "Cl": 35.45, "K": 39.098,
    "Ca": 40.078, "Ti": 47.867, "V": 50.942, "Cr": 51.996, "Mn": 54.938,
    "Fe": 55.845, "Co": 58.933, "Ni": 58.693, "Cu": 63.546, "Zn": 65.38,
    "Ga": 69.723, "Ge": 72.630, "As": 74.922, "Se": 78.971, "Br": 79.904,
    "Rb": 85.468, "Sr": 87.62, "Zr": 91.224, "Mo": 95.95, "Ru": 101.07,
    "Rh": 102.91, "Pd": 106.42, "Ag": 107.87, "Cd": 112.41, "In": 114.82,
    "Sn": 118.71, "Sb": 121.76, "Te": 127.60, "I": 126.904, "Cs": 132.91,
    "Ba": 137.33, "Gd": 157.25, "W": 183.84, "Pt": 195.08, "Au": 196.97,
    "Hg": 200.59, "Tl": 204.38, "Pb": 207.2, "Bi": 208.98,
}

_ORGANIC = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
_AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
_AROMATIC_BRACKET = ("se", "as", "te", "b", "c", "n", "o", "p", "s")

# allowed valences for implicit-hydrogen assignment (organic subset only)
_VALENCES = {
    "B": (3,), "C": (4,), "N": (3, 5), "O": (2,), "P": (3, 5),
    "S": (2, 4, 6), "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,),
}

ELEMENT_VOCAB = ("C", "N", "O", "S", "P", "F", "Cl", "Br", "I", "B", "Si")
HALOGENS = frozenset({"F", "Cl", "Br", "I"})


class SmilesError(ValueError):
    """Base class for SMILES parse failures; ``offset`` is the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnbalancedParenthesis(SmilesError):
    pass


class UnclosedRingBond(SmilesError):
    pass


class UnknownElement(SmilesError):
    pass


class InvalidCharge(SmilesError):
    pass


class UnsupportedSyntax(SmilesError):
    pass


class AromaticityError(SmilesError):
    pass


@dataclass(frozen=True)
class Atom:
    element: str
    formal_charge: int = 0
    is_aromatic: bool = False
    explicit_h: int = 0
    implicit_h: int = 0
    degree: int = 0
    in_ring: bool = False

    @property
    def total_h(self) -> int:
        return self.explicit_h + self.implicit_h


@dataclass(frozen=True)
class Bond:
    begin: int
    end: int
    order: str = SINGLE

    @property
    def endpoints(self) -> tuple[int, int]:
        return (self.begin, self.end)

    @property
    def valence(self) -> float:
        return BOND_ORDER[self.order]


@dataclass(frozen=True)
class MolGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    rings: tuple[tuple[int, ...], ...]
    source_smiles: str = ""

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        nbrs: list[list[int]] = [[] for _ in self.atoms]
        for b in self.bonds:
            nbrs[b.begin].append(b.end)
            nbrs[b.end].append(b.begin)
        return tuple(tuple(n) for n in nbrs)

    @cached_property
    def bond_index(self) -> dict[tuple[int, int], Bond]:
        out = {}
        for b in self.bonds:
            out[(b.begin, b.end)] = b
            out[(b.end, b.begin)] = b
        return out

    def bond_between(self, i: int, j: int) -> Bond | None:
        return self.bond_index.get((i, j))

    @cached_property
    def ring_bonds(self) -> frozenset[frozenset[int]]:
        out = set()
        for ring in self.rings:
            for k in range(len(ring)):
                out.add(frozenset((ring[k], ring[(k + 1) % len(ring)])))
        return frozenset(out)


class AtomQuery(NamedTuple):
    """Extra constraints carried by atoms of a query (pattern) string."""

    wildcard: str | None = None
    charge_fixed: bool = False
    h_count: int | None = None


@dataclass
class _RawAtom:
    element: str
    aromatic: bool
    charge: int
    hcount: int | None  # None for organic-subset atoms
    offset: int
    query: AtomQuery = field(default_factory=AtomQuery)


def parse_smiles(smiles: str) -> MolGraph:
    """Parse a SMILES string into a :class:`MolGraph`.

    Raises a :class:`SmilesError` subclass carrying the byte offset of the
    offending token.
    """
    mol, _ = _parse(smiles, query=False)
    return mol


def parse_query(smiles: str) -> tuple[MolGraph, list[AtomQuery]]:
    """Parse a pattern string.

    Differs from :func:`parse_smiles` in three ways: lowercase atoms need not
    lie on a ring, bracket atoms carry charge/H constraints, and
    ``[WILDCARD:any]`` / ``[WILDCARD:halogen]`` atoms are accepted.
    """
    return _parse(smiles, query=True)


def _read_bracket(text: str, start: int, query: bool) -> tuple[_RawAtom, int]:
    close = text.find("]", start)
    if close < 0:
        raise UnsupportedSyntax("unterminated bracket atom", start)
    body = text[start + 1:close]
    pos = 0

    def at(k: int) -> int:
        return start + 1 + k

    if query and body.startswith("WILDCARD:"):
        kind = body[len("WILDCARD:"):]
        if kind not in ("any", "halogen"):
            raise UnknownElement(f"unknown wildcard {kind!r}", at(0))
        atom = _RawAtom("*", False, 0, None, start, AtomQuery(wildcard=kind))
        return atom, close + 1
    if not body:
        raise UnknownElement("empty bracket atom", start)
    if body[0].isdigit():
        raise UnsupportedSyntax("isotopes are not supported", at(0))

    element = None
    aromatic = False
    for sym in _AROMATIC_BRACKET:
        if body.startswith(sym):
            element, aromatic = sym.capitalize(), True
            pos = len(sym)
            break
    if element is None:
        if len(body) >= 2 and body[:2] in ATOMIC_MASS and body[1].islower():
            element, pos = body[:2], 2
        elif body[0] in ATOMIC_MASS:
            element, pos = body[0], 1
        else:
            raise UnknownElement(f"unknown element in [{body}]", at(0))

    if pos < len(body) and body[pos] == "@":
        raise UnsupportedSyntax("stereochemistry is not supported", at(pos))

    hcount = 0
    h_given = False
    if pos < len(body) and body[pos] == "H":
        h_given = True
        pos += 1
        digits = ""
        while pos < len(body) and body[pos].isdigit():
            digits += body[pos]
            pos += 1
        hcount = int(digits) if digits else 1

    charge = 0
    has_charge = pos < len(body) and body[pos] in "+-"
    if has_charge:
        sign_pos = pos
        sign = body[pos]
        run = 0
        while pos < len(body) and body[pos] == sign:
            run += 1
            pos += 1
        digits = ""
        while pos < len(body) and body[pos].isdigit():
            digits += body[pos]
            pos += 1
        if digits and run > 1:
            raise InvalidCharge("mixed charge notation", at(sign_pos))
        if pos < len(body) and body[pos] in "+-":
            raise InvalidCharge("malformed charge", at(pos))
        magnitude = int(digits) if digits else run
        if magnitude > 8:
            raise InvalidCharge(f"charge magnitude {magnitude} out of range", at(sign_pos))
        charge = magnitude if sign == "+" else -magnitude

    if pos < len(body):
        if body[pos] == ":":
            raise UnsupportedSyntax("atom classes are not supported", at(pos))
        if has_charge:
            raise InvalidCharge(f"unexpected {body[pos]!r} after charge", at(pos))
        raise UnknownElement(f"unexpected {body[pos]!r} in bracket atom", at(pos))

    q = AtomQuery(charge_fixed=True, h_count=hcount if h_given else None) if query else AtomQuery()
    return _RawAtom(element, aromatic, charge, hcount, start, q), close + 1


def _parse(smiles: str, query: bool) -> tuple[MolGraph, list[AtomQuery]]:
    if not isinstance(smiles, str) or not smiles:
        raise SmilesError("empty SMILES", 0)
    text = smiles
    atoms: list[_RawAtom] = []
    # (begin, end, order or None for implicit, explicit symbol offset)
    edges: list[tuple[int, int, str | None, int]] = []
    seen_pairs: set[frozenset[int]] = set()
    branch_stack: list[tuple[int | None, int]] = []
    rings: dict[int, tuple[int, str | None, int]] = {}
    prev: int | None = None
    pending: str | None = None
    pending_off = -1
    after_open = False

    def add_edge(a: int, b: int, order: str | None, off: int) -> None:
        key = frozenset((a, b))
        if a == b or key in seen_pairs:
            raise UnsupportedSyntax("duplicate or self bond", off)
        seen_pairs.add(key)
        edges.append((a, b, order, off))

    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        atom: _RawAtom | None = None
        if ch == "[":
            atom, j = _read_bracket(text, i, query)
        elif text.startswith(("Cl", "Br"), i):
            atom, j = _RawAtom(text[i:i + 2], False, 0, None, i), i + 2
        elif ch in _ORGANIC:
            atom, j = _RawAtom(ch, False, 0, None, i), i + 1
        elif ch in _AROMATIC_ORGANIC:
            atom, j = _RawAtom(ch.upper(), True, 0, None, i), i + 1

        if atom is not None:
            idx = len(atoms)
            atoms.append(atom)
            if prev is not None:
                add_edge(prev, idx, pending, pending_off if pending else i)
            elif pending is not None:
                raise UnsupportedSyntax("bond without preceding atom", pending_off)
            prev, pending, after_open = idx, None, False
            i = j
            continue

        if ch == "(":
            if prev is None or after_open:
                raise UnbalancedParenthesis("branch without preceding atom", i)
            if pending is not None:
                raise UnsupportedSyntax("bond symbol before branch", pending_off)
            branch_stack.append((prev, i))
            after_open = True
            i += 1
        elif ch == ")":
            if not branch_stack:
                raise UnbalancedParenthesis("unmatched ')'", i)
            if after_open or pending is not None:
                raise UnsupportedSyntax("empty branch or dangling bond", i)
            prev, _ = branch_stack.pop()
            i += 1
        elif ch in _BOND_SYMBOLS:
            if pending is not None:
                raise UnsupportedSyntax("consecutive bond symbols", i)
            pending, pending_off = _BOND_SYMBOLS[ch], i
            i += 1
        elif ch in "/\\":
            raise UnsupportedSyntax("directional bonds are not supported", i)
        elif ch == "$":
            raise UnsupportedSyntax("quadruple bonds are not supported", i)
        elif ch.isdigit() or ch == "%":
            start = i
            if ch == "%":
                digits = text[i + 1:i + 3]
                if len(digits) != 2 or not digits.isdigit():
                    raise UnsupportedSyntax("malformed %nn ring closure", i)
                label = int(digits)
                i += 3
            else:
                label = int(ch)
                i += 1
            if prev is None or after_open:
                raise UnsupportedSyntax("ring closure without atom", start)
            if label in rings:
                other, order, o_off = rings.pop(label)
                if pending is not None and order is not None and pending != order:
                    raise UnsupportedSyntax("conflicting ring-closure bonds", start)
                order = pending or order
                add_edge(other, prev, order, start)
            else:
                rings[label] = (prev, pending, start)
            pending = None
        elif ch == ".":
            if branch_stack:
                raise UnbalancedParenthesis("'.' inside branch", i)
            if pending is not None or prev is None:
                raise UnsupportedSyntax("misplaced '.'", i)
            prev = None
            i += 1
        elif ch == "*":
            raise UnsupportedSyntax("wildcard atoms are not supported", i)
        elif ch.isspace():
            raise UnsupportedSyntax("whitespace inside SMILES", i)
        else:
            raise UnknownElement(f"unknown symbol {ch!r}", i)

    if branch_stack:
        raise UnbalancedParenthesis("unclosed '('", branch_stack[-1][1])
    if rings:
        label = min(rings, key=lambda k: rings[k][2])
        raise UnclosedRingBond(f"ring bond {label} never closed", rings[label][2])
    if pending is not None:
        raise UnsupportedSyntax("dangling bond symbol", pending_off)
    if not atoms:
        raise SmilesError("no atoms", 0)

    n_atoms = len(atoms)
    pairs = [(a, b) for a, b, _, _ in edges]
    ring_list = sssr(n_atoms, pairs)
    ring_edges = set()
    for ring in ring_list:
        for k in range(len(ring)):
            ring_edges.add(frozenset((ring[k], ring[(k + 1) % len(ring)])))
    in_ring = [False] * n_atoms
    for ring in ring_list:
        for a in ring:
            in_ring[a] = True

    bonds = []
    for a, b, order, off in edges:
        cyclic = frozenset((a, b)) in ring_edges
        if order is None:
            both_arom = atoms[a].aromatic and atoms[b].aromatic
            order = AROMATIC if both_arom and (cyclic or query) else SINGLE
        elif order == AROMATIC and not cyclic and not query:
            raise AromaticityError("aromatic bond outside a ring", off)
        bonds.append(Bond(a, b, order))

    if not query:
        for k, atom in enumerate(atoms):
            if atom.aromatic and not in_ring[k]:
                raise AromaticityError("aromatic atom not in a ring", atom.offset)

    bsum = [0.0] * n_atoms
    heavy_deg = [0] * n_atoms
    for b in bonds:
        bsum[b.begin] += b.valence
        bsum[b.end] += b.valence
        if atoms[b.end].element != "H":
            heavy_deg[b.begin] += 1
        if atoms[b.begin].element != "H":
            heavy_deg[b.end] += 1

    out_atoms = []
    for k, raw in enumerate(atoms):
        if raw.hcount is None and raw.query.wildcard is None:
            implicit = _implicit_h(raw.element, bsum[k])
            explicit = 0
        else:
            implicit = 0
            explicit = raw.hcount or 0
        out_atoms.append(Atom(
            element=raw.element,
            formal_charge=raw.charge,
            is_aromatic=raw.aromatic,
            explicit_h=explicit,
            implicit_h=implicit,
            degree=heavy_deg[k],
            in_ring=in_ring[k],
        ))
    mol = MolGraph(tuple(out_atoms), tuple(bonds), tuple(ring_list), smiles)
    return mol, [a.query for a in atoms]


def _implicit_h(element: str, bond_sum: float) -> int:
    for v in _VALENCES[element]:
        if v >= bond_sum - 1e-9:
            return max(0, int(np.floor(v - bond_sum + 1e-9)))
    return 0


def sssr(n_atoms: int, pairs: list[tuple[int, int]]) -> list[tuple[int, ...]]:
    """Smallest set of smallest rings from Horton candidate cycles.

    Candidates are built from BFS shortest-path trees rooted at every vertex,
    then a minimum-weight cycle basis is chosen by Gaussian elimination over
    GF(2) on edge incidence bitsets.
    """
    if not pairs:
        return []
    adj: list[list[int]] = [[] for _ in range(n_atoms)]
    edge_id: dict[frozenset[int], int] = {}
    for e, (a, b) in enumerate(pairs):
        adj[a].append(b)
        adj[b].append(a)
        edge_id[frozenset((a, b))] = e
    for nb in adj:
        nb.sort()

    n_comp = 0
    seen = [False] * n_atoms
    for s in range(n_atoms):
        if not seen[s]:
            n_comp += 1
            stack = [s]
            seen[s] = True
            while stack:
                u = stack.pop()
                for w in adj[u]:
                    if not seen[w]:
                        seen[w] = True
                        stack.append(w)
    n_cycles = len(pairs) - n_atoms + n_comp
    if n_cycles == 0:
        return []

    candidates: dict[int, int] = {}  # edge bitset -> length
    for root in range(n_atoms):
        parent = {root: -1}
        order = [root]
        for u in order:
            for w in adj[u]:
                if w not in parent:
                    parent[w] = u
                    order.append(w)

        def path_edges(v: int) -> list[int]:
            out = []
            while parent[v] != -1:
                out.append(edge_id[frozenset((v, parent[v]))])
                v = parent[v]
            return out

        def path_nodes(v: int) -> set[int]:
            out = {v}
            while parent[v] != -1:
                v = parent[v]
                out.add(v)
            return out

        for (a, b), e in ((tuple(k), v) for k, v in edge_id.items()):
            if a not in parent or b not in parent:
                continue
            if parent.get(a) == b or parent.get(b) == a:
                continue
            if path_nodes(a) & path_nodes(b) != {root}:
                continue
            edges_in = path_edges(a) + path_edges(b) + [e]
            bits = 0
            for x in edges_in:
                bits |= 1 << x
            candidates.setdefault(bits, len(edges_in))

    basis: dict[int, int] = {}  # pivot bit -> reduced vector
    chosen: list[int] = []
    for bits, _ in sorted(candidates.items(), key=lambda kv: (kv[1], kv[0])):
        v = bits
        while v:
            pivot = v.bit_length() - 1
            if pivot in basis:
                v ^= basis[pivot]
            else:
                basis[pivot] = v
                chosen.append(bits)
                break
        if len(chosen) == n_cycles:
            break
    return [_cycle_atoms(bits, pairs) for bits in chosen]


def _cycle_atoms(bits: int, pairs: list[tuple[int, int]]) -> tuple[int, ...]:
    nbr: dict[int, list[int]] = {}
    e = 0
    while bits:
        if bits & 1:
            a, b = pairs[e]
            nbr.setdefault(a, []).append(b)
            nbr.setdefault(b, []).append(a)
        bits >>= 1
        e += 1
    start = min(nbr)
    ring = [start]
    prev, cur = None, start
    while True:
        nxt = [x for x in sorted(nbr[cur]) if x != prev]
        step = nxt[0]
        if step == start:
            break
        ring.append(step)
        prev, cur = cur, step
        if len(ring) > len(nbr):
            break
    return tuple(ring)


def adjacency(mol: MolGraph) -> np.ndarray:
    """Symmetric 0/1 adjacency matrix with zero diagonal."""
    n = mol.n_atoms
    A = np.zeros((n, n), dtype=np.int8)
    for b in mol.bonds:
        A[b.begin, b.end] = 1
        A[b.end, b.begin] = 1
    return A


def distance_matrix(mol: MolGraph) -> np.ndarray:
    """Topological distances by BFS from every atom; -1 marks unreachable pairs."""
    n = mol.n_atoms
    D = np.full((n, n), -1, dtype=np.int64)
    nbrs = mol.neighbors
    for s in range(n):
        D[s, s] = 0
        frontier = [s]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for u in frontier:
                for w in nbrs[u]:
                    if D[s, w] < 0:
                        D[s, w] = d
                        nxt.append(w)
            frontier = nxt
    return D


_DEGREE_BINS = 6
_CHARGE_VALUES = (-2, -1, 0, 1, 2)
_H_BINS = 5

ATOM_FEATURE_NAMES = (
    [f"elem_{e}" for e in ELEMENT_VOCAB] + ["elem_other"]
    + [f"degree_{d}" for d in range(_DEGREE_BINS)]
    + [f"charge_{c}" for c in _CHARGE_VALUES]
    + ["aromatic"]
    + [f"num_h_{h}" for h in range(_H_BINS)]
    + ["in_ring"]
)
N_ATOM_FEATURES = len(ATOM_FEATURE_NAMES)


def atom_features(mol: MolGraph) -> np.ndarray:
    """One row per atom, columns as in :data:`ATOM_FEATURE_NAMES`.

    Degree, charge and hydrogen counts beyond the encoded ranges are clipped
    into the last bin.
    """
    X = np.zeros((mol.n_atoms, N_ATOM_FEATURES), dtype=np.float64)
    n_elem = len(ELEMENT_VOCAB) + 1
    deg_off = n_elem
    chg_off = deg_off + _DEGREE_BINS
    arom_col = chg_off + len(_CHARGE_VALUES)
    h_off = arom_col + 1
    ring_col = h_off + _H_BINS
    for i, atom in enumerate(mol.atoms):
        e = ELEMENT_VOCAB.index(atom.element) if atom.element in ELEMENT_VOCAB else n_elem - 1
        X[i, e] = 1.0
        X[i, deg_off + min(atom.degree, _DEGREE_BINS - 1)] = 1.0
        X[i, chg_off + min(max(atom.formal_charge, -2), 2) + 2] = 1.0
        X[i, arom_col] = float(atom.is_aromatic)
        X[i, h_off + min(atom.total_h, _H_BINS - 1)] = 1.0
        X[i, ring_col] = float(atom.in_ring)
    return X
