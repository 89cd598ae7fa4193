import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import (brute_force_atom_sets, permute_mol, random_pattern_text, random_smiles,
                     subgraph_pattern_text)
from stemtox.alerts import (CatalogLoadError, alert_patterns, catalog_hash, has_match, load_catalog,
                            make_pattern, match, parse_catalog, screen)
from stemtox.chem import parse_smiles

CATALOG = load_catalog()
SMALL = [p for p in CATALOG if p.n_atoms <= 6]


def hit_ids(smiles):
    return {h.pattern_id for h in screen(parse_smiles(smiles), CATALOG)}


def test_shipped_alerts_present():
    ids = {p.id for p in alert_patterns(CATALOG)}
    assert {"TA322", "TA324", "TA326", "TA329", "TA342", "TA344", "TA436"} <= ids


def test_nitro_hits_nitrobenzene():
    nitro = make_pattern("nitro", "c[N+](=O)[O-]")
    assert len(match(nitro, parse_smiles("O=[N+]([O-])c1ccccc1"))) >= 1


def test_aromatic_pattern_misses_cyclohexane():
    assert match(make_pattern("ar", "cccccc"), parse_smiles("C1CCCCC1")) == []


def test_pattern_larger_than_molecule():
    assert match(make_pattern("big", "CCCC"), parse_smiles("CC")) == []


@pytest.mark.parametrize("smiles, alert", [
    ("Nc1ccccc1", "TA322"),
    ("CN(C)Cl", "TA436"),
    ("O=[N+]([O-])c1ccccc1", "TA329"),
    ("CN(C)N=O", "TA324"),
    ("c1ccccc1N=Nc1ccccc1", "TA326"),
    ("ClCCl", "TA342"),
    ("ClCCN(C)CCCl", "TA344"),
])
def test_screen_finds_alert(smiles, alert):
    assert alert in hit_ids(smiles)


def test_methane_screens_empty():
    assert screen(parse_smiles("C"), alert_patterns(CATALOG)) == []


def test_hits_are_distinct_atom_sets():
    hits = match(make_pattern("cc", "cc"), parse_smiles("c1ccccc1"))
    assert len(hits) == 6


def test_catalog_parse_errors():
    with pytest.raises(CatalogLoadError):
        parse_catalog("A\tC\nA\tCC\n")
    with pytest.raises(CatalogLoadError):
        parse_catalog("broken-line-without-tab\n")


def test_catalog_hash_tracks_content():
    a = parse_catalog("A\tCC\n")
    b = parse_catalog("A\tCO\n")
    assert catalog_hash(a) != catalog_hash(b)
    assert catalog_hash(a) == catalog_hash(parse_catalog("# comment\nA\tCC\n"))


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matcher_equals_brute_force(seed):
    rng = np.random.default_rng(seed)
    mol = parse_smiles(random_smiles(rng, 6))
    source = rng.integers(3)
    if source == 0:
        pattern = SMALL[int(rng.integers(len(SMALL)))]
    elif source == 1:
        pattern = make_pattern("rand", random_pattern_text(rng))
    else:
        pattern = make_pattern("piece", subgraph_pattern_text(rng, mol))
    got = {frozenset(h.mapping) for h in match(pattern, mol)}
    assert got == brute_force_atom_sets(pattern, mol)
    assert has_match(pattern, mol) == bool(got)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_hits_follow_relabeling(seed):
    rng = np.random.default_rng(seed)
    mol = parse_smiles(random_smiles(rng, 10))
    perm = rng.permutation(mol.n_atoms)
    moved = permute_mol(mol, perm)
    for p in alert_patterns(CATALOG) + SMALL[:20]:
        before = {frozenset(int(perm[i]) for i in h.mapping) for h in match(p, mol)}
        assert before == {frozenset(h.mapping) for h in match(p, moved)}
