import numpy as np
import pytest

from oracles import brute_force_matches, random_molecule, random_pattern
from retrologic.chem import BondOrder, SmilesError, parse_molecule
from retrologic.pattern import ANY_BOND, contains, find_matches, parse_pattern, pattern_key, write_pattern


def test_parse_double_bond():
    p = parse_pattern("C=O")
    assert [n.element for n in p.nodes] == ["C", "O"]
    assert len(p.edges) == 1 and p.edges[0].order == BondOrder.DOUBLE


def test_parse_wildcards():
    p = parse_pattern("*~N")
    assert p.nodes[0].wildcard and p.nodes[1].element == "N"
    assert p.edges[0].order == ANY_BOND


def test_parse_mapped_aromatic():
    p = parse_pattern("[c:1]Br")
    assert p.nodes[0].aromatic and p.nodes[0].map_label == 1
    assert p.nodes[1].element == "Br" and p.edges[0].order == BondOrder.SINGLE


def test_duplicate_map_label_rejected():
    with pytest.raises(SmilesError):
        parse_pattern("[C:1][C:1]")


@pytest.mark.parametrize("pat,mol,count", [
    ("C=O", "CC(=O)O", 1),
    ("C", "CCO", 2),
    ("N", "CCO", 0),
    ("cc", "c1ccccc1", 12),
    ("CCCC", "CC", 0),
])
def test_match_counts(pat, mol, count):
    p, m = parse_pattern(pat), parse_molecule(mol)
    assert len(find_matches(p, m)) == count
    assert len(brute_force_matches(p, m)) == count
    assert contains(p, m) == (count > 0)


def test_matches_are_sorted_and_injective():
    ms = find_matches(parse_pattern("C~C"), parse_molecule("CC(C)C"))
    assert ms == sorted(ms)
    assert all(len(set(x)) == len(x) for x in ms)


def test_hydrogen_constraint():
    assert len(find_matches(parse_pattern("[CH3]"), parse_molecule("CCO"))) == 1


def test_random_pairs_agree_with_brute_force():
    rng = np.random.default_rng(21)
    for _ in range(200):
        p = random_pattern(rng, int(rng.integers(1, 5)))
        m = random_molecule(rng, int(rng.integers(1, 9)), max_h=2)
        assert find_matches(p, m) == brute_force_matches(p, m)


def test_pattern_key_ignores_maps_and_order():
    assert pattern_key(parse_pattern("[C:1](=[O:2])[OH1:3]")) == pattern_key(parse_pattern("[OH1:7][C:2]=O"))
    assert pattern_key(parse_pattern("C=O")) != pattern_key(parse_pattern("C-O"))


def test_write_pattern_roundtrip():
    for text in ["[c:1]Br", "*~N", "[C+0:1](=[O+0:2])-[NH1+0:3]", "[CH2]-N"]:
        p = parse_pattern(text)
        assert pattern_key(parse_pattern(write_pattern(p))) == pattern_key(p)
