import pytest

from retrologic.chem import canonical_key, parse_molecule
from retrologic.data import records_from_row
from retrologic.pattern import find_matches
from retrologic.templates import (
    MAX_ARITY,
    ArityError,
    EmptyCenterError,
    ReactionRecord,
    RetroTemplate,
    TemplateError,
    apply_template,
    dedup_templates,
    extract_template,
    load_templates,
    parse_template,
    phi_match_reactants,
    phi_match_template,
    reactant_set_key,
    write_templates,
)

ESTER = "[CH3:1][C:2](=[O:3])[OH:4].[OH:5][CH3:6]>>[CH3:1][C:2](=[O:3])[O:5][CH3:6]"
ETHER = "[CH3:1][CH2:2][Br:3].[OH:4][CH2:5][CH3:6]>>[CH3:1][CH2:2][O:4][CH2:5][CH3:6]"


def record(text, rid="r"):
    return records_from_row(rid, text, None)[0]


def keys(*smiles):
    return tuple(sorted(canonical_key(parse_molecule(s)) for s in smiles))


@pytest.fixture
def ester():
    return extract_template(record(ESTER), radius=1)


@pytest.mark.parametrize("radius", [0, 1])
def test_ester_roundtrip(radius):
    rec = record(ESTER)
    t = extract_template(rec, radius)
    got = [reactant_set_key(rs) for rs in apply_template(t, rec.product)]
    assert rec.truth_key in got
    assert keys("CC(=O)O", "CO") in got


def test_radius0_center_is_the_ester_bond():
    t = extract_template(record(ESTER), radius=0)
    assert sorted(n.element for n in t.product_pattern.nodes) == ["C", "O"]
    assert len(t.product_pattern.edges) == 1


def test_apply_on_methyl_acetate(ester):
    out = apply_template(ester, parse_molecule("CC(=O)OC"))
    assert [reactant_set_key(rs) for rs in out] == [keys("CC(=O)O", "CO")]


def test_apply_absent_pattern_gives_nothing(ester):
    assert apply_template(ester, parse_molecule("CC")) == []


def test_symmetric_matches_deduplicated():
    t = extract_template(record(ETHER), radius=1)
    O = parse_molecule("CCOCC")
    assert len(find_matches(t.product_pattern, O)) == 2
    assert [reactant_set_key(rs) for rs in apply_template(t, O)] == [keys("CCBr", "CCO")]


def test_empty_center_rejected():
    with pytest.raises(EmptyCenterError):
        extract_template(record("[CH3:1][OH:2]>>[CH3:1][OH:2]"))


def test_unmapped_product_atom_rejected():
    with pytest.raises(TemplateError):
        ReactionRecord("x", parse_molecule("[CH3:1]O"), (parse_molecule("[CH3:1]O"),))


def test_phi_match_template(ester):
    known = {ester.template_key}
    assert phi_match_template(parse_molecule("CC(=O)OC"), ester, known)
    assert not phi_match_template(parse_molecule("CC"), ester, known)
    assert not phi_match_template(parse_molecule("CC(=O)OC"), ester, set())


def test_phi_match_reactants(ester):
    O = parse_molecule("CC(=O)OC")
    acid, meoh, ethane = (parse_molecule(s) for s in ("CC(=O)O", "CO", "CC"))
    assert phi_match_reactants(O, ester, [acid, meoh])
    assert phi_match_reactants(O, ester, [meoh, acid])
    assert not phi_match_reactants(O, ester, [acid])
    assert not phi_match_reactants(O, ester, [ethane, meoh])


def test_arity_limit():
    n = MAX_ARITY + 1
    chain = "-".join(f"[C:{i}]" for i in range(1, n + 1))
    t = parse_template(chain + ">>" + ".".join(f"[C:{i}]" for i in range(1, n + 1)))
    with pytest.raises(ArityError):
        phi_match_reactants(parse_molecule("C" * n), t, [parse_molecule("C")] * n)


def test_template_key_ignores_map_numbering(ester):
    renumbered = ESTER.replace(":1]", ":11]").replace(":5]", ":15]")
    assert extract_template(record(renumbered)).template_key == ester.template_key


def test_parse_template_roundtrip(ester):
    again = parse_template(ester.template_key)
    assert again.template_key == ester.template_key
    assert again.center_key == ester.center_key


def test_template_validation():
    with pytest.raises(TemplateError):
        parse_template("[C:1]-[O:2]>>[C:1]")  # product atom 2 has no reactant counterpart
    with pytest.raises(TemplateError):
        parse_template("[C:1]-[O:2]>>[C:1]-[O:2].[C:1]")


def test_dedup_unions_class_tags(ester):
    merged = dedup_templates([ester.with_classes([1]), ester.with_classes([2])])
    assert len(merged) == 1 and merged[0].class_tags == {1, 2}


def test_corpus_roundtrip_and_dedup_bound(toy):
    seen = set()
    for rec in toy.records:
        t = extract_template(rec, 1)
        seen.add(t.template_key)
        assert rec.truth_key in {reactant_set_key(rs) for rs in apply_template(t, rec.product)}
    assert len(seen) <= len(toy.records)


def test_candidates_satisfy_reactant_predicate(toy):
    for rec in toy.records[:20]:
        for t in toy.store.support_t(rec.product).templates:
            for rs in apply_template(t, rec.product):
                assert phi_match_reactants(rec.product, t, rs)


def test_template_file_roundtrip(tmp_path, ester):
    path = tmp_path / "t.templates"
    write_templates(path, [ester.with_classes([3])])
    with open(path, "a") as fh:
        fh.write("garbage>>\t1\n")
    loaded, report = load_templates(path)
    assert report.parsed == 1 and report.rejected == 1
    assert loaded[0].template_key == ester.template_key and loaded[0].class_tags == {3}


def test_reaction_template_type():
    t = parse_template("[C:1]-[O:2]>>[C:1]-[OH1].[OH1:2]")
    assert isinstance(t, RetroTemplate) and t.n_reactants == 2
