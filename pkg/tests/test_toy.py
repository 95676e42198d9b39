from retrologic.data import records_from_row
from retrologic.templates import apply_template, extract_template, reactant_set_key
from retrologic.toy import all_reactions, make_splits


def test_every_toy_reaction_roundtrips():
    for i, r in enumerate(all_reactions()):
        rec = records_from_row(f"x{i}", r.text, r.reaction_class)[0]
        t = extract_template(rec, 1)
        assert rec.truth_key in {reactant_set_key(rs) for rs in apply_template(t, rec.product)}


def test_splits_are_seeded_and_disjoint():
    a = make_splits(7)
    b = make_splits(7)
    assert [[r.text for r in s] for s in a] == [[r.text for r in s] for s in b]
    texts = [r.text for s in a for r in s]
    assert len(texts) == len(set(texts))
    assert len(a[0]) == 50


def test_bundled_files_match_generator(toy):
    train, _, _ = make_splits(7)
    assert len(toy.records) == len(train)
