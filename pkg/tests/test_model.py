import math
from types import SimpleNamespace

import numpy as np
import pytest

from oracles import joint_table
from retrologic.chem import parse_molecule
from retrologic.inference import atom_scores
from retrologic.model import (
    SUPPORT_CAP,
    CenterGroup,
    EmptySupportError,
    GlnModel,
    InMemoryCaches,
    ModelConfig,
    SupportCapError,
    SupportR,
    SupportT,
    joint_log_prob,
    log_softmax,
    prob_center,
    prob_reactants,
    prob_template,
    prob_template_given_center,
    restrict_by_class,
    softmax,
)
from retrologic.pattern import parse_pattern
from retrologic.templates import parse_template


def model(dim=6, seed=0, **kw):
    return GlnModel.init(ModelConfig(dim=dim, layers=2, seed=seed, **kw))


def zeroed(m, prefix=""):
    for k, v in m.parameters().items():
        if k.startswith(prefix):
            v[:] = 0.0
    return m


O = parse_molecule("CC(=O)Nc1ccc(O)cc1")
CENTER = parse_pattern("[C:1](=O)[NH:2]")


class Fixed:
    """Stand-in model returning preset energies."""

    def __init__(self, centers=None, templates=None, reactants=None):
        self.c, self.t, self.r = centers, templates, reactants

    def center_scores(self, O, support):
        return np.asarray(self.c, float)

    def template_scores(self, O, templates):
        return np.asarray(self.t, float)

    def reactant_scores(self, O, support):
        return np.asarray(self.r, float)


def fake_support(sizes):
    groups = []
    for gi, n in enumerate(sizes):
        temps = tuple(SimpleNamespace(template_key=f"t{gi}{k}", center_key=f"c{gi}", class_tags=frozenset([gi]))
                      for k in range(n))
        groups.append(CenterGroup(f"c{gi}", CENTER, temps))
    return SupportT("p", tuple(groups))


# -- energies -----------------------------------------------------------------


def test_zero_parameters_zero_energies():
    m = zeroed(model())
    assert m.v1(CENTER, O) == 0.0
    assert m.w2([parse_molecule("CC(=O)O")], O) == 0.0


def test_v1_is_a_sum_of_atom_terms():
    m = model(seed=3)
    assert abs(atom_scores(m, O, CENTER).sum() - m.v1(CENTER, O)) < 1e-9


def test_v1_relabel_invariant():
    m = model(seed=4)
    perm = list(np.random.default_rng(1).permutation(len(O.atoms)))
    assert abs(m.v1(CENTER, O) - m.v1(CENTER, O.permute(perm))) < 1e-12


def test_v2_set_semantics():
    m = model(seed=5)
    r1, r2 = parse_pattern("[C:1]=O"), parse_pattern("[N:2]")
    g3 = m.embed_graphs("g3", [O])[0]
    assert abs(m.v2([r1], O) - m.embed_graphs("g4", [r1])[0] @ g3) < 1e-12
    assert abs(m.v2([r1, r2], O) - m.v2([r2, r1], O)) < 1e-12
    assert abs(m.v2([r1, r1], O) - m.v2([r1], O)) < 1e-12


def test_w2_set_semantics():
    m = model(seed=6)
    a, b = parse_molecule("CC(=O)O"), parse_molecule("Nc1ccc(O)cc1")
    assert abs(m.w2([a], O) - m.embed_graphs("g6", [a])[0] @ m.embed_graphs("g5", [O])[0]) < 1e-12
    assert abs(m.w2([a, b], O) - m.w2([b, a], O)) < 1e-12
    assert zeroed(m, "g5.").w2([a, b], O) == 0.0


def test_set_scores_match_single_calls():
    m = model(seed=7, compatibility="bilinear")
    sets = [[parse_molecule("CCO")], [parse_molecule("CC"), parse_molecule("O")]]
    batched = m.set_scores("w2", sets, O)
    np.testing.assert_allclose(batched, [m.w2(s, O) for s in sets], rtol=1e-12)


# -- distributions ------------------------------------------------------------


def test_softmax_examples():
    np.testing.assert_allclose(softmax([math.log(2), 0.0]), [2 / 3, 1 / 3])
    np.testing.assert_allclose(softmax([0.0, math.log(3), 0.0]), [0.2, 0.6, 0.2])
    np.testing.assert_allclose(np.exp(log_softmax([1000.0, 0.0])), [1.0, 0.0])
    with pytest.raises(EmptySupportError):
        softmax([])


def test_center_distribution_hand_values():
    st = fake_support([1, 1])
    np.testing.assert_allclose(prob_center(Fixed(centers=[math.log(2), 0.0]), O, st), [2 / 3, 1 / 3])
    np.testing.assert_allclose(prob_center(Fixed(centers=[5.0]), O, fake_support([1])), [1.0])
    np.testing.assert_allclose(prob_center(Fixed(centers=[0.0] * 4), O, fake_support([1] * 4)), [0.25] * 4)


def test_reactant_distribution_hand_values():
    sr = SupportR("p", "t", ((parse_molecule("C"),), (parse_molecule("N"),), (parse_molecule("O"),)))
    T = SimpleNamespace(template_key="t")
    np.testing.assert_allclose(prob_reactants(Fixed(reactants=[0.0, math.log(3), 0.0]), O, T, sr), [0.2, 0.6, 0.2])


def test_chain_rule_skews_uneven_groups():
    st = fake_support([1, 2])
    fixed = Fixed(centers=[0.0, 0.0])
    fixed.template_scores = lambda O, temps: np.zeros(len(temps))
    p = prob_template(fixed, O, st)
    np.testing.assert_allclose(p, [0.5, 0.25, 0.25])
    np.testing.assert_allclose(prob_template_given_center(fixed, O, "c1", st), [0.5, 0.5])


def test_chain_rule_random_parameters(toy):
    m = model(seed=8)
    for rec in toy.records[:10]:
        st = toy.store.support_t(rec.product)
        pc = prob_center(m, rec.product, st)
        pt = prob_template(m, rec.product, st)
        assert abs(pt.sum() - 1.0) < 1e-12
        pos = 0
        for gi, g in enumerate(st.groups):
            cond = prob_template_given_center(m, rec.product, g.center_key, st)
            np.testing.assert_allclose(pt[pos:pos + len(cond)], pc[gi] * cond, rtol=1e-12)
            pos += len(cond)


def test_joint_matches_enumeration_and_sums_to_one(toy):
    m = model(seed=9)
    for rec in toy.records[:8]:
        table = joint_table(m, rec.product, toy.templates)
        total = 0.0
        for t in toy.store.support_t(rec.product).templates:
            sr = toy.store.support_r(rec.product, t)
            for rs, key in zip(sr.candidates, sr.keys):
                jl = joint_log_prob(m, rec.product, t, rs, toy.store)
                assert not jl.miss
                assert abs(math.exp(jl.value) - table[(t.template_key, key)]) < 1e-12
                total += math.exp(jl.value)
        # templates with no candidate set carry probability mass that is not realized
        realized = sum(table.values())
        assert abs(total - realized) < 1e-12
        assert realized <= 1.0 + 1e-12


def test_joint_miss_flag(toy):
    m = model()
    rec = toy.records[0]
    other = next(t for t in toy.templates if toy.store.support_t(rec.product).locate(t.template_key) is None)
    assert joint_log_prob(m, rec.product, other, rec.reactants, toy.store).miss


def test_single_pair_log_prob_zero():
    t = parse_template("[CH0+0:1]-[OH0+0:2]>>[OH1+0:2].[CH0+0:1]-[OH1+0]")
    caches = InMemoryCaches([t])
    P = parse_molecule("CC(=O)OC")
    sr = caches.support_r(P, t)
    assert len(caches.support_t(P)) == 1 and len(sr) == 1
    assert joint_log_prob(model(), P, t, sr.candidates[0], caches).value == pytest.approx(0.0, abs=1e-12)


def test_restrict_by_class():
    st = fake_support([2, 1, 3])
    kept = restrict_by_class(st, 1)
    assert [g.center_key for g in kept.groups] == ["c1"]
    with pytest.raises(EmptySupportError):
        restrict_by_class(st, 99)


def test_support_cap():
    temps = [SimpleNamespace(template_key=f"t{k:05d}", center_key="c", product_pattern=CENTER)
             for k in range(SUPPORT_CAP + 1)]
    with pytest.raises(SupportCapError):
        SupportT.from_templates("p", temps)


def test_support_order_is_canonical(toy):
    rec = toy.records[0]
    st = toy.store.support_t(rec.product)
    again = SupportT.from_templates(st.product_id, list(reversed(st.templates)))
    assert [t.template_key for t in again.templates] == [t.template_key for t in st.templates]


@pytest.mark.parametrize("compat", ["inner", "bilinear"])
def test_save_load_roundtrip(tmp_path, compat):
    m = model(seed=11, compatibility=compat)
    path = tmp_path / "m.rlgp"
    m.save(path, {"note": "x"})
    back = GlnModel.load(path)
    for k, v in m.parameters().items():
        assert np.array_equal(back.parameters()[k], v)
    assert back.v1(CENTER, O) == m.v1(CENTER, O)


def test_bad_config():
    with pytest.raises(ValueError):
        ModelConfig(dim=0)
    with pytest.raises(ValueError):
        ModelConfig(compatibility="cosine")
