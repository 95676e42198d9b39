"""Synthetic atom-mapped toy corpus.

Each reaction couples two building blocks. In a block's text, map label 1
marks the atom that forms the new bond and map label 2 marks the root of the
leaving group (absent when the site gives up a hydrogen instead). Products
may contain several functional groups; the one actually formed follows a
fixed family order, which a model has to learn from data.

Within a family the leaving group of the first block depends on whether the
product contains fluorine, a feature outside the reaction center, so
same-center templates have to be told apart from the wider product context.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional

from .chem import Atom, Bond, BondOrder, MolGraph, parse_molecule, write_molecule

# Families in priority order. A block may carry functional groups made by
# lower-priority families (decoys) but never by higher-priority ones, so the
# bond actually formed is always the highest-priority site in the product.
FAMILIES = {
    "suzuki": 3,
    "amide": 1,
    "ester": 2,
    "ether": 5,
    "n_alkylation": 4,
}

BLOCKS = {
    "suzuki": (
        [
            "[Br:2][c:1]1ccc(NC(C)=O)cc1",
            "[Br:2][c:1]1ccc(C(=O)OC)cc1",
            "[Br:2][c:1]1ccc(OCC)cc1",
            "[Br:2][c:1]1ccc(CN2CCCCC2)cc1",
            "[Br:2][c:1]1cc(OCC)cc(C(=O)OC)c1",
            "[Br:2][c:1]1ccc(C(=O)NC)cc1",
            "[Br:2][c:1]1cc(F)c(OCC)cc1",
        ],
        [
            "[c:1]1([B:2](O)O)ccc(OCc2ccccc2)cc1",
            "[c:1]1([B:2](O)O)ccc(COC(C)=O)cc1",
            "[c:1]1([B:2](O)O)ccc(F)cc1",
            "[c:1]1([B:2](O)O)ccc(NC(C)=O)cc1",
        ],
    ),
    "amide": (
        [
            "C[C:1](=O)[Cl:2]",
            "c1ccccc1[C:1](=O)[Cl:2]",
            "Fc1ccc(cc1)[C:1](=O)[Cl:2]",
            "COC(=O)c1ccc(cc1)[C:1](=O)[Cl:2]",
            "CCOc1ccc(cc1)[C:1](=O)[Cl:2]",
            "C1CCN(CC1)Cc1ccc(cc1)[C:1](=O)[Cl:2]",
        ],
        [
            "C[NH2:1]",
            "CCOc1ccc(cc1)[NH2:1]",
            "COC(=O)c1ccc(cc1)[NH2:1]",
            "C1CCN(CC1)Cc1ccc(cc1)[NH2:1]",
            "c1ccccc1COc1ccc(cc1)[NH2:1]",
            "COC(=O)c1ccc(F)c(c1)[NH2:1]",
        ],
    ),
    "ester": (
        [
            "C[C:1](=O)[OH:2]",
            "c1ccccc1[C:1](=O)[OH:2]",
            "Fc1ccc(cc1)[C:1](=O)[OH:2]",
            "CCOc1ccc(cc1)[C:1](=O)[OH:2]",
            "C1CCN(CC1)Cc1ccc(cc1)[C:1](=O)[OH:2]",
        ],
        [
            "C[OH:1]",
            "c1ccccc1C[OH:1]",
            "CCOc1ccc(cc1)C[OH:1]",
            "Fc1ccc(cc1)C[OH:1]",
            "C1CCN(CC1)Cc1ccc(cc1)C[OH:1]",
        ],
    ),
    "ether": (
        [
            "C[CH2:1][Br:2]",
            "c1ccccc1[CH2:1][Br:2]",
        ],
        [
            "c1ccccc1[OH:1]",
            "Fc1ccc(cc1)[OH:1]",
            "C1CCN(CC1)Cc1ccc(cc1)[OH:1]",
            "C1CCN(CC1)Cc1cc(CN2CCCCC2)cc(c1)[OH:1]",
        ],
    ),
    "n_alkylation": (
        [
            "C[CH2:1][Br:2]",
            "c1ccccc1[CH2:1][Br:2]",
        ],
        [
            "C1CC[NH:1]CC1",
            "C1COCC[NH:1]1",
            "CC[NH:1]CC",
        ],
    ),
}


# family -> leaving-group substitution applied when the product contains fluorine
VARIANTS = {
    "suzuki": ("[Br:2]", "[I:2]"),
    "amide": ("[Cl:2]", "[OH:2]"),
    "ester": ("[OH:2]", "[Cl:2]"),
    "ether": ("[Br:2]", "[Cl:2]"),
    "n_alkylation": ("[Br:2]", "[Br:2]"),
}


def _has_fluorine(reaction_text: str) -> bool:
    product = parse_molecule(reaction_text.split(">>")[1])
    return any(a.element == "F" for a in product.atoms)


@dataclass(frozen=True)
class ToyReaction:
    family: str
    reaction_class: int
    text: str  # mapped "reactants>>product"


def _leaving(mol: MolGraph, site: int, root: Optional[int]) -> set[int]:
    if root is None:
        return set()
    out, stack = {root}, [root]
    while stack:
        v = stack.pop()
        for u, _ in mol.adjacency[v]:
            if u != site and u not in out:
                out.add(u)
                stack.append(u)
    return out


def couple(block_a: str, block_b: str) -> str:
    """Mapped reaction text joining the two marked sites with a single bond."""
    mols = [parse_molecule(block_a), parse_molecule(block_b)]
    pieces = []
    for m in mols:
        marks = {a.map_label: i for i, a in enumerate(m.atoms) if a.map_label is not None}
        site, root = marks[1], marks.get(2)
        pieces.append((m, site, _leaving(m, site, root), root is None))

    prod_atoms: list[Atom] = []
    prod_bonds: list[Bond] = []
    react_graphs = []
    sites = []
    label = 0
    for m, site, leave, takes_h in pieces:
        new_index = {}
        r_atoms = []
        for i, a in enumerate(m.atoms):
            if i in leave:
                r_atoms.append(Atom(a.element, a.formal_charge, a.aromatic, a.explicit_h))
                continue
            label += 1
            r_atoms.append(Atom(a.element, a.formal_charge, a.aromatic, a.explicit_h, label))
            h = a.explicit_h - 1 if (i == site and takes_h) else a.explicit_h
            new_index[i] = len(prod_atoms)
            prod_atoms.append(Atom(a.element, a.formal_charge, a.aromatic, h, label))
        react_graphs.append(MolGraph(r_atoms, m.bonds))
        for b in m.bonds:
            if b.a in new_index and b.b in new_index:
                prod_bonds.append(Bond(new_index[b.a], new_index[b.b], b.order))
        sites.append(new_index[site])
    prod_bonds.append(Bond(sites[0], sites[1], BondOrder.SINGLE))
    product = MolGraph(prod_atoms, prod_bonds)
    lhs = ".".join(write_molecule(r, maps=True) for r in react_graphs)
    return f"{lhs}>>{write_molecule(product, maps=True)}"


def all_reactions() -> list[ToyReaction]:
    out = []
    for family, cls in FAMILIES.items():
        first, second = BLOCKS[family]
        for a in first:
            for b in second:
                text = couple(a, b)
                if _has_fluorine(text):
                    old, new = VARIANTS[family]
                    text = couple(a.replace(old, new), b)
                out.append(ToyReaction(family, cls, text))
    return out


def make_splits(seed: int = 7, n_train: int = 50, n_test: int = 20, n_val: int = 10):
    """Seeded train/val/test splits of the shuffled reaction pool.

    Held-out records whose radius-1 template never occurs in the training
    split are skipped, so evaluation measures ranking rather than coverage.
    """
    from .data import parse_reaction
    from .templates import ReactionRecord, extract_template

    pool = all_reactions()
    random.Random(seed).shuffle(pool)

    def key_of(r: ToyReaction) -> str:
        prods, reacts = parse_reaction(r.text)
        return extract_template(ReactionRecord("x", prods[0], tuple(reacts)), 1).template_key

    train, rest = pool[:n_train], pool[n_train:]
    known = {key_of(r) for r in train}
    rest = [r for r in rest if key_of(r) in known]
    return train, rest[n_test:n_test + n_val], rest[:n_test]


def write_split(path, reactions: list[ToyReaction], prefix: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# record_id\treaction\tclass\n")
        for i, r in enumerate(reactions):
            fh.write(f"{prefix}{i:03d}\t{r.text}\t{r.reaction_class}\n")
