"""Retrosynthesis templates: extraction, the two matching predicates, application."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .chem import Atom, Bond, BondOrder, MolGraph, canonical_key
from .chem.canon import canonical_order
from .pattern import (
    ANY_BOND,
    PatternEdge,
    PatternGraph,
    PatternNode,
    contains,
    find_matches,
    parse_pattern,
    pattern_key,
    write_pattern,
)

log = logging.getLogger(__name__)

MAX_ARITY = 5

ReactantSet = list[MolGraph]


class TemplateError(ValueError):
    pass


class UnmappedProductAtomError(TemplateError):
    pass


class EmptyCenterError(TemplateError):
    pass


class ArityError(TemplateError):
    pass


@dataclass(frozen=True)
class ReactionRecord:
    record_id: str
    product: MolGraph
    reactants: tuple[MolGraph, ...]
    reaction_class: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "reactants", tuple(self.reactants))
        maps: dict[int, int] = {}
        for ri, r in enumerate(self.reactants):
            for a in r.atoms:
                if a.map_label is None:
                    continue
                if a.map_label in maps:
                    raise UnmappedProductAtomError(f"{self.record_id}: map label {a.map_label} repeated among reactants")
                maps[a.map_label] = ri
        seen = set()
        for a in self.product.atoms:
            if a.map_label is None or a.map_label not in maps:
                raise UnmappedProductAtomError(f"{self.record_id}: product atom without a reactant counterpart")
            if a.map_label in seen:
                raise UnmappedProductAtomError(f"{self.record_id}: map label {a.map_label} repeated in product")
            seen.add(a.map_label)

    @property
    def truth_key(self) -> tuple[bytes, ...]:
        return reactant_set_key(self.reactants)


def reactant_set_key(reactants: Iterable[MolGraph]) -> tuple[bytes, ...]:
    """Order-free identity of a reactant set (sorted canonical keys)."""
    return tuple(sorted(canonical_key(r) for r in reactants))


@dataclass(frozen=True)
class RetroTemplate:
    """``product_pattern >> reactant_patterns``; shared map labels pair the atoms."""

    product_pattern: PatternGraph
    reactant_patterns: tuple[PatternGraph, ...]
    class_tags: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "reactant_patterns", tuple(self.reactant_patterns))
        object.__setattr__(self, "class_tags", frozenset(self.class_tags))
        if not self.reactant_patterns:
            raise TemplateError("template needs at least one reactant pattern")
        pmaps = [n.map_label for n in self.product_pattern.nodes]
        if any(m is None for m in pmaps):
            raise TemplateError("every product-pattern node must carry a map label")
        owner: dict[int, int] = {}
        for i, rp in enumerate(self.reactant_patterns):
            for n in rp.nodes:
                if n.map_label is None:
                    if n.element is None:
                        raise TemplateError("unmapped reactant atoms need a concrete element")
                    continue
                if n.map_label not in pmaps:
                    raise TemplateError(f"reactant map label {n.map_label} missing from the product pattern")
                if n.map_label in owner:
                    raise TemplateError(f"map label {n.map_label} appears in two reactant patterns")
                owner[n.map_label] = i
        if set(owner) != set(pmaps):
            raise TemplateError("some product-pattern atoms have no reactant counterpart")

    @property
    def n_reactants(self) -> int:
        return len(self.reactant_patterns)

    @cached_property
    def _canonical(self) -> tuple[str, str]:
        return _canonical_template(self)

    @property
    def template_key(self) -> str:
        """Canonical template text; equal for templates identical up to map renumbering."""
        return self._canonical[0]

    @property
    def center_key(self) -> str:
        return self._canonical[1]

    def with_classes(self, tags: Iterable[int]) -> "RetroTemplate":
        return RetroTemplate(self.product_pattern, self.reactant_patterns, frozenset(tags))

    def __str__(self) -> str:
        return self.template_key


# ---------------------------------------------------------------------------
# canonical form
# ---------------------------------------------------------------------------

_SIDE_PRODUCT, _SIDE_REACTANT, _SIDE_GROUP = 0, 1, 2
_EDGE_MAP, _EDGE_GROUP = 10, 11


def _wrap(text: str, p: PatternGraph) -> str:
    return f"({text})" if p.n_components() > 1 else text


def _canonical_template(t: RetroTemplate) -> tuple[str, str]:
    # union graph: product nodes, reactant nodes, one group node per reactant
    # pattern; map correspondences and group membership become labeled edges
    labels: list[tuple] = []
    edges: list[tuple[int, int, int]] = []
    p = t.product_pattern
    for n in p.nodes:
        labels.append((_SIDE_PRODUCT,) + n.invariant())
    edges += [(e.a, e.b, e.order) for e in p.edges]
    pos_of_map = {n.map_label: i for i, n in enumerate(p.nodes)}
    offsets = []
    for rp in t.reactant_patterns:
        base = len(labels)
        offsets.append(base)
        for n in rp.nodes:
            labels.append((_SIDE_REACTANT,) + n.invariant())
        edges += [(base + e.a, base + e.b, e.order) for e in rp.edges]
        for k, n in enumerate(rp.nodes):
            if n.map_label is not None:
                edges.append((pos_of_map[n.map_label], base + k, _EDGE_MAP))
    groups = []
    for i, rp in enumerate(t.reactant_patterns):
        g = len(labels)
        groups.append(g)
        labels.append((_SIDE_GROUP, -200, -200, -200, -200))
        edges += [(g, offsets[i] + k, _EDGE_GROUP) for k in range(len(rp.nodes))]
    rank = canonical_order(labels, edges)

    prank = rank[:len(p.nodes)]
    order = sorted(range(len(p.nodes)), key=lambda i: prank[i])
    new_map = {p.nodes[i].map_label: k + 1 for k, i in enumerate(order)}

    def relabel(pg: PatternGraph) -> PatternGraph:
        nodes = [
            PatternNode(n.element, n.charge, n.aromatic, n.hcount,
                        None if n.map_label is None else new_map[n.map_label])
            for n in pg.nodes
        ]
        return PatternGraph(nodes, pg.edges)

    prod_text = write_pattern(relabel(p), maps=True, rank=prank)
    pieces = []
    for i in sorted(range(len(t.reactant_patterns)), key=lambda i: rank[groups[i]]):
        rp = t.reactant_patterns[i]
        rrank = rank[offsets[i]:offsets[i] + len(rp.nodes)]
        pieces.append(_wrap(write_pattern(relabel(rp), maps=True, rank=rrank), rp))
    return f"{prod_text}>>{'.'.join(pieces)}", pattern_key(p)


def split_top_level(text: str, sep: str = ".") -> list[str]:
    out, depth, start = [], 0, 0
    for i, ch in enumerate(text):
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        elif ch == sep and depth == 0:
            out.append(text[start:i])
            start = i + 1
    out.append(text[start:])
    return out


def parse_template(text: str, class_tags: Iterable[int] = ()) -> RetroTemplate:
    if text.count(">>") != 1:
        raise TemplateError("template must contain exactly one '>>'")
    lhs, rhs = (s.strip() for s in text.split(">>"))
    product = parse_pattern(lhs)
    reactants = []
    for piece in split_top_level(rhs):
        piece = piece.strip()
        if piece.startswith("(") and piece.endswith(")"):
            piece = piece[1:-1]
        reactants.append(parse_pattern(piece))
    return RetroTemplate(product, tuple(reactants), frozenset(class_tags))


# ---------------------------------------------------------------------------
# extraction
# ---------------------------------------------------------------------------


def contributing_reactants(rxn: ReactionRecord) -> list[MolGraph]:
    pmaps = {a.map_label for a in rxn.product.atoms}
    return [r for r in rxn.reactants if any(a.map_label in pmaps for a in r.atoms)]


def _node(atom: Atom, with_h: bool, map_label: Optional[int]) -> PatternNode:
    return PatternNode(atom.element, atom.formal_charge, atom.aromatic,
                       atom.explicit_h if with_h else None, map_label)


def extract_template(rxn: ReactionRecord, radius: int = 1) -> RetroTemplate:
    """Template for ``rxn``: changed atoms grown by ``radius`` bond hops.

    Changed atoms are mapped product atoms whose charge, H count, aromatic
    flag or labeled bond set differs from their reactant counterpart
    (breaking a bond to an atom absent from the product counts). All
    reactant atoms absent from the product become leaving atoms. Changed
    atoms keep their H counts in the patterns; context atoms do not.
    """
    P = rxn.product
    reactants = contributing_reactants(rxn)
    pmap = P.map_index()
    if len(pmap) != len(P.atoms):
        raise UnmappedProductAtomError(f"{rxn.record_id}: unmapped product atom")
    rloc: dict[int, tuple[int, int]] = {}
    for ri, r in enumerate(reactants):
        for j, a in enumerate(r.atoms):
            if a.map_label in pmap:
                rloc[a.map_label] = (ri, j)
    missing = set(pmap) - set(rloc)
    if missing:
        raise UnmappedProductAtomError(f"{rxn.record_id}: product maps {sorted(missing)} absent from reactants")

    changed: set[int] = set()
    for i, pa in enumerate(P.atoms):
        ri, j = rloc[pa.map_label]
        r = reactants[ri]
        ra = r.atoms[j]
        if (pa.element, pa.formal_charge, pa.explicit_h, pa.aromatic) != (
                ra.element, ra.formal_charge, ra.explicit_h, ra.aromatic):
            changed.add(i)
            continue
        pn = {(P.atoms[u].map_label, o) for u, o in P.adjacency[i]}
        rn = set()
        for u, o in r.adjacency[j]:
            mu = r.atoms[u].map_label
            if mu is None or mu not in pmap:
                rn = None
                break
            rn.add((mu, o))
        if rn != pn:
            changed.add(i)
    if not changed:
        raise EmptyCenterError(f"{rxn.record_id}: no reaction center detected")

    selected = set(changed)
    frontier = set(changed)
    for _ in range(radius):
        frontier = {u for v in frontier for u, _ in P.adjacency[v]} - selected
        selected |= frontier
    sel = sorted(selected)
    pos = {v: k for k, v in enumerate(sel)}
    prod_nodes = [_node(P.atoms[v], v in changed, P.atoms[v].map_label) for v in sel]
    prod_edges = [PatternEdge(pos[b.a], pos[b.b], int(b.order)) for b in P.bonds if b.a in pos and b.b in pos]
    product_pattern = PatternGraph(prod_nodes, prod_edges)

    changed_maps = {P.atoms[v].map_label for v in changed}
    selected_maps = {P.atoms[v].map_label for v in sel}
    reactant_patterns = []
    for ri, r in enumerate(reactants):
        keep = [j for j, a in enumerate(r.atoms) if a.map_label in selected_maps
                or a.map_label is None or a.map_label not in pmap]
        if not any(r.atoms[j].map_label in selected_maps for j in keep):
            raise TemplateError(f"{rxn.record_id}: reactant {ri} has no atom in the template")
        rpos = {j: k for k, j in enumerate(keep)}
        nodes = []
        for j in keep:
            a = r.atoms[j]
            if a.map_label in selected_maps:
                nodes.append(_node(a, a.map_label in changed_maps, a.map_label))
            else:
                nodes.append(_node(a, True, None))
        edges = [PatternEdge(rpos[b.a], rpos[b.b], int(b.order)) for b in r.bonds if b.a in rpos and b.b in rpos]
        reactant_patterns.append(PatternGraph(nodes, edges))
    tags = frozenset() if rxn.reaction_class is None else frozenset([rxn.reaction_class])
    return RetroTemplate(product_pattern, tuple(reactant_patterns), tags)


# ---------------------------------------------------------------------------
# predicates and application
# ---------------------------------------------------------------------------


def phi_match_template(O: MolGraph, T: RetroTemplate, known_templates) -> bool:
    """Template applicability: the center pattern occurs in ``O`` and T is a known rule.

    ``known_templates`` is any container of template keys.
    """
    return T.template_key in known_templates and contains(T.product_pattern, O)


def phi_match_reactants(O: MolGraph, T: RetroTemplate, R: Sequence[MolGraph]) -> bool:
    """Reactant-set consistency: |R| = N(T) and some permutation aligns patterns with reactants."""
    n = T.n_reactants
    if n > MAX_ARITY:
        raise ArityError(f"templates with more than {MAX_ARITY} reactants are not supported")
    if len(R) != n or not contains(T.product_pattern, O):
        return False
    hit = [[contains(rp, mol) for mol in R] for rp in T.reactant_patterns]
    return any(all(hit[i][perm[i]] for i in range(n)) for perm in itertools.permutations(range(n)))


def _rewrite(T: RetroTemplate, O: MolGraph, match: Sequence[int]) -> Optional[ReactantSet]:
    o = T.product_pattern
    atom_of_map = {o.nodes[k].map_label: x for k, x in enumerate(match)}
    matched = set(match)
    governed = {(min(match[e.a], match[e.b]), max(match[e.a], match[e.b])) for e in o.edges}

    atoms: list[Atom] = []
    owner: list[int] = []
    new_id: dict[int, int] = {}
    bonds: dict[tuple[int, int], BondOrder] = {}
    for ri, rp in enumerate(T.reactant_patterns):
        ids = []
        for node in rp.nodes:
            if node.map_label is not None:
                x = atom_of_map[node.map_label]
                pa = O.atoms[x]
                atom = Atom(
                    node.element or pa.element,
                    pa.formal_charge if node.charge is None else node.charge,
                    pa.aromatic if node.aromatic is None else node.aromatic,
                    pa.explicit_h if node.hcount is None else node.hcount,
                )
                new_id[x] = len(atoms)
            else:
                atom = Atom(node.element, node.charge or 0, bool(node.aromatic), node.hcount or 0)
            ids.append(len(atoms))
            atoms.append(atom)
            owner.append(ri)
        for e in rp.edges:
            order = e.order
            if order == ANY_BOND:
                na, nb = rp.nodes[e.a], rp.nodes[e.b]
                if na.map_label is None or nb.map_label is None:
                    return None
                order = O.bond_lookup.get((atom_of_map[na.map_label], atom_of_map[nb.map_label]))
                if order is None:
                    return None
            a, b = ids[e.a], ids[e.b]
            bonds[(min(a, b), max(a, b))] = BondOrder(order)
    for x, pa in enumerate(O.atoms):
        if x not in matched:
            new_id[x] = len(atoms)
            atoms.append(pa.unmapped())
            owner.append(-1)
    for b in O.bonds:
        if (b.a, b.b) in governed:
            continue
        a, c = new_id[b.a], new_id[b.b]
        key = (min(a, c), max(a, c))
        bonds.setdefault(key, b.order)

    # every fragment must be anchored to exactly one reactant, and each reactant be one fragment
    parent = list(range(len(atoms)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in bonds:
        parent[find(a)] = find(b)
    comp_owner: dict[int, int] = {}
    for v, ri in enumerate(owner):
        if ri < 0:
            continue
        root = find(v)
        if comp_owner.setdefault(root, ri) != ri:
            return None
    reactant_root: dict[int, int] = {}
    for root, ri in comp_owner.items():
        if ri in reactant_root:
            return None
        reactant_root[ri] = root
    members: dict[int, list[int]] = {}
    for v in range(len(atoms)):
        root = find(v)
        if root not in comp_owner:
            return None
        members.setdefault(comp_owner[root], []).append(v)

    out = []
    for ri in range(T.n_reactants):
        idx = members[ri]
        pos = {v: k for k, v in enumerate(idx)}
        sub_bonds = [Bond(pos[a], pos[b], o) for (a, b), o in bonds.items() if a in pos]
        try:
            out.append(MolGraph([atoms[v] for v in idx], sub_bonds))
        except ValueError:
            return None
    return out


def apply_template(T: RetroTemplate, O: MolGraph) -> list[ReactantSet]:
    """Candidate reactant sets from every match of the center pattern in ``O``.

    Results are deduplicated by reactant-set identity and keep the order of
    the first match producing them.
    """
    out: list[ReactantSet] = []
    seen: set[tuple[bytes, ...]] = set()
    for match in find_matches(T.product_pattern, O):
        rs = _rewrite(T, O, match)
        if rs is None:
            continue
        key = reactant_set_key(rs)
        if key in seen:
            continue
        seen.add(key)
        out.append(rs)
    return out


def dedup_reactant_sets(sets: Iterable[ReactantSet]) -> list[ReactantSet]:
    out, seen = [], set()
    for rs in sets:
        key = reactant_set_key(rs)
        if key not in seen:
            seen.add(key)
            out.append(rs)
    return out


# ---------------------------------------------------------------------------
# template files
# ---------------------------------------------------------------------------


@dataclass
class TemplateLoadReport:
    parsed: int = 0
    rejected: int = 0
    errors: list[tuple[int, str]] = field(default_factory=list)


def format_template_line(t: RetroTemplate) -> str:
    tags = ",".join(str(c) for c in sorted(t.class_tags))
    return f"{t.template_key}\t{tags}"


def write_templates(path, templates: Sequence[RetroTemplate]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in templates:
            fh.write(format_template_line(t) + "\n")


def load_templates(path) -> tuple[list[RetroTemplate], TemplateLoadReport]:
    """Read a template file; unparsable lines are counted and skipped."""
    report = TemplateLoadReport()
    out = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        body, _, tags = line.partition("\t")
        try:
            classes = [int(x) for x in tags.split(",") if x.strip()]
            out.append(parse_template(body.strip(), classes))
            report.parsed += 1
        except ValueError as exc:
            report.rejected += 1
            report.errors.append((lineno, str(exc)))
    if report.rejected:
        log.warning("%s: rejected %d of %d template lines", path, report.rejected, report.parsed + report.rejected)
    return out, report


def dedup_templates(templates: Iterable[RetroTemplate]) -> list[RetroTemplate]:
    """Merge templates with equal keys, unioning their class tags; order of first appearance."""
    merged: dict[str, RetroTemplate] = {}
    for t in templates:
        k = t.template_key
        if k in merged:
            merged[k] = merged[k].with_classes(merged[k].class_tags | t.class_tags)
        else:
            merged[k] = t
    return list(merged.values())
