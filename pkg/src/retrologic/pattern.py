"""Subgraph patterns and the matching predicate.

A pattern node carries conjunctive constraints; ``None`` means the property
is unconstrained. Matching is a monomorphism search (pattern edges must be
present in the molecule, extra molecule bonds are allowed).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Optional, Sequence

from .chem.canon import canonical_order
from .chem.graph import ELEMENT_INDEX, Atom, BondOrder, MolGraph
from .chem.smiles import (
    AROMATIC_ORGANIC,
    ATOMIC_NUMBER,
    WILDCARD_BOND,
    SmilesError,
    _charge_text,
    parse_raw,
    write_graph,
)

ANY_BOND = WILDCARD_BOND


@dataclass(frozen=True)
class PatternNode:
    element: Optional[str] = None
    charge: Optional[int] = None
    aromatic: Optional[bool] = None
    hcount: Optional[int] = None
    map_label: Optional[int] = None

    @property
    def wildcard(self) -> bool:
        return self.element is None

    def accepts(self, atom: Atom) -> bool:
        return (
            (self.element is None or self.element == atom.element)
            and (self.charge is None or self.charge == atom.formal_charge)
            and (self.aromatic is None or self.aromatic == atom.aromatic)
            and (self.hcount is None or self.hcount == atom.explicit_h)
        )

    def invariant(self) -> tuple:
        def opt(x):
            return -100 if x is None else int(x)

        elem = -1 if self.element is None else ELEMENT_INDEX[self.element]
        return (elem, opt(self.charge), opt(self.aromatic), opt(self.hcount))

    def unmapped(self) -> "PatternNode":
        return PatternNode(self.element, self.charge, self.aromatic, self.hcount)


@dataclass(frozen=True)
class PatternEdge:
    a: int
    b: int
    order: int  # BondOrder value or ANY_BOND

    def accepts(self, order: BondOrder) -> bool:
        return self.order == ANY_BOND or self.order == order


@dataclass(frozen=True)
class PatternGraph:
    nodes: tuple[PatternNode, ...]
    edges: tuple[PatternEdge, ...] = ()

    def __init__(self, nodes: Sequence[PatternNode], edges: Sequence[PatternEdge] = ()):
        nodes = tuple(nodes)
        norm = []
        seen = set()
        for e in edges:
            a, b = (e.a, e.b) if e.a < e.b else (e.b, e.a)
            if a == b or a < 0 or b >= len(nodes):
                raise ValueError(f"invalid pattern edge ({e.a}, {e.b})")
            if (a, b) in seen:
                raise ValueError(f"duplicate pattern edge ({a}, {b})")
            seen.add((a, b))
            norm.append(PatternEdge(a, b, int(e.order)))
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", tuple(sorted(norm, key=lambda e: (e.a, e.b))))

    def __len__(self) -> int:
        return len(self.nodes)

    @cached_property
    def adjacency(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        adj: list[list[tuple[int, int]]] = [[] for _ in self.nodes]
        for e in self.edges:
            adj[e.a].append((e.b, e.order))
            adj[e.b].append((e.a, e.order))
        return tuple(tuple(sorted(x)) for x in adj)

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def map_index(self) -> dict[int, int]:
        return {n.map_label: i for i, n in enumerate(self.nodes) if n.map_label is not None}

    def strip_maps(self) -> "PatternGraph":
        return PatternGraph([n.unmapped() for n in self.nodes], self.edges)

    def remove_node(self, i: int) -> "PatternGraph":
        keep = [k for k in range(len(self.nodes)) if k != i]
        pos = {old: new for new, old in enumerate(keep)}
        edges = [PatternEdge(pos[e.a], pos[e.b], e.order) for e in self.edges if i not in (e.a, e.b)]
        return PatternGraph([self.nodes[k] for k in keep], edges)

    def n_components(self) -> int:
        parent = list(range(len(self.nodes)))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for e in self.edges:
            parent[find(e.a)] = find(e.b)
        return len({find(i) for i in range(len(self.nodes))})

    @cached_property
    def _match_plan(self) -> tuple[list[int], list[int]]:
        """Node visiting order and, per position, an already-placed neighbor (or -1).

        Highest-degree node first, then repeatedly the highest-degree node
        adjacent to the placed set; a new fragment starts when none is adjacent.
        """
        n = len(self.nodes)
        placed = [False] * n
        order: list[int] = []
        anchor: list[int] = []
        while len(order) < n:
            frontier = {}
            for v in order:
                for u, _ in self.adjacency[v]:
                    if not placed[u] and u not in frontier:
                        frontier[u] = v
            pool = list(frontier) if frontier else [v for v in range(n) if not placed[v]]
            nxt = min(pool, key=lambda v: (-self.degree(v), v))
            order.append(nxt)
            anchor.append(frontier.get(nxt, -1))
            placed[nxt] = True
        return order, anchor

    def __str__(self) -> str:
        return write_pattern(self)


MatchMap = tuple[int, ...]


def parse_pattern(text: str) -> PatternGraph:
    """Parse the restricted pattern dialect (see docs/grammar.md)."""
    raw = parse_raw(text, pattern=True)
    nodes = [PatternNode(ra.element, ra.charge, ra.aromatic, ra.hcount, ra.map_label) for ra in raw.atoms]
    maps = [n.map_label for n in nodes if n.map_label is not None]
    if len(maps) != len(set(maps)):
        raise SmilesError("duplicate map label in pattern", 0, text)
    edges = []
    for a, b, order in raw.bonds:
        if order is None:
            both = nodes[a].aromatic is True and nodes[b].aromatic is True
            order = BondOrder.AROMATIC if both else BondOrder.SINGLE
        edges.append(PatternEdge(a, b, int(order)))
    return PatternGraph(nodes, edges)


def _node_text(node: PatternNode, maps: bool) -> str:
    if node.element is None:
        sym = "*"
    elif node.aromatic is None or node.element == "Other":
        sym = f"#{ATOMIC_NUMBER[node.element]}"
    elif node.aromatic:
        if node.element.lower() not in AROMATIC_ORGANIC:
            raise ValueError(f"aromatic {node.element} cannot be written")
        sym = node.element.lower()
    else:
        sym = node.element
    h = "" if node.hcount is None else f"H{node.hcount}"
    if node.charge is None:
        charge = ""
    elif node.charge == 0:
        charge = "+0"
    else:
        charge = _charge_text(node.charge)
    label = f":{node.map_label}" if maps and node.map_label is not None else ""
    if sym == "*" and not (h or charge or label):
        return "*"
    return f"[{sym}{h}{charge}{label}]"


_EDGE_TEXT = {ANY_BOND: "~", 1: "-", 2: "=", 3: "#", 4: ":"}


def pattern_rank(p: PatternGraph, use_maps: bool = False) -> list[int]:
    labels = [n.invariant() + ((n.map_label or 0,) if use_maps else ()) for n in p.nodes]
    return canonical_order(labels, [(e.a, e.b, e.order) for e in p.edges])


def write_pattern(p: PatternGraph, maps: bool = True, rank: Optional[Sequence[int]] = None) -> str:
    """Pattern text with every bond symbol explicit.

    Node order follows the map-free canonical ranking unless ``rank`` is given.
    """
    if not p.nodes:
        raise ValueError("cannot write an empty pattern")
    if rank is None:
        rank = pattern_rank(p)
    n = len(p.nodes)
    return write_graph(
        n,
        p.adjacency,
        rank,
        lambda v: _node_text(p.nodes[v], maps),
        lambda u, v, o: _EDGE_TEXT[o],
    )


def pattern_key(p: PatternGraph) -> str:
    """Canonical text of ``p`` with map labels removed (used to identify centers)."""
    return write_pattern(p.strip_maps(), maps=False)


def _iter_matches(p: PatternGraph, m: MolGraph) -> Iterator[MatchMap]:
    n, N = len(p.nodes), len(m.atoms)
    if n == 0 or n > N:
        return
    order, anchor = p._match_plan
    bonds = m.bond_lookup
    assign = [-1] * n
    used = [False] * N
    padj = p.adjacency

    def candidates(pos: int) -> Iterator[int]:
        a = anchor[pos]
        if a < 0:
            return iter(range(N))
        return (u for u, _ in m.adjacency[assign[a]])

    def feasible(v: int, x: int) -> bool:
        if used[x] or not p.nodes[v].accepts(m.atoms[x]):
            return False
        if m.degree(x) < len(padj[v]):
            return False
        for u, eorder in padj[v]:
            y = assign[u]
            if y < 0:
                continue
            order = bonds.get((x, y))
            if order is None or not (eorder == ANY_BOND or eorder == order):
                return False
        return True

    # iterative backtracking: stack of candidate iterators per position
    iters: list[Iterator[int]] = [candidates(0)]
    pos = 0
    while pos >= 0:
        v = order[pos]
        if assign[v] >= 0:
            used[assign[v]] = False
            assign[v] = -1
        advanced = False
        for x in iters[pos]:
            if feasible(v, x):
                assign[v] = x
                used[x] = True
                advanced = True
                break
        if not advanced:
            iters.pop()
            pos -= 1
            continue
        if pos == n - 1:
            yield tuple(assign)
            continue
        pos += 1
        iters.append(candidates(pos))


def find_matches(p: PatternGraph, m: MolGraph) -> list[MatchMap]:
    """All injective embeddings of ``p`` in ``m``, sorted by assignment vector.

    Entry ``k`` of a match is the molecule atom assigned to pattern node ``k``.
    Automorphic images are all reported.
    """
    return sorted(_iter_matches(p, m))


def contains(p: PatternGraph, m: MolGraph) -> bool:
    for _ in _iter_matches(p, m):
        return True
    return False
