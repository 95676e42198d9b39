"""Canonical labeling by partition refinement and individualization.

Works on any graph given as per-node labels (mutually comparable tuples) and
labeled undirected edges. The search branches on every vertex of the first
non-singleton cell, except that structural twins (same label, same labeled
neighborhood) are explored once since swapping them is an automorphism.
The canonical order is the leaf whose certificate is lexicographically
smallest.
"""

from __future__ import annotations

from typing import Hashable, Sequence

Edge = tuple[int, int, Hashable]


def _refine(colors: list[int], adj: list[list[tuple[Hashable, int]]]) -> list[int]:
    """Iterate color refinement until the number of cells is stable.

    Colors are dense ranks and stay ordered consistently with the incoming
    ordering, so refinement commutes with relabeling.
    """
    n = len(colors)
    n_cells = len(set(colors))
    while True:
        sigs = [
            (colors[v], tuple(sorted((lab, colors[u]) for lab, u in adj[v])))
            for v in range(n)
        ]
        ranks = {s: r for r, s in enumerate(sorted(set(sigs)))}
        new = [ranks[s] for s in sigs]
        m = len(ranks)
        colors = new
        if m == n_cells:
            return colors
        n_cells = m


def _rank(keys: Sequence) -> list[int]:
    order = {k: r for r, k in enumerate(sorted(set(keys)))}
    return [order[k] for k in keys]


def _individualize(colors: list[int], v: int) -> list[int]:
    out = [2 * c + 1 for c in colors]
    out[v] = 2 * colors[v]
    return _rank(out)


def canonical_order(labels: Sequence[tuple], edges: Sequence[Edge]) -> list[int]:
    """Return ``rank`` with ``rank[v]`` the canonical position of node ``v``."""
    n = len(labels)
    if n == 0:
        return []
    adj: list[list[tuple[Hashable, int]]] = [[] for _ in range(n)]
    for a, b, lab in edges:
        adj[a].append((lab, b))
        adj[b].append((lab, a))
    nbr_sig = [tuple(sorted((lab, labels[u]) for lab, u in adj[v])) for v in range(n)]
    init = [(labels[v], len(adj[v]), tuple(sorted(lab for lab, _ in adj[v]))) for v in range(n)]
    colors = _refine(_rank(init), adj)

    neighbor_sets = [frozenset((u, lab) for lab, u in adj[v]) for v in range(n)]

    def twins(u: int, v: int) -> bool:
        if labels[u] != labels[v] or nbr_sig[u] != nbr_sig[v]:
            return False
        nu = {(x, lab) for x, lab in neighbor_sets[u] if x != v}
        nv = {(x, lab) for x, lab in neighbor_sets[v] if x != u}
        return nu == nv

    best_cert = None
    best_rank: list[int] = []

    def certificate(rank: list[int]) -> tuple:
        inv = [0] * n
        for v, r in enumerate(rank):
            inv[r] = v
        node_part = tuple(labels[inv[r]] for r in range(n))
        edge_part = tuple(sorted(
            (min(rank[a], rank[b]), max(rank[a], rank[b]), repr(lab)) for a, b, lab in edges
        ))
        return node_part, edge_part

    stack = [colors]
    while stack:
        cols = stack.pop()
        if len(set(cols)) == n:
            cert = certificate(cols)
            if best_cert is None or cert < best_cert:
                best_cert, best_rank = cert, cols
            continue
        counts: dict[int, int] = {}
        for c in cols:
            counts[c] = counts.get(c, 0) + 1
        target = min(c for c, k in counts.items() if k > 1)
        cell = [v for v in range(n) if cols[v] == target]
        reps: list[int] = []
        for v in cell:
            if not any(twins(v, r) for r in reps):
                reps.append(v)
        for v in reversed(reps):
            stack.append(_refine(_individualize(cols, v), adj))
    return best_rank


def canonical_certificate(labels: Sequence[tuple], edges: Sequence[Edge]) -> tuple:
    rank = canonical_order(labels, edges)
    n = len(labels)
    inv = [0] * n
    for v, r in enumerate(rank):
        inv[r] = v
    return (
        tuple(labels[inv[r]] for r in range(n)),
        tuple(sorted((min(rank[a], rank[b]), max(rank[a], rank[b]), repr(lab)) for a, b, lab in edges)),
    )
