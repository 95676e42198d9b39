"""Exhaustive isomorphism test, kept deliberately independent of canon.py."""

from __future__ import annotations

from .graph import MolGraph

ORACLE_MAX_ATOMS = 24


class OracleSizeError(ValueError):
    pass


def graph_isomorphic(a: MolGraph, b: MolGraph, max_atoms: int = ORACLE_MAX_ATOMS) -> bool:
    """True iff a label-respecting bijection between ``a`` and ``b`` exists.

    Plain backtracking over atom assignments; map labels are ignored.
    """
    n = len(a.atoms)
    if max(n, len(b.atoms)) > max_atoms:
        raise OracleSizeError(f"isomorphism oracle is limited to {max_atoms} atoms")
    if n != len(b.atoms) or len(a.bonds) != len(b.bonds):
        return False
    la = [(at.element, at.formal_charge, at.aromatic, at.explicit_h, a.degree(i)) for i, at in enumerate(a.atoms)]
    lb = [(at.element, at.formal_charge, at.aromatic, at.explicit_h, b.degree(i)) for i, at in enumerate(b.atoms)]
    if sorted(la) != sorted(lb):
        return False
    bond_a = {(x.a, x.b): x.order for x in a.bonds}
    bond_b = {(x.a, x.b): x.order for x in b.bonds}

    def order(bonds, i, j):
        return bonds.get((i, j) if i < j else (j, i))

    # breadth-first order so each new atom is constrained by assigned neighbors
    seq: list[int] = []
    seen = [False] * n
    for s in range(n):
        if seen[s]:
            continue
        seen[s] = True
        queue = [s]
        while queue:
            v = queue.pop(0)
            seq.append(v)
            for u, _ in a.adjacency[v]:
                if not seen[u]:
                    seen[u] = True
                    queue.append(u)

    assign = [-1] * n
    used = [False] * n

    def extend(pos: int) -> bool:
        if pos == n:
            return True
        i = seq[pos]
        for j in range(n):
            if used[j] or la[i] != lb[j]:
                continue
            ok = True
            for k in seq[:pos]:
                if order(bond_a, k, i) != order(bond_b, assign[k], j):
                    ok = False
                    break
            if not ok:
                continue
            assign[i] = j
            used[j] = True
            if extend(pos + 1):
                return True
            used[j] = False
        assign[i] = -1
        return False

    return extend(0)
