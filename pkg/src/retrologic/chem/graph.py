"""Atoms, bonds and the immutable molecular graph."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from typing import Optional, Sequence

ELEMENTS = ("C", "N", "O", "S", "P", "F", "Cl", "Br", "I", "B", "Si", "Other")
ELEMENT_INDEX = {e: i for i, e in enumerate(ELEMENTS)}

MAX_CHARGE = 4


class BondOrder(IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4


@dataclass(frozen=True)
class Atom:
    element: str
    formal_charge: int = 0
    aromatic: bool = False
    explicit_h: int = 0
    map_label: Optional[int] = None

    def __post_init__(self):
        if self.element not in ELEMENT_INDEX:
            raise ValueError(f"element {self.element!r} not in vocabulary")
        if not -MAX_CHARGE <= self.formal_charge <= MAX_CHARGE:
            raise ValueError(f"formal charge {self.formal_charge} out of range")
        if self.explicit_h < 0:
            raise ValueError("negative hydrogen count")
        if self.map_label is not None and self.map_label <= 0:
            raise ValueError("map labels must be positive")

    def invariant(self) -> tuple:
        """Map-label free tuple used by canonicalization and isomorphism."""
        return (ELEMENT_INDEX[self.element], self.formal_charge, int(self.aromatic), self.explicit_h)

    def unmapped(self) -> "Atom":
        if self.map_label is None:
            return self
        return Atom(self.element, self.formal_charge, self.aromatic, self.explicit_h)


@dataclass(frozen=True)
class Bond:
    a: int
    b: int
    order: BondOrder

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError("self-loop bond")
        # normalize the unordered pair
        if self.a > self.b:
            lo, hi = self.b, self.a
            object.__setattr__(self, "a", lo)
            object.__setattr__(self, "b", hi)
        object.__setattr__(self, "order", BondOrder(self.order))

    def other(self, i: int) -> int:
        return self.b if i == self.a else self.a


@dataclass(frozen=True)
class MolGraph:
    """A molecule as a labeled undirected graph.

    Atoms and bonds are stored as tuples; ``adjacency`` is derived and maps
    every atom index to a tuple of ``(neighbor, bond order)`` pairs sorted by
    neighbor index.
    """

    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...] = ()
    adjacency: tuple[tuple[tuple[int, BondOrder], ...], ...] = field(init=False, repr=False, compare=False)

    def __init__(self, atoms: Sequence[Atom], bonds: Sequence[Bond] = ()):
        atoms = tuple(atoms)
        bonds = tuple(sorted(bonds, key=lambda b: (b.a, b.b)))
        n = len(atoms)
        seen = set()
        adj: list[list[tuple[int, BondOrder]]] = [[] for _ in range(n)]
        for bond in bonds:
            if bond.b >= n or bond.a < 0:
                raise ValueError(f"bond ({bond.a}, {bond.b}) references a missing atom")
            if (bond.a, bond.b) in seen:
                raise ValueError(f"duplicate bond ({bond.a}, {bond.b})")
            seen.add((bond.a, bond.b))
            if bond.order == BondOrder.AROMATIC and not (atoms[bond.a].aromatic and atoms[bond.b].aromatic):
                raise ValueError(f"aromatic bond ({bond.a}, {bond.b}) between non-aromatic atoms")
            adj[bond.a].append((bond.b, bond.order))
            adj[bond.b].append((bond.a, bond.order))
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "bonds", bonds)
        object.__setattr__(self, "adjacency", tuple(tuple(sorted(x)) for x in adj))

    def __len__(self) -> int:
        return len(self.atoms)

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def bond_order(self, i: int, j: int) -> Optional[BondOrder]:
        for k, order in self.adjacency[i]:
            if k == j:
                return order
        return None

    @cached_property
    def bond_lookup(self) -> dict[tuple[int, int], BondOrder]:
        out = {}
        for b in self.bonds:
            out[(b.a, b.b)] = b.order
            out[(b.b, b.a)] = b.order
        return out

    def map_index(self) -> dict[int, int]:
        """map label -> atom index for mapped atoms."""
        return {a.map_label: i for i, a in enumerate(self.atoms) if a.map_label is not None}

    def strip_maps(self) -> "MolGraph":
        if all(a.map_label is None for a in self.atoms):
            return self
        return MolGraph([a.unmapped() for a in self.atoms], self.bonds)

    def permute(self, perm: Sequence[int]) -> "MolGraph":
        """Relabel atoms so that old atom ``i`` becomes new atom ``perm[i]``."""
        n = len(self.atoms)
        if sorted(perm) != list(range(n)):
            raise ValueError("not a permutation")
        atoms: list[Optional[Atom]] = [None] * n
        for old, new in enumerate(perm):
            atoms[new] = self.atoms[old]
        bonds = [Bond(perm[b.a], perm[b.b], b.order) for b in self.bonds]
        return MolGraph(atoms, bonds)

    def subgraph(self, indices: Sequence[int]) -> "MolGraph":
        """Induced subgraph on ``indices`` (in the given order)."""
        pos = {old: new for new, old in enumerate(indices)}
        bonds = [Bond(pos[b.a], pos[b.b], b.order) for b in self.bonds if b.a in pos and b.b in pos]
        return MolGraph([self.atoms[i] for i in indices], bonds)

    def components(self) -> list[list[int]]:
        seen = [False] * len(self.atoms)
        comps = []
        for start in range(len(self.atoms)):
            if seen[start]:
                continue
            stack, comp = [start], []
            seen[start] = True
            while stack:
                v = stack.pop()
                comp.append(v)
                for u, _ in self.adjacency[v]:
                    if not seen[u]:
                        seen[u] = True
                        stack.append(u)
            comps.append(sorted(comp))
        return comps

    def is_connected(self) -> bool:
        return len(self.atoms) > 0 and len(self.components()) == 1

    def __str__(self) -> str:
        from .smiles import write_molecule

        try:
            return write_molecule(self, maps=True)
        except ValueError:
            return repr(self)
