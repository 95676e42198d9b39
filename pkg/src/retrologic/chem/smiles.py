"""Line-notation parsing and canonical writing.

One tokenizer serves both molecules and patterns; ``pattern=True`` enables
the ``*`` wildcard atom, the ``~`` wildcard bond, ``#n`` element primitives
and ``.``-separated fragments. The accepted grammar is written out in
docs/grammar.md. Error offsets are 0-based byte offsets into the UTF-8
encoded input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .canon import canonical_order
from .graph import ELEMENT_INDEX, Atom, Bond, BondOrder, MolGraph

PERIODIC = (
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn Ga Ge As Se Br Kr "
    "Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb "
    "Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr Rf "
    "Db Sg Bh Hs Mt Ds Rg Cn Nh Fl Mc Lv Ts Og"
).split()
PERIODIC_SET = frozenset(PERIODIC)
ATOMIC_NUMBER = {"C": 6, "N": 7, "O": 8, "S": 16, "P": 15, "F": 9, "Cl": 17, "Br": 35, "I": 53, "B": 5, "Si": 14}
ATOMIC_NUMBER["Other"] = 0
NUMBER_TO_ELEMENT = {v: k for k, v in ATOMIC_NUMBER.items()}

ORGANIC = ("Cl", "Br", "B", "C", "N", "O", "S", "P", "F", "I")
AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
VALENCES = {"B": (3,), "C": (4,), "N": (3, 5), "O": (2,), "P": (3, 5), "S": (2, 4, 6),
            "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,), "Other": (0,)}

BOND_SYMBOLS = {"-": BondOrder.SINGLE, "=": BondOrder.DOUBLE, "#": BondOrder.TRIPLE, ":": BondOrder.AROMATIC}
WILDCARD_BOND = 0  # order code for "~" in patterns


class SmilesError(ValueError):
    """Syntax error carrying the 0-based byte offset of the problem."""

    def __init__(self, message: str, offset: int, text: str = ""):
        self.offset = offset
        self.reason = message
        super().__init__(f"{message} at offset {offset}" + (f" in {text!r}" if text else ""))


class UnsupportedFeatureError(SmilesError):
    pass


@dataclass
class RawAtom:
    element: Optional[str]  # vocabulary symbol, or None for the wildcard
    aromatic: Optional[bool]
    charge: Optional[int]
    hcount: Optional[int]
    map_label: Optional[int]
    bracket: bool
    offset: int


@dataclass
class RawGraph:
    atoms: list[RawAtom]
    bonds: list[tuple[int, int, Optional[int]]]  # order None = implicit


class _Parser:
    def __init__(self, text: str, pattern: bool):
        self.text = text
        self.pattern = pattern
        self.i = 0

    def offset(self, i: Optional[int] = None) -> int:
        i = self.i if i is None else i
        return len(self.text[:i].encode("utf-8"))

    def fail(self, msg: str, i: Optional[int] = None, cls=SmilesError):
        raise cls(msg, self.offset(i), self.text)

    def parse(self) -> RawGraph:
        text = self.text
        atoms: list[RawAtom] = []
        bonds: list[tuple[int, int, Optional[int]]] = []
        bonded: set[tuple[int, int]] = set()
        prev: Optional[int] = None
        pending: Optional[int] = None
        pending_at = 0
        branches: list[tuple[int, int, bool]] = []  # (root atom, '(' position, saw atom)
        rings: dict[int, tuple[int, Optional[int], int]] = {}

        def add_bond(a: int, b: int, order: Optional[int], at: int):
            key = (min(a, b), max(a, b))
            if a == b:
                self.fail("ring closure to the same atom", at)
            if key in bonded:
                self.fail("duplicate bond", at)
            bonded.add(key)
            bonds.append((a, b, order))

        if not text:
            raise SmilesError("empty input", 0, text)
        while self.i < len(text):
            ch = text[self.i]
            start = self.i
            if ch == "(":
                if prev is None:
                    self.fail("branch without a preceding atom")
                if pending is not None:
                    self.fail("bond symbol before branch", pending_at)
                branches.append((prev, self.i, False))
                self.i += 1
                continue
            if ch == ")":
                if not branches:
                    self.fail("unmatched parenthesis")
                if pending is not None:
                    self.fail("dangling bond symbol", pending_at)
                root, _, saw = branches.pop()
                if not saw:
                    self.fail("empty branch")
                prev = root
                self.i += 1
                continue
            if ch in BOND_SYMBOLS or (ch == "~" and self.pattern):
                if pending is not None:
                    self.fail("consecutive bond symbols")
                pending = WILDCARD_BOND if ch == "~" else int(BOND_SYMBOLS[ch])
                pending_at = self.i
                self.i += 1
                continue
            if ch in "/\\":
                self.fail("stereo bond markers are an unsupported feature", cls=UnsupportedFeatureError)
            if ch == "@":
                self.fail("chirality markers are an unsupported feature", cls=UnsupportedFeatureError)
            if ch.isdigit() or ch == "%":
                if prev is None:
                    self.fail("ring-closure digit without a preceding atom")
                if ch == "%":
                    num = text[self.i + 1:self.i + 3]
                    if len(num) != 2 or not num.isdigit():
                        self.fail("malformed %nn ring-closure label")
                    label = int(num)
                    self.i += 3
                else:
                    label = int(ch)
                    self.i += 1
                if label in rings:
                    other, order, _ = rings.pop(label)
                    if pending is not None and order is not None and pending != order:
                        self.fail("conflicting ring-closure bond symbols", start)
                    add_bond(other, prev, pending if pending is not None else order, start)
                else:
                    rings[label] = (prev, pending, start)
                pending = None
                continue
            if ch == ".":
                if not self.pattern:
                    self.fail("'.' separates molecules and is not allowed inside one molecule",
                              cls=UnsupportedFeatureError)
                if pending is not None:
                    self.fail("dangling bond symbol", pending_at)
                if branches:
                    self.fail("'.' inside a branch")
                if prev is None:
                    self.fail("empty fragment")
                prev = None
                self.i += 1
                continue
            atom = self.parse_atom()
            idx = len(atoms)
            atoms.append(atom)
            if prev is not None:
                add_bond(prev, idx, pending, start)
            elif pending is not None:
                self.fail("bond symbol without a preceding atom", pending_at)
            pending = None
            if branches:
                root, pos, _ = branches[-1]
                branches[-1] = (root, pos, True)
            prev = idx
        if pending is not None:
            self.fail("dangling bond symbol", pending_at)
        if branches:
            self.fail("unmatched parenthesis", branches[-1][1])
        if rings:
            label, (_, _, at) = min(rings.items(), key=lambda kv: kv[1][2])
            self.fail(f"unmatched ring-closure digit {label}", at)
        if prev is None:
            self.fail("empty fragment")
        return RawGraph(atoms, bonds)

    def parse_atom(self) -> RawAtom:
        text, i = self.text, self.i
        ch = text[i]
        if ch == "[":
            return self.parse_bracket()
        if ch == "*":
            self.i += 1
            if self.pattern:
                return RawAtom(None, None, None, None, None, False, i)
            return RawAtom("Other", False, 0, None, None, False, i)
        two = text[i:i + 2]
        if two in ("Cl", "Br"):
            self.i += 2
            return self._organic(two, False, i)
        if ch in ORGANIC:
            self.i += 1
            return self._organic(ch, False, i)
        if ch in AROMATIC_ORGANIC:
            self.i += 1
            return self._organic(ch.upper(), True, i)
        self.fail(f"unexpected character {ch!r}")

    def _organic(self, element: str, aromatic: bool, at: int) -> RawAtom:
        if self.pattern:
            return RawAtom(element, aromatic, None, None, None, False, at)
        return RawAtom(element, aromatic, 0, None, None, False, at)

    def parse_bracket(self) -> RawAtom:
        text = self.text
        at = self.i
        close = text.find("]", at)
        if close < 0:
            self.fail("unterminated bracket atom")
        self.i += 1
        if self.i < close and text[self.i].isdigit():
            self.fail("isotopes are an unsupported feature", cls=UnsupportedFeatureError)
        element: Optional[str]
        aromatic: Optional[bool]
        if self.i < close and text[self.i] == "*":
            self.i += 1
            element, aromatic = (None, None) if self.pattern else ("Other", False)
        elif self.i < close and text[self.i] == "#":
            if not self.pattern:
                self.fail("'#n' element primitives are only allowed in patterns")
            j = self.i + 1
            while j < close and text[j].isdigit():
                j += 1
            if j == self.i + 1:
                self.fail("missing atomic number after '#'")
            num = int(text[self.i + 1:j])
            if num not in NUMBER_TO_ELEMENT:
                self.fail(f"unsupported element #{num} in pattern")
            element, aromatic = NUMBER_TO_ELEMENT[num], None
            self.i = j
        else:
            two, one = text[self.i:self.i + 2], text[self.i:self.i + 1]
            if two in ("se", "as"):
                self.fail(f"aromatic {two!r} is an unsupported feature", cls=UnsupportedFeatureError)
            if one in AROMATIC_ORGANIC:
                element, aromatic = one.upper(), True
                self.i += 1
            elif len(two) == 2 and two[1].islower() and two in PERIODIC_SET:
                element, aromatic = two, False
                self.i += 2
            elif one in PERIODIC_SET:
                element, aromatic = one, False
                self.i += 1
            else:
                self.fail("unknown element symbol")
            if element not in ELEMENT_INDEX:
                element = "Other"
        if self.i < close and text[self.i] == "@":
            self.fail("chirality markers are an unsupported feature", cls=UnsupportedFeatureError)
        hcount: Optional[int] = None if self.pattern else 0
        if self.i < close and text[self.i] == "H":
            self.i += 1
            j = self.i
            while j < close and text[j].isdigit():
                j += 1
            hcount = int(text[self.i:j]) if j > self.i else 1
            self.i = j
        charge: Optional[int] = None if self.pattern else 0
        if self.i < close and text[self.i] in "+-":
            sign = 1 if text[self.i] == "+" else -1
            j = self.i + 1
            if j < close and text[j].isdigit():
                k = j
                while k < close and text[k].isdigit():
                    k += 1
                mag = int(text[j:k])
                self.i = k
            else:
                mag = 1
                while j < close and text[j] == text[self.i]:
                    j += 1
                    mag += 1
                self.i = j
            charge = sign * mag
            if abs(charge) > 4:
                self.fail("formal charge outside [-4, 4]", at)
        map_label = None
        if self.i < close and text[self.i] == ":":
            j = self.i + 1
            k = j
            while k < close and text[k].isdigit():
                k += 1
            if k == j:
                self.fail("missing map label digits")
            map_label = int(text[j:k])
            if map_label == 0:
                map_label = None  # ":0" conventionally means unmapped
            self.i = k
        if self.i != close:
            self.fail("unexpected content in bracket atom")
        self.i = close + 1
        if element is None and aromatic:
            aromatic = None
        return RawAtom(element, aromatic, charge, hcount, map_label, True, at)


def parse_raw(text: str, pattern: bool = False) -> RawGraph:
    return _Parser(text, pattern).parse()


def implicit_hydrogens(element: str, aromatic: bool, bond_sum: int) -> int:
    """Hydrogen count implied by the organic-subset shorthand."""
    vals = VALENCES.get(element, (0,))
    if aromatic:
        bond_sum += 1
        vals = vals[:1]
    for v in vals:
        if v >= bond_sum:
            return v - bond_sum
    return 0


def _bond_sum(orders: Sequence[int]) -> int:
    return sum(1 if o == BondOrder.AROMATIC else int(o) for o in orders)


def parse_molecule(text: str) -> MolGraph:
    """Parse one molecule. Organic-subset atoms get their implied H count."""
    raw = parse_raw(text, pattern=False)
    orders: list[int] = []
    for a, b, order in raw.bonds:
        if order is None:
            both = raw.atoms[a].aromatic and raw.atoms[b].aromatic
            order = BondOrder.AROMATIC if both else BondOrder.SINGLE
        elif order == BondOrder.AROMATIC and not (raw.atoms[a].aromatic and raw.atoms[b].aromatic):
            raise SmilesError("aromatic bond between non-aromatic atoms", 0, text)
        orders.append(int(order))
    incident: list[list[int]] = [[] for _ in raw.atoms]
    for (a, b, _), o in zip(raw.bonds, orders):
        incident[a].append(o)
        incident[b].append(o)
    seen_maps: dict[int, int] = {}
    atoms = []
    for i, ra in enumerate(raw.atoms):
        h = ra.hcount
        if not ra.bracket:
            h = implicit_hydrogens(ra.element, bool(ra.aromatic), _bond_sum(incident[i]))
        if ra.map_label is not None:
            if ra.map_label in seen_maps:
                raise SmilesError(f"duplicate map label {ra.map_label}", len(text[:ra.offset].encode()), text)
            seen_maps[ra.map_label] = i
        atoms.append(Atom(ra.element, ra.charge or 0, bool(ra.aromatic), h or 0, ra.map_label))
    bonds = [Bond(a, b, BondOrder(o)) for (a, b, _), o in zip(raw.bonds, orders)]
    return MolGraph(atoms, bonds)


# ---------------------------------------------------------------------------
# writing
# ---------------------------------------------------------------------------


def _ring_label(n: int) -> str:
    return str(n) if n < 10 else f"%{n:02d}"


def write_graph(n: int, adjacency: Sequence[Sequence[tuple[int, int]]], rank: Sequence[int],
                atom_text, bond_text) -> str:
    """Depth-first writer shared by molecules and patterns.

    ``atom_text(v)`` renders an atom, ``bond_text(u, v, order)`` renders the
    bond symbol placed before ``v`` (or before a ring-closure digit).
    Traversal starts at the lowest-ranked atom of each component and visits
    neighbors in rank order, so equal ranks give equal strings.
    """
    visited = [False] * n
    order_of: dict[int, int] = {}
    children: list[list[int]] = [[] for _ in range(n)]
    closures: list[list[tuple[int, int, bool]]] = [[] for _ in range(n)]  # (partner, order, opening)
    nbrs = [sorted(adjacency[v], key=lambda t: rank[t[0]]) for v in range(n)]

    def visit(root: int):
        stack = [(root, -1, iter(nbrs[root]))]
        visited[root] = True
        order_of[root] = len(order_of)
        while stack:
            v, parent, it = stack[-1]
            advanced = False
            for u, o in it:
                if u == parent:
                    continue
                if not visited[u]:
                    visited[u] = True
                    order_of[u] = len(order_of)
                    children[v].append(u)
                    stack.append((u, v, iter(nbrs[u])))
                    advanced = True
                    break
                if order_of[u] < order_of[v] and not any(p == v for p, _, _ in closures[u]):
                    closures[u].append((v, o, True))
                    closures[v].append((u, o, False))
            if not advanced:
                stack.pop()

    roots = []
    for v in sorted(range(n), key=lambda v: rank[v]):
        if not visited[v]:
            roots.append(v)
            visit(v)

    free: list[int] = []
    next_label = [1]
    assigned: dict[tuple[int, int], int] = {}
    out: list[str] = []

    def take() -> int:
        if free:
            free.sort()
            return free.pop(0)
        lab = next_label[0]
        next_label[0] += 1
        if lab > 99:
            raise ValueError("too many simultaneous ring closures")
        return lab

    def emit(root: int, parent: int, parent_order: int):
        stack: list = [("atom", root, parent, parent_order)]
        while stack:
            item = stack.pop()
            if item[0] == "text":
                out.append(item[1])
                continue
            _, v, par, po = item
            if par >= 0:
                out.append(bond_text(par, v, po))
            out.append(atom_text(v))
            closing = sorted((c for c in closures[v] if not c[2]), key=lambda c: order_of[c[0]])
            opening = sorted((c for c in closures[v] if c[2]), key=lambda c: order_of[c[0]])
            for u, o, _ in closing:
                lab = assigned.pop((u, v))
                out.append(_ring_label(lab))
                free.append(lab)
            for u, o, _ in opening:
                lab = take()
                assigned[(v, u)] = lab
                out.append(bond_text(v, u, o) + _ring_label(lab))
            kids = children[v]
            orders = {u: o for u, o in adjacency[v]}
            seq: list = []
            for k, u in enumerate(kids):
                if k < len(kids) - 1:
                    seq.append(("text", "("))
                    seq.append(("atom", u, v, orders[u]))
                    seq.append(("text", ")"))
                else:
                    seq.append(("atom", u, v, orders[u]))
            stack.extend(reversed(seq))

    for k, r in enumerate(roots):
        if k:
            out.append(".")
        emit(r, -1, 0)
    return "".join(out)


def _atom_symbol(atom: Atom) -> str:
    if atom.element == "Other":
        if atom.aromatic:
            raise ValueError("aromatic 'Other' atoms cannot be written")
        return "*"
    if atom.aromatic:
        if atom.element.lower() not in AROMATIC_ORGANIC:
            raise ValueError(f"aromatic {atom.element} cannot be written")
        return atom.element.lower()
    return atom.element


def _charge_text(c: int) -> str:
    if c == 0:
        return ""
    sign = "+" if c > 0 else "-"
    return sign if abs(c) == 1 else f"{sign}{abs(c)}"


def molecule_rank(mol: MolGraph) -> list[int]:
    labels = [a.invariant() for a in mol.atoms]
    edges = [(b.a, b.b, int(b.order)) for b in mol.bonds]
    return canonical_order(labels, edges)


def write_molecule(mol: MolGraph, maps: bool = False, rank: Optional[Sequence[int]] = None) -> str:
    """Canonical line notation for ``mol``.

    Map labels are dropped unless ``maps`` is set; the atom order is always
    the canonical one computed from the map-free graph, so ``maps=False``
    output is identical for isomorphic inputs.
    """
    n = len(mol.atoms)
    if n == 0:
        raise ValueError("cannot write an empty molecule")
    if rank is None:
        rank = molecule_rank(mol)
    adjacency = [[(u, int(o)) for u, o in mol.adjacency[v]] for v in range(n)]

    def atom_text(v: int) -> str:
        atom = mol.atoms[v]
        sym = _atom_symbol(atom)
        label = atom.map_label if maps else None
        if atom.element in VALENCES and atom.formal_charge == 0 and label is None:
            implied = implicit_hydrogens(atom.element, atom.aromatic, _bond_sum([o for _, o in mol.adjacency[v]]))
            if implied == atom.explicit_h:
                return sym
        h = "" if atom.explicit_h == 0 else ("H" if atom.explicit_h == 1 else f"H{atom.explicit_h}")
        tail = f":{label}" if label is not None else ""
        return f"[{sym}{h}{_charge_text(atom.formal_charge)}{tail}]"

    def bond_text(u: int, v: int, order: int) -> str:
        if order == BondOrder.AROMATIC:
            return ""
        if order == BondOrder.SINGLE:
            return "-" if mol.atoms[u].aromatic and mol.atoms[v].aromatic else ""
        return "=" if order == BondOrder.DOUBLE else "#"

    return write_graph(n, adjacency, rank, atom_text, bond_text)


def canonical_smiles(mol: MolGraph) -> str:
    return write_molecule(mol.strip_maps(), maps=False)
