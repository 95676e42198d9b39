"""Molecular graphs, line notation, canonical keys and isomorphism."""

from .graph import ELEMENTS, Atom, Bond, BondOrder, MolGraph
from .iso import ORACLE_MAX_ATOMS, OracleSizeError, graph_isomorphic
from .smiles import (
    SmilesError,
    UnsupportedFeatureError,
    canonical_smiles,
    parse_molecule,
    write_molecule,
)


def canonical_key(mol: MolGraph) -> bytes:
    """Byte key equal for two molecules iff they are isomorphic (maps ignored)."""
    return canonical_smiles(mol).encode("ascii")


__all__ = [
    "ELEMENTS", "Atom", "Bond", "BondOrder", "MolGraph",
    "ORACLE_MAX_ATOMS", "OracleSizeError", "graph_isomorphic",
    "SmilesError", "UnsupportedFeatureError", "canonical_key", "canonical_smiles",
    "parse_molecule", "write_molecule",
]
