"""Reaction file ingestion.

Input is tab-separated: ``record_id``, ``reactants>>products`` (atom-mapped),
and an optional integer reaction class. Blank lines and lines starting with
``#`` are ignored.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .chem import MolGraph, SmilesError, parse_molecule
from .templates import ReactionRecord, TemplateError, contributing_reactants

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


class DataError(ValueError):
    pass


@dataclass
class IngestReport:
    rows: int = 0
    records: int = 0
    dropped_maps: int = 0
    malformed: list[tuple[int, str]] = field(default_factory=list)

    def summary(self) -> str:
        return (f"{self.rows} rows, {self.records} records, {self.dropped_maps} dropped for atom maps, "
                f"{len(self.malformed)} malformed")


@dataclass
class Dataset:
    records: list[ReactionRecord]
    split: str = "train"
    report: IngestReport = field(default_factory=IngestReport)

    @property
    def class_labels_present(self) -> bool:
        return any(r.reaction_class is not None for r in self.records)

    def __len__(self) -> int:
        return len(self.records)


def parse_reaction(text: str) -> tuple[list[MolGraph], list[MolGraph]]:
    """``(products, reactants)`` of ``reactants>>products``."""
    if text.count(">>") != 1:
        raise SmilesError("reaction needs exactly one '>>'", 0, text)
    lhs, rhs = text.split(">>")
    if not lhs.strip() or not rhs.strip():
        raise SmilesError("reaction needs reactants and products", 0, text)
    reactants = [parse_molecule(s) for s in lhs.strip().split(".")]
    products = [parse_molecule(s) for s in rhs.strip().split(".")]
    return products, reactants


def records_from_row(record_id: str, text: str, reaction_class: Optional[int]) -> list[ReactionRecord]:
    """One record per product; reactants contributing no product atom are dropped.

    Raises TemplateError (atom-map problems) or SmilesError.
    """
    products, reactants = parse_reaction(text)
    out = []
    for k, prod in enumerate(products):
        rid = record_id if len(products) == 1 else f"{record_id}#{k + 1}"
        full = ReactionRecord(rid, prod, tuple(reactants), reaction_class)
        out.append(ReactionRecord(rid, prod, tuple(contributing_reactants(full)), reaction_class))
    return out


def load_reactions(path, split: str = "train", max_malformed_fraction: float = 0.1) -> Dataset:
    """Read a reaction file.

    Malformed rows are collected with their line numbers; loading fails only
    when they exceed ``max_malformed_fraction`` of the rows. Rows with broken
    atom maps are dropped and counted separately.
    """
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}")
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    report = IngestReport()
    records: list[ReactionRecord] = []
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        report.rows += 1
        cols = line.rstrip("\n").split("\t")
        if len(cols) not in (2, 3):
            report.malformed.append((lineno, f"expected 2 or 3 columns, got {len(cols)}"))
            continue
        rid, rxn = cols[0].strip(), cols[1].strip()
        cls = None
        if len(cols) == 3 and cols[2].strip():
            try:
                cls = int(cols[2])
            except ValueError:
                report.malformed.append((lineno, f"class {cols[2]!r} is not an integer"))
                continue
        if not rid:
            report.malformed.append((lineno, "empty record id"))
            continue
        if rid in seen:
            report.malformed.append((lineno, f"duplicate record id {rid!r}"))
            continue
        seen.add(rid)
        try:
            recs = records_from_row(rid, rxn, cls)
        except TemplateError as exc:
            report.dropped_maps += 1
            log.debug("line %d dropped: %s", lineno, exc)
            continue
        except SmilesError as exc:
            report.malformed.append((lineno, str(exc)))
            continue
        records.extend(recs)
    report.records = len(records)
    if report.rows and len(report.malformed) > max_malformed_fraction * report.rows:
        first = "; ".join(f"line {n}: {m}" for n, m in report.malformed[:3])
        raise DataError(f"{path}: {len(report.malformed)} of {report.rows} rows malformed ({first})")
    if report.malformed or report.dropped_maps:
        log.warning("%s: %s", path, report.summary())
    return Dataset(records, split, report)
