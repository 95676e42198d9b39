"""Support caches: matched templates per product and candidate reactant sets per
(product, template), with line-delimited JSON persistence.

File layout, one JSON object per line, keys sorted::

    {"kind": "header", "version": 1, "template_hash": ..., "n_templates": ...}
    {"kind": "template", "key": ..., "classes": [...]}               (table order)
    {"kind": "product", "id": ..., "templates": [...]}               (sorted by id)
    {"kind": "reactants", "product": ..., "template": ..., "sets": [...]}
    {"kind": "excluded", "id": ..., "reason": ...}

Products and reactant sets are stored as canonical notation, so rebuilding
from identical inputs yields identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .chem import MolGraph, parse_molecule
from .model import SUPPORT_CAP, SupportCapError, SupportR, SupportT, product_id
from .templates import (
    ReactionRecord,
    RetroTemplate,
    apply_template,
    dedup_templates,
    format_template_line,
    parse_template,
    phi_match_reactants,
    phi_match_template,
    reactant_set_key,
)

log = logging.getLogger(__name__)

CACHE_VERSION = 1


class StaleCacheError(ValueError):
    pass


def template_table_hash(templates: Sequence[RetroTemplate]) -> str:
    h = hashlib.sha256()
    for t in templates:
        h.update(format_template_line(t).encode("utf-8") + b"\n")
    return h.hexdigest()


def _compute_product(args):
    """Worker: matched template keys and candidate sets for one product."""
    pid, templates = args
    O = parse_molecule(pid)
    known = {t.template_key for t in templates}
    matched = [t for t in templates if phi_match_template(O, t, known)]
    sets = {}
    for t in matched:
        sets[t.template_key] = [".".join(k.decode("ascii") for k in _set_key(rs)) for rs in apply_template(t, O)]
    return pid, [t.template_key for t in matched], sets


def _set_key(rs):
    return reactant_set_key(rs)


@dataclass
class CacheStore:
    templates: list[RetroTemplate]
    template_hash: str
    product_templates: dict[str, list[str]] = field(default_factory=dict)
    reactant_sets: dict[tuple[str, str], list[str]] = field(default_factory=dict)
    excluded: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self._by_key = {t.template_key: t for t in self.templates}
        self._st: dict[str, SupportT] = {}
        self._sr: dict[tuple[str, str], SupportR] = {}

    @classmethod
    def empty(cls, templates: Sequence[RetroTemplate]) -> "CacheStore":
        templates = dedup_templates(templates)
        return cls(templates, template_table_hash(templates))

    # -- Caches protocol ----------------------------------------------------

    def support_t(self, O: MolGraph) -> SupportT:
        pid = product_id(O)
        if pid in self.excluded:
            raise SupportCapError(self.excluded[pid])
        if pid not in self.product_templates:
            self._ingest(_compute_product((pid, self.templates)))
        if pid not in self._st:
            self._st[pid] = SupportT.from_templates(pid, [self._by_key[k] for k in self.product_templates[pid]])
        return self._st[pid]

    def support_r(self, O: MolGraph, T: RetroTemplate) -> SupportR:
        pid = product_id(O)
        key = (pid, T.template_key)
        if key not in self._sr:
            if key not in self.reactant_sets:
                if T.template_key not in self._by_key or pid not in self.product_templates:
                    self.support_t(O)
                if key not in self.reactant_sets:
                    # template unknown to the table or not matching: compute directly
                    self.reactant_sets[key] = [".".join(k.decode("ascii") for k in _set_key(rs))
                                               for rs in apply_template(T, O)]
            texts = self.reactant_sets[key]
            cands = tuple(tuple(parse_molecule(s) for s in text.split(".")) for text in texts)
            keys = tuple(tuple(s.encode("ascii") for s in text.split(".")) for text in texts)
            self._sr[key] = SupportR(pid, T.template_key, cands, keys)
        return self._sr[key]

    def _ingest(self, result) -> None:
        pid, keys, sets = result
        self.product_templates[pid] = keys
        for k, v in sets.items():
            self.reactant_sets[(pid, k)] = v

    # -- persistence -------------------------------------------------------

    def lines(self) -> list[str]:
        def dump(obj):
            return json.dumps(obj, sort_keys=True, separators=(",", ":"))

        out = [dump({"kind": "header", "version": CACHE_VERSION, "template_hash": self.template_hash,
                     "n_templates": len(self.templates)})]
        out += [dump({"kind": "template", "key": t.template_key, "classes": sorted(t.class_tags)})
                for t in self.templates]
        for pid in sorted(self.product_templates):
            keys = self.product_templates[pid]
            out.append(dump({"kind": "product", "id": pid, "templates": keys}))
            for k in keys:
                out.append(dump({"kind": "reactants", "product": pid, "template": k,
                                 "sets": self.reactant_sets.get((pid, k), [])}))
        out += [dump({"kind": "excluded", "id": pid, "reason": why}) for pid, why in sorted(self.excluded.items())]
        return out

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path, templates: Optional[Sequence[RetroTemplate]] = None) -> "CacheStore":
        """Read a cache file; with ``templates`` given, a hash mismatch raises StaleCacheError."""
        rows = [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
        if not rows or rows[0].get("kind") != "header" or rows[0].get("version") != CACHE_VERSION:
            raise ValueError(f"{path}: not a version {CACHE_VERSION} cache file")
        header = rows[0]
        table = [parse_template(r["key"], r["classes"]) for r in rows if r["kind"] == "template"]
        if template_table_hash(table) != header["template_hash"]:
            raise ValueError(f"{path}: template table does not match its recorded hash")
        if templates is not None and template_table_hash(dedup_templates(templates)) != header["template_hash"]:
            raise StaleCacheError(f"{path}: built for a different template table")
        store = cls(table, header["template_hash"])
        for r in rows[1:]:
            if r["kind"] == "product":
                store.product_templates[r["id"]] = list(r["templates"])
            elif r["kind"] == "reactants":
                store.reactant_sets[(r["product"], r["template"])] = list(r["sets"])
            elif r["kind"] == "excluded":
                store.excluded[r["id"]] = r["reason"]
        for (pid, k) in store.reactant_sets:
            if k not in store._by_key:
                raise ValueError(f"{path}: reactant entry refers to unknown template {k}")
        return store

    # -- checks ------------------------------------------------------------

    def verify(self) -> list[str]:
        """Replay both predicates on every cached entry; returns problem descriptions."""
        problems = []
        known = set(self._by_key)
        for pid, keys in sorted(self.product_templates.items()):
            O = parse_molecule(pid)
            for k in keys:
                T = self._by_key.get(k)
                if T is None or not phi_match_template(O, T, known):
                    problems.append(f"{pid}: template {k} does not match")
                    continue
                for text in self.reactant_sets.get((pid, k), []):
                    R = [parse_molecule(s) for s in text.split(".")]
                    if not phi_match_reactants(O, T, R):
                        problems.append(f"{pid}: {text} inconsistent with template {k}")
        return problems


def build_caches(products: Iterable[MolGraph], templates: Sequence[RetroTemplate], workers: int = 1) -> CacheStore:
    """Supports for every distinct product; order-canonical regardless of ``workers``."""
    store = CacheStore.empty(templates)
    pids = sorted({product_id(O) for O in products})
    jobs = [(pid, store.templates) for pid in pids]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_compute_product, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_compute_product(j) for j in jobs]
    for pid, keys, sets in sorted(results, key=lambda r: r[0]):
        try:
            SupportT.from_templates(pid, [store._by_key[k] for k in keys])
            for k in keys:
                if len(sets[k]) > SUPPORT_CAP:
                    raise SupportCapError(f"{pid}: {len(sets[k])} reactant sets exceed the cap of {SUPPORT_CAP}")
        except SupportCapError as exc:
            log.warning("product excluded: %s", exc)
            store.excluded[pid] = str(exc)
            continue
        store._ingest((pid, keys, sets))
    return store


def verify_truth(records: Sequence[ReactionRecord], store: CacheStore) -> list[str]:
    """Ids of records whose ground truth is missing from their own supports."""
    from .inference import truth_covered

    missing = []
    for rec in records:
        try:
            if not truth_covered(rec, store):
                missing.append(rec.record_id)
        except SupportCapError:
            missing.append(rec.record_id)
    return missing


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


@dataclass
class CorpusStats:
    records: int
    empty: bool
    coverage: float
    unique_centers: int
    templates: int
    mean_centers_per_product: float
    mean_templates_per_product: float
    mean_reactants: float

    def lines(self) -> list[str]:
        return [
            f"records\t{self.records}",
            f"templates\t{self.templates}",
            f"unique_centers\t{self.unique_centers}",
            f"coverage\t{self.coverage:.4f}",
            f"mean_centers_per_product\t{self.mean_centers_per_product:.4f}",
            f"mean_templates_per_product\t{self.mean_templates_per_product:.4f}",
            f"mean_reactants\t{self.mean_reactants:.4f}",
        ]


def corpus_stats(records: Sequence[ReactionRecord], store: CacheStore) -> CorpusStats:
    from .inference import truth_covered

    centers = {t.center_key for t in store.templates}
    if not records:
        return CorpusStats(0, True, 0.0, len(centers), len(store.templates), 0.0, 0.0, 0.0)
    covered = 0
    n_centers = n_templates = 0
    for rec in records:
        try:
            st = store.support_t(rec.product)
        except SupportCapError:
            continue
        n_centers += len(st.groups)
        n_templates += len(st)
        covered += truth_covered(rec, store)
    n = len(records)
    return CorpusStats(
        records=n,
        empty=False,
        coverage=covered / n,
        unique_centers=len(centers),
        templates=len(store.templates),
        mean_centers_per_product=n_centers / n,
        mean_templates_per_product=n_templates / n,
        mean_reactants=sum(len(r.reactants) for r in records) / n,
    )
