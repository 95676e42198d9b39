"""Beam-search prediction, top-k exact-match evaluation and atom attribution."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .chem import MolGraph, write_molecule
from .embedding import GraphBatch, forward
from .model import (
    Caches,
    EmptySupportError,
    GlnModel,
    log_softmax,
    restrict_by_class,
)
from .pattern import PatternGraph
from .templates import ReactionRecord, reactant_set_key

DEFAULT_KS = (1, 3, 5, 10, 20, 50)
SCORE_MODES = ("logprob", "energy")


@dataclass(frozen=True)
class Prediction:
    rank: int
    reactants: tuple[MolGraph, ...]
    keys: tuple[bytes, ...]
    template_key: str
    center_key: str
    score: float

    @property
    def reactant_text(self) -> str:
        return ".".join(k.decode("ascii") for k in self.keys)


def _top(entries: list, k: int) -> list:
    # entries are (score, tiebreak..., payload); highest score first, then tiebreak ascending
    return sorted(entries, key=lambda e: (-e[0],) + tuple(e[1:-1]))[:k]


def beam_search(model: GlnModel, O: MolGraph, caches: Caches, beam: int = 50, reaction_class=None,
                dedup: bool = True, score_mode: str = "logprob") -> list[Prediction]:
    """Three-stage beam search.

    1. keep the ``beam`` best centers by center score;
    2. keep the ``beam`` best templates under those centers by center + template score;
    3. rank every reactant set produced by the kept templates by the total score.

    ``score_mode="logprob"`` scores with the hierarchical log-probabilities
    (so the final score is the joint log p(T,R|O)); ``"energy"`` uses the raw
    energies v1 + v2 + w2.
    """
    if beam <= 0:
        raise ValueError("beam must be positive")
    if score_mode not in SCORE_MODES:
        raise ValueError(f"score_mode must be one of {SCORE_MODES}")
    support = caches.support_t(O)
    if reaction_class is not None:
        try:
            support = restrict_by_class(support, reaction_class)
        except EmptySupportError:
            return []
    if not support.groups:
        return []
    logp = score_mode == "logprob"

    sc = model.center_scores(O, support)
    c_score = log_softmax(sc) if logp else sc
    centers = _top([(c_score[gi], g.center_key, gi) for gi, g in enumerate(support.groups)], beam)

    kept_groups = [support.groups[gi] for _, _, gi in centers]
    flat = [t for g in kept_groups for t in g.templates]
    st = model.template_scores(O, flat)
    pairs = []
    pos = 0
    for (cs, _, gi), g in zip(centers, kept_groups):
        part = st[pos:pos + len(g.templates)]
        pos += len(g.templates)
        t_score = log_softmax(part) if logp else part
        for ti, t in enumerate(g.templates):
            pairs.append((cs + t_score[ti], t.template_key, t))
    pairs = _top(pairs, beam)

    supports = [(s, t, caches.support_r(O, t)) for s, _, t in pairs]
    cand_sets = [c for _, _, sr in supports for c in sr.candidates]
    if not cand_sets:
        return []
    sr_all = model.set_scores("w2", cand_sets, O)
    finals = []
    pos = 0
    for s, t, sr in supports:
        part = sr_all[pos:pos + len(sr)]
        pos += len(sr)
        if not len(sr):
            continue
        r_score = log_softmax(part) if logp else part
        for ri, rs in enumerate(sr.candidates):
            finals.append((float(s + r_score[ri]), t.template_key, sr.keys[ri], (t, rs, sr.keys[ri])))
    finals = sorted(finals, key=lambda e: (-e[0], e[1], e[2]))
    out: list[Prediction] = []
    seen = set()
    for score, _, key, (t, rs, _) in finals:
        if dedup:
            if key in seen:
                continue
            seen.add(key)
        out.append(Prediction(len(out) + 1, tuple(rs), key, t.template_key, t.center_key, score))
        if len(out) == beam:
            break
    return out


def exhaustive_ranking(model: GlnModel, O: MolGraph, caches: Caches, reaction_class=None):
    """Every (score, template_key, reactant keys) in the supports, best first (a reference for tests)."""
    from .model import joint_log_prob

    support = caches.support_t(O)
    if reaction_class is not None:
        support = restrict_by_class(support, reaction_class)
    rows = []
    for t in support.templates:
        sr = caches.support_r(O, t)
        for rs, key in zip(sr.candidates, sr.keys):
            jl = joint_log_prob(model, O, t, rs, caches, reaction_class)
            if not jl.miss:
                rows.append((jl.value, t.template_key, key))
    return sorted(rows, key=lambda e: (-e[0], e[1], e[2]))


def _keys(rs) -> tuple[bytes, ...]:
    rs = list(rs)
    if all(isinstance(x, (bytes, bytearray)) for x in rs):
        return tuple(sorted(bytes(x) for x in rs))
    return reactant_set_key(rs)


def exact_match(prediction, truth) -> bool:
    """Multiset equality of canonical keys; accepts molecules or keys."""
    return _keys(prediction) == _keys(truth)


@dataclass
class EvalReport:
    n_records: int
    accuracy: dict[int, float]
    per_class: dict = field(default_factory=dict)  # class -> {"n": int, "accuracy": {k: float}}
    coverage: Optional[float] = None

    def lines(self) -> list[str]:
        out = [f"records\t{self.n_records}"]
        out += [f"top-{k}\t{v:.4f}" for k, v in sorted(self.accuracy.items())]
        if self.coverage is not None:
            out.append(f"coverage\t{self.coverage:.4f}")
        for c in sorted(self.per_class, key=str):
            acc = self.per_class[c]["accuracy"]
            out.append(f"class {c}\tn={self.per_class[c]['n']}\t" +
                       "\t".join(f"top-{k}={v:.4f}" for k, v in sorted(acc.items())))
        return out


def score_predictions(records: Sequence[ReactionRecord], predictions: Mapping[str, Sequence],
                      ks: Iterable[int] = DEFAULT_KS) -> EvalReport:
    """Top-k accuracy of ranked predictions (lists of reactant sets or Predictions) by record id."""
    ks = sorted(set(ks))
    hits = {k: 0 for k in ks}
    per_class: dict = {}
    for rec in records:
        truth = rec.truth_key
        ranked = predictions.get(rec.record_id, [])
        first = None
        for i, p in enumerate(ranked):
            key = p.keys if isinstance(p, Prediction) else _keys(p)
            if key == truth:
                first = i + 1
                break
        bucket = per_class.setdefault(rec.reaction_class, {"n": 0, "hits": {k: 0 for k in ks}})
        bucket["n"] += 1
        for k in ks:
            if first is not None and first <= k:
                hits[k] += 1
                bucket["hits"][k] += 1
    n = len(records)
    acc = {k: (hits[k] / n if n else 0.0) for k in ks}
    pc = {c: {"n": b["n"], "accuracy": {k: b["hits"][k] / b["n"] for k in ks}}
          for c, b in per_class.items() if c is not None}
    return EvalReport(n, acc, pc)


def truth_covered(rec: ReactionRecord, caches: Caches, reaction_class=None) -> bool:
    O = rec.product
    support = caches.support_t(O)
    if reaction_class is not None:
        try:
            support = restrict_by_class(support, reaction_class)
        except EmptySupportError:
            return False
    return any(caches.support_r(O, t).index(rec.truth_key) is not None for t in support.templates)


def evaluate(records: Sequence[ReactionRecord], model: GlnModel, caches: Caches, ks: Iterable[int] = DEFAULT_KS,
             beam: int = 50, class_conditional: bool = False, score_mode: str = "logprob",
             predictions_out: Optional[dict] = None) -> EvalReport:
    preds = {}
    covered = 0
    for rec in records:
        cls = rec.reaction_class if class_conditional else None
        preds[rec.record_id] = beam_search(model, rec.product, caches, beam, cls, score_mode=score_mode)
        covered += truth_covered(rec, caches, cls)
    report = score_predictions(records, preds, ks)
    report.coverage = covered / len(records) if records else 0.0
    if predictions_out is not None:
        predictions_out.update(preds)
    return report


def top1_accuracy(model: GlnModel, items, caches: Caches, beam: int = 10, class_conditional: bool = False) -> float:
    """Fraction of training items whose truth is the top beam prediction."""
    if not items:
        return 0.0
    hit = 0
    for it in items:
        cls = it.reaction_class if class_conditional else None
        preds = beam_search(model, it.product, caches, beam, cls)
        hit += bool(preds) and preds[0].keys == it.truth_key
    return hit / len(items)


def uniform_baseline_top1(records: Sequence[ReactionRecord], caches: Caches, reaction_class_mode: bool = False) -> float:
    """Expected top-1 accuracy of picking T uniformly from the matched templates, then R uniformly.

    Templates that produce no reactant set count as misses.
    """
    if not records:
        return 0.0
    total = 0.0
    for rec in records:
        support = caches.support_t(rec.product)
        if reaction_class_mode and rec.reaction_class is not None:
            try:
                support = restrict_by_class(support, rec.reaction_class)
            except EmptySupportError:
                continue
        temps = support.templates
        if not temps:
            continue
        p = 0.0
        for t in temps:
            sr = caches.support_r(rec.product, t)
            if len(sr) and sr.index(rec.truth_key) is not None:
                p += 1.0 / len(sr)
        total += p / len(temps)
    return total / len(records)


def atom_scores(model: GlnModel, O: MolGraph, center: PatternGraph) -> np.ndarray:
    """Per-atom share of v1(center, O): ``g1(center)^T A h_v / |V|``; sums to v1."""
    if model.embedders["g2"].pooling != "mean":
        raise ValueError("atom scores need mean pooling in g2")
    h = forward(model.embedders["g2"], GraphBatch([O])).node_emb
    x = model.embed_graphs("g1", [center])[0]
    if model.config.compatibility == "bilinear":
        x = model.bilinear["v1"].T @ x
    return (h @ x) / len(O.atoms)


def format_prediction_lines(record_id: str, preds: Sequence[Prediction]) -> list[str]:
    return [f"{record_id}\t{p.rank}\t{p.score:.6f}\t{p.template_key}\t{p.reactant_text}" for p in preds]


def write_reactants(rs: Sequence[MolGraph]) -> str:
    return ".".join(sorted(write_molecule(m) for m in rs))


__all__ = [
    "DEFAULT_KS", "EvalReport", "Prediction", "atom_scores", "beam_search", "evaluate", "exact_match",
    "exhaustive_ranking", "format_prediction_lines", "score_predictions", "top1_accuracy",
    "truth_covered", "uniform_baseline_top1", "write_reactants",
]
