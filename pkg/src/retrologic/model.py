"""Energies and restricted-support distributions of the conditional graph logic network.

Energies (inner product by default, optionally bilinear ``x^T A y``)::

    v1(o, O)  = g1(o)^T g2(O)
    v2(rs, O) = mean_i g4(r_i)^T g3(O)
    w2(R, O)  = mean_j g6(R_j)^T g5(O)

The template distribution is hierarchical: p(T|O) = p(o^T|O) p(T|o^T, O),
each factor a softmax over its cached support. p(R|T,O) is a softmax of w2
over the candidates produced by applying T to O.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol, Sequence

import numpy as np

from . import embedding as emb
from .chem import MolGraph, canonical_key
from .embedding import EmbedderParams, FeatureConfig, GraphBatch
from .params_io import load_arrays, load_metadata, save_arrays
from .pattern import PatternGraph
from .templates import RetroTemplate, reactant_set_key

SUPPORT_CAP = 10_000
EMBEDDERS = ("g1", "g2", "g3", "g4", "g5", "g6")
# energy -> (set-side embedder, product-side embedder)
ENERGIES = {"v1": ("g1", "g2"), "v2": ("g4", "g3"), "w2": ("g6", "g5")}


class EmptySupportError(ValueError):
    pass


class SupportCapError(ValueError):
    pass


# ---------------------------------------------------------------------------
# supports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CenterGroup:
    center_key: str
    center: PatternGraph
    templates: tuple[RetroTemplate, ...]


@dataclass(frozen=True)
class SupportT:
    """Matched templates of one product, grouped by center; groups and members sorted by key."""

    product_id: str
    groups: tuple[CenterGroup, ...]

    @classmethod
    def from_templates(cls, product_id: str, templates: Iterable[RetroTemplate]) -> "SupportT":
        by_center: dict[str, dict[str, RetroTemplate]] = {}
        for t in templates:
            by_center.setdefault(t.center_key, {})[t.template_key] = t
        total = sum(len(v) for v in by_center.values())
        if total > SUPPORT_CAP:
            raise SupportCapError(f"{product_id}: {total} matched templates exceed the cap of {SUPPORT_CAP}")
        groups = []
        for ck in sorted(by_center):
            members = tuple(by_center[ck][k] for k in sorted(by_center[ck]))
            groups.append(CenterGroup(ck, members[0].product_pattern, members))
        return cls(product_id, tuple(groups))

    @property
    def templates(self) -> list[RetroTemplate]:
        return [t for g in self.groups for t in g.templates]

    def __len__(self) -> int:
        return sum(len(g.templates) for g in self.groups)

    def locate(self, template_key: str) -> Optional[tuple[int, int]]:
        for gi, g in enumerate(self.groups):
            for ti, t in enumerate(g.templates):
                if t.template_key == template_key:
                    return gi, ti
        return None

    def group_of(self, center_key: str) -> int:
        for gi, g in enumerate(self.groups):
            if g.center_key == center_key:
                return gi
        raise KeyError(center_key)


@dataclass(frozen=True)
class SupportR:
    product_id: str
    template_key: str
    candidates: tuple[tuple[MolGraph, ...], ...]
    keys: tuple[tuple[bytes, ...], ...] = field(default=(), compare=False)

    def __post_init__(self):
        cands = tuple(tuple(c) for c in self.candidates)
        if len(cands) > SUPPORT_CAP:
            raise SupportCapError(f"{self.product_id}: {len(cands)} reactant sets exceed the cap of {SUPPORT_CAP}")
        object.__setattr__(self, "candidates", cands)
        if len(self.keys) != len(cands):
            object.__setattr__(self, "keys", tuple(reactant_set_key(c) for c in cands))

    def __len__(self) -> int:
        return len(self.candidates)

    def index(self, key: Sequence[bytes]) -> Optional[int]:
        key = tuple(sorted(key))
        for i, k in enumerate(self.keys):
            if k == key:
                return i
        return None


def restrict_by_class(support: SupportT, reaction_class) -> SupportT:
    """Keep templates tagged with ``reaction_class``; the result must be non-empty."""
    groups = []
    for g in support.groups:
        kept = tuple(t for t in g.templates if reaction_class in t.class_tags)
        if kept:
            groups.append(CenterGroup(g.center_key, g.center, kept))
    if not groups:
        raise EmptySupportError(f"{support.product_id}: no matched template has class {reaction_class}")
    return SupportT(support.product_id, tuple(groups))


class Caches(Protocol):
    def support_t(self, O: MolGraph) -> SupportT: ...

    def support_r(self, O: MolGraph, T: RetroTemplate) -> SupportR: ...


def product_id(O: MolGraph) -> str:
    return canonical_key(O).decode("ascii")


class InMemoryCaches:
    """Supports computed on demand from a template table and memoized."""

    def __init__(self, templates: Sequence[RetroTemplate]):
        from .templates import dedup_templates

        self.templates = dedup_templates(templates)
        self.known = {t.template_key for t in self.templates}
        self._t: dict[str, SupportT] = {}
        self._r: dict[tuple[str, str], SupportR] = {}

    def support_t(self, O: MolGraph) -> SupportT:
        from .templates import phi_match_template

        pid = product_id(O)
        if pid not in self._t:
            self._t[pid] = SupportT.from_templates(
                pid, [t for t in self.templates if phi_match_template(O, t, self.known)])
        return self._t[pid]

    def support_r(self, O: MolGraph, T: RetroTemplate) -> SupportR:
        from .templates import apply_template

        pid = product_id(O)
        key = (pid, T.template_key)
        if key not in self._r:
            self._r[key] = SupportR(pid, T.template_key, tuple(tuple(c) for c in apply_template(T, O)))
        return self._r[key]


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


@dataclass
class ModelConfig:
    dim: int = 256
    layers: int = 3
    activation: str = "relu"
    pooling: str = "mean"
    h0: str = "projected"
    compatibility: str = "inner"  # or "bilinear"
    seed: int = 0

    def __post_init__(self):
        if self.dim <= 0 or self.layers < 0:
            raise ValueError("dim must be positive and layers non-negative")
        if self.compatibility not in ("inner", "bilinear"):
            raise ValueError(f"unknown compatibility {self.compatibility!r}")


class GlnModel:
    def __init__(self, config: ModelConfig, embedders: dict[str, EmbedderParams],
                 bilinear: Optional[dict[str, np.ndarray]] = None, class_conditional: bool = False):
        if set(embedders) != set(EMBEDDERS):
            raise ValueError("model needs exactly the embedders g1..g6")
        dims = {e.dim for e in embedders.values()}
        if dims != {config.dim}:
            raise ValueError("embedder dimensions disagree with the config")
        self.config = config
        self.embedders = embedders
        self.bilinear = bilinear or {}
        if config.compatibility == "bilinear" and set(self.bilinear) != set(ENERGIES):
            raise ValueError("bilinear compatibility needs matrices for v1, v2 and w2")
        self.class_conditional = class_conditional

    @classmethod
    def init(cls, config: ModelConfig = None, features: FeatureConfig = emb.DEFAULT_FEATURES,
             class_conditional: bool = False) -> "GlnModel":
        config = config or ModelConfig()
        rng = np.random.default_rng(config.seed)
        embedders = {
            name: EmbedderParams.init(config.dim, rng, features, config.layers, config.activation,
                                      config.pooling, config.h0)
            for name in EMBEDDERS
        }
        bilinear = None
        if config.compatibility == "bilinear":
            bilinear = {k: np.eye(config.dim) + rng.uniform(-1, 1, (config.dim, config.dim)) / config.dim
                        for k in ENERGIES}
        return cls(config, embedders, bilinear, class_conditional)

    def parameters(self) -> dict[str, np.ndarray]:
        """Every trainable array, by name. Arrays are live: in-place updates change the model."""
        out = {}
        for name in EMBEDDERS:
            for k, v in self.embedders[name].arrays().items():
                out[f"{name}.{k}"] = v
        for k in sorted(self.bilinear):
            out[f"A.{k}"] = self.bilinear[k]
        return out

    def copy(self) -> "GlnModel":
        m = GlnModel.__new__(GlnModel)
        m.config = self.config
        m.embedders = {n: EmbedderParams(*(a.copy() for a in e.arrays().values()), e.layers, e.activation,
                                         e.pooling, e.h0) for n, e in self.embedders.items()}
        m.bilinear = {k: v.copy() for k, v in self.bilinear.items()}
        m.class_conditional = self.class_conditional
        return m

    # -- embeddings and energies ------------------------------------------

    def embed_graphs(self, name: str, graphs: Sequence) -> np.ndarray:
        return emb.forward(self.embedders[name], GraphBatch(list(graphs))).graph_emb

    def compat(self, energy: str, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Compatibility of set-side rows ``x`` (k x d or d) with product-side ``y`` (d)."""
        if self.config.compatibility == "bilinear":
            return x @ (self.bilinear[energy] @ y)
        return x @ y

    def v1(self, o: PatternGraph, O: MolGraph) -> float:
        return float(self.compat("v1", self.embed_graphs("g1", [o])[0], self.embed_graphs("g2", [O])[0]))

    def v2(self, rs: Sequence[PatternGraph], O: MolGraph) -> float:
        if not rs:
            raise ValueError("v2 needs at least one reactant pattern")
        x = self.embed_graphs("g4", rs).mean(axis=0)
        return float(self.compat("v2", x, self.embed_graphs("g3", [O])[0]))

    def w2(self, R: Sequence[MolGraph], O: MolGraph) -> float:
        if not R:
            raise ValueError("w2 needs at least one reactant")
        x = self.embed_graphs("g6", R).mean(axis=0)
        return float(self.compat("w2", x, self.embed_graphs("g5", [O])[0]))

    def center_scores(self, O: MolGraph, support: SupportT) -> np.ndarray:
        if not support.groups:
            raise EmptySupportError("empty template support")
        x = self.embed_graphs("g1", [g.center for g in support.groups])
        return self.compat("v1", x, self.embed_graphs("g2", [O])[0])

    def template_scores(self, O: MolGraph, templates: Sequence[RetroTemplate]) -> np.ndarray:
        if not templates:
            raise EmptySupportError("empty template group")
        return self.set_scores("v2", [t.reactant_patterns for t in templates], O)

    def reactant_scores(self, O: MolGraph, support: SupportR) -> np.ndarray:
        if not support.candidates:
            raise EmptySupportError("empty reactant support")
        return self.set_scores("w2", support.candidates, O)

    def set_scores(self, energy: str, sets: Sequence[Sequence], O: MolGraph) -> np.ndarray:
        """DeepSet energies of several graph sets against one product, in one batched pass."""
        left, prod = ENERGIES[energy]
        flat = [g for s in sets for g in s]
        e = self.embed_graphs(left, flat)
        sizes = np.array([len(s) for s in sets])
        means = np.add.reduceat(e, np.concatenate([[0], np.cumsum(sizes)[:-1]]), axis=0) / sizes[:, None]
        return self.compat(energy, means, self.embed_graphs(prod, [O])[0])

    # -- persistence -------------------------------------------------------

    def save(self, path, extra_metadata: Optional[dict] = None) -> None:
        meta = {
            "format": "retrologic-gln",
            "dim": self.config.dim,
            "layers": self.config.layers,
            "activation": self.config.activation,
            "pooling": self.config.pooling,
            "h0": self.config.h0,
            "compatibility": self.config.compatibility,
            "seed": self.config.seed,
            "class_conditional": self.class_conditional,
        }
        meta.update(extra_metadata or {})
        save_arrays(path, self.parameters(), meta)

    @classmethod
    def load(cls, path) -> "GlnModel":
        meta = load_metadata(path)
        arrays = load_arrays(path)
        config = ModelConfig(meta["dim"], meta["layers"], meta["activation"], meta["pooling"], meta["h0"],
                             meta["compatibility"], meta["seed"])
        embedders = {
            name: EmbedderParams(*(arrays[f"{name}.{k}"] for k in EmbedderParams.NAMES), config.layers,
                                 config.activation, config.pooling, config.h0)
            for name in EMBEDDERS
        }
        bilinear = {k[2:]: v for k, v in arrays.items() if k.startswith("A.")}
        return cls(config, embedders, bilinear or None, meta.get("class_conditional", False))


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------


def softmax(scores: np.ndarray) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise EmptySupportError("softmax over an empty support")
    z = np.exp(s - s.max())
    return z / z.sum()


def log_softmax(scores: np.ndarray) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise EmptySupportError("softmax over an empty support")
    shifted = s - s.max()
    return shifted - math.log(np.exp(shifted).sum())


def prob_center(model: GlnModel, O: MolGraph, support: SupportT) -> np.ndarray:
    """p(o|O) over ``support.groups``."""
    return softmax(model.center_scores(O, support))


def prob_template_given_center(model: GlnModel, O: MolGraph, center_key: str, support: SupportT) -> np.ndarray:
    """p(T|o,O) over the templates of the group with ``center_key``."""
    group = support.groups[support.group_of(center_key)]
    return softmax(model.template_scores(O, group.templates))


def prob_template(model: GlnModel, O: MolGraph, support: SupportT) -> np.ndarray:
    """p(T|O) over ``support.templates`` (flattened group order)."""
    pc = prob_center(model, O, support)
    parts = [pc[gi] * prob_template_given_center(model, O, g.center_key, support)
             for gi, g in enumerate(support.groups)]
    return np.concatenate(parts)


def prob_reactants(model: GlnModel, O: MolGraph, T: RetroTemplate, support: SupportR) -> np.ndarray:
    if support.template_key != T.template_key:
        raise ValueError("reactant support belongs to a different template")
    return softmax(model.reactant_scores(O, support))


@dataclass(frozen=True)
class JointLogProb:
    value: float
    miss: bool = False

    def __lt__(self, other: "JointLogProb") -> bool:
        # a miss ranks below every finite value
        if self.miss or other.miss:
            return self.miss and not other.miss
        return self.value < other.value


def joint_log_prob(model: GlnModel, O: MolGraph, T: RetroTemplate, R: Sequence[MolGraph], caches: Caches,
                   reaction_class=None) -> JointLogProb:
    """log p(T|O) + log p(R|T,O); ``miss`` is set when either predicate fails."""
    st = caches.support_t(O)
    if reaction_class is not None:
        try:
            st = restrict_by_class(st, reaction_class)
        except EmptySupportError:
            return JointLogProb(0.0, miss=True)
    where = st.locate(T.template_key)
    if where is None:
        return JointLogProb(0.0, miss=True)
    gi, ti = where
    sr = caches.support_r(O, T)
    ri = sr.index(reactant_set_key(R))
    if ri is None:
        return JointLogProb(0.0, miss=True)
    lc = log_softmax(model.center_scores(O, st))[gi]
    lt = log_softmax(model.template_scores(O, st.groups[gi].templates))[ti]
    lr = log_softmax(model.reactant_scores(O, sr))[ri]
    return JointLogProb(float(lc + lt + lr))
