"""structure2vec graph embeddings with hand-written reverse-mode gradients.

Update rule, for L rounds::

    h_v <- act(theta1 x_v + theta2 sum_{u in N(v)} h_u + theta3 sum_{u in N(v)} act(theta4 x_uv))

Graphs are packed into one block-diagonal batch so each embedder runs a
single sparse forward (and backward) pass per batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .chem.graph import ELEMENTS, ELEMENT_INDEX, BondOrder, MolGraph
from .pattern import ANY_BOND, PatternGraph

Graph = Union[MolGraph, PatternGraph]

ACTIVATIONS = ("relu", "tanh")
POOLINGS = ("mean", "sum", "max")
H0_MODES = ("projected", "raw")


@dataclass(frozen=True)
class FeatureConfig:
    elements: tuple[str, ...] = ELEMENTS
    charge_range: tuple[int, int] = (-2, 2)
    max_degree: int = 5
    max_hcount: int = 4

    @property
    def node_feature_dim(self) -> int:
        lo, hi = self.charge_range
        # elements | charge | degree | H count | aromatic | wildcard
        return len(self.elements) + (hi - lo + 1) + (self.max_degree + 1) + (self.max_hcount + 1) + 2

    @property
    def edge_feature_dim(self) -> int:
        return 5  # single, double, triple, aromatic, wildcard


DEFAULT_FEATURES = FeatureConfig()
_EDGE_SLOT = {BondOrder.SINGLE: 0, BondOrder.DOUBLE: 1, BondOrder.TRIPLE: 2, BondOrder.AROMATIC: 3, ANY_BOND: 4}


def _node_row(cfg: FeatureConfig, element, charge, hcount, aromatic, degree) -> np.ndarray:
    row = np.zeros(cfg.node_feature_dim)
    ne = len(cfg.elements)
    lo, hi = cfg.charge_range
    nc = hi - lo + 1
    nd = cfg.max_degree + 1
    if element is not None:
        row[ELEMENT_INDEX[element]] = 1.0
    else:
        row[-1] = 1.0
    if charge is not None:
        row[ne + min(max(charge, lo), hi) - lo] = 1.0
    row[ne + nc + min(degree, cfg.max_degree)] = 1.0
    if hcount is not None:
        row[ne + nc + nd + min(hcount, cfg.max_hcount)] = 1.0
    if aromatic:
        row[-2] = 1.0
    return row


@dataclass
class GraphFeatures:
    x: np.ndarray  # n x F
    edges: np.ndarray  # m x 2, undirected pairs
    edge_x: np.ndarray  # m x Fe


def featurize(g: Graph, cfg: FeatureConfig = DEFAULT_FEATURES) -> GraphFeatures:
    """Node and edge features; cached on the graph object for the default config."""
    cache = g.__dict__.get("_s2v_features") if cfg is DEFAULT_FEATURES else None
    if cache is not None:
        return cache
    if isinstance(g, MolGraph):
        rows = [_node_row(cfg, a.element, a.formal_charge, a.explicit_h, a.aromatic, g.degree(i))
                for i, a in enumerate(g.atoms)]
        pairs = [(b.a, b.b, int(b.order)) for b in g.bonds]
    else:
        rows = [_node_row(cfg, n.element, n.charge, n.hcount, n.aromatic, g.degree(i))
                for i, n in enumerate(g.nodes)]
        pairs = [(e.a, e.b, e.order) for e in g.edges]
    x = np.array(rows, dtype=np.float64).reshape(len(rows), cfg.node_feature_dim)
    edges = np.array([(a, b) for a, b, _ in pairs], dtype=np.int64).reshape(-1, 2)
    ex = np.zeros((len(pairs), cfg.edge_feature_dim))
    for k, (_, _, o) in enumerate(pairs):
        ex[k, _EDGE_SLOT[o]] = 1.0
    feats = GraphFeatures(x, edges, ex)
    if cfg is DEFAULT_FEATURES:
        g.__dict__["_s2v_features"] = feats
    return feats


@dataclass
class EmbedderParams:
    theta1: np.ndarray  # d x F
    theta2: np.ndarray  # d x d
    theta3: np.ndarray  # d x d
    theta4: np.ndarray  # d x Fe
    layers: int = 3
    activation: str = "relu"
    pooling: str = "mean"
    h0: str = "projected"

    NAMES = ("theta1", "theta2", "theta3", "theta4")

    def __post_init__(self):
        d = self.theta1.shape[0]
        if self.theta2.shape != (d, d) or self.theta3.shape != (d, d) or self.theta4.shape[0] != d:
            raise ValueError("inconsistent embedder parameter shapes")
        if self.activation not in ACTIVATIONS or self.pooling not in POOLINGS or self.h0 not in H0_MODES:
            raise ValueError("unknown activation, pooling or h0 mode")
        if self.h0 == "raw" and d < self.theta1.shape[1]:
            raise ValueError("raw h0 needs dim >= node feature dim")

    @property
    def dim(self) -> int:
        return self.theta1.shape[0]

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator, features: FeatureConfig = DEFAULT_FEATURES,
             layers: int = 3, activation: str = "relu", pooling: str = "mean", h0: str = "projected"):
        bound = 1.0 / np.sqrt(dim)

        def u(*shape):
            return rng.uniform(-bound, bound, size=shape)

        return cls(u(dim, features.node_feature_dim), u(dim, dim), u(dim, dim),
                   u(dim, features.edge_feature_dim), layers, activation, pooling, h0)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.NAMES}

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.arrays().items()}


def _act(name: str, z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) if name == "relu" else np.tanh(z)


def _act_grad(name: str, z: np.ndarray, out: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(z.dtype)
    return 1.0 - out * out


class GraphBatch:
    """Several graphs packed block-diagonally."""

    def __init__(self, graphs: Sequence[Graph], features: FeatureConfig = DEFAULT_FEATURES):
        if not graphs:
            raise ValueError("empty graph batch")
        feats = [featurize(g, features) for g in graphs]
        sizes = np.array([f.x.shape[0] for f in feats])
        if (sizes == 0).any():
            raise ValueError("cannot embed an empty graph")
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        n = int(offsets[-1])
        self.sizes = sizes
        self.offsets = offsets
        self.n_graphs = len(graphs)
        self.x = np.vstack([f.x for f in feats])
        pairs = [f.edges + off for f, off in zip(feats, offsets[:-1])]
        und = np.vstack(pairs) if pairs else np.zeros((0, 2), dtype=np.int64)
        ex = np.vstack([f.edge_x for f in feats])
        src = np.concatenate([und[:, 0], und[:, 1]])
        dst = np.concatenate([und[:, 1], und[:, 0]])
        self.edge_x = np.vstack([ex, ex])
        m = len(src)
        ones = np.ones(m)
        self.adj = sp.csr_matrix((ones, (dst, src)), shape=(n, n))
        self.incoming = sp.csr_matrix((ones, (dst, np.arange(m))), shape=(n, m))
        graph_of = np.repeat(np.arange(self.n_graphs), sizes)
        self.graph_of = graph_of
        self.sum_pool = sp.csr_matrix((np.ones(n), (graph_of, np.arange(n))), shape=(self.n_graphs, n))
        self.mean_pool = sp.csr_matrix((1.0 / sizes[graph_of], (graph_of, np.arange(n))), shape=(self.n_graphs, n))


@dataclass
class EmbeddingResult:
    node_embeddings: np.ndarray  # n x d
    graph_embedding: np.ndarray  # d


@dataclass
class BatchForward:
    batch: GraphBatch
    graph_emb: np.ndarray  # G x d
    node_emb: np.ndarray  # N x d
    cache: dict = field(repr=False, default_factory=dict)

    def result(self, i: int) -> EmbeddingResult:
        lo, hi = self.batch.offsets[i], self.batch.offsets[i + 1]
        return EmbeddingResult(self.node_emb[lo:hi], self.graph_emb[i])


def forward(params: EmbedderParams, batch: GraphBatch) -> BatchForward:
    act = params.activation
    X, A = batch.x, batch.adj
    xw = X @ params.theta1.T
    qpre = batch.edge_x @ params.theta4.T
    q = _act(act, qpre)
    s = batch.incoming @ q
    const = xw + s @ params.theta3.T
    if params.h0 == "projected":
        h = _act(act, xw)
    else:
        h = np.zeros((X.shape[0], params.dim))
        h[:, :X.shape[1]] = X
    hs, pres = [h], []
    for _ in range(params.layers):
        pre = const + (A @ h) @ params.theta2.T
        h = _act(act, pre)
        pres.append(pre)
        hs.append(h)
    if params.pooling == "mean":
        g = batch.mean_pool @ h
        arg = None
    elif params.pooling == "sum":
        g = batch.sum_pool @ h
        arg = None
    else:
        g = np.maximum.reduceat(h, batch.offsets[:-1], axis=0)
        # first node attaining the max, per graph and dimension
        arg = np.zeros_like(g, dtype=np.int64)
        for i in range(batch.n_graphs):
            lo, hi = batch.offsets[i], batch.offsets[i + 1]
            arg[i] = lo + np.argmax(h[lo:hi], axis=0)
    cache = dict(xw=xw, qpre=qpre, q=q, s=s, hs=hs, pres=pres, arg=arg)
    return BatchForward(batch, g, h, cache)


def backward(params: EmbedderParams, fwd: BatchForward, upstream_graph: Optional[np.ndarray] = None,
             upstream_nodes: Optional[np.ndarray] = None) -> dict[str, np.ndarray]:
    """Gradients of ``sum(upstream * outputs)`` with respect to theta1..theta4."""
    batch, c, act = fwd.batch, fwd.cache, params.activation
    n, d = fwd.node_emb.shape
    dh = np.zeros((n, d)) if upstream_nodes is None else np.array(upstream_nodes, dtype=np.float64)
    if dh.shape != (n, d):
        raise ValueError(f"node upstream has shape {dh.shape}, expected {(n, d)}")
    if upstream_graph is not None:
        ug = np.asarray(upstream_graph, dtype=np.float64).reshape(batch.n_graphs, -1)
        if ug.shape != (batch.n_graphs, d):
            raise ValueError(f"graph upstream has shape {ug.shape}, expected {(batch.n_graphs, d)}")
        if params.pooling == "mean":
            dh += batch.mean_pool.T @ ug
        elif params.pooling == "sum":
            dh += batch.sum_pool.T @ ug
        else:
            cols = np.broadcast_to(np.arange(d), c["arg"].shape)
            np.add.at(dh, (c["arg"], cols), ug)
    grads = params.zeros_like()
    dconst = np.zeros((n, d))
    A = batch.adj
    hs, pres = c["hs"], c["pres"]
    for layer in range(params.layers - 1, -1, -1):
        dpre = dh * _act_grad(act, pres[layer], hs[layer + 1])
        dconst += dpre
        grads["theta2"] += dpre.T @ (A @ hs[layer])
        dh = A.T @ (dpre @ params.theta2)
    dxw = dconst.copy()
    if params.h0 == "projected":
        dxw += dh * _act_grad(act, c["xw"], hs[0])
    grads["theta1"] = dxw.T @ batch.x
    grads["theta3"] = dconst.T @ c["s"]
    ds = dconst @ params.theta3
    dq = batch.incoming.T @ ds
    dqpre = dq * _act_grad(act, c["qpre"], c["q"])
    grads["theta4"] = dqpre.T @ batch.edge_x
    return grads


def embed(params: EmbedderParams, g: Graph) -> EmbeddingResult:
    return forward(params, GraphBatch([g])).result(0)


def embed_with_gradient(params: EmbedderParams, g: Graph, upstream: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients for one graph.

    ``upstream`` is either a d-vector (gradient w.r.t. the graph embedding)
    or an n x d array (gradient w.r.t. the node embeddings).
    """
    fwd = forward(params, GraphBatch([g]))
    up = np.asarray(upstream, dtype=np.float64)
    if up.ndim == 1:
        return backward(params, fwd, upstream_graph=up[None, :])
    return backward(params, fwd, upstream_nodes=up)


def cast(params: EmbedderParams, dtype) -> EmbedderParams:
    """Copy of ``params`` in another float precision (inference only)."""
    return EmbedderParams(*(getattr(params, k).astype(dtype) for k in EmbedderParams.NAMES),
                          params.layers, params.activation, params.pooling, params.h0)
