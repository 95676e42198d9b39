import itertools
import zlib

import numpy as np
import pytest

from oracles import central_difference, random_molecule, random_pattern, relative_error
from retrologic.chem import parse_molecule
from retrologic.embedding import (
    DEFAULT_FEATURES,
    EmbedderParams,
    GraphBatch,
    backward,
    embed,
    embed_with_gradient,
    featurize,
    forward,
)
from retrologic.pattern import parse_pattern

F = DEFAULT_FEATURES.node_feature_dim


def params(dim=6, seed=0, **kw):
    return EmbedderParams.init(dim, np.random.default_rng(seed), **kw)


def relu(z):
    return np.maximum(z, 0.0)


def test_feature_dims():
    f = featurize(parse_molecule("CC=O"))
    assert f.x.shape == (3, F) and f.edge_x.shape == (2, DEFAULT_FEATURES.edge_feature_dim)
    assert np.all(f.x.sum(axis=1) == 4)  # element, charge, degree, H count


def test_wildcard_bit():
    f = featurize(parse_pattern("*~N"))
    assert f.x[0, -1] == 1.0 and f.x[1, -1] == 0.0
    assert f.edge_x[0, 4] == 1.0


@pytest.mark.parametrize("layers", [0, 1, 3])
def test_single_node_closed_form(layers):
    p = params(layers=layers)
    g = parse_molecule("N")
    x = featurize(g).x[0]
    res = embed(p, g)
    np.testing.assert_allclose(res.node_embeddings[0], relu(p.theta1 @ x))
    np.testing.assert_allclose(res.graph_embedding, relu(p.theta1 @ x))


def test_single_node_theta1_gradient_closed_form():
    p = params(dim=5, seed=2)
    p.theta1[:] = np.random.default_rng(9).normal(size=p.theta1.shape)
    g = parse_molecule("O")
    x = featurize(g).x[0]
    u = np.random.default_rng(4).normal(size=5)
    grads = embed_with_gradient(p, g, u)
    expected = np.outer((p.theta1 @ x > 0) * u, x)
    np.testing.assert_allclose(grads["theta1"], expected, atol=1e-14)


def test_permutation_invariance():
    p = params(dim=8, seed=1)
    m = parse_molecule("CC(=O)Nc1ccc(O)cc1")
    perm = list(np.random.default_rng(0).permutation(len(m.atoms)))
    np.testing.assert_allclose(embed(p, m).graph_embedding, embed(p, m.permute(perm)).graph_embedding,
                               rtol=1e-12, atol=1e-12)


def test_zero_parameters_give_zero():
    p = params()
    for k in p.NAMES:
        getattr(p, k)[:] = 0.0
    assert not embed(p, parse_molecule("CCO")).node_embeddings.any()


def test_zero_upstream_zero_gradient():
    p = params()
    g = embed_with_gradient(p, parse_molecule("CCO"), np.zeros(p.dim))
    assert all(not v.any() for v in g.values())


def test_batch_matches_single_graphs():
    p = params(dim=7, seed=3)
    graphs = [parse_molecule("CCO"), parse_pattern("[C:1]=O"), parse_molecule("c1ccccc1")]
    fwd = forward(p, GraphBatch(graphs))
    for i, g in enumerate(graphs):
        np.testing.assert_allclose(fwd.graph_emb[i], embed(p, g).graph_embedding, atol=1e-14)


def _fd_check(p, graphs, rng, coords=25):
    batch = GraphBatch(graphs)
    U = rng.normal(size=(len(graphs), p.dim))
    fwd = forward(p, batch)
    grads = backward(p, fwd, upstream_graph=U)
    arrays = p.arrays()

    def f():
        return float((forward(p, batch).graph_emb * U).sum())

    for name in p.NAMES:
        flat = np.arange(arrays[name].size)
        for k in rng.choice(flat, size=min(coords, flat.size), replace=False):
            idx = np.unravel_index(k, arrays[name].shape)
            num = central_difference(f, arrays, name, idx)
            assert relative_error(grads[name][idx], num, floor=1e-6) < 1e-5, (name, idx)


@pytest.mark.parametrize("activation,pooling,h0", list(itertools.product(
    ["relu", "tanh"], ["mean", "sum", "max"], ["projected", "raw"])))
def test_gradient_matches_finite_differences(activation, pooling, h0):
    rng = np.random.default_rng(zlib.crc32(f"{activation}/{pooling}/{h0}".encode()))
    dim = F + 2 if h0 == "raw" else 6
    p = params(dim=dim, seed=5, activation=activation, pooling=pooling, h0=h0, layers=2)
    graphs = [random_molecule(rng, int(rng.integers(1, 11))) for _ in range(3)]
    graphs.append(random_pattern(rng, 3))
    _fd_check(p, graphs, rng)


def test_node_upstream_gradient():
    rng = np.random.default_rng(12)
    p = params(dim=5, seed=6)
    g = random_molecule(rng, 7)
    U = rng.normal(size=(7, 5))
    grads = embed_with_gradient(p, g, U)
    arrays = p.arrays()

    def f():
        return float((embed(p, g).node_embeddings * U).sum())

    for name in p.NAMES:
        idx = np.unravel_index(int(rng.integers(arrays[name].size)), arrays[name].shape)
        assert relative_error(grads[name][idx], central_difference(f, arrays, name, idx), floor=1e-6) < 1e-5


def test_invalid_configs():
    with pytest.raises(ValueError):
        params(activation="gelu")
    with pytest.raises(ValueError):
        params(dim=4, h0="raw")
