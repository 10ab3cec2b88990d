import math

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import gradcheck, toy_graph
from hypdis import autodiff as ad
from hypdis import hetgraph as hg
from hypdis import layers as L
from hypdis import manifold as mf

BALL = mf.PoincareBall()


def encoders(g, dims=(4, 5, 3), seed=0, **kw):
    params = L.ParamStore()
    curv = L.Curvatures(params)
    rng = np.random.default_rng(seed)
    st = L.StructuralEncoder(g, params, curv, dims, rng)
    he = L.HeteroEncoder(g, params, curv, dims, rng, **kw)
    return params, curv, st, he


def featured_toy(seed=0, ids=None):
    """Toy graph where every type has features; ``ids`` renames nodes."""
    g = toy_graph(seed)
    ids = ids or {}
    rng = np.random.default_rng(seed + 100)
    name = lambda n: ids.get(n, n)
    nodes = [(name(n), g.type_names[t]) for n, t in zip(g.node_ids, g.node_types)]
    edges = []
    for rel in g.relations:
        for u, v in g.edges[rel.name]:
            edges.append((name(g.node_ids[u]), name(g.node_ids[v]), rel.name, "bidirectional"))
    feats = {}
    for t in g.type_names:
        rows = g.nodes_of_type(t)
        x = g.features[t] if g.features[t] is not None else rng.normal(size=(len(rows), 3))
        feats[t] = {name(g.node_ids[i]): x[k].tolist() for k, i in enumerate(rows)}
    return hg.build_graph(nodes, edges, feats)


def in_ball(x, c):
    return np.all(np.linalg.norm(ad._val(x), axis=-1) < 1 / math.sqrt(float(ad._val(c))))


# -- input features ---------------------------------------------------------


def test_init_features_cases():
    x = np.zeros((2, 4))
    x[1, 0] = 0.5
    out = L.init_features(x, np.eye(4), 1.0, BALL)
    np.testing.assert_array_equal(out[0], 0.0)
    np.testing.assert_allclose(out[1], mf.expmap0(np.array([0.5, 0, 0, 0]), 1.0), atol=1e-15)
    assert out[1, 0] == pytest.approx(math.tanh(0.5), abs=1e-12)
    with pytest.raises(ValueError):
        L.init_features(x, np.eye(3), 1.0, BALL)


def test_input_dimension_for_every_type():
    g = toy_graph()
    params, curv, st, _ = encoders(g)
    x = L._input_embeddings(g, params, "st", curv("0"), BALL)
    assert x.value.shape == (10, 4)
    free = params["st.free.venue"].value
    assert free.shape == (2, 4) and np.abs(free).max() <= 0.05


# -- structural layer -------------------------------------------------------


def test_gcn_weight_values():
    # hub 0 with four leaves, no self loops: w(0, leaf) = 1 / sqrt(4 * 1)
    a = sp.csr_matrix(([1.0] * 8, ([0, 0, 0, 0, 1, 2, 3, 4], [1, 2, 3, 4, 0, 0, 0, 0])), shape=(5, 5))
    w = L.gcn_weights(a, self_loops=False)
    assert w[0, 1] == pytest.approx(0.5)
    path = L.gcn_weights(sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]])), self_loops=False)
    np.testing.assert_allclose(path.toarray(), [[0, 1], [1, 0]])


def test_isolated_node_keeps_itself():
    w = L.gcn_weights(sp.csr_matrix((3, 3)))
    np.testing.assert_allclose(w.toarray(), np.eye(3))


def test_single_node_identity_layer():
    x = mf.expmap0(np.array([[0.3, 0.1, 0.2]]), 1.0)
    w = L.gcn_weights(sp.csr_matrix((1, 1)))
    out = L.structural_layer(x, w, np.eye(3), np.zeros(3), 1.0, 1.0, BALL)
    np.testing.assert_allclose(out, x, atol=1e-7)


def test_euclidean_limit_matches_gcn():
    rng = np.random.default_rng(0)
    n, d_in, d_out = 12, 5, 4
    upper = np.triu(rng.random((n, n)) < 0.3, 1)
    adj = sp.csr_matrix((upper | upper.T).astype(float))
    w_hat = L.gcn_weights(adj)
    x = rng.normal(size=(n, d_in))
    w, b = rng.normal(size=(d_out, d_in)), rng.normal(size=d_out) * 0.1
    c = 1e-9
    out = L.structural_layer(x, w_hat, w, b, c, c, BALL)
    reference = np.maximum(w_hat @ (x @ w.T + b), 0.0)
    assert np.abs(out - reference).max() <= 1e-4


def test_structural_encoder_shape_and_ball():
    g = hg.synthetic_hetero_sbm(seed=0, sizes=(40, 40, 10), feature_dim=6)
    params, curv, st, _ = encoders(g, dims=(32, 32, 32))
    z = st(g, st.prepare(g), BALL)
    assert z.value.shape == (90, 32)
    assert in_ball(z, curv("2"))


def test_zero_features_zero_output():
    g = featured_toy()
    feats = {t: np.zeros_like(x) for t, x in g.features.items()}
    g = hg.HetGraph(g.node_ids, g.node_types, g.type_names, g.relations, g.edges, feats)
    _, _, st, _ = encoders(g)
    np.testing.assert_array_equal(st(g, st.prepare(g), BALL).value, 0.0)


def permuted_pair():
    perm = {"a0": "a2", "a1": "a0", "a2": "a3", "a3": "a1", "p0": "p1", "p1": "p3", "p2": "p0", "p3": "p2",
            "v0": "v1", "v1": "v0"}
    return featured_toy(), featured_toy(ids=perm), perm


def test_structural_equivariance():
    g, h, perm = permuted_pair()
    _, _, st_g, _ = encoders(g)
    _, _, st_h, _ = encoders(h)
    zg = st_g(g, st_g.prepare(g), BALL).value
    zh = st_h(h, st_h.prepare(h), BALL).value
    for nid, new in perm.items():
        np.testing.assert_allclose(zg[g.index_of(nid)], zh[h.index_of(new)], atol=1e-12)


def test_hetero_equivariance():
    g, h, perm = permuted_pair()
    _, _, _, he_g = encoders(g)
    _, _, _, he_h = encoders(h)
    zg = he_g(g, he_g.prepare(g), BALL)[0].value
    zh = he_h(h, he_h.prepare(h), BALL)[0].value
    for nid, new in perm.items():
        np.testing.assert_allclose(zg[g.index_of(nid)], zh[h.index_of(new)], atol=1e-12)


# -- heterogeneous layer ----------------------------------------------------


def test_type_transform_identity():
    g = featured_toy()
    params, curv, _, he = encoders(g, dims=(3, 3))
    for t in g.type_names:
        params[f"he.W1.{t}"].value = np.eye(3)
    x = L._input_embeddings(g, params, "he", curv("0"), BALL)
    rows = {t: g.nodes_of_type(t) for t in g.type_names}
    tangent = he.transform(x, 1, rows, BALL)
    np.testing.assert_allclose(BALL.expmap0(tangent, curv("1.author")).value, x.value, atol=1e-7)


def test_type_isolation():
    g = toy_graph()
    params, curv, _, he = encoders(g)
    x = L._input_embeddings(g, params, "he", curv("0"), BALL)
    rows = {t: g.nodes_of_type(t) for t in g.type_names}
    before = he.transform(x, 1, rows, BALL).value
    params["he.W1.author"].value = params["he.W1.author"].value + 0.3
    after = he.transform(x, 1, rows, BALL).value
    papers = g.nodes_of_type("paper")
    assert np.array_equal(before[papers], after[papers])
    assert not np.allclose(before[g.nodes_of_type("author")], after[g.nodes_of_type("author")])
    assert he.isolation_violations(g, BALL) == 0


def test_curvature_change_rescales_norm_only():
    rng = np.random.default_rng(1)
    x = mf.expmap0(rng.normal(size=(5, 3)) * 0.4, 0.7)
    y = mf.expmap0(mf.logmap0(x, 0.7), 1.9)
    nx = np.linalg.norm(x, axis=1)
    expected = np.tanh(math.sqrt(1.9) * np.arctanh(math.sqrt(0.7) * nx) / math.sqrt(0.7)) / math.sqrt(1.9)
    np.testing.assert_allclose(np.linalg.norm(y, axis=1), expected, atol=1e-12)
    np.testing.assert_allclose(y / np.linalg.norm(y, axis=1, keepdims=True), x / nx[:, None], atol=1e-12)


def test_relation_weights_against_dense_formula():
    # three targets (rows 0..2 of the dst block at offset 4), sources 0..3
    edges = np.array([[0, 4], [1, 4], [1, 5], [2, 5], [3, 5], [3, 6]])
    w = L.relation_weights(edges, 3, 4, 7).toarray()
    dense = np.zeros((3, 7))
    for s, d in edges:
        indeg = sum(1 for _, dd in edges if dd == d)
        outdeg = sum(1 for ss, _ in edges if ss == s)
        dense[d - 4, s] = 1 / math.sqrt(indeg * outdeg)
    np.testing.assert_allclose(w, dense, atol=1e-15)
    one = L.relation_weights(np.array([[0, 1]]), 1, 1, 2).toarray()
    assert one[0, 0] == 1.0
    assert L.relation_weights(np.zeros((0, 2), dtype=int), 2, 0, 3).nnz == 0


def test_inner_aggregation_scalar_oracle():
    # per target: exp(sum_j w_ij log(h_j)) with h_j points in the ball
    rng = np.random.default_rng(2)
    c = 0.8
    h = mf.expmap0(rng.normal(size=(7, 2)) * 0.5, c)
    edges = np.array([[0, 4], [1, 4], [1, 5], [2, 5], [3, 5]])
    w = L.relation_weights(edges, 3, 4, 7)
    got = BALL.expmap0(w @ BALL.logmap0(h, c), c)
    for i in range(3):
        t = np.zeros(2)
        for s, d in edges:
            if d - 4 == i:
                t += w[i, s] * mf.logmap0(h[s], c)
        np.testing.assert_allclose(got[i], mf.expmap0(t, c), atol=1e-12)
    # the target with no incoming edges sits at the origin
    # the third target has no incoming edges and sits at the origin
    np.testing.assert_array_equal(got[2], 0.0)


def test_target_without_neighbors_is_origin():
    edges = np.array([[0, 3]])
    w = L.relation_weights(edges, 2, 3, 5)
    out = BALL.expmap0(w @ np.ones((5, 2)), 1.0)
    np.testing.assert_array_equal(out[1], 0.0)


def test_attention_simplex_and_single_relation():
    g = toy_graph()
    params, curv, _, he = encoders(g)
    structure = he.prepare(g)
    _, traces = he(g, structure, BALL)
    for trace in traces:
        for t, rho in trace.attention.items():
            assert np.all(rho >= 0)
            np.testing.assert_allclose(rho.sum(axis=1), 1.0, atol=1e-9)
    # venues receive only one edge type
    assert traces[0].attention["venue"].shape[1] == 1
    np.testing.assert_array_equal(traces[0].attention["venue"], 1.0)
    x = L._input_embeddings(g, params, "he", curv("0"), BALL)
    tangent = he.transform(x, 1, {t: g.nodes_of_type(t) for t in g.type_names}, BALL)
    (et,) = structure.incoming["venue"]
    c_e = curv(f"1.{et.src_type}")
    log_e = BALL.logmap0(BALL.expmap0(structure.weights[et.name] @ tangent.value, c_e), c_e)
    np.testing.assert_allclose(traces[0].aggregate["venue"], BALL.expmap0(log_e, curv("1.venue")).value,
                               atol=1e-12)


def test_zero_attention_vector_is_uniform():
    g = toy_graph()
    params, _, _, he = encoders(g)
    for k in params:
        if ".u" in k:
            params[k].value[:] = 0.0
    _, traces = he(g, he.prepare(g), BALL)
    np.testing.assert_allclose(traces[0].attention["paper"], 0.5, atol=1e-15)


def test_cache_refresh_and_detached():
    g = toy_graph()
    params, _, _, he = encoders(g)
    structure = he.prepare(g)
    assert he.cache[1] is None
    he(g, structure, BALL, update_cache=True)
    assert set(he.cache[1]) == set(g.type_names)
    u = params["he.u1.author"]
    out, _ = he(g, structure, BALL)
    ad.backward(ad.sum(out))
    assert u.grad is not None and np.isfinite(u.grad).all()


def test_curvature_source_switch():
    g = toy_graph()
    with pytest.raises(ValueError):
        encoders(g, curvature_source="middle")
    outs = []
    for source in ("target", "source"):
        params, _, _, he = encoders(g, curvature_source=source)
        params["curv.1.author"].value = np.array(2.0)
        outs.append(he(g, he.prepare(g), BALL)[0].value)
    # the inner exp map is undone by the log that follows it, so the choice
    # only matters near the ball margin
    np.testing.assert_allclose(outs[0], outs[1], atol=1e-12)


def test_featureless_only_receivers_required():
    g = hg.build_graph([("a", "x"), ("b", "y"), ("c", "z")],
                       [("a", "b", "r", "directed"), ("b", "c", "s", "directed")])
    with pytest.raises(ValueError, match="receive no messages"):
        encoders(g)


# -- views ------------------------------------------------------------------


def test_view_doubling_and_identity():
    rng = np.random.default_rng(3)
    c = 1.3
    z = mf.expmap0(rng.normal(size=(6, 3)) * 0.3, c)
    doubled = L.combine_views(z, z, c, BALL)
    n2 = np.sum(z * z, axis=1, keepdims=True)
    np.testing.assert_allclose(doubled, 2 * z / (1 + c * n2), atol=1e-12)
    np.testing.assert_allclose(L.combine_views(z, np.zeros_like(z), c, BALL), z, atol=1e-15)
    assert doubled.shape[0] == 6


def test_layer_gradients_on_toy_graph():
    g = toy_graph()
    params, curv, st, he = encoders(g, dims=(3, 3, 2))
    st_w, he_s = st.prepare(g), he.prepare(g)
    rng = np.random.default_rng(4)
    wa, wb = rng.normal(size=(10, 2)), rng.normal(size=(10, 2))
    # with a refreshed cache the attention query is a constant, as in training
    he(g, he_s, BALL, update_cache=True)

    def fn():
        z_st = st(g, st_w, BALL)
        z_he, _ = he(g, he_s, BALL)
        return ad.sum(z_st * wa) + ad.sum(z_he * wb)

    assert gradcheck(fn, list(params.values())) <= 1e-3


# -- export -----------------------------------------------------------------


def test_embedding_export_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    z = mf.expmap0(rng.normal(size=(4, 3)), 0.9)
    ids = ["a", "b", "c", "d"]
    L.write_embeddings(tmp_path / "e.txt", ids, z, 0.9123456789012345)
    back_ids, back, c = L.read_embeddings(tmp_path / "e.txt")
    assert back_ids == ids and c == 0.9123456789012345
    assert np.array_equal(back, z)
    with pytest.raises(ValueError):
        L.write_embeddings(tmp_path / "f.txt", ids[:2], z, 1.0)
