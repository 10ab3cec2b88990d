"""Hyperbolic graph encoders.

``StructuralEncoder`` runs a hyperbolic GCN over the type-erased graph.
``HeteroEncoder`` keeps one transform per node type, aggregates messages
separately per directed edge type and mixes the per-edge-type results with a
node-level attention.  Both work on embedding matrices whose rows are
points of a Poincare ball (or plain vectors under the Euclidean geometry).
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from hypdis import autodiff as ad
from hypdis.hetgraph import HetGraph, collapse_to_homogeneous

CURVATURE_INIT = math.log(math.e - 1.0)  # softplus(CURVATURE_INIT) == 1


class ParamStore(OrderedDict):
    """Ordered name -> trainable tensor map."""

    def add(self, name, value):
        if name in self:
            raise KeyError(f"parameter {name!r} registered twice")
        t = ad.Parameter(value, name=name)
        self[name] = t
        return t

    def arrays(self):
        return {k: v.value.copy() for k, v in self.items()}

    def load_arrays(self, arrays):
        for k, v in self.items():
            if arrays[k].shape != v.value.shape:
                raise ValueError(f"shape mismatch for {k}: {arrays[k].shape} vs {v.value.shape}")
            v.value = np.array(arrays[k], dtype=np.float64)


def glorot(rng, fan_out, fan_in):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


class Curvatures:
    """Trainable positive curvatures stored through a softplus pre-image."""

    def __init__(self, params, prefix="curv"):
        self.params = params
        self.prefix = prefix

    def register(self, key):
        name = f"{self.prefix}.{key}"
        if name not in self.params:
            self.params.add(name, np.array(CURVATURE_INIT))
        return name

    def __call__(self, key):
        return ad.softplus(self.params[f"{self.prefix}.{key}"])

    def values(self):
        plen = len(self.prefix) + 1
        return {k[plen:]: float(np.logaddexp(0.0, v.value)) for k, v in self.params.items()
                if k.startswith(self.prefix + ".")}


# ---------------------------------------------------------------------------
# building blocks


def init_features(x, w, c, geom):
    """Map raw features into the ball: ``exp0(x @ w)``."""
    if np.shape(ad._val(x))[-1] != np.shape(ad._val(w))[0]:
        raise ValueError("feature width does not match the projection")
    return geom.expmap0(ad.matmul(x, w), c)


def hyperbolic_linear(x, w, b, c, geom):
    """``W (x) x (+) exp0(b)`` at curvature ``c``; ``b`` is a tangent vector."""
    return geom.mobius_add(geom.matvec(w, x, c), geom.expmap0(b, c), c)


def hyperbolic_activation(y, c_in, c_out, geom, act=ad.relu):
    return geom.expmap0(act(geom.logmap0(y, c_in)), c_out)


def gcn_weights(adj, self_loops=True):
    """Sparse ``w_ij = 1 / sqrt(|N(i)| |N(j)|)`` on the nonzeros of ``adj``."""
    a = sp.csr_matrix(adj, dtype=np.float64)
    a.data[:] = 1.0
    if self_loops:
        a = (a + sp.eye(a.shape[0], format="csr")).tocsr()
        a.data[:] = 1.0
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv = np.zeros_like(deg)
    inv[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    return (sp.diags(inv) @ a @ sp.diags(inv)).tocsr()


def structural_layer(x, weights, w, b, c_prev, c_next, geom, act=ad.relu):
    """One hyperbolic GCN layer: linear map, neighborhood aggregation, activation."""
    h = hyperbolic_linear(x, w, b, c_prev, geom)
    y = geom.expmap0(ad.matmul(weights, geom.logmap0(h, c_prev)), c_next)
    return hyperbolic_activation(y, c_next, c_next, geom, act)


def relation_weights(edges, n_dst_rows, dst_offset, n_nodes):
    """Inner-type weights for a directed edge type as a sparse ``(n_dst_rows, n_nodes)``
    matrix: ``1 / sqrt(indeg(i) * outdeg(j))`` on every edge ``j -> i``."""
    if len(edges) == 0:
        return sp.csr_matrix((n_dst_rows, n_nodes))
    src, dst = edges[:, 0], edges[:, 1] - dst_offset
    indeg = np.bincount(dst, minlength=n_dst_rows).astype(np.float64)
    outdeg = np.bincount(src, minlength=n_nodes).astype(np.float64)
    vals = 1.0 / np.sqrt(indeg[dst] * outdeg[src])
    return sp.csr_matrix((vals, (dst, src)), shape=(n_dst_rows, n_nodes))


# ---------------------------------------------------------------------------
# structural encoder


class StructuralEncoder:
    def __init__(self, g, params, curv, dims, rng, prefix="st"):
        self.params = params
        self.curv = curv
        self.dims = dims
        self.prefix = prefix
        self.type_names = g.type_names
        self.type_blocks = [g.type_slice(t) for t in g.type_names]
        _register_inputs(g, params, dims[0], rng, prefix)
        for layer in range(1, len(dims)):
            params.add(f"{prefix}.W{layer}", glorot(rng, dims[layer], dims[layer - 1]))
            params.add(f"{prefix}.b{layer}", np.zeros(dims[layer]))
        for layer in range(len(dims)):
            curv.register(str(layer))

    @property
    def num_layers(self):
        return len(self.dims) - 1

    def prepare(self, g):
        """Type-erased adjacency weights for ``g`` (self-loops included)."""
        return gcn_weights(collapse_to_homogeneous(g).adjacency)

    def __call__(self, g, weights, geom, act=ad.relu):
        x = _input_embeddings(g, self.params, self.prefix, self.curv("0"), geom)
        for layer in range(1, len(self.dims)):
            x = structural_layer(x, weights, self.params[f"{self.prefix}.W{layer}"],
                                 self.params[f"{self.prefix}.b{layer}"],
                                 self.curv(str(layer - 1)), self.curv(str(layer)), geom, act)
        return x


def _register_inputs(g, params, d0, rng, prefix):
    for t in g.type_names:
        x = g.features.get(t)
        if x is None:
            # featureless type: one free embedding row per node
            params.add(f"{prefix}.free.{t}", rng.uniform(-0.05, 0.05, size=(g.type_count(t), d0)))
        else:
            params.add(f"{prefix}.W0.{t}", glorot(rng, x.shape[1], d0))


def _input_embeddings(g, params, prefix, c0, geom):
    blocks = []
    for t in g.type_names:
        x = g.features.get(t)
        if x is None:
            tangent = params[f"{prefix}.free.{t}"]
        else:
            tangent = ad.matmul(x, params[f"{prefix}.W0.{t}"])
        blocks.append(tangent)
    return geom.expmap0(ad.concat(blocks, axis=0), c0)


# ---------------------------------------------------------------------------
# heterogeneous encoder


@dataclass
class HeteroStructure:
    """Per-view message-passing tables for :class:`HeteroEncoder`."""

    edge_types: list
    weights: dict          # edge type name -> sparse (n_dst_type, N)
    incoming: dict         # node type -> [edge type, ...]


@dataclass
class LayerTrace:
    attention: dict        # node type -> (n_t, |incoming|) simplex rows
    aggregate: dict        # node type -> ball points at the type curvature


class HeteroEncoder:
    """Type-specific transforms, per-edge-type aggregation and attention mixing.

    ``curvature_source`` selects the curvature used for the inner-type exp map:
    ``"source"`` (the transformed sources' type, as printed) or ``"target"``.
    """

    def __init__(self, g, params, curv, dims, rng, prefix="he", curvature_source="source",
                 leaky_slope=0.2):
        if curvature_source not in ("source", "target"):
            raise ValueError("curvature_source must be 'source' or 'target'")
        self.params = params
        self.curv = curv
        self.dims = dims
        self.prefix = prefix
        self.curvature_source = curvature_source
        self.leaky_slope = leaky_slope
        self.type_names = g.type_names
        incoming = {t: [e for e in g.edge_types() if e.dst_type == t] for t in g.type_names}
        lonely = [t for t, es in incoming.items() if not es]
        if lonely:
            raise ValueError(f"node type(s) {lonely} receive no messages under any edge type")
        _register_inputs(g, params, dims[0], rng, prefix)
        for layer in range(1, len(dims)):
            for t in g.type_names:
                params.add(f"{prefix}.W{layer}.{t}", glorot(rng, dims[layer], dims[layer - 1]))
                params.add(f"{prefix}.b{layer}.{t}", np.zeros(dims[layer]))
                params.add(f"{prefix}.u{layer}.{t}", rng.normal(scale=0.1, size=2 * dims[layer]))
                curv.register(f"{layer}.{t}")
        for layer in range(len(dims)):
            curv.register(str(layer))
        self.cache = [None] * len(dims)

    @property
    def num_layers(self):
        return len(self.dims) - 1

    def prepare(self, g: HetGraph):
        n = g.num_nodes
        weights = {}
        for e in g.edge_types():
            block = g.type_slice(e.dst_type)
            weights[e.name] = relation_weights(g.directed_edges(e), block.stop - block.start, block.start, n)
        incoming = {t: [e for e in g.edge_types() if e.dst_type == t] for t in g.type_names}
        return HeteroStructure(g.edge_types(), weights, incoming)

    def transform(self, x, layer, type_rows, geom):
        """Per-type hyperbolic linear map, moved to the type's curvature.

        ``type_rows`` maps type name -> global row indices using that type's
        parameters.  Returns the tangent (at the origin) of every transformed row.
        """
        c_prev = self.curv(str(layer - 1))
        n = ad._val(x).shape[0]
        parts = []
        for t in self.type_names:
            idx = type_rows[t]
            if len(idx) == 0:
                continue
            xt = ad.rows(x, idx)
            h = hyperbolic_linear(xt, self.params[f"{self.prefix}.W{layer}.{t}"],
                                  self.params[f"{self.prefix}.b{layer}.{t}"], c_prev, geom)
            c_t = self.curv(f"{layer}.{t}")
            h = geom.expmap0(geom.logmap0(h, c_prev), c_t)
            parts.append((idx, geom.logmap0(h, c_t)))
        if len(parts) == 1:
            return ad.scatter_rows(parts[0][1], parts[0][0], n)
        total = None
        for idx, tangent in parts:
            placed = ad.scatter_rows(tangent, idx, n)
            total = placed if total is None else total + placed
        return total

    def layer(self, x, layer, structure, type_rows, type_blocks, geom, act=ad.relu, update_cache=False):
        tangent = self.transform(x, layer, type_rows, geom)
        c_out = self.curv(str(layer))
        out_blocks, trace = [], LayerTrace({}, {})
        cache = self.cache[layer]
        new_cache = {}
        for t, block in zip(self.type_names, type_blocks):
            c_t = self.curv(f"{layer}.{t}")
            logs = []
            for e in structure.incoming[t]:
                src_key = e.src_type if self.curvature_source == "source" else e.dst_type
                c_e = self.curv(f"{layer}.{src_key}")
                # inner-type aggregation: tangent of sources mapped back through c_e
                y_e = geom.expmap0(ad.matmul(structure.weights[e.name], tangent), c_e)
                logs.append((geom.logmap0(y_e, c_e)))
            # the previous epoch's aggregate, kept as its tangent at the origin;
            # before the first refresh, the uniform mean of this epoch's inputs
            if cache is None or t not in cache:
                prev_log = ad.stop_gradient(sum(ad._val(l) for l in logs) / len(logs))
            else:
                prev_log = ad.stop_gradient(cache[t])
            u = self.params[f"{self.prefix}.u{layer}.{t}"]
            d = ad._val(u).shape[0] // 2
            base = ad.matmul(prev_log, u[:d])
            scores = [ad.leaky_relu(base + ad.matmul(l, u[d:]), self.leaky_slope) for l in logs]
            rho = ad.softmax(ad.stack(scores, axis=1), axis=1)
            mixed = None
            for k, l in enumerate(logs):
                term = ad.reshape(rho[:, k], (-1, 1)) * l
                mixed = term if mixed is None else mixed + term
            y = geom.expmap0(mixed, c_t)
            trace.attention[t] = ad._val(rho).copy()
            trace.aggregate[t] = ad._val(y).copy()
            new_cache[t] = ad._val(mixed).copy()
            out_blocks.append(hyperbolic_activation(y, c_t, c_out, geom, act))
        if update_cache:
            self.cache[layer] = new_cache
        return ad.concat(out_blocks, axis=0), trace

    def __call__(self, g, structure, geom, act=ad.relu, type_override=None, update_cache=False):
        """Embed every node of ``g``; returns (matrix at the last shared curvature, traces)."""
        if type_override is None:
            type_rows = {t: g.nodes_of_type(t) for t in self.type_names}
        else:
            type_rows = {t: np.flatnonzero(type_override == i) for i, t in enumerate(self.type_names)}
        type_blocks = [g.type_slice(t) for t in self.type_names]
        x = _input_embeddings(g, self.params, self.prefix, self.curv("0"), geom)
        traces = []
        for layer in range(1, len(self.dims)):
            x, trace = self.layer(x, layer, structure, type_rows, type_blocks, geom, act, update_cache)
            traces.append(trace)
        return x, traces

    def isolation_violations(self, g, geom, tol=0.0):
        """Count (type, other type) pairs where the first-layer transform of one
        type's rows depends on another type's parameters.  Existing gradients
        are left untouched, so this can run between backward and step."""
        saved = {k: p.grad for k, p in self.params.items()}
        x = _input_embeddings(g, self.params, self.prefix, self.curv("0"), geom)
        x = ad.stop_gradient(x)
        type_rows = {t: g.nodes_of_type(t) for t in self.type_names}
        tangent = self.transform(x, 1, type_rows, geom)
        bad = 0
        for s in self.type_names:
            rows_s = type_rows[s]
            probe = ad.sum(ad.rows(tangent, rows_s))
            watched = [self.params[f"{self.prefix}.W1.{t}"] for t in self.type_names if t != s]
            for p in watched:
                p.grad = None
            ad.backward(probe)
            for p in watched:
                if p.grad is not None and np.max(np.abs(p.grad)) > tol:
                    bad += 1
                p.grad = None
        for k, p in self.params.items():
            p.grad = saved[k]
        return bad


def combine_views(z, z_prime, c, geom):
    """Row-wise Mobius sum of the two views' embeddings."""
    return geom.mobius_add(z, z_prime, c)


# ---------------------------------------------------------------------------
# export


def write_embeddings(path, node_ids, z, c):
    """Header ``dim=<d> curvature=<c>`` then ``node_id<TAB>f1 ... fd`` rows.

    ``repr`` of a Python float round-trips f64 exactly.
    """
    z = np.asarray(ad._val(z), dtype=np.float64)
    if z.ndim != 2 or len(node_ids) != z.shape[0]:
        raise ValueError("need one embedding row per node id")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"dim={z.shape[1]} curvature={float(c)!r}\n")
        for nid, row in zip(node_ids, z):
            fh.write(nid + "\t" + " ".join(repr(float(v)) for v in row) + "\n")


def read_embeddings(path):
    """Inverse of :func:`write_embeddings`: ``(node_ids, matrix, curvature)``."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        meta = dict(item.split("=", 1) for item in header)
        dim, c = int(meta["dim"]), float(meta["curvature"])
        ids, rows = [], []
        for line in fh:
            nid, vals = line.rstrip("\n").split("\t")
            ids.append(nid)
            rows.append([float(v) for v in vals.split(" ")])
    z = np.array(rows, dtype=np.float64).reshape(-1, dim)
    return ids, z, c
