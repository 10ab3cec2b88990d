"""Heterogeneous graphs: data model, TSV ingestion, splits, perturbations,
negative sampling and Gromov hyperbolicity.

Nodes are kept in a canonical order, sorted by ``(node_type, node_id)``, so
every node type occupies a contiguous block of global indices.  Edges are
stored per declared relation as ``(m, 2)`` integer arrays of global indices,
oriented from the relation's source type to its destination type.
"""
from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

DIRECTIONS = ("directed", "bidirectional")
REVERSE_SUFFIX = "__rev"


class GraphFormatError(ValueError):
    """Malformed or inconsistent graph input."""


def _round_half_up(x):
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class Relation:
    name: str
    src_type: str
    dst_type: str
    directed: bool = False


@dataclass(frozen=True)
class EdgeType:
    """A directed message-passing channel derived from a relation."""

    name: str
    relation: str
    src_type: str
    dst_type: str
    reverse: bool = False


@dataclass(frozen=True)
class HetGraph:
    node_ids: tuple
    node_types: np.ndarray
    type_names: tuple
    relations: tuple
    edges: dict
    features: dict = field(default_factory=dict)
    labels: np.ndarray | None = None
    label_names: tuple = ()

    def __post_init__(self):
        type_set = set(self.type_names)
        rel_names = [r.name for r in self.relations]
        if type_set & set(rel_names):
            raise GraphFormatError("node type and relation names must be disjoint")
        if len(self.type_names) + len(self.relations) <= 2:
            raise GraphFormatError("a heterogeneous graph needs more than two node and edge types in total")
        if len(set(rel_names)) != len(rel_names):
            raise GraphFormatError("duplicate relation name")
        n = len(self.node_ids)
        if len(self.node_types) != n:
            raise GraphFormatError("node_types length differs from node_ids")
        if np.any(np.diff(self.node_types) < 0):
            raise GraphFormatError("nodes must be grouped by type")
        for rel in self.relations:
            if rel.src_type not in type_set or rel.dst_type not in type_set:
                raise GraphFormatError(f"relation {rel.name!r} refers to an unknown node type")
            e = self.edges[rel.name]
            if e.size == 0:
                continue
            if e.min() < 0 or e.max() >= n:
                raise GraphFormatError(f"relation {rel.name!r} has an out-of-range endpoint")
            src_t = self.type_index(rel.src_type)
            dst_t = self.type_index(rel.dst_type)
            if np.any(self.node_types[e[:, 0]] != src_t) or np.any(self.node_types[e[:, 1]] != dst_t):
                raise GraphFormatError(f"relation {rel.name!r} has an endpoint of the wrong type")
        for t, x in self.features.items():
            if x is not None and x.shape[0] != self.type_count(t):
                raise GraphFormatError(f"feature rows for {t!r} do not match its node count")

    # -- lookups ---------------------------------------------------------

    @property
    def num_nodes(self):
        return len(self.node_ids)

    @property
    def num_edges(self):
        return int(sum(len(e) for e in self.edges.values()))

    def type_index(self, name):
        return self.type_names.index(name)

    def type_count(self, name):
        return int(np.sum(self.node_types == self.type_index(name)))

    def type_slice(self, name):
        idx = np.flatnonzero(self.node_types == self.type_index(name))
        if idx.size == 0:
            return slice(0, 0)
        return slice(int(idx[0]), int(idx[-1]) + 1)

    def nodes_of_type(self, name):
        return np.flatnonzero(self.node_types == self.type_index(name))

    def index_of(self, node_id):
        return self._index()[node_id]

    def _index(self):
        cache = self.__dict__.get("_index_cache")
        if cache is None:
            cache = {nid: i for i, nid in enumerate(self.node_ids)}
            object.__setattr__(self, "_index_cache", cache)
        return cache

    def relation(self, name):
        for r in self.relations:
            if r.name == name:
                return r
        raise KeyError(name)

    @property
    def label_type(self):
        if self.labels is None:
            return None
        typed = np.unique(self.node_types[self.labels >= 0])
        return self.type_names[typed[0]] if typed.size == 1 else None

    def labeled_nodes(self):
        if self.labels is None:
            return np.zeros(0, dtype=int)
        return np.flatnonzero(self.labels >= 0)

    @property
    def num_classes(self):
        return len(self.label_names)

    def edge_types(self):
        """Directed channels: one per directed relation, two per bidirectional one."""
        out = []
        for r in self.relations:
            out.append(EdgeType(r.name, r.name, r.src_type, r.dst_type, False))
            if not r.directed:
                out.append(EdgeType(r.name + REVERSE_SUFFIX, r.name, r.dst_type, r.src_type, True))
        return out

    def directed_edges(self, edge_type):
        """Edges of ``edge_type`` as ``(src, dst)`` rows in message direction."""
        e = self.edges[edge_type.relation]
        return e[:, ::-1].copy() if edge_type.reverse else e

    def with_edges(self, edges):
        return HetGraph(self.node_ids, self.node_types, self.type_names, self.relations,
                        {k: np.asarray(v, dtype=np.int64).reshape(-1, 2) for k, v in edges.items()},
                        self.features, self.labels, self.label_names)

    def edge_keys(self, relation):
        return _edge_keys(self.edges[relation], self.num_nodes, _symmetric(self, self.relation(relation)))

    def __eq__(self, other):
        if not isinstance(other, HetGraph):
            return NotImplemented
        if (self.node_ids, self.type_names, self.relations, self.label_names) != (
                other.node_ids, other.type_names, other.relations, other.label_names):
            return False
        if not np.array_equal(self.node_types, other.node_types):
            return False
        if self.edges.keys() != other.edges.keys() or any(
                not np.array_equal(self.edges[k], other.edges[k]) for k in self.edges):
            return False
        if self.features.keys() != other.features.keys():
            return False
        for k, v in self.features.items():
            w = other.features[k]
            if (v is None) != (w is None) or (v is not None and not np.array_equal(v, w)):
                return False
        if (self.labels is None) != (other.labels is None):
            return False
        return self.labels is None or np.array_equal(self.labels, other.labels)

    __hash__ = None


def _symmetric(g, rel):
    return (not rel.directed) and rel.src_type == rel.dst_type


def _canonical(edges, symmetric):
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if symmetric and len(edges):
        edges = np.sort(edges, axis=1)
    if len(edges) == 0:
        return edges
    return np.unique(edges, axis=0)


def _edge_keys(edges, n, symmetric):
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if symmetric and len(e):
        e = np.sort(e, axis=1)
    return set((e[:, 0] * n + e[:, 1]).tolist())


def build_graph(nodes, edges, features=None, labels=None):
    """Assemble a :class:`HetGraph` from Python records.

    ``nodes``: iterable of ``(node_id, node_type)``.
    ``edges``: iterable of ``(src_id, dst_id, relation, direction)``.
    ``features``: ``{node_type: {node_id: vector}}``.
    ``labels``: ``{node_id: label}``.
    """
    seen = {}
    for nid, ntype in nodes:
        nid, ntype = str(nid), str(ntype)
        if nid in seen:
            raise GraphFormatError(f"duplicate node id {nid!r}")
        seen[nid] = ntype
    type_names = tuple(sorted(set(seen.values())))
    order = sorted(seen, key=lambda nid: (seen[nid], nid))
    index = {nid: i for i, nid in enumerate(order)}
    node_types = np.array([type_names.index(seen[nid]) for nid in order], dtype=np.int64)

    rel_info, rel_edges = {}, {}
    for src, dst, rname, direction in edges:
        src, dst, rname = str(src), str(dst), str(rname)
        if direction not in DIRECTIONS:
            raise GraphFormatError(f"unknown direction token {direction!r} for relation {rname!r}")
        for nid in (src, dst):
            if nid not in index:
                raise GraphFormatError(f"edge ({src}, {dst}) of {rname!r} references missing node {nid!r}")
        st, dt = seen[src], seen[dst]
        directed = direction == "directed"
        if rname not in rel_info:
            rel_info[rname] = Relation(rname, st, dt, directed)
            rel_edges[rname] = []
        rel = rel_info[rname]
        if rel.directed != directed:
            raise GraphFormatError(f"relation {rname!r} mixes directed and bidirectional rows")
        if (st, dt) == (rel.src_type, rel.dst_type):
            rel_edges[rname].append((index[src], index[dst]))
        elif not directed and (dt, st) == (rel.src_type, rel.dst_type):
            rel_edges[rname].append((index[dst], index[src]))
        else:
            raise GraphFormatError(
                f"edge ({src}, {dst}) has endpoint types ({st}, {dt}) but {rname!r} "
                f"connects ({rel.src_type}, {rel.dst_type})")
    relations = tuple(rel_info[r] for r in sorted(rel_info))
    edge_arrays = {}
    for rel in relations:
        edge_arrays[rel.name] = _canonical(rel_edges[rel.name], rel.src_type == rel.dst_type and not rel.directed)

    feats = {t: None for t in type_names}
    for ntype, rowmap in (features or {}).items():
        if ntype not in type_names:
            raise GraphFormatError(f"features given for unknown node type {ntype!r}")
        ids = [nid for nid in order if seen[nid] == ntype]
        missing = [nid for nid in ids if nid not in rowmap]
        if missing:
            raise GraphFormatError(f"feature file for {ntype!r} lacks node {missing[0]!r}")
        extra = [nid for nid in rowmap if nid not in index or seen[nid] != ntype]
        if extra:
            raise GraphFormatError(f"feature row for {extra[0]!r} does not belong to type {ntype!r}")
        widths = {len(rowmap[nid]) for nid in ids}
        if len(widths) > 1:
            raise GraphFormatError(f"ragged feature rows for {ntype!r}")
        feats[ntype] = np.array([rowmap[nid] for nid in ids], dtype=np.float64).reshape(len(ids), -1)

    label_arr, label_names = None, ()
    if labels:
        label_names = tuple(sorted({str(v) for v in labels.values()}))
        label_arr = np.full(len(order), -1, dtype=np.int64)
        for nid, lab in labels.items():
            if nid not in index:
                raise GraphFormatError(f"label for missing node {nid!r}")
            label_arr[index[nid]] = label_names.index(str(lab))
    return HetGraph(tuple(order), node_types, type_names, relations, edge_arrays, feats, label_arr, label_names)


# ---------------------------------------------------------------------------
# file IO


def _rows(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            yield lineno, line.split("\t")


def load_graph(node_file, edge_file, feature_files=None, label_file=None):
    """Parse the TSV formats described in the README into a :class:`HetGraph`.

    node file rows: ``node_id<TAB>node_type[<TAB>label]``
    edge file rows: ``src_id<TAB>dst_id<TAB>relation<TAB>{directed|bidirectional}``
    feature files (one per node type): ``node_id<TAB>v1,v2,...``
    label file (optional): ``node_id<TAB>label``
    """
    for p in [node_file, edge_file, *((feature_files or {}).values()), *([label_file] if label_file else [])]:
        if not os.path.exists(p):
            raise FileNotFoundError(f"graph input not found: {p}")
    nodes, labels = [], {}
    for lineno, cols in _rows(node_file):
        if len(cols) not in (2, 3):
            raise GraphFormatError(f"{node_file}:{lineno}: expected 2 or 3 columns")
        nodes.append((cols[0], cols[1]))
        if len(cols) == 3 and cols[2] != "":
            labels[cols[0]] = cols[2]
    edges = []
    for lineno, cols in _rows(edge_file):
        if len(cols) != 4:
            raise GraphFormatError(f"{edge_file}:{lineno}: expected 4 columns")
        edges.append(tuple(cols))
    if label_file:
        for lineno, cols in _rows(label_file):
            if len(cols) != 2:
                raise GraphFormatError(f"{label_file}:{lineno}: expected 2 columns")
            labels[cols[0]] = cols[1]
    features = {}
    for ntype, path in (feature_files or {}).items():
        rowmap = {}
        for lineno, cols in _rows(path):
            if len(cols) != 2:
                raise GraphFormatError(f"{path}:{lineno}: expected 2 columns")
            try:
                rowmap[cols[0]] = [float(v) for v in cols[1].split(",")]
            except ValueError as exc:
                raise GraphFormatError(f"{path}:{lineno}: {exc}") from None
        features[ntype] = rowmap
    return build_graph(nodes, edges, features, labels)


def load_graph_dir(directory):
    """Read ``nodes.tsv``, ``edges.tsv``, ``features_<type>.tsv`` and ``labels.tsv`` from a directory."""
    d = Path(directory)
    feature_files = {p.stem[len("features_"):]: str(p) for p in sorted(d.glob("features_*.tsv"))}
    label_file = d / "labels.tsv"
    return load_graph(d / "nodes.tsv", d / "edges.tsv", feature_files,
                      str(label_file) if label_file.exists() else None)


def save_graph(g, directory):
    """Write ``g`` in the directory layout read by :func:`load_graph_dir`."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "nodes.tsv", "w", encoding="utf-8") as fh:
        for i, nid in enumerate(g.node_ids):
            row = [nid, g.type_names[g.node_types[i]]]
            if g.labels is not None and g.labels[i] >= 0:
                row.append(g.label_names[g.labels[i]])
            fh.write("\t".join(row) + "\n")
    with open(d / "edges.tsv", "w", encoding="utf-8") as fh:
        for rel in g.relations:
            direction = "directed" if rel.directed else "bidirectional"
            for u, v in g.edges[rel.name]:
                fh.write(f"{g.node_ids[u]}\t{g.node_ids[v]}\t{rel.name}\t{direction}\n")
    for t, x in g.features.items():
        if x is None:
            continue
        ids = [g.node_ids[i] for i in g.nodes_of_type(t)]
        with open(d / f"features_{t}.tsv", "w", encoding="utf-8") as fh:
            for nid, row in zip(ids, x):
                fh.write(nid + "\t" + ",".join(repr(float(v)) for v in row) + "\n")
    return d


# ---------------------------------------------------------------------------
# type-erased view


@dataclass(frozen=True)
class HomogeneousGraph:
    adjacency: sp.csr_matrix
    feature_blocks: dict
    node_types: np.ndarray
    type_names: tuple

    def unified_features(self, dtype=np.float64):
        """Block matrix: each typed feature block gets its own columns; featureless
        types get one-hot identity columns (one free embedding row each)."""
        n = len(self.node_types)
        blocks = []
        for ti, t in enumerate(self.type_names):
            count = int(np.sum(self.node_types == ti))
            x = self.feature_blocks.get(t)
            blocks.append(np.eye(count) if x is None else x)
        width = sum(b.shape[1] for b in blocks)
        out = np.zeros((n, width), dtype=dtype)
        row = col = 0
        for b in blocks:
            out[row:row + b.shape[0], col:col + b.shape[1]] = b
            row += b.shape[0]
            col += b.shape[1]
        return out


def collapse_to_homogeneous(g):
    """Erase node and edge types: undirected 0/1 adjacency over the union of all edges."""
    n = g.num_nodes
    parts = [e for e in g.edges.values() if len(e)]
    if parts:
        e = np.concatenate(parts)
        data = np.ones(2 * len(e))
        a = sp.coo_matrix((data, (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n)).tocsr()
        a.data[:] = 1.0
    else:
        a = sp.csr_matrix((n, n))
    a.eliminate_zeros()
    return HomogeneousGraph(a, dict(g.features), g.node_types, g.type_names)


# ---------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitSet:
    train: dict
    val: dict
    test: dict
    train_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    val_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    test_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def _three_way(n, ratios):
    n_val = _round_half_up(n * ratios[1])
    n_test = _round_half_up(n * ratios[2])
    return n - n_val - n_test, n_val, n_test


def split_edges(g, ratios=(0.5, 0.25, 0.25), seed=0):
    """Per-relation random train/val/test partition of the edges."""
    if not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ValueError("split ratios must sum to 1")
    rng = np.random.default_rng(seed)
    train, val, test = {}, {}, {}
    for rel in g.relations:
        e = g.edges[rel.name]
        m = len(e)
        if m < 4:
            warnings.warn(f"relation {rel.name!r} has {m} edges; all go to the training split")
            train[rel.name], val[rel.name], test[rel.name] = e.copy(), e[:0], e[:0]
            continue
        perm = rng.permutation(m)
        n_tr, n_va, _ = _three_way(m, ratios)
        train[rel.name] = e[np.sort(perm[:n_tr])]
        val[rel.name] = e[np.sort(perm[n_tr:n_tr + n_va])]
        test[rel.name] = e[np.sort(perm[n_tr + n_va:])]
    nodes = split_labels(g, ratios, seed) if g.labels is not None else (np.zeros(0, dtype=int),) * 3
    return SplitSet(train, val, test, *nodes)


def split_labels(g, ratios=(0.5, 0.25, 0.25), seed=0):
    """Random train/val/test partition of the labeled nodes."""
    rng = np.random.default_rng([seed, 1])
    labeled = g.labeled_nodes()
    perm = labeled[rng.permutation(len(labeled))]
    n_tr, n_va, _ = _three_way(len(labeled), ratios)
    return np.sort(perm[:n_tr]), np.sort(perm[n_tr:n_tr + n_va]), np.sort(perm[n_tr + n_va:])


def write_splits(g, split, path):
    """Edge rows in the edge-file format with a ``train|val|test`` column appended,
    followed by labeled-node rows ``node_id<TAB>node_type<TAB>label<TAB>split``."""
    with open(path, "w", encoding="utf-8") as fh:
        for part in ("train", "val", "test"):
            edges = getattr(split, part)
            for rel in g.relations:
                direction = "directed" if rel.directed else "bidirectional"
                for u, v in edges[rel.name]:
                    fh.write(f"{g.node_ids[u]}\t{g.node_ids[v]}\t{rel.name}\t{direction}\t{part}\n")
        for part in ("train", "val", "test"):
            for i in getattr(split, part + "_nodes"):
                fh.write(f"{g.node_ids[i]}\t{g.type_names[g.node_types[i]]}\t"
                         f"{g.label_names[g.labels[i]]}\t{part}\n")


def read_splits(g, path):
    edges = {p: {r.name: [] for r in g.relations} for p in ("train", "val", "test")}
    nodes = {p: [] for p in ("train", "val", "test")}
    for _, cols in _rows(path):
        if len(cols) == 5:
            edges[cols[4]][cols[2]].append((g.index_of(cols[0]), g.index_of(cols[1])))
        elif len(cols) == 4:
            nodes[cols[3]].append(g.index_of(cols[0]))
        else:
            raise GraphFormatError(f"{path}: unexpected row width {len(cols)}")
    arr = {p: {k: np.array(v, dtype=np.int64).reshape(-1, 2) for k, v in d.items()} for p, d in edges.items()}
    return SplitSet(arr["train"], arr["val"], arr["test"],
                    *(np.array(nodes[p], dtype=np.int64) for p in ("train", "val", "test")))


# ---------------------------------------------------------------------------
# perturbation and negative sampling


@dataclass(frozen=True)
class PerturbedView:
    graph: HetGraph
    ratio: float
    seed: int


def _sample_non_edges(rng, src_pool, dst_pool, existing, count, n, symmetric, forbid_self):
    """Draw ``count`` distinct pairs absent from ``existing`` (integer keys)."""
    chosen = []
    taken = set(existing)
    capacity = len(src_pool) * len(dst_pool)
    if symmetric:
        capacity = len(src_pool) * (len(src_pool) - 1) // 2 + len(src_pool) * (not forbid_self)
    free = capacity - len(existing)
    if count > free:
        warnings.warn(f"only {free} non-edges available, requested {count}")
        count = max(free, 0)
    tries = 0
    while len(chosen) < count and tries < 50:
        need = count - len(chosen)
        u = rng.choice(src_pool, size=2 * need + 8)
        v = rng.choice(dst_pool, size=2 * need + 8)
        for a, b in zip(u.tolist(), v.tolist()):
            if forbid_self and a == b:
                continue
            if symmetric and a > b:
                a, b = b, a
            key = a * n + b
            if key in taken:
                continue
            taken.add(key)
            chosen.append((a, b))
            if len(chosen) == count:
                break
        tries += 1
    if len(chosen) < count:
        # dense corner case: enumerate what is left
        pairs = [(a, b) for a in src_pool.tolist() for b in dst_pool.tolist()
                 if not (forbid_self and a == b) and (not symmetric or a <= b) and a * n + b not in taken]
        pick = rng.choice(len(pairs), size=count - len(chosen), replace=False)
        chosen.extend(pairs[i] for i in sorted(pick))
    return np.array(chosen, dtype=np.int64).reshape(-1, 2)


def perturb_edges(g, ratio, seed=0):
    """Per relation, delete ``round(ratio/2 * m)`` random edges and insert as many
    random type-valid non-edges, keeping each relation's edge count."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("perturbation ratio must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    n = g.num_nodes
    out = {}
    for rel in g.relations:
        e = g.edges[rel.name]
        m = len(e)
        k = _round_half_up(ratio / 2.0 * m)
        if k == 0:
            out[rel.name] = e.copy()
            continue
        keep = np.sort(rng.permutation(m)[k:])
        sym = _symmetric(g, rel)
        added = _sample_non_edges(rng, g.nodes_of_type(rel.src_type), g.nodes_of_type(rel.dst_type),
                                  _edge_keys(e, n, sym), k, n, sym, rel.src_type == rel.dst_type)
        out[rel.name] = _canonical(np.concatenate([e[keep], added]), sym)
    return PerturbedView(g.with_edges(out), ratio, seed)


def sample_negative_edges(g, positives, k=1, seed=0, exclude=None):
    """For each positive ``(i, j)`` draw ``k`` corruptions ``(i, j')`` with ``j'`` of the
    destination type and ``(i, j')`` not an edge of that relation.

    ``exclude`` (a graph) defines the forbidden edge sets; defaults to ``g``.
    Returns ``{relation: (m*k, 2) array}``.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    rng = np.random.default_rng(seed)
    ref = exclude if exclude is not None else g
    n = g.num_nodes
    out = {}
    for rel in g.relations:
        pos = np.asarray(positives.get(rel.name, np.zeros((0, 2), dtype=np.int64))).reshape(-1, 2)
        if len(pos) == 0:
            out[rel.name] = np.zeros((0, 2), dtype=np.int64)
            continue
        sym = _symmetric(g, rel)
        keys = ref.edge_keys(rel.name)
        pool = g.nodes_of_type(rel.dst_type)
        src = np.repeat(pos[:, 0], k)
        cand = rng.choice(pool, size=len(src))
        bad = _is_edge(src, cand, keys, n, sym)
        for _ in range(100):
            if not bad.any():
                break
            cand[bad] = rng.choice(pool, size=int(bad.sum()))
            bad = _is_edge(src, cand, keys, n, sym)
        keep = ~bad
        if bad.any():
            pool_set = pool.tolist()
            for idx in np.flatnonzero(bad):
                i = int(src[idx])
                valid = [j for j in pool_set if not _is_edge(np.array([i]), np.array([j]), keys, n, sym)[0]]
                if valid:
                    cand[idx] = valid[rng.integers(len(valid))]
                    keep[idx] = True
                else:
                    warnings.warn(f"node {g.node_ids[i]!r} is linked to every candidate of {rel.name!r}; skipped")
        out[rel.name] = np.stack([src[keep], cand[keep]], axis=1).astype(np.int64)
    return out


def _is_edge(src, dst, keys, n, symmetric):
    a, b = src, dst
    if symmetric:
        a, b = np.minimum(src, dst), np.maximum(src, dst)
    k = a.astype(np.int64) * n + b
    return np.fromiter((x in keys for x in k.tolist()), dtype=bool, count=len(k))


def perturb_edge_types(g, ratio, seed=0):
    """Relabel ``round(ratio * m)`` edges of each relation with another relation that
    has the same endpoint types and direction.  Relations with no compatible
    alternative are left untouched."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("perturbation ratio must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    moved = {r.name: [] for r in g.relations}
    kept = {}
    for rel in g.relations:
        alts = [r.name for r in g.relations if r.name != rel.name and
                (r.src_type, r.dst_type, r.directed) == (rel.src_type, rel.dst_type, rel.directed)]
        e = g.edges[rel.name]
        k = _round_half_up(ratio * len(e)) if alts else 0
        perm = rng.permutation(len(e))
        kept[rel.name] = e[np.sort(perm[k:])]
        for idx in perm[:k]:
            moved[alts[rng.integers(len(alts))]].append(e[idx])
    out = {}
    for rel in g.relations:
        extra = np.array(moved[rel.name], dtype=np.int64).reshape(-1, 2)
        out[rel.name] = _canonical(np.concatenate([kept[rel.name], extra]), _symmetric(g, rel))
    return g.with_edges(out)


def perturb_node_types(g, ratio, seed=0):
    """Type assignment with ``round(ratio * n_t)`` nodes of every type moved to a
    uniformly chosen other type.  Returned as an override array for the
    heterogeneous encoder; the graph itself (features, edges) is unchanged."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("perturbation ratio must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    override = g.node_types.copy()
    n_types = len(g.type_names)
    if n_types < 2:
        return override
    for ti in range(n_types):
        idx = np.flatnonzero(g.node_types == ti)
        k = _round_half_up(ratio * len(idx))
        chosen = rng.choice(idx, size=k, replace=False)
        shift = rng.integers(1, n_types, size=k)
        override[chosen] = (ti + shift) % n_types
    return override


# ---------------------------------------------------------------------------
# Gromov hyperbolicity


def _adjacency(graph):
    if isinstance(graph, HetGraph):
        return collapse_to_homogeneous(graph).adjacency
    if isinstance(graph, HomogeneousGraph):
        return graph.adjacency
    return sp.csr_matrix(graph)


def largest_component_distances(graph):
    a = _adjacency(graph)
    _, comp = csgraph.connected_components(a, directed=False)
    biggest = np.argmax(np.bincount(comp))
    keep = np.flatnonzero(comp == biggest)
    sub = a[keep][:, keep]
    return csgraph.shortest_path(sub, method="D", directed=False, unweighted=True)


def four_point_delta(d, quads):
    """Four-point defect for each row ``(x, y, z, w)`` of ``quads``."""
    x, y, z, w = quads.T
    s = np.stack([d[x, y] + d[z, w], d[x, z] + d[y, w], d[x, w] + d[y, z]], axis=1)
    s.sort(axis=1)
    return (s[:, 2] - s[:, 1]) / 2.0


def gromov_hyperbolicity(graph, samples=None, seed=0, batch=200_000):
    """Gromov delta of the largest connected component.

    Exhaustive over all quadruples when ``samples`` is None or not smaller than
    their number; otherwise the maximum over ``samples`` random quadruples.
    """
    d = largest_component_distances(graph)
    n = d.shape[0]
    if n < 4:
        raise ValueError("hyperbolicity needs a component with at least 4 nodes")
    total = math.comb(n, 4)
    best = 0.0
    if samples is None or samples >= total:
        # all (z, w) with z < w, ordered by z, so pairs with z > y form a suffix
        zs, ws = np.triu_indices(n, 1)
        start = np.searchsorted(zs, np.arange(n) + 1)
        for x in range(n - 3):
            for y in range(x + 1, n - 2):
                z, w = zs[start[y]:], ws[start[y]:]
                s1 = d[x, y] + d[z, w]
                s2 = d[x, z] + d[y, w]
                s3 = d[x, w] + d[y, z]
                hi = np.maximum(np.maximum(s1, s2), s3)
                mid = s1 + s2 + s3 - hi - np.minimum(np.minimum(s1, s2), s3)
                best = max(best, float((hi - mid).max()) / 2.0)
        return best
    rng = np.random.default_rng(seed)
    remaining = samples
    while remaining > 0:
        m = min(remaining, batch)
        q = rng.integers(0, n, size=(m, 4))
        q.sort(axis=1)
        ok = np.all(np.diff(q, axis=1) > 0, axis=1)
        q = q[ok]
        if len(q):
            best = max(best, float(four_point_delta(d, q).max()))
        remaining -= len(q)
    return best


# ---------------------------------------------------------------------------
# synthetic benchmark


@dataclass(frozen=True)
class SBMBlueprint:
    """Latent variables of the synthetic benchmark, indexed per type by the
    integer in the node id (``a3`` -> author 3)."""

    community: dict        # type -> (n_t,) community index
    block: dict            # type -> (n_t,) sub-community index within the community
    theta: dict            # type -> (n_t,) degree propensity, mean 1
    writes: np.ndarray     # (n_author, n_paper) edge probabilities
    reviews: np.ndarray
    published_in: np.ndarray   # (n_paper, n_venue) choice probabilities (rows sum to 1)


def sbm_blueprint(seed=0, sizes=(300, 300, 100), communities=3, blocks=4, writes_degree=5.0,
                  reviews_degree=1.5, mix=(0.9, 0.08, 0.02), reviews_in=0.9, venue_in=0.95,
                  pareto_shape=2.0):
    """Draw the latent structure of :func:`synthetic_hetero_sbm`.

    ``mix`` is the expected share of ``writes`` edges inside the same block,
    inside the same community but another block, and across communities.
    """
    if len(sizes) != 3 or min(sizes) < communities:
        raise ValueError("sizes must give at least `communities` nodes of each of the three types")
    if not np.isclose(sum(mix), 1.0) or min(mix) < 0:
        raise ValueError("mix must be three nonnegative shares summing to 1")
    rng = np.random.default_rng(seed)
    names = ("author", "paper", "venue")
    comm = {t: rng.integers(0, communities, size=s) for t, s in zip(names, sizes)}
    block = {t: rng.integers(0, blocks, size=s) for t, s in zip(names, sizes)}
    theta = {}
    for t, s in zip(names, sizes):
        th = rng.pareto(pareto_shape, size=s) + 1.0
        theta[t] = th / th.mean()
    n_a = sizes[0]
    same_c = comm["author"][:, None] == comm["paper"][None, :]
    same_b = same_c & (block["author"][:, None] == block["paper"][None, :])
    base = np.outer(theta["author"], theta["paper"])

    def shaped(weights, degree):
        # scale each class so it receives its share of the expected edge mass
        classes = [same_b, same_c & ~same_b, ~same_c]
        w = np.zeros_like(base)
        for share, cls in zip(weights, classes):
            if share > 0 and cls.any():
                w[cls] = base[cls] * share / base[cls].sum()
        return np.clip(w * degree * n_a, 0.0, 1.0)

    writes = shaped(mix, writes_degree)
    reviews = shaped((reviews_in * 0.5, reviews_in * 0.5, 1.0 - reviews_in), reviews_degree)
    pv = np.where(comm["paper"][:, None] == comm["venue"][None, :], venue_in, 1.0 - venue_in)
    pv = pv * theta["venue"][None, :]
    pv /= pv.sum(axis=1, keepdims=True)
    return SBMBlueprint(comm, block, theta, writes, reviews, pv), rng


def synthetic_hetero_sbm(seed=0, sizes=(300, 300, 100), communities=3, blocks=4, feature_dim=16,
                         writes_degree=5.0, reviews_degree=1.5, mix=(0.9, 0.08, 0.02), reviews_in=0.9,
                         venue_in=0.95, feature_signal=1.0, block_signal=1.0, pareto_shape=2.0,
                         return_blueprint=False):
    """Hierarchical degree-corrected heterogeneous SBM with planted communities.

    Node types ``author`` (labeled by community), ``paper`` and ``venue``
    (featureless).  Authors and papers also carry a sub-community (block), so
    the planted structure is a shallow tree.  Relations:

    * ``writes`` (author-paper): block- and community-assortative,
    * ``reviews`` (author-paper): community-assortative, blind to blocks,
    * ``published_in`` (paper-venue): one venue per paper, mostly in-community.

    Node propensities follow a Pareto law, giving power-law degree skew.
    """
    bp, rng = sbm_blueprint(seed, sizes, communities, blocks, writes_degree, reviews_degree, mix,
                            reviews_in, venue_in, pareto_shape)
    n_a, n_p, n_v = sizes
    nodes = [(f"a{i}", "author") for i in range(n_a)] + [(f"p{i}", "paper") for i in range(n_p)] + \
            [(f"v{i}", "venue") for i in range(n_v)]
    edges = []
    hit = rng.random(bp.writes.shape) < bp.writes
    for i, j in zip(*np.nonzero(hit)):
        edges.append((f"a{i}", f"p{j}", "writes", "bidirectional"))
    # every paper needs at least one author
    for j in np.flatnonzero(~hit.any(axis=0)):
        col = bp.writes[:, j]
        i = rng.choice(n_a, p=col / col.sum())
        edges.append((f"a{i}", f"p{j}", "writes", "bidirectional"))
    for i, j in zip(*np.nonzero(rng.random(bp.reviews.shape) < bp.reviews)):
        edges.append((f"a{i}", f"p{j}", "reviews", "bidirectional"))
    for j in range(n_p):
        v = rng.choice(n_v, p=bp.published_in[j])
        edges.append((f"p{j}", f"v{v}", "published_in", "bidirectional"))

    def unit(a):
        return a / np.linalg.norm(a, axis=-1, keepdims=True)

    # block centers scatter around their community center
    centers = unit(rng.normal(size=(communities, feature_dim)))
    offsets = unit(rng.normal(size=(communities, blocks, feature_dim)))
    features = {}
    for t in ("author", "paper"):
        c, b = bp.community[t], bp.block[t]
        mean = feature_signal * (centers[c] + block_signal * offsets[c, b])
        x = mean + rng.normal(scale=1.0 / np.sqrt(feature_dim), size=(len(c), feature_dim))
        features[t] = {f"{t[0]}{i}": x[i].tolist() for i in range(len(x))}
    labels = {f"a{i}": f"c{bp.community['author'][i]}" for i in range(n_a)}
    g = build_graph(nodes, edges, features, labels)
    return (g, bp) if return_blueprint else g


def edge_probability(g, bp, relation, pairs):
    """Ground-truth edge probability of ``pairs`` (global indices) under the blueprint."""
    pairs = np.asarray(pairs).reshape(-1, 2)
    num = np.array([int(s[1:]) for s in g.node_ids])
    table = {"writes": bp.writes, "reviews": bp.reviews, "published_in": bp.published_in}[relation]
    return table[num[pairs[:, 0]], num[pairs[:, 1]]]
