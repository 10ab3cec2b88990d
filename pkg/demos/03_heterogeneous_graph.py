"""
Typed graphs: loading, splitting, perturbing, measuring
=======================================================

A heterogeneous graph has typed nodes and typed relations.  Here we build a
small bibliographic graph by hand, then work with the synthetic benchmark.
"""
import tempfile
from pathlib import Path

import numpy as np

from hypdis import hetgraph as hg

nodes = [("a0", "author"), ("a1", "author"), ("p0", "paper"), ("p1", "paper"), ("v0", "venue")]
edges = [
    ("a0", "p0", "writes", "bidirectional"),
    ("a1", "p0", "writes", "bidirectional"),
    ("a1", "p1", "writes", "bidirectional"),
    ("p0", "v0", "published_in", "bidirectional"),
    ("p1", "v0", "published_in", "bidirectional"),
]
features = {"author": {"a0": [1.0, 0.0], "a1": [0.0, 1.0]}, "paper": {"p0": [0.5, 0.5], "p1": [0.2, 0.8]}}
g = hg.build_graph(nodes, edges, features, labels={"a0": "db", "a1": "ml"})
print(g.num_nodes, "nodes of types", g.type_names, "relations", [r.name for r in g.relations])

# every bidirectional relation also runs backwards as its own edge type
for e in g.edge_types():
    print(f"  edge type {e.name}: {e.src_type} -> {e.dst_type}")

# malformed input fails loudly
try:
    hg.build_graph(nodes, edges + [("a0", "v9", "writes", "bidirectional")])
except hg.GraphFormatError as exc:
    print("rejected:", exc)

# the synthetic benchmark: authors, papers, venues with planted communities
bench = hg.synthetic_hetero_sbm(seed=0)
print({t: len(bench.nodes_of_type(t)) for t in bench.type_names},
      {r: len(e) for r, e in bench.edges.items()})
deg = np.bincount(np.concatenate([e.ravel() for e in bench.edges.values()]), minlength=bench.num_nodes)
print("degree: median", np.median(deg), "max", deg.max(), "(power-law skew)")

# 50/25/25 edge split per relation, deterministic under the seed
split = hg.split_edges(bench, seed=0)
print("train/val/test edges:", *(sum(len(e) for e in getattr(split, p).values()) for p in ("train", "val", "test")))

with tempfile.TemporaryDirectory() as tmp:
    hg.save_graph(bench, tmp)
    hg.write_splits(bench, split, Path(tmp) / "splits.tsv")
    again = hg.load_graph_dir(tmp)
    same = hg.read_splits(again, Path(tmp) / "splits.tsv")
    print("reloaded graph and split agree:", again.node_ids == bench.node_ids and
          all(np.array_equal(same.test[r], split.test[r]) for r in split.test))

# corrupted negatives for link prediction never hit a real edge
neg = hg.sample_negative_edges(bench, split.test, k=1, seed=0, exclude=bench)
print("negatives per relation:", {r: len(e) for r, e in neg.items()})

# perturbations used by the robustness studies
view = hg.perturb_edges(bench, 0.1, seed=0).graph
kept = sum(len(set(map(tuple, view.edges[r])) & set(map(tuple, bench.edges[r]))) for r in bench.edges)
print("structural 10%:", sum(len(e) for e in view.edges.values()), "edges,", kept, "of them original")
retyped = hg.perturb_edge_types(bench, 0.1, seed=0)
print("edge types 10%:", {r: len(e) for r, e in retyped.edges.items()})
override = hg.perturb_node_types(bench, 0.1, seed=0)
print("node types 10%: changed", int((override != bench.node_types).sum()), "nodes")

# Gromov delta of the largest component (sampled quadruples)
print("delta (20k samples):", hg.gromov_hyperbolicity(bench, samples=20_000, seed=0))
