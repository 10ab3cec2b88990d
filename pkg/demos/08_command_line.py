"""
Command-line workflow
=====================

The ``hypdis`` entry point wraps the library: ``train`` writes a checkpoint,
per-epoch metrics, a report and a manifest; ``eval`` rescores checkpoints;
``analyze`` runs the MI probe, robustness sweeps, hyperbolicity and embedding
export.  This script drives it in-process on a small synthetic graph.
"""
import json
import tempfile
from pathlib import Path

from hypdis import hetgraph as hg
from hypdis.cli import main

root = Path(tempfile.mkdtemp(prefix="hypdis_cli_"))
hg.save_graph(hg.synthetic_hetero_sbm(seed=0, sizes=(80, 80, 20), feature_dim=8), root / "graph")
(root / "run.cfg").write_text("""[model]
d0 = 16
hidden = 16
out_dim = 16

[train]
max_epochs = 30

[data]
graph = graph
""")
cfg = str(root / "run.cfg")

print("$ hypdis train --task lp")
main(["train", "--config", cfg, "--task", "lp", "--out", str(root / "full")])
main(["train", "--config", cfg, "--task", "lp", "--variant", "wo_disentangling", "--out", str(root / "wo_dis")])
manifest = json.loads((root / "full" / "manifest.json").read_text())
print("manifest outputs:", sorted(manifest["outputs"]), "digest", manifest["output_digest"][:16])

print("\n$ hypdis eval --ckpt full/checkpoint.bin")
main(["eval", "--ckpt", str(root / "full" / "checkpoint.bin"), "--out", str(root / "eval")])

print("\n$ hypdis analyze mi-probe --ckpt full --ckpt-b wo_dis")
main(["analyze", "mi-probe", "--ckpt", str(root / "full" / "checkpoint.bin"),
      "--ckpt-b", str(root / "wo_dis" / "checkpoint.bin"), "--out", str(root / "mi")])

print("\n$ hypdis analyze hyperbolicity --samples 20000")
main(["analyze", "hyperbolicity", "--graph", str(root / "graph"), "--samples", "20000", "--out", str(root / "delta")])

print("\n$ hypdis analyze export-embeddings --source st")
main(["analyze", "export-embeddings", "--ckpt", str(root / "full" / "checkpoint.bin"), "--source", "st",
      "--out", str(root / "export")])
print((root / "export" / "embeddings_st.txt").read_text().splitlines()[0])

(root / "broken.cfg").write_text("[data]\nnodes = graph/nodes.tsv\nedges = graph/no_such_edges.tsv\n")
print("\n$ hypdis train with a missing edges file")
print("exit code", main(["train", "--task", "lp", "--config", str(root / "broken.cfg"), "--out", str(root / "x")]))
print("outputs under", root)
