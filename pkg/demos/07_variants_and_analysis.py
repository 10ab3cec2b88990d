"""
Variants, disentanglement and robustness
========================================

Switch modules off one at a time, probe how much the structural and semantic
embeddings still share, and retrain under semantic perturbation.  Epoch
budgets are kept short so the script finishes in a few minutes; the
acceptance suite runs the same comparisons at full length over five seeds.
"""
import numpy as np

from hypdis import autodiff as ad
from hypdis import hetgraph as hg
from hypdis.evaluation import mi_probe, robustness_sweep
from hypdis.trainer import TrainConfig, apply_variant, score, train

g = hg.synthetic_hetero_sbm(seed=0)
base = TrainConfig(task="lp", max_epochs=60)

for variant in ("full", "wo_st", "wo_he", "wo_cl", "wo_ball", "with_cl_prime", "wo_disentangling"):
    print(f"{variant:>17}: {apply_variant(variant)}")

# the disentangling module should lower what a fresh probe can recover of
# one embedding from the other
for variant in ("full", "wo_disentangling"):
    result = train(g, base.replace(variant=variant))
    model = result.model
    with ad.no_grad():
        emb = model.embed(result.mp_graph, model.prepare(result.mp_graph))
    probe = mi_probe(ad._val(emb["st"]), ad._val(emb["he"]), c=float(ad._val(model.c_last)), geom=model.geom)
    auc = score(result, "test")["z"]["AUC"]
    print(f"{variant:>17}: test AUC {auc:.4f}, MI probe {probe.estimate:.2f} ± {probe.std:.2f}")

# semantic perturbation relabels node types before training
sweep = robustness_sweep(g, base, "semantic-node", [0.0, 0.3])
for ratio, report in sweep:
    row = {src: round(report.mean(src, "AUC"), 4) for src in ("z", "st", "se")}
    print(f"node types perturbed {ratio:.0%}: {row}")
