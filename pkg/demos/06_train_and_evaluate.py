"""
Training, scoring and checkpoints
=================================

Train the full model on the synthetic benchmark for link prediction, report
the three embedding sources, then save, reload and resume a checkpoint.
Pass a larger epoch budget on the command line for a full-length run
(the default config early-stops with patience 50 within 1000 epochs).
"""
import sys
import tempfile
from pathlib import Path

from hypdis import hetgraph as hg
from hypdis.evaluation import MetricReport
from hypdis.trainer import TrainConfig, load_checkpoint, result_from_checkpoint, save_checkpoint, score, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 40
g = hg.synthetic_hetero_sbm(seed=0)
cfg = TrainConfig(task="lp", max_epochs=epochs)


def progress(rec, model):
    if rec["epoch"] % 10 == 0:
        comps = " ".join(f"{k} {v:+.3f}" for k, v in rec["loss_components"].items())
        print(f"epoch {rec['epoch']:4d}  loss {rec['loss']:.4f}  val AUC {rec['val_metric']:.4f}  [{comps}]")


result = train(g, cfg, callback=progress)
print("best epoch", result.best_epoch, "validation AUC", round(result.best_val, 4))

# test scores for the fused embedding and for each disentangled half
report = MetricReport("lp", label="full")
for src, metrics in score(result, "test").items():
    for m, v in metrics.items():
        report.add(src, m, v)
print(report.to_text())

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "checkpoint.bin"
    save_checkpoint(result.checkpoint, path)
    print("checkpoint", path.stat().st_size, "bytes,", len(result.checkpoint.arrays), "arrays")

    # a reloaded checkpoint scores exactly like the live model
    again = result_from_checkpoint(g, load_checkpoint(path))
    print("reloaded scores identical:", score(again, "test") == score(result, "test"))

    # resuming continues the same trajectory an uninterrupted run would follow
    longer = train(g, cfg.replace(max_epochs=epochs + 10), resume=load_checkpoint(path))
    print("resumed for", len(longer.history), "more epochs; best validation AUC", round(longer.best_val, 4))
