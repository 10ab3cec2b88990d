"""Hyperbolic disentangled representation learning for heterogeneous graphs.

Submodules load lazily so the command-line entry point can set thread limits
before numpy starts its BLAS pool.
"""
import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "HetGraph": "hetgraph", "build_graph": "hetgraph", "load_graph": "hetgraph",
    "load_graph_dir": "hetgraph", "synthetic_hetero_sbm": "hetgraph",
    "Euclidean": "manifold", "PoincareBall": "manifold",
    "LossWeights": "objectives",
    "TrainConfig": "trainer", "apply_variant": "trainer", "load_checkpoint": "trainer",
    "save_checkpoint": "trainer", "score": "trainer", "train": "trainer",
    "MetricReport": "evaluation", "mi_probe": "evaluation", "robustness_sweep": "evaluation",
}

__all__ = sorted(_EXPORTS)


def __getattr__(name):
    if name in _EXPORTS:
        return getattr(importlib.import_module(f"hypdis.{_EXPORTS[name]}"), name)
    raise AttributeError(f"module 'hypdis' has no attribute {name!r}")
