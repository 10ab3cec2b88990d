import warnings

import numpy as np
import pytest

from hypdis import autodiff as ad


def numeric_grad(fn, param, h=1e-5):
    """Central differences of scalar ``fn()`` with respect to ``param.value``."""
    g = np.zeros_like(param.value)
    it = np.nditer(param.value, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = param.value[i]
        param.value[i] = old + h
        up = ad._val(fn()).item()
        param.value[i] = old - h
        down = ad._val(fn()).item()
        param.value[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_error(a, b, floor=1e-8):
    """Max relative error, with a floor so near-zero gradients compare absolutely."""
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))) if a.size else 0.0


def gradcheck(fn, params, h=1e-5, floor=1e-5):
    """Largest relative error between autodiff and central differences over ``params``.

    Relative error is measured against the largest gradient entry of each
    parameter so that entries that cancel to ~0 do not dominate.  Parameters
    whose gradient is below ``floor`` everywhere (finite-difference noise
    level) are compared absolutely against ``floor``.
    """
    _, analytic = ad.grad(fn, params)
    worst = 0.0
    for p, a in zip(params, analytic):
        num = numeric_grad(fn, p, h)
        scale = max(np.abs(num).max(), np.abs(a).max(), floor)
        worst = max(worst, float(np.abs(num - a).max() / scale))
    return worst


@pytest.fixture(autouse=True)
def _quiet_expected_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="zero-norm embedding row")
        yield


def toy_graph(seed=0):
    """10 nodes of 3 types (4 authors, 4 papers, 2 venues) and 2 relations.

    Authors and papers carry 3-dim features, venues are featureless, authors
    hold two labels.
    """
    from hypdis import hetgraph as hg

    rng = np.random.default_rng(seed)
    nodes = [(f"a{i}", "author") for i in range(4)] + [(f"p{i}", "paper") for i in range(4)] + \
            [("v0", "venue"), ("v1", "venue")]
    writes = [(0, 0), (0, 1), (1, 1), (2, 2), (3, 2), (3, 3), (1, 3)]
    edges = [(f"a{i}", f"p{j}", "writes", "bidirectional") for i, j in writes]
    edges += [(f"p{j}", f"v{j % 2}", "published_in", "bidirectional") for j in range(4)]
    features = {"author": {f"a{i}": rng.normal(size=3).tolist() for i in range(4)},
                "paper": {f"p{i}": rng.normal(size=3).tolist() for i in range(4)}}
    labels = {f"a{i}": f"c{i % 2}" for i in range(4)}
    return hg.build_graph(nodes, edges, features, labels)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
