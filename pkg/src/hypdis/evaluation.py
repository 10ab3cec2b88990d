"""Metrics and analysis harnesses: F1, AUC/AP, the mutual-information probe and
perturbation sweeps."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from hypdis import autodiff as ad
from hypdis.objectives import GaussianConditional, club_estimate
from hypdis.layers import ParamStore


def f1_scores(predictions, labels, num_classes=None):
    """(macro, micro) F1 for single-label multiclass predictions.

    Macro-F1 averages over the classes present in ``labels`` or
    ``predictions``; micro-F1 uses global counts (equal to accuracy here).
    """
    pred = np.asarray(predictions)
    true = np.asarray(labels)
    if pred.size == 0 or pred.shape != true.shape:
        raise ValueError("predictions and labels must be non-empty and equally long")
    classes = np.union1d(np.unique(true), np.unique(pred)) if num_classes is None else np.arange(num_classes)
    f1s = []
    tp_total = fp_total = fn_total = 0
    for k in classes:
        tp = int(np.sum((pred == k) & (true == k)))
        fp = int(np.sum((pred == k) & (true != k)))
        fn = int(np.sum((pred != k) & (true == k)))
        tp_total, fp_total, fn_total = tp_total + tp, fp_total + fp, fn_total + fn
        if tp + fp + fn == 0:
            continue
        f1s.append(2 * tp / (2 * tp + fp + fn))
    macro = float(np.mean(f1s))
    micro = 2 * tp_total / (2 * tp_total + fp_total + fn_total)
    return macro, float(micro)


def auc_ap(scores, labels):
    """ROC AUC (rank statistic, ties count one half) and average precision."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative examples")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s))
    sorted_s = s[order]
    # average ranks over ties
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    auc = (ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    # average precision: precision at each distinct threshold, weighted by recall gain
    desc = np.argsort(-s, kind="mergesort")
    s_desc, y_desc = s[desc], y[desc]
    distinct = np.r_[np.flatnonzero(np.diff(s_desc)), len(s) - 1]
    tps = np.cumsum(y_desc)[distinct]
    fps = (distinct + 1) - tps
    precision = tps / (tps + fps)
    recall = tps / n_pos
    ap = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
    return float(auc), ap


# ---------------------------------------------------------------------------
# mutual-information probe


@dataclass
class ProbeResult:
    estimate: float
    std: float
    fit_loglik: float


def _standardize(a, rel_tol=1e-6):
    sd = a.std(0)
    keep = sd > rel_tol * max(float(sd.max(initial=0.0)), 1e-300)
    return (a[:, keep] - a[:, keep].mean(0)) / sd[keep]


def mi_probe(z_st, z_se, c=1.0, geom=None, seed=0, steps=500, lr=0.01, resamples=5, hidden=None):
    """Fit a fresh Gaussian ``q(z_se | z_st)`` on a random half of the rows, then
    report the CLUB bound on the other half (all of its rows as negatives) with
    a bootstrap std.  Scoring rows the fit never saw keeps overfitting from
    inflating the bound.

    Inputs are ball points at curvature ``c``; they are compared through their
    tangent images at the origin.
    """
    from hypdis.manifold import PoincareBall

    geom = geom or PoincareBall()
    x = np.asarray(ad._val(geom.logmap0(np.asarray(z_st, dtype=np.float64), c)))
    y = np.asarray(ad._val(geom.logmap0(np.asarray(z_se, dtype=np.float64), c)))
    rng = np.random.default_rng(seed)
    n = x.shape[0]
    perm = rng.permutation(n)
    fit_idx, eval_idx = perm[: n // 2], perm[n // 2:]
    # standardize so the probe is scale-free; constant (dead) dimensions carry
    # no information and would only blow up the Gaussian precision
    xs, ys = _standardize(x), _standardize(y)
    if xs.shape[1] == 0 or ys.shape[1] == 0:
        return ProbeResult(0.0, 0.0, float("nan"))
    params = ParamStore()
    q = GaussianConditional(params, xs.shape[1], ys.shape[1], rng, d_hidden=hidden, heteroscedastic=False)
    opt = ad.Adam(list(params.values()), lr=lr)
    xf, yf = xs[fit_idx], ys[fit_idx]
    ll = 0.0
    for _ in range(steps):
        opt.zero_grad()
        nll = -ad.mean(q.log_likelihood(xf, yf))
        ad.backward(nll)
        opt.step()
        ll = -nll.item()
    xe, ye = xs[eval_idx], ys[eval_idx]
    with ad.no_grad():
        est = float(ad._val(club_estimate(q, xe, ye, negatives=None)))
        boots = []
        for _ in range(resamples):
            idx = rng.integers(0, len(xe), size=len(xe))
            boots.append(float(ad._val(club_estimate(q, xe[idx], ye[idx], negatives=None))))
    return ProbeResult(est, float(np.std(boots)), ll)


# ---------------------------------------------------------------------------
# reports


@dataclass
class MetricReport:
    task: str
    scores: dict = field(default_factory=dict)   # source -> metric -> [per-repeat values]
    label: str = ""

    def add(self, source, metric, value):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{metric}={value} outside [0, 1]")
        self.scores.setdefault(source, {}).setdefault(metric, []).append(float(value))

    def mean(self, source, metric):
        return float(np.mean(self.scores[source][metric]))

    def std(self, source, metric):
        return float(np.std(self.scores[source][metric]))

    def summary(self):
        return {src: {m: {"mean": float(np.mean(v)), "std": float(np.std(v)), "values": list(v)}
                      for m, v in mets.items()} for src, mets in self.scores.items()}

    def to_json(self):
        return json.dumps({"task": self.task, "label": self.label, "scores": self.summary()}, indent=2)

    def to_text(self):
        metrics = ["Macro-F1", "Micro-F1"] if self.task == "nc" else ["AUC", "AP"]
        names = {"z": "model", "st": "-structural", "se": "-semantic"}
        lines = [f"{'embedding':<14}" + "".join(f"{m:>20}" for m in metrics)]
        for src in ("z", "st", "se"):
            if src not in self.scores:
                continue
            cells = []
            for m in metrics:
                v = self.scores[src].get(m)
                cells.append(f"{100 * np.mean(v):>11.2f} ± {100 * np.std(v):<6.2f}" if v else f"{'-':>20}")
            lines.append(f"{names[src]:<14}" + "".join(cells))
        return "\n".join(lines)


def robustness_sweep(g, cfg, kind, ratios, seeds=(0,), split=None):
    """Retrain on structurally (edge add/delete) or semantically (edge type or node
    type relabel) perturbed training data and score on the untouched split.

    Returns ``[(ratio, MetricReport), ...]``.
    """
    from hypdis import hetgraph as hg
    from hypdis.trainer import score, train

    if kind not in ("structural", "semantic", "semantic-node"):
        raise ValueError("kind must be 'structural', 'semantic' or 'semantic-node'")
    if any(r < 0 or r > 1 for r in ratios):
        raise ValueError("ratios must lie in [0, 1]")
    out = []
    for ratio in ratios:
        report = MetricReport(cfg.task, label=f"{kind}@{ratio}")
        for seed in seeds:
            run_cfg = cfg.replace(seed=seed)
            sp = split if split is not None else hg.split_edges(g, seed=seed)
            override = None
            perturb = None
            if ratio > 0:
                if kind == "structural":
                    perturb = lambda tg, s=seed, r=ratio: hg.perturb_edges(tg, r, seed=10_007 + s).graph
                elif kind == "semantic":
                    perturb = lambda tg, s=seed, r=ratio: hg.perturb_edge_types(tg, r, seed=10_007 + s)
                else:
                    override = hg.perturb_node_types(g, ratio, seed=10_007 + seed)
            result = train(g, run_cfg, split=sp, perturb_train=perturb, type_override=override)
            for src, mets in score(result, "test").items():
                for m, v in mets.items():
                    report.add(src, m, v)
        out.append((ratio, report))
    return out
