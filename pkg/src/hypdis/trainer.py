"""End-to-end training: model assembly, variant wiring, the epoch loop with
early stopping, and binary checkpoints."""
from __future__ import annotations

import dataclasses
import io
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hypdis import autodiff as ad
from hypdis import hetgraph as hg
from hypdis.evaluation import auc_ap, f1_scores
from hypdis.layers import Curvatures, HeteroEncoder, ParamStore, StructuralEncoder, combine_views
from hypdis.manifold import make_geometry
from hypdis.objectives import (MLP, Discriminator, GaussianConditional, LossWeights, club_mi_loss,
                               cross_entropy, bce_pos_neg, discriminator_loss, disentangle_loss, fuse,
                               infonce_loss, pair_logits, q_theta_fit_step, total_loss)

log = logging.getLogger("hypdis")

VARIANTS = ("full", "wo_st", "wo_he", "wo_cl", "wo_ball", "with_cl_prime", "wo_disentangling")
TASKS = {"nc": "nc", "node_classification": "nc", "lp": "lp", "link_prediction": "lp"}


class TrainingDivergedError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    task: str = "lp"
    layers: int = 2
    d0: int = 32
    hidden: int = 32
    out_dim: int = 32
    head_hidden: int = 32
    weights: LossWeights = field(default_factory=LossWeights)
    cl_negatives: int = 10
    mi_negatives: int | None = None   # None: every row is a CLUB negative
    perturb_ratio: float = 0.1
    resample_view: bool = True
    seed: int = 0
    max_epochs: int = 1000
    patience: int = 50
    lr: float = 0.01
    variant: str = "full"
    difference_mode: str = "cooperative"
    q_steps: int = 5
    q_lr: float | None = 0.05
    cl_reduction: str = "mean"
    curvature_source: str = "source"
    lp_negatives: int = 3
    lp_target_frac: float = 0.3

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        object.__setattr__(self, "task", TASKS[self.task])
        if min(self.layers, self.d0, self.hidden, self.out_dim, self.head_hidden) < 1:
            raise ValueError("layer count and dimensions must be positive")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.mi_negatives is not None and self.mi_negatives < 1:
            raise ValueError("mi_negatives must be positive or None")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if isinstance(self.weights, dict):
            object.__setattr__(self, "weights", LossWeights(**self.weights))

    @property
    def dims(self):
        return [self.d0] + [self.hidden] * (self.layers - 1) + [self.out_dim]

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_dict(self):
        d = dataclasses.asdict(self)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = LossWeights(**d["weights"])
        return cls(**d)


@dataclass(frozen=True)
class Wiring:
    use_st: bool
    use_he: bool
    views: int
    contrast: str | None       # "views", "st_he" or None
    disentangle: bool
    hyperbolic: bool


def apply_variant(variant):
    """Module wiring for a variant name (or a collection holding exactly one)."""
    if not isinstance(variant, str):
        flags = [v for v in variant if v != "full"] or ["full"]
        if len(flags) != 1:
            raise ValueError(f"conflicting variant flags: {sorted(flags)}")
        variant = flags[0]
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    return {
        "full": Wiring(True, True, 2, "views", True, True),
        "wo_st": Wiring(False, True, 2, "views", False, True),
        "wo_he": Wiring(True, False, 1, None, False, True),
        "wo_cl": Wiring(True, True, 1, None, True, True),
        "wo_ball": Wiring(True, True, 2, "views", True, False),
        "with_cl_prime": Wiring(True, True, 1, "st_he", True, True),
        "wo_disentangling": Wiring(True, True, 2, "views", False, True),
    }[variant]


# ---------------------------------------------------------------------------
# model


class Model:
    """All trainable pieces for one graph and configuration."""

    def __init__(self, g, cfg):
        self.cfg = cfg
        self.wiring = apply_variant(cfg.variant)
        self.geom = make_geometry(self.wiring.hyperbolic)
        rng = np.random.default_rng(cfg.seed)
        self.params = ParamStore()
        self.curv = Curvatures(self.params)
        dims = cfg.dims
        self.st = StructuralEncoder(g, self.params, self.curv, dims, rng) if self.wiring.use_st else None
        self.he = (HeteroEncoder(g, self.params, self.curv, dims, rng, curvature_source=cfg.curvature_source)
                   if self.wiring.use_he else None)
        out = dims[-1]
        if cfg.task == "nc":
            k = max(g.num_classes, 1)
            make_head = lambda name: MLP(self.params, f"head.{name}", out, cfg.head_hidden, k, rng)
        else:
            make_head = lambda name: MLP(self.params, f"head.{name}", 2 * out, cfg.head_hidden, 1, rng)
        self.heads = {"z": make_head("z")}
        if self.wiring.use_st and self.wiring.use_he:
            self.heads["st"] = make_head("st")
            self.heads["se"] = make_head("se")
        self.disc = Discriminator(self.params, out, cfg.head_hidden, rng) if self.wiring.disentangle else None
        self.qparams = ParamStore()
        self.q = GaussianConditional(self.qparams, out, out, rng) if self.wiring.disentangle else None
        self.optimizer = ad.Adam(list(self.params.values()), lr=cfg.lr)
        self.q_optimizer = ad.Adam(list(self.qparams.values()), lr=cfg.q_lr or cfg.lr)

    @property
    def c_last(self):
        return self.curv(str(self.cfg.layers))

    def prepare(self, g):
        return {
            "st": self.st.prepare(g) if self.st else None,
            "he": self.he.prepare(g) if self.he else None,
        }

    def embed(self, g, prepared, view=None, view_prepared=None, type_override=None, update_cache=False):
        """Return embeddings {"st", "he", "he_views", "z"} plus attention traces."""
        out = {"traces": []}
        c = self.c_last
        z_st = self.st(g, prepared["st"], self.geom) if self.st else None
        z_he = None
        if self.he:
            z1, traces = self.he(g, prepared["he"], self.geom, type_override=type_override,
                                 update_cache=update_cache)
            out["traces"] = traces
            if self.wiring.views == 2:
                if view is None:
                    z2 = z1
                else:
                    z2, _ = self.he(view, view_prepared["he"], self.geom, type_override=type_override)
                out["he_views"] = (z1, z2)
                z_he = combine_views(z1, z2, c, self.geom)
            else:
                z_he = z1
        out["st"], out["he"] = z_st, z_he
        if z_st is not None and z_he is not None:
            out["z"] = fuse(z_st, z_he, c, self.geom)
        else:
            out["z"] = z_st if z_st is not None else z_he
        return out

    def sources(self, emb):
        """Embedding matrices per report source: fused, structural, semantic."""
        src = {"z": emb["z"]}
        if "st" in self.heads:
            src["st"], src["se"] = emb["st"], emb["he"]
        return src

    def state_arrays(self):
        arrays = {}
        for k, v in self.params.arrays().items():
            arrays[f"param/{k}"] = v
        for k, v in self.qparams.arrays().items():
            arrays[f"qparam/{k}"] = v
        for k, v in self.optimizer.state_arrays().items():
            arrays[f"opt/{k}"] = v
        for k, v in self.q_optimizer.state_arrays().items():
            arrays[f"qopt/{k}"] = v
        if self.he:
            for layer, cache in enumerate(self.he.cache):
                for t, y in (cache or {}).items():
                    arrays[f"cache/{layer}/{t}"] = y
        return arrays

    def load_state_arrays(self, arrays):
        self.params.load_arrays({k[6:]: v for k, v in arrays.items() if k.startswith("param/")})
        self.qparams.load_arrays({k[7:]: v for k, v in arrays.items() if k.startswith("qparam/")})
        self.optimizer.load_state_arrays({k[4:]: v for k, v in arrays.items() if k.startswith("opt/")})
        self.q_optimizer.load_state_arrays({k[5:]: v for k, v in arrays.items() if k.startswith("qopt/")})
        self.load_cache_arrays(arrays)

    def best_state(self, cache=None):
        """Parameters plus attention cache: everything that affects evaluation.

        ``cache`` replaces the live attention cache, so the snapshot can hold
        the tangents a validation pass actually read.
        """
        out = {f"param/{k}": v.copy() for k, v in self.params.arrays().items()}
        if self.he:
            for layer, entry in enumerate(self.he.cache if cache is None else cache):
                for t, y in (entry or {}).items():
                    out[f"cache/{layer}/{t}"] = np.array(y)
        return out

    def load_best_state(self, arrays):
        self.params.load_arrays({k[6:]: v for k, v in arrays.items() if k.startswith("param/")})
        self.load_cache_arrays(arrays)

    def load_cache_arrays(self, arrays):
        if self.he:
            self.he.cache = [None] * len(self.he.cache)
            for k, v in arrays.items():
                if k.startswith("cache/"):
                    _, layer, t = k.split("/", 2)
                    layer = int(layer)
                    if self.he.cache[layer] is None:
                        self.he.cache[layer] = {}
                    self.he.cache[layer][t] = np.array(v)


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"HYPDISCK"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    arrays: dict
    meta: dict

    def save(self, path):
        save_checkpoint(self, path)


def save_checkpoint(ckpt, path):
    """Layout: magic, u32 version, u64 header length, JSON header, then every
    array as little-endian float64 in header order."""
    names = list(ckpt.arrays)
    header = {"meta": ckpt.meta,
              "arrays": [[k, list(np.shape(ckpt.arrays[k]))] for k in names]}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for k in names:
            fh.write(np.ascontiguousarray(ckpt.arrays[k], dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + 12 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad header)")
    version, hlen = struct.unpack_from("<IQ", data, len(MAGIC))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    start = len(MAGIC) + 12
    if len(data) < start + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    pos = start + hlen
    arrays = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if pos + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated at array {name!r}")
        arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(shape)
        pos += nbytes
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return Checkpoint(arrays, header["meta"])


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: Model
    graph: hg.HetGraph
    split: hg.SplitSet
    history: list
    checkpoint: Checkpoint
    best_epoch: int
    best_val: float
    mp_graph: hg.HetGraph
    type_override: np.ndarray | None = None
    eval_pairs: dict = field(default_factory=dict)


def _epoch_seed(seed, epoch, salt):
    return int(np.random.SeedSequence([seed, epoch, salt]).generate_state(1)[0])


def _concat_edges(edges):
    parts = [np.asarray(e).reshape(-1, 2) for e in edges.values()]
    return np.concatenate(parts) if parts else np.zeros((0, 2), dtype=np.int64)


def eval_pairs(g, split, seed):
    """Fixed validation/test positives and one corrupted negative per positive."""
    out = {}
    for part, salt in (("val", 1), ("test", 2)):
        pos = getattr(split, part)
        neg = hg.sample_negative_edges(g, pos, k=1, seed=_epoch_seed(seed, 2**31, salt), exclude=g)
        out[part] = (_concat_edges(pos), _concat_edges(neg))
    return out


def score(result, part="test", type_override="auto"):
    """Task metrics for every embedding source on the validation or test split."""
    model, g, split = result.model, result.graph, result.split
    override = result.type_override if isinstance(type_override, str) else type_override
    with ad.no_grad():
        emb = model.embed(result.mp_graph, model.prepare(result.mp_graph), type_override=override)
        return _score_embeddings(model, emb, g, split, result.eval_pairs, part)


def _score_embeddings(model, emb, g, split, pairs, part, sources=None):
    c = model.c_last
    out = {}
    for src, z in model.sources(emb).items():
        if sources is not None and src not in sources:
            continue
        head = model.heads[src]
        if model.cfg.task == "nc":
            nodes = getattr(split, part + "_nodes")
            logits = head(model.geom.logmap0(ad.rows(z, nodes), c))
            pred = np.argmax(ad._val(logits), axis=1)
            macro, micro = f1_scores(pred, g.labels[nodes], num_classes=g.num_classes)
            out[src] = {"Macro-F1": macro, "Micro-F1": micro}
        else:
            pos, neg = pairs[part]
            s = np.r_[ad._val(pair_logits(z, pos, head, c, model.geom)),
                      ad._val(pair_logits(z, neg, head, c, model.geom))]
            y = np.r_[np.ones(len(pos)), np.zeros(len(neg))]
            auc, ap = auc_ap(s, y)
            out[src] = {"AUC": auc, "AP": ap}
    return out


def _val_metric(model, emb, g, split, pairs):
    m = _score_embeddings(model, emb, g, split, pairs, "val", sources=("z",))["z"]
    return m["Macro-F1"] if model.cfg.task == "nc" else m["AUC"]


def _task_loss(model, z, head, cfg, g, split, train_pos, train_neg):
    c = model.c_last
    if cfg.task == "nc":
        nodes = split.train_nodes
        logits = head(model.geom.logmap0(ad.rows(z, nodes), c))
        return cross_entropy(logits, g.labels[nodes])
    return bce_pos_neg(pair_logits(z, train_pos, head, c, model.geom),
                       pair_logits(z, train_neg, head, c, model.geom))


def epoch_inputs(model, g, mp_graph, prepared, split, epoch):
    """Per-epoch message-passing graph, supervision targets and contrastive view."""
    cfg, w = model.cfg, model.wiring
    targets = split.train
    if cfg.task == "lp" and cfg.lp_target_frac > 0:
        # supervise on a random subset of training edges hidden from this
        # epoch's message passing, so the predictor cannot key on adjacency
        mrng = np.random.default_rng(_epoch_seed(cfg.seed, epoch, 6))
        targets, kept = {}, {}
        for rel, e in split.train.items():
            hide = mrng.random(len(e)) < cfg.lp_target_frac
            targets[rel], kept[rel] = e[hide], e[~hide]
        mp_graph = mp_graph.with_edges(kept)
        prepared = model.prepare(mp_graph)
    view = view_prep = None
    if w.use_he and w.views == 2:
        view_seed = _epoch_seed(cfg.seed, epoch if cfg.resample_view else 0, 3)
        view = hg.perturb_edges(mp_graph, cfg.perturb_ratio, seed=view_seed).graph
        view_prep = model.prepare(view)
    return mp_graph, prepared, targets, view, view_prep


def forward_loss(model, g, split, epoch, inputs, type_override=None):
    """Total loss as a graph node; deterministic given ``(epoch, inputs)``.

    Returns ``(loss, components, embeddings)``.
    """
    cfg, w = model.cfg, model.wiring
    weights = cfg.weights
    mp_graph, prepared, targets, view, view_prep = inputs
    emb = model.embed(mp_graph, prepared, view, view_prep, type_override=type_override)
    rng = np.random.default_rng(_epoch_seed(cfg.seed, epoch, 4))
    train_pos = train_neg = None
    if cfg.task == "lp":
        train_pos = _concat_edges(targets)
        train_neg = _concat_edges(hg.sample_negative_edges(g, targets, k=cfg.lp_negatives,
                                                           seed=_epoch_seed(cfg.seed, epoch, 5),
                                                           exclude=g.with_edges(split.train)))
    sources = model.sources(emb)
    comps = {}
    l_z = _task_loss(model, sources["z"], model.heads["z"], cfg, g, split, train_pos, train_neg)
    comps["task_z"] = l_z
    l_st = l_se = None
    if "st" in sources:
        l_st = _task_loss(model, sources["st"], model.heads["st"], cfg, g, split, train_pos, train_neg)
        l_se = _task_loss(model, sources["se"], model.heads["se"], cfg, g, split, train_pos, train_neg)
        comps["task_st"], comps["task_se"] = l_st, l_se
    c = model.c_last
    l_dis = None
    if w.disentangle and weights.lambda2 > 0:
        l_mi = club_mi_loss(emb["st"], emb["he"], model.q, c, model.geom, cfg.mi_negatives, rng)
        l_df = discriminator_loss(emb["st"], emb["he"], model.disc, c, model.geom, cfg.difference_mode)
        l_dis = disentangle_loss(l_mi, l_df, weights.lambda_dis)
        comps["mi"], comps["df"] = l_mi, l_df
    l_cl = None
    if w.contrast and weights.lambda3 > 0:
        if w.contrast == "views":
            a, b = emb["he_views"]
        else:
            a, b = emb["st"], emb["he"]
        l_cl = infonce_loss(a, b, weights.tau, cfg.cl_negatives, rng, cfg.cl_reduction)
        comps["cl"] = l_cl
    return total_loss(l_z, l_st, l_se, l_dis, l_cl, weights), comps, emb


def train_step(model, g, mp_graph, prepared, split, epoch, type_override=None, check=None):
    """One optimisation step; returns (loss value, component dict, embeddings)."""
    cfg, w = model.cfg, model.wiring
    inputs = epoch_inputs(model, g, mp_graph, prepared, split, epoch)
    model.optimizer.zero_grad()
    loss, comps, emb = forward_loss(model, g, split, epoch, inputs, type_override)
    value = loss.item()
    if not np.isfinite(value):
        parts = {k: float(ad._val(v)) for k, v in comps.items()}
        raise TrainingDivergedError(f"non-finite loss at epoch {epoch}: components {parts}")
    ad.backward(loss)
    if check is not None:
        check(model, emb, epoch)
    if w.disentangle and cfg.weights.lambda2 > 0:
        c = model.c_last
        x = ad.stop_gradient(model.geom.logmap0(ad.stop_gradient(emb["st"]), ad.stop_gradient(c)))
        y = ad.stop_gradient(model.geom.logmap0(ad.stop_gradient(emb["he"]), ad.stop_gradient(c)))
        for _ in range(cfg.q_steps):
            q_theta_fit_step(model.q, x, y, model.q_optimizer)
    model.optimizer.step()
    return value, {k: float(ad._val(v)) for k, v in comps.items()}, emb


def _snapshot(model, meta_extra, best_arrays):
    arrays = model.state_arrays()
    for k, v in (best_arrays or {}).items():
        arrays[f"best/{k}"] = v
    meta = {"config": model.cfg.to_dict(), "version": CHECKPOINT_VERSION}
    meta.update(meta_extra)
    return Checkpoint(arrays, meta)


def train(g, cfg, split=None, resume=None, callback=None, history_path=None, perturb_train=None,
          type_override=None, check=None):
    """Train on ``g``.

    ``split`` defaults to :func:`hypdis.hetgraph.split_edges` with the config seed.
    ``perturb_train`` optionally maps the message-passing graph to a perturbed
    copy (robustness studies).  ``check(model, emb, epoch)`` runs after every
    backward pass, before the optimizer step.
    """
    split = split if split is not None else hg.split_edges(g, seed=cfg.seed)
    if cfg.task == "nc":
        if g.labels is None or len(split.train_nodes) == 0:
            raise ValueError("node classification needs labeled training nodes")
        mp_graph = g
    else:
        if sum(len(e) for e in split.train.values()) == 0:
            raise ValueError("link prediction needs training edges")
        mp_graph = g.with_edges(split.train)
    if perturb_train is not None:
        mp_graph = perturb_train(mp_graph)
    model = Model(g, cfg)
    prepared = model.prepare(mp_graph)
    pairs = eval_pairs(g, split, cfg.seed) if cfg.task == "lp" else {}

    start, best_val, best_epoch, bad = 0, -np.inf, -1, 0
    best_arrays = None
    if resume is not None:
        model.load_state_arrays(resume.arrays)
        start = resume.meta["epoch"] + 1
        best_val = resume.meta["best_val"] if resume.meta["best_val"] is not None else -np.inf
        best_epoch, bad = resume.meta["best_epoch"], resume.meta["bad_epochs"]
        best_arrays = {k[5:]: v for k, v in resume.arrays.items() if k.startswith("best/")} or None
    history = []
    hist_fh = open(history_path, "a" if resume is not None else "w", encoding="utf-8") if history_path else None
    epoch = start - 1
    stopped = resume is not None and resume.meta.get("stopped", False)
    try:
        for epoch in range(start, cfg.max_epochs):
            if stopped:
                break
            loss, comps, _ = train_step(model, g, mp_graph, prepared, split, epoch, type_override, check)
            read_cache = list(model.he.cache) if model.he is not None else None
            if model.he is not None:
                with ad.no_grad():
                    emb = model.embed(mp_graph, prepared, type_override=type_override, update_cache=True)
            else:
                with ad.no_grad():
                    emb = model.embed(mp_graph, prepared)
            val = _val_metric(model, emb, g, split, pairs)
            if val > best_val:
                best_val, best_epoch, bad = val, epoch, 0
                best_arrays = model.best_state(read_cache)
            else:
                bad += 1
            rec = {"epoch": epoch, "loss": loss, "loss_components": comps, "val_metric": val,
                   "lr": cfg.lr, "curvatures": model.curv.values()}
            history.append(rec)
            if hist_fh:
                hist_fh.write(json.dumps(rec) + "\n")
            if callback is not None:
                callback(rec, model)
            log.debug("epoch %d loss %.5f val %.4f", epoch, loss, val)
            if bad >= cfg.patience:
                stopped = True
                break
    finally:
        if hist_fh:
            hist_fh.close()
    meta = {"epoch": epoch, "best_val": None if not np.isfinite(best_val) else float(best_val),
            "best_epoch": best_epoch, "bad_epochs": bad, "stopped": bool(stopped)}
    ckpt = _snapshot(model, meta, best_arrays)
    if best_arrays is not None:
        model.load_best_state(best_arrays)
    return TrainResult(model, g, split, history, ckpt, best_epoch,
                       float(best_val) if np.isfinite(best_val) else float("nan"),
                       mp_graph, type_override, pairs)


def model_from_checkpoint(g, ckpt, use_best=True):
    cfg = TrainConfig.from_dict(ckpt.meta["config"])
    model = Model(g, cfg)
    model.load_state_arrays(ckpt.arrays)
    best = {k[5:]: v for k, v in ckpt.arrays.items() if k.startswith("best/")}
    if use_best and best:
        model.load_best_state(best)
    return model


def result_from_checkpoint(g, ckpt, split=None):
    """Rebuild a :class:`TrainResult` (best parameters) for evaluation."""
    model = model_from_checkpoint(g, ckpt)
    cfg = model.cfg
    split = split if split is not None else hg.split_edges(g, seed=cfg.seed)
    mp_graph = g if cfg.task == "nc" else g.with_edges(split.train)
    pairs = eval_pairs(g, split, cfg.seed) if cfg.task == "lp" else {}
    return TrainResult(model, g, split, [], ckpt, ckpt.meta.get("best_epoch", -1),
                       ckpt.meta.get("best_val") or float("nan"), mp_graph, None, pairs)
