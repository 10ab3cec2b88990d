"""``hypdis`` command-line entry point: train, eval and analyze.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 training diverged.
Logging verbosity comes from ``HYPDIS_LOG`` (error, info or debug).
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

log = logging.getLogger("hypdis")

EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 1, 2, 3


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


# keys accepted per config section, with their parsers
_SECTIONS = {
    "model": {"layers": int, "d0": int, "hidden": int, "out_dim": int, "head_hidden": int,
              "curvature_source": str, "variant": str},
    "loss": {"lambda1": float, "lambda2": float, "lambda3": float, "lambda_dis": float, "tau": float,
             "cl_negatives": int, "mi_negatives": "int_or_all", "difference_mode": str, "cl_reduction": str},
    "train": {"task": str, "seed": int, "max_epochs": int, "patience": int, "lr": float,
              "perturb_ratio": float, "resample_view": "bool", "q_steps": int, "q_lr": float,
              "lp_negatives": int, "lp_target_frac": float},
    "data": {"graph": str, "nodes": str, "edges": str, "labels": str, "splits": str,
             "synthetic": "bool", "synthetic_seed": int},
}
_WEIGHT_KEYS = ("lambda1", "lambda2", "lambda3", "lambda_dis", "tau")


def read_config(path):
    """Parse a ``[model] [loss] [train] [data]`` key = value file into a flat dict."""
    if path is None:
        return {}
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    flat = {}
    base = Path(path).resolve().parent
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in cp.items(section):
            kind = _SECTIONS[section].get(key)
            if kind is None:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            try:
                if kind == "bool":
                    value = cp.getboolean(section, key)
                elif kind == "int_or_all":
                    value = None if raw.strip().lower() == "all" else int(raw)
                else:
                    value = kind(raw)
            except ValueError:
                raise ConfigError(f"{path}: bad value for {key}: {raw!r}") from None
            if section == "data" and kind is str:
                value = str((base / value).resolve()) if not os.path.isabs(value) else value
            flat[key] = value
    return flat


def resolve_config(flat, args):
    """Merge config values with command-line overrides into a TrainConfig."""
    from hypdis.objectives import LossWeights
    from hypdis.trainer import TrainConfig

    merged = dict(flat)
    for key in ("task", "variant", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    if "task" not in merged:
        raise ConfigError("no task given (use --task or [train] task)")
    fields = {k: v for k, v in merged.items() if k not in _SECTIONS["data"] and k not in _WEIGHT_KEYS}
    try:
        weights = LossWeights(**{k: merged[k] for k in _WEIGHT_KEYS if k in merged})
        return TrainConfig(weights=weights, **fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_data(flat, graph_override=None):
    """Return (graph, split or None, input files used)."""
    from hypdis import hetgraph as hg

    inputs = []
    try:
        if graph_override or flat.get("graph"):
            d = Path(graph_override or flat["graph"])
            if not d.is_dir():
                raise FileNotFoundError(f"graph directory not found: {d}")
            g = hg.load_graph_dir(d)
            inputs = sorted(str(p) for p in d.glob("*.tsv"))
        elif flat.get("nodes") or flat.get("edges"):
            if not (flat.get("nodes") and flat.get("edges")):
                raise ConfigError("[data] needs both nodes and edges")
            g = hg.load_graph(flat["nodes"], flat["edges"], label_file=flat.get("labels"))
            inputs = [flat["nodes"], flat["edges"]] + ([flat["labels"]] if flat.get("labels") else [])
        elif flat.get("synthetic"):
            g = hg.synthetic_hetero_sbm(seed=flat.get("synthetic_seed", 0))
        else:
            raise ConfigError("no data given: set [data] graph, nodes/edges, or synthetic = true")
        split = None
        if flat.get("splits"):
            if not os.path.exists(flat["splits"]):
                raise FileNotFoundError(f"splits file not found: {flat['splits']}")
            split = hg.read_splits(g, flat["splits"])
            inputs.append(flat["splits"])
    except (FileNotFoundError, hg.GraphFormatError, KeyError) as exc:
        raise DataError(str(exc)) from None
    return g, split, inputs


# ---------------------------------------------------------------------------
# manifests


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out, command, config, seeds, inputs, argv):
    """Record resolved config, seeds, input digests and a content hash of the outputs."""
    out = Path(out)
    outputs = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            outputs[str(p.relative_to(out))] = sha256_file(p)
    digest = hashlib.sha256("".join(f"{k}\0{v}\n" for k, v in outputs.items()).encode()).hexdigest()
    manifest = {
        "command": command,
        "argv": argv,
        "config": config,
        "seeds": list(seeds),
        "inputs": {p: sha256_file(p) for p in inputs},
        "outputs": outputs,
        "output_digest": digest,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _seeds(base, repeat):
    if repeat < 1:
        raise ConfigError("--repeat must be at least 1")
    return [base + k for k in range(repeat)]


# ---------------------------------------------------------------------------
# commands


def cmd_train(args):
    from hypdis.evaluation import MetricReport
    from hypdis.trainer import save_checkpoint, score, train

    flat = read_config(args.config)
    cfg = resolve_config(flat, args)
    g, split, inputs = load_data(flat)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = _seeds(cfg.seed, args.repeat)
    report = MetricReport(cfg.task, label=cfg.variant)
    data_meta = {k: v for k, v in flat.items() if k in _SECTIONS["data"]}
    for seed in seeds:
        run_cfg = cfg.replace(seed=seed)
        suffix = "" if len(seeds) == 1 else f"_seed{seed}"
        log.info("training %s/%s seed %d", run_cfg.task, run_cfg.variant, seed)
        result = train(g, run_cfg, split=split, history_path=out / f"metrics{suffix}.jsonl")
        result.checkpoint.meta["data"] = data_meta
        save_checkpoint(result.checkpoint, out / f"checkpoint{suffix}.bin")
        for src, mets in score(result, "test").items():
            for m, v in mets.items():
                report.add(src, m, v)
    _write_report(out, report)
    write_manifest(out, "train", {**cfg.to_dict(), "data": data_meta}, seeds, inputs, _argv(args))
    print(report.to_text())
    return 0


def _write_report(out, report, stem="report"):
    with open(Path(out) / f"{stem}.json", "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    with open(Path(out) / f"{stem}.txt", "w", encoding="utf-8") as fh:
        fh.write(report.to_text() + "\n")


def _checkpoint_list(args):
    paths = list(args.ckpt or [])
    if args.run:
        paths += sorted(str(p) for p in Path(args.run).glob("checkpoint*.bin"))
    return paths


def _load_result(path, flat_override=None, graph_override=None):
    from hypdis.trainer import TASKS, CheckpointError, TrainConfig, load_checkpoint, result_from_checkpoint

    if not os.path.exists(path):
        raise DataError(f"checkpoint not found: {path}")
    try:
        ckpt = load_checkpoint(path)
    except CheckpointError as exc:
        raise DataError(str(exc)) from None
    flat = dict(ckpt.meta.get("data", {}))
    if flat_override:
        cfg_ck = TrainConfig.from_dict(ckpt.meta["config"])
        for key in ("layers", "d0", "hidden", "out_dim", "head_hidden", "task", "variant"):
            if key not in flat_override:
                continue
            wanted = TASKS.get(flat_override[key]) if key == "task" else flat_override[key]
            if getattr(cfg_ck, key) != wanted:
                raise ConfigError(f"checkpoint {path} has {key}={getattr(cfg_ck, key)!r}, "
                                  f"config says {flat_override[key]!r}")
        flat.update({k: v for k, v in flat_override.items() if k in _SECTIONS["data"]})
    g, split, inputs = load_data(flat, graph_override)
    try:
        result = result_from_checkpoint(g, ckpt, split)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"checkpoint {path} does not match the graph: {exc}") from None
    return result, inputs + [path]


def cmd_eval(args):
    from hypdis.evaluation import MetricReport
    from hypdis.trainer import score, train

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = _checkpoint_list(args)
    flat = read_config(args.config)
    inputs, seeds, config = [], [], {}
    if paths:
        report = None
        for p in paths:
            result, used = _load_result(p, flat or None)
            inputs += used
            if report is None:
                report = MetricReport(result.model.cfg.task, label=result.model.cfg.variant)
                config = result.model.cfg.to_dict()
            seeds.append(result.model.cfg.seed)
            for src, mets in score(result, args.part).items():
                for m, v in mets.items():
                    report.add(src, m, v)
    else:
        if not args.config:
            raise ConfigError("eval needs --ckpt/--run or --config")
        cfg = resolve_config(flat, args)
        g, split, inputs = load_data(flat)
        seeds = _seeds(cfg.seed, args.repeat)
        report = MetricReport(cfg.task, label=cfg.variant)
        config = cfg.to_dict()
        for seed in seeds:
            result = train(g, cfg.replace(seed=seed), split=split)
            for src, mets in score(result, args.part).items():
                for m, v in mets.items():
                    report.add(src, m, v)
    _write_report(out, report)
    write_manifest(out, "eval", config, seeds, inputs, _argv(args))
    print(report.to_text())
    return 0


def cmd_analyze(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    handler = {"hyperbolicity": _an_hyperbolicity, "mi-probe": _an_mi_probe,
               "robustness": _an_robustness, "export-embeddings": _an_export}[args.analysis]
    payload, config, seeds, inputs = handler(args, out)
    if payload is not None:
        with open(out / f"{args.analysis}.json", "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(json.dumps(payload, indent=2, sort_keys=True))
    write_manifest(out, f"analyze {args.analysis}", config, seeds, inputs, _argv(args))
    return 0


def _an_hyperbolicity(args, out):
    from hypdis.hetgraph import gromov_hyperbolicity, largest_component_distances

    flat = read_config(args.config)
    g, _, inputs = load_data(flat, args.graph)
    n = largest_component_distances(g).shape[0]
    delta = gromov_hyperbolicity(g, samples=args.samples, seed=args.seed or 0)
    from math import comb
    total = comb(n, 4)
    exhaustive = args.samples is None or args.samples >= total
    payload = {"delta": delta, "component_nodes": n, "samples": total if exhaustive else args.samples,
               "exhaustive": exhaustive, "seed": args.seed or 0}
    return payload, {"samples": args.samples}, [args.seed or 0], inputs


def _probe(result, seed):
    from hypdis import autodiff as ad
    from hypdis.evaluation import mi_probe

    model = result.model
    if model.st is None or model.he is None:
        raise ConfigError("mi-probe needs a checkpoint with both encoders")
    with ad.no_grad():
        emb = model.embed(result.mp_graph, model.prepare(result.mp_graph))
    c = float(ad._val(model.c_last))
    r = mi_probe(ad._val(emb["st"]), ad._val(emb["he"]), c=c, geom=model.geom, seed=seed)
    return {"estimate": r.estimate, "std": r.std, "fit_loglik": r.fit_loglik,
            "variant": model.cfg.variant, "seed": model.cfg.seed}


def _an_mi_probe(args, out):
    if not args.ckpt:
        raise ConfigError("mi-probe needs --ckpt")
    seed = args.seed or 0
    res_a, inputs = _load_result(args.ckpt[0])
    payload = {"a": _probe(res_a, seed)}
    if args.ckpt_b:
        res_b, more = _load_result(args.ckpt_b)
        inputs += more
        payload["b"] = _probe(res_b, seed)
        a, b = payload["a"]["estimate"], payload["b"]["estimate"]
        payload["difference"] = a - b
        payload["relative_reduction"] = (b - a) / abs(b) if b != 0 else None
    return payload, {"probe_seed": seed}, [seed], inputs


def _an_robustness(args, out):
    from hypdis.evaluation import robustness_sweep

    flat = read_config(args.config)
    cfg = resolve_config(flat, args)
    g, split, inputs = load_data(flat)
    try:
        ratios = [float(r) for r in args.ratios.split(",")]
    except ValueError:
        raise ConfigError(f"bad --ratios {args.ratios!r}") from None
    seeds = _seeds(cfg.seed, args.repeat)
    try:
        sweep = robustness_sweep(g, cfg, args.kind, ratios, seeds=seeds, split=split)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    payload = {"kind": args.kind, "task": cfg.task,
               "series": [{"ratio": r, "scores": rep.summary()} for r, rep in sweep]}
    with open(out / "robustness.txt", "w", encoding="utf-8") as fh:
        for r, rep in sweep:
            fh.write(f"# ratio {r}\n{rep.to_text()}\n")
    return payload, cfg.to_dict(), seeds, inputs


def _an_export(args, out):
    from hypdis import autodiff as ad
    from hypdis.layers import write_embeddings

    if not args.ckpt:
        raise ConfigError("export-embeddings needs --ckpt")
    result, inputs = _load_result(args.ckpt[0])
    model = result.model
    with ad.no_grad():
        emb = model.embed(result.mp_graph, model.prepare(result.mp_graph))
    sources = model.sources(emb)
    if args.source not in sources:
        raise ConfigError(f"source {args.source!r} not available for variant {model.cfg.variant}")
    path = out / f"embeddings_{args.source}.txt"
    write_embeddings(path, result.graph.node_ids, sources[args.source], float(ad._val(model.c_last)))
    return None, {"source": args.source}, [model.cfg.seed], inputs


# ---------------------------------------------------------------------------
# parser


def _argv(args):
    return getattr(args, "_argv", [])


def _common(p, task=True):
    p.add_argument("--config", help="config file with [model] [loss] [train] [data] sections")
    if task:
        p.add_argument("--task", choices=["nc", "lp"], help="node classification or link prediction")
        p.add_argument("--variant", choices=["full", "wo_st", "wo_he", "wo_cl", "wo_ball",
                                             "with_cl_prime", "wo_disentangling"],
                       help="model variant (default full)")
    p.add_argument("--seed", type=int, help="base random seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, help="cap on BLAS worker threads")
    p.add_argument("--repeat", type=int, default=1, help="number of seeds (seed, seed+1, ...)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hypdis", description="Train, evaluate and analyze hyperbolic disentangled graph encoders.",
        epilog="Exit codes: 0 success, 1 configuration error, 2 data error, 3 training diverged. "
               "Set HYPDIS_LOG=error|info|debug for logging.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoint, metrics and report")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score checkpoints (or train --repeat seeds) on a split")
    _common(p)
    p.add_argument("--ckpt", action="append", help="checkpoint file (repeatable)")
    p.add_argument("--run", help="directory holding checkpoint*.bin files")
    p.add_argument("--part", choices=["val", "test"], default="test", help="split to score")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="MI probe, robustness sweep, hyperbolicity, embedding export")
    asub = p.add_subparsers(dest="analysis", required=True)
    a = asub.add_parser("hyperbolicity", help="Gromov delta of the largest component")
    _common(a, task=False)
    a.add_argument("--graph", help="graph directory (overrides [data] graph)")
    a.add_argument("--samples", type=int, help="random quadruples (default: exhaustive)")
    a.set_defaults(func=cmd_analyze)
    a = asub.add_parser("mi-probe", help="fresh CLUB probe between structural and semantic embeddings")
    _common(a, task=False)
    a.add_argument("--ckpt", action="append", help="checkpoint to probe")
    a.add_argument("--ckpt-b", help="second checkpoint for a paired comparison")
    a.set_defaults(func=cmd_analyze)
    a = asub.add_parser("robustness", help="retrain under structural or semantic perturbation")
    _common(a)
    a.add_argument("--kind", choices=["structural", "semantic", "semantic-node"], default="structural")
    a.add_argument("--ratios", default="0,0.1,0.2,0.3", help="comma-separated perturbation ratios")
    a.set_defaults(func=cmd_analyze)
    a = asub.add_parser("export-embeddings", help="write embeddings in the text export format")
    _common(a, task=False)
    a.add_argument("--ckpt", action="append", help="checkpoint to embed with")
    a.add_argument("--source", choices=["z", "st", "se"], default="z", help="embedding source")
    a.set_defaults(func=cmd_analyze)
    return parser


def _set_threads(n):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args._argv = argv
    level = os.environ.get("HYPDIS_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), format="%(levelname)s %(message)s")
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be positive", file=sys.stderr)
            return EXIT_CONFIG
        _set_threads(args.threads)
    from hypdis.trainer import TrainingDivergedError

    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
