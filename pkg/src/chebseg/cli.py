"""``chebseg`` command line: one binary, one subcommand per pipeline stage.

Settings come from a YAML file with sections ``graph``, ``model``, ``train``,
``densify``, ``data`` and ``run``; a flag beats the file, which beats the
built-in default. Each run echoes its effective settings to ``<out>/config.yaml``,
and that echo passed back through ``--config`` repeats the run.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from .core import S3DIS_LABELS, SEMANTIC3D_LABELS, SYNTHETIC_LABELS, PointCloud
from .graph import DegenerateBlockError, GraphConfig, build_adjacency, write_graph
from .io import (DensifyConfig, SceneSpec, densify_labels, generate_scene, list_clouds, random_scene_spec,
                 read_xyz_label, write_cloud, write_predictions)
from .io.readers import FORMATS, S3DIS, XYZL
from .nn import ModelConfig
from .pipeline import (TrainConfig, evaluate, format_sweep, grid_cells, load_model, partition_blocks, predict,
                       sweep_cheb_order, train)

log = logging.getLogger("chebseg")

LABEL_SETS = {"synthetic": SYNTHETIC_LABELS, "semantic3d": SEMANTIC3D_LABELS, "s3dis": S3DIS_LABELS}
DATA_DEFAULTS = {"train": None, "eval": None, "format": S3DIS, "labels": "synthetic", "checkpoint": None,
                 "input": None, "sparse": None, "dense": None}
RUN_DEFAULTS = {"threads": None}
SECTIONS = {"graph": GraphConfig, "model": ModelConfig, "train": TrainConfig, "densify": DensifyConfig}


class CliError(Exception):
    pass


def _ints(text):
    return [int(t) for t in str(text).split(",") if t.strip()]


# flag dest -> (section, key, parser)
OVERRIDES = {
    "seed": ("train", "seed", int),
    "variant": ("model", "variant", str),
    "threads": ("run", "threads", int),
    "epochs": ("train", "epochs", int),
    "batch_size": ("train", "batch_size", int),
    "micro_batch_size": ("train", "micro_batch_size", int),
    "lr": ("train", "learning_rate", float),
    "weight_decay": ("train", "weight_decay", float),
    "points_per_block": ("train", "points_per_block", int),
    "eval_every": ("train", "eval_every", int),
    "order": ("model", "order", int),
    "mlp_widths": ("model", "mlp_widths", _ints),
    "gcn_hidden": ("model", "gcn_hidden", _ints),
    "dtype": ("model", "dtype", str),
    "k": ("graph", "k", int),
    "kappa": ("graph", "kappa", float),
    "data": ("data", "train", str),
    "eval_data": ("data", "eval", str),
    "format": ("data", "format", str),
    "labels": ("data", "labels", str),
    "checkpoint": ("data", "checkpoint", str),
    "densify_k": ("densify", "k", int),
    "radius": ("densify", "radius", float),
}


def _defaults() -> dict:
    cfg = {name: {f.name: f.default for f in fields(cls)} for name, cls in SECTIONS.items()}
    cfg["model"]["mlp_widths"] = list(ModelConfig.mlp_widths)
    cfg["model"]["gcn_hidden"] = list(ModelConfig.gcn_hidden)
    cfg["model"]["class_names"] = []
    cfg["model"]["num_classes"] = None  # follows the label set unless set
    cfg["data"] = dict(DATA_DEFAULTS)
    cfg["run"] = dict(RUN_DEFAULTS)
    return cfg


def _merge(cfg: dict, layer: dict, origin: str) -> None:
    for section, values in layer.items():
        if section not in cfg:
            raise CliError(f"{origin}: unknown section {section!r}; expected one of {sorted(cfg)}")
        if not isinstance(values, dict):
            raise CliError(f"{origin}: section {section!r} must be a mapping")
        unknown = set(values) - set(cfg[section])
        if unknown:
            raise CliError(f"{origin}: unknown keys in {section!r}: {sorted(unknown)}")
        cfg[section].update(values)


def load_config_file(path) -> dict:
    if not os.path.isfile(path):
        raise CliError(f"config file not found: {path}")
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise CliError(f"{path}: top level must be a mapping")
    data.pop("command", None)  # present in run echoes
    return data


def effective_config(args, base: dict | None = None) -> dict:
    """default < ``base`` (e.g. a checkpoint's stored settings) < config file < flags."""
    cfg = _defaults()
    if base:
        _merge(cfg, base, "checkpoint")
    if getattr(args, "config", None):
        _merge(cfg, load_config_file(args.config), args.config)
    for dest, (section, key, _) in OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is not None:
            cfg[section][key] = value
    return cfg


def _build(cfg: dict):
    if cfg["data"]["format"] not in FORMATS:
        raise CliError(f"unknown format {cfg['data']['format']!r}; expected one of {FORMATS}")
    labels = _label_set(cfg)
    model = dict(cfg["model"])
    if model["num_classes"] is None:
        model["num_classes"] = labels.num_classes
        model["class_names"] = list(labels.names)
    try:
        return (GraphConfig(**cfg["graph"]), ModelConfig(**model),
                TrainConfig(**cfg["train"]), DensifyConfig(**cfg["densify"]))
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid configuration: {exc}") from exc


def _label_set(cfg):
    name = cfg["data"]["labels"]
    if name not in LABEL_SETS:
        raise CliError(f"unknown label set {name!r}; expected one of {sorted(LABEL_SETS)}")
    return LABEL_SETS[name]


def _echo(cfg: dict, out_dir: str, command: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    doc = {"command": command, **cfg}
    with open(os.path.join(out_dir, "config.yaml"), "w") as fh:
        yaml.safe_dump(_plain(doc), fh, sort_keys=True)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _require(cfg, key, flag):
    value = cfg["data"][key]
    if not value:
        raise CliError(f"missing input: pass {flag} or set data.{key} in the config file")
    return value


def _read_clouds(path, fmt):
    if os.path.isdir(path):
        files = list_clouds(path, fmt)
        if not files:
            raise CliError(f"no .txt point files in {path}")
    elif os.path.isfile(path):
        files = [path]
    else:
        raise CliError(f"input not found: {path}")
    return [read_xyz_label(f, fmt) for f in files]


def _check_labels(clouds, num_classes, labels_name, where):
    for cloud in clouds:
        if cloud.labels is None:
            continue
        top = int(cloud.labels.max(initial=-1))
        if top >= num_classes:
            raise CliError(f"{where}: label {top} is outside label set {labels_name!r} "
                           f"({num_classes} classes)")


# subcommands --------------------------------------------------------------


def cmd_gen_synthetic(args) -> int:
    """Scenes from a YAML spec (one scene, or ``scenes: [...]``) or ``--count`` random ones."""
    out = args.out
    if args.spec:
        if not os.path.isfile(args.spec):
            raise CliError(f"scene spec not found: {args.spec}")
        with open(args.spec) as fh:
            doc = yaml.safe_load(fh) or {}
        raw = doc["scenes"] if isinstance(doc, dict) and "scenes" in doc else [doc]
        specs = [SceneSpec.from_dict(d) for d in raw]
        if args.seed is not None:
            for i, s in enumerate(specs):
                s.seed = args.seed + i
    elif args.count:
        rng = np.random.default_rng(args.seed if args.seed is not None else 0)
        specs = [random_scene_spec(rng, target_points=args.points) for _ in range(args.count)]
    else:
        raise CliError("pass a scene spec file or --count N")
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "scenes.yaml"), "w") as fh:
        yaml.safe_dump({"scenes": [_plain(s.to_dict()) for s in specs]}, fh, sort_keys=True)
    for i, spec in enumerate(specs):
        cloud = generate_scene(spec)
        write_cloud(cloud, os.path.join(out, f"scene_{i:03d}.txt"), args.format)
        log.info("scene %d: %d points", i, len(cloud))
    return 0


def cmd_encode_graph(args) -> int:
    cfg = effective_config(args)
    cfg["data"]["input"] = args.input
    graph_cfg, _, train_cfg, _ = _build(cfg)
    cloud = _read_clouds(args.input, cfg["data"]["format"])[0]
    if len(cloud) == 0:
        raise CliError(f"{args.input} holds no points")
    _echo(cfg, args.out, "encode-graph")
    empty = written = skipped = 0
    for (i, j), members in grid_cells(cloud.xyz, train_cfg.block_size_m).items():
        if len(members) < 2:
            continue
        try:
            adj, sigma = build_adjacency(cloud.xyz[members], graph_cfg, return_sigma=True)
        except DegenerateBlockError as exc:
            log.warning("block (%d, %d) skipped: %s", i, j, exc)
            skipped += 1
            continue
        write_graph(os.path.join(args.out, f"block_{i}_{j}.graph"), adj, graph_cfg.k, graph_cfg.kappa, sigma)
        written += 1
        empty += adj.nnz == 0
    if empty:
        log.warning("%d of %d blocks have no edges (kappa=%g)", empty, written, graph_cfg.kappa)
    print(f"wrote {written} block graphs to {args.out} ({skipped} skipped)")
    return 0


def cmd_train(args) -> int:
    cfg = effective_config(args)
    graph_cfg, model_cfg, train_cfg, _ = _build(cfg)
    fmt = cfg["data"]["format"]
    train_set = _read_clouds(_require(cfg, "train", "--data"), fmt)
    eval_set = _read_clouds(cfg["data"]["eval"], fmt) if cfg["data"]["eval"] else None
    for split in (train_set, eval_set or []):
        _check_labels(split, model_cfg.num_classes, cfg["data"]["labels"], "data")
    _echo(cfg, args.out, "train")
    with open(os.path.join(args.out, "train.log"), "w") as log_fh:
        result = train(train_set, train_cfg, model_cfg, graph_cfg, eval_set=eval_set, out_dir=args.out,
                       log_fh=log_fh)
    log.info("trained %d steps in %.1fs", len(result.history), result.train_seconds)
    if result.metrics:
        print(f"final test mIoU {result.metrics[-1]['mean_iou']:.6f}")
    return 0


def _from_checkpoint(args):
    if not args.checkpoint:
        raise CliError("missing --checkpoint")
    if not os.path.isfile(args.checkpoint):
        raise CliError(f"checkpoint not found: {args.checkpoint}")
    model, meta = load_model(args.checkpoint)
    stored = {"graph": meta["graph"], "train": {k: v for k, v in meta["train"].items() if k != "checkpoint"},
              "model": {k: meta["model"][k] for k in ("variant", "order")}}
    cfg = effective_config(args, stored)
    cfg["model"] = {**cfg["model"], **meta["model"]}
    return model, cfg


def cmd_eval(args) -> int:
    model, cfg = _from_checkpoint(args)
    graph_cfg, _, train_cfg, _ = _build(cfg)
    labels = _label_set(cfg)
    if labels.num_classes != model.cfg.num_classes:
        raise CliError(f"label set {cfg['data']['labels']!r} has {labels.num_classes} classes but the "
                       f"checkpoint model predicts {model.cfg.num_classes} classes")
    clouds = _read_clouds(_require(cfg, "eval", "--data"), cfg["data"]["format"])
    if any(c.labels is None for c in clouds):
        raise CliError("evaluation data must be labelled")
    _check_labels(clouds, labels.num_classes, cfg["data"]["labels"], "data")
    _echo(cfg, args.out, "eval")
    rng = np.random.default_rng(train_cfg.seed)
    blocks = [b for c in clouds for b in partition_blocks(c, train_cfg, rng)]
    report = evaluate(model, blocks, batch_size=train_cfg.micro_batch_size, graph_cfg=graph_cfg)
    with open(os.path.join(args.out, "metrics.json"), "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    print(f"mIoU {report.mean_iou:.6f} mean_acc {report.mean_accuracy:.6f} OA {report.overall_accuracy:.6f}")
    return 0


def cmd_predict(args) -> int:
    model, cfg = _from_checkpoint(args)
    cfg["data"]["input"] = args.input
    graph_cfg, _, train_cfg, _ = _build(cfg)
    cloud = _read_clouds(args.input, cfg["data"]["format"])[0]
    _echo(cfg, args.out, "predict")
    pred = predict(model, cloud, train_cfg, graph_cfg, batch_size=train_cfg.micro_batch_size)
    seen = np.flatnonzero(pred.labels >= 0)
    path = os.path.join(args.out, "predictions.txt")
    write_predictions(cloud.subset(seen), pred.labels[seen], path)
    log.info("labelled %d of %d points (the rest were not sampled)", len(seen), len(cloud))
    print(path)
    return 0


def cmd_densify(args) -> int:
    cfg = effective_config(args)
    cfg["data"]["sparse"], cfg["data"]["dense"] = args.sparse, args.dense
    _, _, _, dens_cfg = _build(cfg)
    sparse = _read_clouds(args.sparse, XYZL)[0]
    dense = _read_clouds(args.dense, cfg["data"]["format"])[0]
    _echo(cfg, args.out, "densify")
    labels = densify_labels(sparse, dense, dens_cfg)
    path = os.path.join(args.out, "dense.txt")
    write_predictions(PointCloud(dense.xyz), labels, path)
    print(path)
    return 0


def cmd_sweep_k(args) -> int:
    cfg = effective_config(args)
    graph_cfg, model_cfg, train_cfg, _ = _build(cfg)
    fmt = cfg["data"]["format"]
    train_set = _read_clouds(_require(cfg, "train", "--data"), fmt)
    test_set = _read_clouds(_require(cfg, "eval", "--eval-data"), fmt)
    orders = _ints(args.orders)
    cfg["run"]["orders"] = orders
    _echo(cfg, args.out, "sweep-k")
    rows = sweep_cheb_order(orders, train_set, test_set, train_cfg, model_cfg, graph_cfg)
    table = format_sweep(rows)
    with open(os.path.join(args.out, "sweep.txt"), "w") as fh:
        fh.write(table)
    sys.stdout.write(table)
    return 0


# parser -------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML settings file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--threads", type=int, help="BLAS thread cap; 1 gives bitwise reproducible runs")
    p.add_argument("--variant", choices=["full", "gcn-only"])


def _settings(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("overrides")
    g.add_argument("--format", choices=FORMATS)
    g.add_argument("--labels", choices=sorted(LABEL_SETS))
    g.add_argument("--k", type=int, help="kNN neighbours per point")
    g.add_argument("--kappa", type=float, help="edge distance cut-off (m)")
    g.add_argument("--points-per-block", type=int)
    g.add_argument("--order", type=int, help="Chebyshev order K")
    g.add_argument("--dtype", choices=["float32", "float64"])
    g.add_argument("--mlp-widths", type=_ints)
    g.add_argument("--gcn-hidden", type=_ints)
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--micro-batch-size", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--weight-decay", type=float)
    g.add_argument("--eval-every", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chebseg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write synthetic labelled scenes")
    _common(p)
    p.add_argument("spec", nargs="?", help="YAML scene spec")
    p.add_argument("--count", type=int, help="number of random scenes when no spec is given")
    p.add_argument("--points", type=int, default=20000, help="target points per random scene")
    p.add_argument("--format", choices=[f for f in FORMATS if f != XYZL], default=S3DIS)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("encode-graph", help="write one kNN graph file per grid cell")
    _common(p)
    _settings(p)
    p.add_argument("input", help="point file")
    p.set_defaults(func=cmd_encode_graph)

    p = sub.add_parser("train", help="train a model")
    _common(p)
    _settings(p)
    p.add_argument("--data", help="training point file or directory")
    p.add_argument("--eval-data", help="held-out point file or directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics of a checkpoint on labelled data")
    _common(p)
    _settings(p)
    p.add_argument("--checkpoint")
    p.add_argument("--data", dest="eval_data", help="labelled point file or directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="labels for the sampled points of one cloud")
    _common(p)
    _settings(p)
    p.add_argument("--checkpoint")
    p.add_argument("input", help="point file")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("densify", help="transfer sparse labels to a dense cloud")
    _common(p)
    p.add_argument("--format", choices=FORMATS, help="format of the dense cloud")
    p.add_argument("--densify-k", type=int)
    p.add_argument("--radius", type=float)
    p.add_argument("sparse", help="xyzl file of labelled points")
    p.add_argument("dense", help="point file to label")
    p.set_defaults(func=cmd_densify)

    p = sub.add_parser("sweep-k", help="train one model per Chebyshev order and tabulate")
    _common(p)
    _settings(p)
    p.add_argument("--data")
    p.add_argument("--eval-data")
    p.add_argument("--orders", default="1,2,3,4")
    p.set_defaults(func=cmd_sweep_k)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "variant", None):
        args.variant = args.variant.replace("-", "_")
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("chebseg")
    saved = root.level, root.propagate
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    root.propagate = False
    try:
        threads = args.threads
        if threads is None and getattr(args, "config", None):
            threads = (load_config_file(args.config).get("run") or {}).get("threads")
        if threads is not None and threads < 1:
            raise CliError(f"--threads must be >= 1, got {threads}")
        with threadpool_limits(limits=threads):
            return args.func(args)
    except Exception as exc:  # every failure becomes a diagnostic plus exit code 1
        print(f"chebseg {args.command}: error: {exc}", file=sys.stderr)
        return 1
    finally:
        root.removeHandler(handler)
        root.setLevel(saved[0])
        root.propagate = saved[1]


if __name__ == "__main__":
    sys.exit(main())
