"""Command-line entry point: ``leafcontrast <subcommand> [flags]``.

Every subcommand resolves its parameters as defaults < ``--config`` JSON <
explicit flags, writes the resolved record to a JSON sidecar before doing
any work, and can be rerun from that sidecar alone.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .augment import ViewConfig, make_views
from .cloud import SynthPlantParams, load_cloud, plant_fixtures, save_cloud, synth_plant, two_leaf_overlap
from .cluster import (
    PostprocessConfig,
    agglomerative_cluster,
    dbscan,
    graph_cut_cluster,
    load_assignment,
    radius_decremental_cluster,
    save_assignment,
)
from .errors import InputError
from .evaluation import (
    IOU_THRESHOLDS,
    METHODS,
    NOISE_KINDS,
    SweepConfig,
    mean_average_precision,
    noise_sweep,
    summarize_sweep,
    write_summary,
    write_sweep,
)
from .geodesy import (
    DEFAULT_BLOCK,
    DEFAULT_EPSILON,
    DEFAULT_K,
    DEFAULT_TAU,
    apsp_sparse,
    build_knn_graph,
    euclidean_distance_matrix,
    floyd_warshall,
    init_distance_matrix,
    similarity_matrix,
)
from .loss import DISCREPANCIES, TARGETS, LossConfig, build_target, contrastive_loss, loss_gradient, optimize_embeddings
from .matrix_io import load_matrix, save_matrix
from .plot import emit_plot

log = logging.getLogger("leafcontrast")

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2
HELP = {
    "synth": "write a synthetic labeled plant",
    "augment": "build one or two augmented views",
    "graph": "write the kNN graph edge list",
    "distances": "all-pairs distance matrix",
    "similarity": "normalized inverse-distance similarity target",
    "loss": "evaluate the contrastive loss (and gradient)",
    "optimize": "fit free embeddings by gradient descent",
    "cluster": "instance assignment from embeddings",
    "eval": "mAP of an assignment against cloud labels",
    "sweep": "noise sweep over perfect embeddings, with plot",
    "plot": "render a sweep table to SVG",
}
COMMANDS = tuple(HELP)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _csv_list(kind):
    def parse(text):
        try:
            return [kind(t) for t in text.split(",") if t.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


# ------------------------------------------------------------ parameters
#
# Each subcommand declares (key, flags, argparse kwargs, default). Flags are
# parsed with SUPPRESS so only those given explicitly override the config.

_COMMON = [
    ("seed", ("--seed",), dict(type=int), 0),
    ("threads", ("--threads",), dict(type=int), None),
    ("output", ("-o", "--output"), {}, None),
    ("echo_config", ("--echo-config",), dict(help="sidecar path (default: <output>.config.json)"), None),
]

_GRAPH_OPTS = [
    ("k", ("--k",), dict(type=int), DEFAULT_K),
    ("tau", ("--tau",), dict(type=float), DEFAULT_TAU),
]

_POST_OPTS = [
    ("gamma", ("--gamma",), dict(type=float, help="merge threshold"), 0.9),
    ("steps", ("--steps",), dict(type=int), 4),
    ("gamma_agg", ("--gamma-agg",), dict(type=float), 0.3),
    ("radial_plane", ("--radial-plane",), dict(choices=("xy", "3d")), "xy"),
] + _GRAPH_OPTS

PARAMS = {
    "synth": [
        ("fixture", ("--fixture",), dict(choices=("plant", "two-leaf")), "plant"),
        ("leaves", ("--leaves",), dict(type=int), 3),
        ("points_per_leaf", ("--points-per-leaf",), dict(type=int), 100),
        ("stem_points", ("--stem-points",), dict(type=int), 0),
        ("leaf_length", ("--leaf-length",), dict(type=float), 0.15),
        ("leaf_width", ("--leaf-width",), dict(type=float), 0.06),
        ("droop", ("--droop",), dict(type=float), 0.6),
        ("jitter", ("--jitter",), dict(type=float), 0.001),
    ],
    "augment": [
        ("input", ("input",), dict(nargs="?"), None),
        ("views", ("--views",), dict(type=int), 1),
        ("rotate", ("--rotate",), dict(type=float), 0.0),
        ("translate", ("--translate",), dict(type=float), 0.0),
        ("jitter", ("--jitter",), dict(type=float), 0.0),
        ("erase", ("--erase",), dict(type=float), 0.0),
        ("occlusion", ("--occlusion",), dict(type=json.loads, help="JSON object, e.g. '{}' for defaults"), None),
        ("distortion", ("--distortion",), dict(type=json.loads, help="JSON object, e.g. '{}' for defaults"), None),
        ("n_points", ("--n-points",), dict(type=int), None),
        ("second_output", ("--output2",), dict(help="second view when --views 2"), None),
        ("index_map", ("--index-map",), {}, None),
        ("record_draws", ("--record-draws",), dict(action="store_true"), False),
    ],
    "graph": [("input", ("input",), dict(nargs="?"), None)] + _GRAPH_OPTS,
    "distances": [
        ("input", ("input",), dict(nargs="?"), None),
        ("method", ("--method",), dict(choices=("fw", "sparse", "euclidean")), "fw"),
        ("block_size", ("--block-size",), dict(type=int), DEFAULT_BLOCK),
        ("format", ("--format",), dict(choices=("csv", "bin")), None),
    ] + _GRAPH_OPTS,
    "similarity": [
        ("input", ("input",), dict(nargs="?", help="cloud; omit when --distances is given"), None),
        ("distances", ("--distances",), dict(help="precomputed distance matrix"), None),
        ("method", ("--method",), dict(choices=("fw", "sparse", "euclidean")), "fw"),
        ("epsilon", ("--epsilon",), dict(type=float), DEFAULT_EPSILON),
        ("format", ("--format",), dict(choices=("csv", "bin")), None),
    ] + _GRAPH_OPTS,
    "loss": [
        ("embeddings", ("--embeddings",), dict(nargs="+", help="one file, or two for two views"), None),
        ("cloud", ("--cloud",), dict(help="geometry for euclidean/graph targets (view 0)"), None),
        ("target", ("--target",), dict(choices=TARGETS), "graph"),
        ("target_matrix", ("--target-matrix",), dict(help="use this matrix as the target"), None),
        ("discrepancy", ("--discrepancy",), dict(choices=DISCREPANCIES), "squared"),
        ("reduction", ("--reduction",), dict(choices=("mean", "sum")), "mean"),
        ("mask_diagonal", ("--mask-diagonal",), dict(action="store_true"), False),
        ("epsilon", ("--epsilon",), dict(type=float), DEFAULT_EPSILON),
        ("gradient", ("--gradient",), dict(nargs="+", help="one output per view"), None),
    ] + _GRAPH_OPTS,
    "optimize": [
        ("input", ("input",), dict(nargs="?"), None),
        ("target", ("--target",), dict(choices=TARGETS), "graph"),
        ("views", ("--views",), dict(type=int), 1),
        ("discrepancy", ("--discrepancy",), dict(choices=DISCREPANCIES), "squared"),
        ("epsilon", ("--epsilon",), dict(type=float), 0.05),
        ("n_points", ("--n-points",), dict(type=int), 10000),
        ("steps", ("--steps",), dict(type=int), 1000),
        ("learning_rate", ("--lr",), dict(type=float), 100.0),
        ("dim", ("--dim",), dict(type=int), 3),
        ("trace", ("--trace",), dict(help="loss trace CSV (default: <output stem>_trace.csv)"), None),
        ("indices", ("--indices",), dict(help="subsample indices (default: <output stem>_indices.csv)"), None),
    ] + _GRAPH_OPTS,
    "cluster": [
        ("input", ("input",), dict(nargs="?"), None),
        ("embeddings", ("--embeddings",), {}, None),
        ("indices", ("--indices",), dict(help="rows of the cloud the embeddings belong to"), None),
        ("method", ("--method",), dict(choices=METHODS), "radius"),
        ("eps", ("--eps",), dict(type=float), 0.5),
        ("min_pts", ("--min-pts",), dict(type=int), 10),
    ] + _POST_OPTS,
    "eval": [
        ("input", ("input",), dict(nargs="?", help="labeled cloud"), None),
        ("assignment", ("--assignment",), {}, None),
        ("indices", ("--indices",), {}, None),
    ],
    "sweep": [
        ("inputs", ("inputs",), dict(nargs="*", help="labeled clouds (default: synthetic rosettes)"), None),
        ("methods", ("--methods",), dict(type=_csv_list(str)), ["radius", "graphcut", "dbscan"]),
        ("noise", ("--noise",), dict(type=_csv_list(str)), list(NOISE_KINDS)),
        ("magnitudes", ("--magnitudes",), dict(type=_csv_list(float)), [0.0, 0.2, 0.4, 0.6]),
        ("reps", ("--reps",), dict(type=int), 5),
        ("plants", ("--plants",), dict(type=int), 20),
        ("points_per_leaf", ("--points-per-leaf",), dict(type=int), 150),
        ("dim", ("--dim",), dict(type=int, help="embedding width (default: leaf count)"), None),
        ("sigma", ("--sigma",), dict(type=float), None),
        ("eps", ("--eps",), dict(type=float), 0.5),
        ("min_pts", ("--min-pts",), dict(type=int), 10),
        ("plot", ("--plot",), dict(help="SVG path (default: <output stem>.svg)"), None),
        ("summary", ("--summary",), dict(help="summary CSV (default: <output stem>_summary.csv)"), None),
    ] + _POST_OPTS,
    "plot": [("table", ("table",), dict(nargs="?", help="sweep CSV"), None)],
}


def _defaults(cmd):
    return {key: default for key, _, _, default in _COMMON + PARAMS[cmd]}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="leafcontrast", description="Leaf instance segmentation toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log one line per stage")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for cmd in COMMANDS:
        p = sub.add_parser(cmd, help=HELP[cmd])
        p.add_argument("--config", help="JSON parameter file; flags override it")
        for key, flags, kw, _ in _COMMON + PARAMS[cmd]:
            kw = dict(kw, default=argparse.SUPPRESS)
            if flags[0].startswith("-"):
                p.add_argument(*flags, dest=key, **kw)
            else:
                p.add_argument(key, **kw)
    return parser


def resolve(cmd: str, flags: dict, config_path=None) -> dict:
    """Merge defaults, the JSON config file and explicit flags."""
    cfg = _defaults(cmd)
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"{config_path}: line {exc.lineno}: {exc.msg}") from None
        if not isinstance(loaded, dict):
            raise InputError(f"{config_path}: expected a JSON object")
        if loaded.pop("command", cmd) != cmd:
            raise InputError(f"{config_path}: config is for another subcommand")
        loaded.pop("draws", None)
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise InputError(f"{config_path}: unknown keys {sorted(unknown)}")
        cfg.update(loaded)
    cfg.update(flags)
    return cfg


def _sidecar_path(cfg):
    if cfg.get("echo_config"):
        return Path(cfg["echo_config"])
    if cfg.get("output"):
        return Path(str(cfg["output"]) + ".config.json")
    return None


def _echo(cmd, cfg, extra=None):
    record = {"command": cmd, **cfg, **(extra or {})}
    text = json.dumps(record, indent=2, sort_keys=True) + "\n"
    path = _sidecar_path(cfg)
    if path is None:
        sys.stderr.write(text)
    else:
        path.write_text(text)


def _need(cfg, *keys):
    for key in keys:
        if cfg.get(key) in (None, []):
            raise InputError(f"missing required parameter '{key}'")


def _derived(cfg, key, suffix):
    if cfg.get(key):
        return Path(cfg[key])
    out = Path(cfg["output"])
    return out.with_name(out.stem + suffix)


def _load_indices(path):
    idx = load_matrix(path).ravel()
    if not np.all(idx == np.round(idx)):
        raise InputError(f"{path}: indices must be integers")
    return idx.astype(np.int64)


def _subset(cloud, indices_path):
    if not indices_path:
        return cloud
    idx = _load_indices(indices_path)
    if idx.size and (idx.min() < 0 or idx.max() >= len(cloud)):
        raise InputError(f"{indices_path}: index out of range for {len(cloud)} points")
    return cloud.take(idx)


# ----------------------------------------------------------- subcommands


def cmd_synth(cfg):
    _need(cfg, "output")
    if cfg["fixture"] == "two-leaf":
        cloud, _ = two_leaf_overlap()
    else:
        cloud = synth_plant(SynthPlantParams(
            n_leaves=cfg["leaves"], points_per_leaf=cfg["points_per_leaf"],
            stem_points=cfg["stem_points"], leaf_length=cfg["leaf_length"],
            leaf_width=cfg["leaf_width"], droop_angle=cfg["droop"],
            position_jitter=cfg["jitter"], seed=cfg["seed"]))
    save_cloud(cloud, cfg["output"])
    log.info("synth: wrote %d points", len(cloud))


def cmd_augment(cfg):
    _need(cfg, "input", "output")
    vc = ViewConfig(n_views=cfg["views"], rotate=cfg["rotate"], translate=cfg["translate"],
                    jitter=cfg["jitter"], erase=cfg["erase"], occlusion=cfg["occlusion"],
                    distortion=cfg["distortion"], n_points=cfg["n_points"], seed=cfg["seed"])
    if vc.n_views == 2 and not cfg["second_output"]:
        raise InputError("--views 2 needs --output2")
    views = make_views(load_cloud(cfg["input"]), vc)
    save_cloud(views.views[0], cfg["output"])
    if vc.n_views == 2:
        save_cloud(views.views[1], cfg["second_output"])
    if cfg["index_map"]:
        save_matrix(views.index_map[:, None], cfg["index_map"])
    if cfg["record_draws"]:
        _echo("augment", cfg, {"draws": views.draws})
    log.info("augment: %d views of %d points", vc.n_views, len(views.base))


def cmd_graph(cfg):
    _need(cfg, "input", "output")
    g = build_knn_graph(load_cloud(cfg["input"]), cfg["k"], cfg["tau"])
    with open(cfg["output"], "w", newline="\n") as fh:
        fh.write("i,j,weight\n")
        for (i, j), w in zip(g.edges.tolist(), g.weights.tolist()):
            fh.write(f"{i},{j},{w!r}\n")
    log.info("graph: %d vertices, %d edges", g.n_vertices, g.n_edges)


def _distances(cfg, cloud):
    if cfg["method"] == "euclidean":
        return euclidean_distance_matrix(cloud)
    graph = build_knn_graph(cloud, cfg["k"], cfg["tau"])
    if cfg["method"] == "sparse":
        return apsp_sparse(graph)
    return floyd_warshall(init_distance_matrix(graph), cfg.get("block_size", DEFAULT_BLOCK), cfg["threads"])


def cmd_distances(cfg):
    _need(cfg, "input", "output")
    d = _distances(cfg, load_cloud(cfg["input"]))
    save_matrix(d, cfg["output"], cfg["format"])
    log.info("distances: %dx%d via %s", *d.shape, cfg["method"])


def cmd_similarity(cfg):
    _need(cfg, "output")
    if cfg["distances"]:
        d = load_matrix(cfg["distances"])
    else:
        _need(cfg, "input")
        d = _distances(cfg, load_cloud(cfg["input"]))
    save_matrix(similarity_matrix(d, cfg["epsilon"]), cfg["output"], cfg["format"])


def _loss_config(cfg, n_views, n_points=10000):
    return LossConfig(target=cfg["target"], n_views=n_views, discrepancy=cfg["discrepancy"],
                      n_points=n_points, epsilon=cfg["epsilon"], reduction=cfg.get("reduction", "mean"),
                      mask_diagonal=cfg.get("mask_diagonal", False), k=cfg["k"], tau=cfg["tau"])


def cmd_loss(cfg):
    _need(cfg, "embeddings")
    views = [load_matrix(p) for p in cfg["embeddings"]]
    config = _loss_config(cfg, len(views))
    if cfg["target_matrix"]:
        T = load_matrix(cfg["target_matrix"])
    elif config.target == "identity":
        T = None
    else:
        _need(cfg, "cloud")
        cloud = load_cloud(cfg["cloud"])
        if len(cloud) != len(views[0]):
            raise InputError(f"{len(views[0])} embeddings for {len(cloud)} points")
        T = build_target(cloud, config, cfg["threads"])
    value = contrastive_loss(views, T, config)
    print(repr(value))
    if cfg["gradient"]:
        grads = loss_gradient(views, T, config)
        if len(cfg["gradient"]) != len(grads):
            raise InputError(f"--gradient needs {len(grads)} paths")
        for g, path in zip(grads, cfg["gradient"]):
            save_matrix(g, path)


def cmd_optimize(cfg):
    _need(cfg, "input", "output")
    cloud = load_cloud(cfg["input"])
    config = _loss_config(cfg, cfg["views"], cfg["n_points"])
    res = optimize_embeddings(cloud, config, cfg["steps"], cfg["learning_rate"],
                              seed=cfg["seed"], dim=cfg["dim"], threads=cfg["threads"])
    save_matrix(res.embeddings, cfg["output"])
    with open(_derived(cfg, "trace", "_trace.csv"), "w", newline="\n") as fh:
        fh.write("step,loss\n")
        for t, v in enumerate(res.loss_trace.tolist()):
            fh.write(f"{t},{v!r}\n")
    save_matrix(res.indices[:, None], _derived(cfg, "indices", "_indices.csv"))
    log.info("optimize: loss %.6g -> %.6g", res.loss_trace[0], res.loss_trace[-1])


def _post(cfg):
    return PostprocessConfig(steps=cfg["steps"], merge_threshold=cfg["gamma"],
                             agglomerative_threshold=cfg["gamma_agg"],
                             radial_plane=cfg["radial_plane"], k=cfg["k"], tau=cfg["tau"])


def cmd_cluster(cfg):
    _need(cfg, "embeddings", "output")
    e = load_matrix(cfg["embeddings"])
    method = cfg["method"]
    if method == "dbscan":
        assign = dbscan(e, cfg["eps"], cfg["min_pts"])
    elif method == "agglomerative":
        assign = agglomerative_cluster(e, cfg["gamma_agg"])
    else:
        _need(cfg, "input")
        cloud = _subset(load_cloud(cfg["input"]), cfg["indices"])
        fn = radius_decremental_cluster if method == "radius" else graph_cut_cluster
        assign = fn(cloud, e, _post(cfg))
        if assign.fallback:
            log.warning("cluster: no tips outside r_init, fell back to agglomerative clustering")
    save_assignment(assign, cfg["output"])
    log.info("cluster: %d instances", assign.n_instances)


def cmd_eval(cfg):
    _need(cfg, "input", "assignment")
    cloud = _subset(load_cloud(cfg["input"]), cfg["indices"])
    if cloud.labels is None:
        raise InputError("eval needs a labeled cloud")
    assign = load_assignment(cfg["assignment"])
    if len(assign.labels) != len(cloud):
        raise InputError(f"assignment covers {len(assign.labels)} points, cloud has {len(cloud)}")
    res = mean_average_precision(assign, cloud.labels)
    report = {
        "map": res.map,
        "ap50": res.ap50,
        "n_instances": assign.n_instances,
        "per_threshold": [{"iou": round(float(t), 2), "ap": float(a), "tp": int(tp), "fp": int(fp), "fn": int(fn)}
                          for t, a, tp, fp, fn in zip(IOU_THRESHOLDS, res.ap, res.tp, res.fp, res.fn)],
    }
    text = json.dumps(report, indent=2) + "\n"
    sys.stdout.write(text)
    if cfg["output"]:
        Path(cfg["output"]).write_text(text)


def cmd_sweep(cfg):
    _need(cfg, "output")
    if cfg["inputs"]:
        clouds = [load_cloud(p) for p in cfg["inputs"]]
    else:
        clouds = plant_fixtures(cfg["plants"], cfg["points_per_leaf"], seed=cfg["seed"])
    config = SweepConfig(kinds=tuple(cfg["noise"]), reps=cfg["reps"], seed=cfg["seed"],
                         embedding_dim=cfg["dim"], sigma=cfg["sigma"], postprocess=_post(cfg),
                         dbscan_eps=cfg["eps"], dbscan_min_pts=cfg["min_pts"])
    rows = noise_sweep(clouds, cfg["methods"], cfg["magnitudes"], config)
    write_sweep(rows, cfg["output"])
    emit_plot(rows, _derived(cfg, "plot", ".svg"))
    write_summary(summarize_sweep(rows), _derived(cfg, "summary", "_summary.csv"))
    log.info("sweep: %d rows over %d clouds", len(rows), len(clouds))


def cmd_plot(cfg):
    _need(cfg, "table", "output")
    emit_plot(cfg["table"], cfg["output"])


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def run(argv=None) -> int:
    """Execute one subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        ns = vars(parser.parse_args(argv))
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_INPUT
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if ns.pop("verbose") else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    cmd = ns.pop("command")
    config_path = ns.pop("config", None)
    try:
        cfg = resolve(cmd, ns, config_path)
        _echo(cmd, cfg)
        HANDLERS[cmd](cfg)
    except (InputError, OSError, UnicodeDecodeError) as exc:
        sys.stderr.write(f"leafcontrast {cmd}: error: {exc}\n")
        return EXIT_INPUT
    except Exception as exc:
        sys.stderr.write(f"leafcontrast {cmd}: runtime error: {type(exc).__name__}: {exc}\n")
        return EXIT_RUNTIME
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
