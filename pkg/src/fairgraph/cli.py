"""Command-line surface: reproducible experiments over the library.

Exit codes: 0 success, 1 numerical/verification failure, 2 usage or
configuration failure. Every command is deterministic given its flags,
config and seed, and the JSON artifacts always agree with the stdout
summary (they are produced from the same objects).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .autodiff import NeighborAggregator
from .data import (
    SynthConfig,
    export_embeddings,
    load_dataset,
    resolve_dataset,
    standardize_features,
    synth_generate,
    write_dataset,
)
from .errors import (
    ConfigError,
    DatasetError,
    DivergenceError,
    FairGraphError,
    NumericError,
    UndefinedMetricError,
    VerificationError,
)
from .graph import (
    Graph,
    edge_census,
    fair_edge_remove,
    homophily_ratios,
)
from .losses import LossWeights
from .metrics import evaluate_predictions
from .model import encode, hard_labels, load_checkpoint, predict, save_checkpoint
from .pipeline import (
    DEFAULT_GRID,
    Splits,
    TrainConfig,
    grid_search,
    load_config,
    pretrain,
    run_experiment,
    split_dataset,
)
from .seeding import derive_seed
from .verify import run_suites

WEIGHT_FLAGS = ("alpha", "beta", "gamma", "omega", "eta", "K", "K_prime", "kappa")


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)


def _load_dataset_arg(name_or_path):
    return load_dataset(resolve_dataset(name_or_path))


def _build_config(args):
    cfg = load_config_or_default(args)
    overrides = {}
    for flag in WEIGHT_FLAGS:
        value = getattr(args, flag, None)
        if value is not None:
            overrides[flag] = value
    if overrides:
        merged = cfg.weights.to_dict()
        merged.update(overrides)
        cfg = replace(cfg, weights=LossWeights.from_dict(merged))
    if getattr(args, "mode", None):
        cfg = replace(cfg, mode=args.mode)
    if getattr(args, "lr", None) is not None:
        cfg = replace(cfg, lr=args.lr)
    if getattr(args, "splits", None) is not None:
        seeds = tuple(derive_seed(args.seed, f"run:{i}") for i in range(args.splits))
        cfg = replace(cfg, seeds=seeds)
    elif getattr(args, "seed", None) is not None and len(cfg.seeds) == 1:
        cfg = replace(cfg, seeds=(args.seed,))
    return cfg


def load_config_or_default(args):
    if getattr(args, "config", None):
        return load_config(args.config)
    return TrainConfig()


def _pseudo_labels_from_checkpoint(graph, table, checkpoint_path):
    enc, pred, meta = load_checkpoint(checkpoint_path)
    x = table.features
    if meta.get("feature_mean") is not None:
        mean = np.asarray(meta["feature_mean"])
        std = np.asarray(meta["feature_std"])
        x = (x - mean) / std
    latent = encode(enc, NeighborAggregator(graph), x)
    probs = predict(pred, latent.c)
    merged = np.where(table.labels.class_label >= 0, table.labels.class_label,
                      hard_labels(probs))
    return table.labels.with_pseudo(merged), enc, pred, latent


def _graph_after_stored_edit(graph, stored):
    """Rebuild the phase-1 edited graph a stored run trained on."""
    edit = stored.get("edit", {})
    if edit.get("skipped") or not edit.get("removed_edges"):
        return graph
    return graph.remove_edges([tuple(e) for e in edit["removed_edges"]])


def _effective_labels(args, graph, table):
    if args.labels == "truth":
        if (table.labels.class_label < 0).any():
            raise ConfigError(
                "--labels truth requires every node to carry a class label; "
                "use --labels pseudo with a checkpoint")
        return table.labels
    if not args.checkpoint:
        raise ConfigError("--labels pseudo requires --checkpoint")
    labels, *_ = _pseudo_labels_from_checkpoint(graph, table, args.checkpoint)
    return labels


# ---------------------------------------------------------------------------
# commands

def cmd_analyze(args):
    graph, table = _load_dataset_arg(args.dataset)
    labels = _effective_labels(args, graph, table)
    census = edge_census(graph, labels)
    hr_c, hr_s = homophily_ratios(graph, labels)
    payload = {"dataset": args.dataset, "labels_source": args.labels,
               "n": graph.n, "census": census.to_dict(),
               "hr_c": hr_c, "hr_s": hr_s}
    print(f"nodes {graph.n}  edges {census.m}")
    print(f"hr_c {hr_c:.4f}  hr_s {hr_s:.4f}")
    print("edge types  I {type_i}  II {type_ii}  III {type_iii}  IV {type_iv}"
          .format(**census.to_dict()))
    if args.json:
        _write_json(args.json, payload)
    return 0


def cmd_edit(args):
    graph, table = _load_dataset_arg(args.dataset)
    labels = _effective_labels(args, graph, table)
    edited, report = fair_edge_remove(graph, labels)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "edited_edges.txt"), "w", encoding="utf-8") as fh:
        for u, v in edited.edges:
            fh.write(f"{u} {v}\n")
    _write_json(os.path.join(args.out, "edit_report.json"), report.to_dict())
    print(f"removed {len(report.removed_edges)} Type III edges "
          f"({report.census_before.m} -> {report.census_after.m})")
    print(f"hr_c {report.hr_c_before:.4f} -> {report.hr_c_after:.4f}")
    print(f"hr_s {report.hr_s_before:.4f} -> {report.hr_s_after:.4f}")
    return 0


def cmd_pretrain(args):
    graph, table = _load_dataset_arg(args.dataset)
    cfg = _build_config(args)
    seed = cfg.seeds[0]
    labeled_ids = np.where(table.labels.labeled_mask())[0]
    splits = split_dataset(table.n, labeled_ids, cfg.splits,
                           derive_seed(seed, "split"))
    x, mean, std = standardize_features(table.features, splits.train)
    result = pretrain(graph, x, table.labels, splits.train, cfg, seed)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "pretrained.json")
    save_checkpoint(ckpt, result.encoder, result.predictor,
                    meta={"feature_mean": mean.tolist(),
                          "feature_std": std.tolist(),
                          "config_hash": cfg.config_hash(), "seed": seed,
                          "library_version": __version__, "phase": "pretrain"})
    _write_json(os.path.join(args.out, "pretrain_report.json"),
                {"final_loss": result.losses[-1], "epochs": len(result.losses),
                 "seed": seed, "config_hash": cfg.config_hash(),
                 "pseudo_labels": result.pseudo_labels.tolist(),
                 "splits": splits.to_dict()})
    print(f"pre-trained {len(result.losses)} epochs, final loss "
          f"{result.losses[-1]:.4f}; checkpoint at {ckpt}")
    return 0


def cmd_train(args):
    graph, table = _load_dataset_arg(args.dataset)
    cfg = _build_config(args)
    results, agg = run_experiment(graph, table, cfg)
    os.makedirs(args.out, exist_ok=True)
    for res in results:
        stem = os.path.join(args.out, f"run_seed{res.seed}_split{res.split_id}")
        _write_json(stem + ".json", res.to_dict())
        save_checkpoint(stem + ".ckpt.json", res.encoder, res.predictor,
                        meta={"feature_mean": res.feature_mean.tolist(),
                              "feature_std": res.feature_std.tolist(),
                              "config_hash": res.config_hash, "seed": res.seed,
                              "mode": res.mode,
                              "library_version": __version__})
    payload = {"config": cfg.to_dict(), "config_hash": cfg.config_hash(),
               "mode": cfg.mode, "optimizer": cfg.optimizer,
               "library_version": __version__, "aggregate": agg}
    _write_json(os.path.join(args.out, "aggregate.json"), payload)
    print(f"mode {cfg.mode}  runs {agg['n_runs']}  (mean(std) over splits)")
    for name in ("bacc", "auc", "f1", "delta_sp", "delta_eo", "score"):
        cell = agg[name]
        print(f"  {name:9s} {cell['mean']:7.2f} ({cell['std']:.2f})")
    return 0


def cmd_evaluate(args):
    graph, table = _load_dataset_arg(args.dataset)
    with open(args.report, "r", encoding="utf-8") as fh:
        stored = json.load(fh)
    graph = _graph_after_stored_edit(graph, stored)
    labels, enc, pred, latent = _pseudo_labels_from_checkpoint(
        graph, table, args.checkpoint)
    splits = Splits.from_dict(stored["splits"], table.n)
    probs = predict(pred, latent.c).value
    report = evaluate_predictions(probs, table.labels.class_label,
                                  table.labels.sensitive, mask=splits.test,
                                  seed=stored.get("seed", 0),
                                  split_id=stored.get("split_id", 0))
    payload = report.to_dict()
    print(json.dumps(payload, indent=2))
    if args.json:
        _write_json(args.json, payload)
    mismatches = {k: (payload[k], stored["test"][k])
                  for k in ("bacc", "auc", "f1", "delta_sp", "delta_eo", "score")
                  if payload[k] != stored["test"][k]}
    if mismatches:
        print(f"stored report differs: {mismatches}", file=sys.stderr)
        return 1
    print("matches stored report")
    return 0


def cmd_grid(args):
    graph, table = _load_dataset_arg(args.dataset)
    cfg = _build_config(args)
    if args.grid_json:
        with open(args.grid_json, "r", encoding="utf-8") as fh:
            grid = json.load(fh)
    else:
        grid = DEFAULT_GRID
    cells = grid_search(graph, table, cfg, grid)
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "grid.json"),
                {"config": cfg.to_dict(), "config_hash": cfg.config_hash(),
                 "library_version": __version__,
                 "cells": [c.to_dict() for c in cells]})
    print(f"{len(cells)} cells, best first:")
    for cell in cells[: args.top]:
        print(f"  score {cell.mean_val_score:8.3f} ({cell.std_val_score:.3f})  "
              f"{cell.params}")
    return 0


def cmd_verify(args):
    edit_fn = None
    if args.inject_fault:
        def edit_fn(graph, labels):  # deliberately leave one Type III edge
            edited, report = fair_edge_remove(graph, labels)
            if report.removed_edges:
                broken = Graph.from_edges(
                    graph.n, list(edited.edges) + [report.removed_edges[0]])
                return broken, report
            return edited, report

    passed, reports = run_suites(n_graphs=args.graphs, seed=args.seed,
                                 tol=args.tol, edit_fn=edit_fn)
    payload = {"passed": passed, "graphs": args.graphs, "seed": args.seed,
               "tolerance": args.tol,
               "max_identity_residual": max(r.max_residual for r in reports),
               "suites": [r.to_dict() for r in reports]}
    if args.json:
        _write_json(args.json, payload)
    for r in reports:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:9s} {status}  graphs={r.graphs_checked} "
              f"cases={r.cases_checked} max_residual={r.max_residual:.3e}")
    if not passed:
        first = next(r.counterexample for r in reports if not r.passed)
        print("counterexample: " + json.dumps(first), file=sys.stderr)
        return 1
    return 0


def cmd_synth(args):
    cfg = SynthConfig(n=args.n, target_hr_c=args.hr_c, target_hr_s=args.hr_s,
                      mean_degree=args.mean_degree, seed=args.seed,
                      class_signal=args.class_signal,
                      sensitive_signal=args.sensitive_signal)
    graph, table = synth_generate(cfg)
    write_dataset(args.out, graph, table)
    hr_c, hr_s = homophily_ratios(graph, table.labels)
    print(f"wrote {args.out}: n={graph.n} m={graph.m} "
          f"hr_c={hr_c:.3f} hr_s={hr_s:.3f}")
    return 0


def cmd_export(args):
    graph, table = _load_dataset_arg(args.dataset)
    split_names = ["unlabeled"] * table.n
    stored = None
    if args.report:
        with open(args.report, "r", encoding="utf-8") as fh:
            stored = json.load(fh)
        graph = _graph_after_stored_edit(graph, stored)
    labels, enc, pred, latent = _pseudo_labels_from_checkpoint(
        graph, table, args.checkpoint)
    if stored is not None:
        splits = Splits.from_dict(stored["splits"], table.n)
        for name, mask in (("train", splits.train), ("val", splits.val),
                           ("test", splits.test)):
            for i in np.where(mask)[0]:
                split_names[i] = name
    export_embeddings(args.out, latent.c.value, latent.e.value, table.labels,
                      split_names)
    print(f"wrote {args.out} ({table.n} rows, "
          f"{4 + latent.c.value.shape[1] + latent.e.value.shape[1]} columns)")
    return 0


# ---------------------------------------------------------------------------
# parser

def _add_weight_flags(p):
    for flag in WEIGHT_FLAGS:
        if flag in ("K", "K_prime"):
            p.add_argument(f"--{flag}", type=int, default=None)
        else:
            p.add_argument(f"--{flag}", type=float, default=None)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fairgraph",
        description="Fairness-aware graph editing and fair GNN training")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="edge census and homophily ratios")
    p.add_argument("--dataset", required=True)
    p.add_argument("--labels", choices=("truth", "pseudo"), default="truth")
    p.add_argument("--checkpoint")
    p.add_argument("--json")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("edit", help="remove Type III edges and report shifts")
    p.add_argument("--dataset", required=True)
    p.add_argument("--labels", choices=("truth", "pseudo"), default="pseudo")
    p.add_argument("--checkpoint")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("pretrain", help="prediction-loss pre-training")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="three-phase training over splits")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config")
    p.add_argument("--mode", choices=("HSCCAF", "CAF", "CAF+GE", "HSCCAF-GE"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--splits", type=int, help="number of random splits")
    p.add_argument("--lr", type=float)
    p.add_argument("--out", required=True)
    _add_weight_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="re-evaluate a stored checkpoint")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--report", required=True,
                   help="run report JSON holding the split masks")
    p.add_argument("--json")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("grid", help="hyper-parameter grid search")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--splits", type=int)
    p.add_argument("--grid-json", help="JSON file {param: [values]}")
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("verify", help="randomized edit-identity suites")
    p.add_argument("--graphs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--json")
    p.add_argument("--inject-fault", action="store_true",
                   help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("synth", help="write a synthetic benchmark dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--hr-c", type=float, default=0.6)
    p.add_argument("--hr-s", type=float, default=0.8)
    p.add_argument("--mean-degree", type=float, default=8.0)
    p.add_argument("--class-signal", type=float, default=1.2)
    p.add_argument("--sensitive-signal", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("export", help="write latent embeddings as CSV")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--report", help="run report JSON for split names")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors already; keep that contract
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except (ConfigError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, NumericError, UndefinedMetricError,
            VerificationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FairGraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
