"""Command-line entry point: ``xbm {train,eval,drift,stats}``.

Exit status is 0 on success, 2 for configuration or input errors and 3 for
failures while running. Output directories default to
``$XBM_OUT_ROOT/<command>-seed<seed>`` (``XBM_OUT_ROOT`` defaults to ``runs``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfg
from .data import DelimitedSchema, atomic_write, load_checkpoint, load_delimited, save_checkpoint
from .desk import heldout_recall
from .drift import drift_csv, drift_experiment, drift_schedule, lemma_csv, lemma_experiment
from .errors import ConfigError, FormatError, ParseError, ShapeError
from .memory import save_snapshot
from .retrieval import mining_csv, mining_report, recall_at_k
from .train import METRIC_COLUMNS, embed, train

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
OUT_ROOT_ENV = "XBM_OUT_ROOT"

log = logging.getLogger("xbm")


def _resolve(args):
    flat = cfg.load_config(args.config) if args.config else cfg.resolve({})
    flat = cfg.apply_overrides(flat, args.set or [])
    if args.seed is not None:
        flat["seed"] = args.seed
    return flat


def _out_dir(args, command, seed):
    out = Path(args.out) if args.out else Path(os.environ.get(OUT_ROOT_ENV, "runs")) / f"{command}-seed{seed}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out, flat, command, artifacts):
    manifest = {
        "command": command,
        "seed": flat["seed"],
        "out": str(out),
        "config": flat,
        "artifacts": artifacts,
    }
    atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _parse_ks(text):
    try:
        ks = [int(k) for k in str(text).split(",") if k.strip()]
    except ValueError:
        raise ConfigError(f"--ks expects comma-separated integers, got {text!r}") from None
    if not ks:
        raise ConfigError("--ks is empty")
    return ks


def cmd_train(args):
    flat = _resolve(args)
    config = cfg.train_config(flat)
    train_set, _ = cfg.dataset_splits(flat)
    out = _out_dir(args, "train", flat["seed"])
    artifacts = {"metrics": "metrics.csv", "checkpoint": "checkpoint.bin"}
    if config.xbm is not None:
        artifacts["memory"] = "memory.bin"
    _write_manifest(out, flat, "train", artifacts)

    # rows are flushed as they are produced; the file gets its final name only on success
    partial = out / "metrics.csv.partial"
    with partial.open("w") as fh:
        result = train(train_set, config, metrics_stream=fh)
    os.replace(partial, out / "metrics.csv")
    save_checkpoint(out / "checkpoint.bin", result.net)
    if result.memory is not None:
        save_snapshot(out / "memory.bin", result.memory)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_eval(args):
    if not args.checkpoint:
        raise ConfigError("eval needs --checkpoint")
    ks = _parse_ks(args.ks) if args.ks else None
    try:
        net = load_checkpoint(args.checkpoint)
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint {args.checkpoint}: {exc.strerror}") from None
    flat = _resolve(args)
    ks = ks or flat["eval.ks"]
    out = _out_dir(args, "eval", flat["seed"])
    if args.data:
        try:
            data = load_delimited(args.data, DelimitedSchema(label_column=flat["data.label_column"], header=flat["data.header"]))
        except OSError as exc:
            raise ConfigError(f"cannot read dataset {args.data}: {exc.strerror}") from None
        if data.input_dim != net.input_dim:
            raise ShapeError(f"checkpoint expects {net.input_dim} features, dataset has {data.input_dim}")
        emb = embed(net, data.features)
        report = recall_at_k(emb, data.labels, emb, data.labels, ks, self_exclude=True)
    else:
        train_set, heldout = cfg.dataset_splits(flat)
        if heldout.input_dim != net.input_dim:
            raise ShapeError(f"checkpoint expects {net.input_dim} features, dataset has {heldout.input_dim}")
        report = heldout_recall(net, train_set, heldout, ks)
    atomic_write(out / "recall.csv", report.to_csv())
    atomic_write(out / "recall.json", report.to_json())
    for k, r in zip(report.ks, report.recall_at_k):
        print(f"recall@{k} = {r:.4f}")
    return EXIT_OK


def cmd_drift(args):
    flat = _resolve(args)
    config = cfg.train_config(flat)
    train_set, _ = cfg.dataset_splits(flat)
    out = _out_dir(args, "drift", flat["seed"])
    _write_manifest(out, flat, "drift", {"drift": "drift.csv", "lemma": "lemma.csv"})
    steps = flat["drift.steps"]
    schedule = drift_schedule(config.iterations, steps, flat["drift.every"])
    records, result = drift_experiment(
        train_set, config, steps=steps, schedule=schedule, probe_size=flat["drift.probe_size"], probe_seed=flat["seed"]
    )
    atomic_write(out / "drift.csv", drift_csv(records))

    # stale-embedding gradient error on the trained net: anchor = first training row,
    # comparison target = embedding of the first row of another class
    net = result.net
    other = int(np.flatnonzero(train_set.labels != train_set.labels[0])[0])
    v_j = embed(net, train_set.features[other : other + 1])[0]
    lemma = lemma_experiment(net, train_set.features[0], v_j, trials=flat["drift.lemma_trials"], seed=flat["seed"])
    atomic_write(out / "lemma.csv", lemma_csv(lemma))
    if lemma:
        print(f"max grad_error_sq/epsilon over {len(lemma)} trials: {max(r.ratio for r in lemma):.4g}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_stats(args):
    run = Path(args.run or args.out or "")
    metrics = run / "metrics.csv"
    if not metrics.is_file():
        raise ConfigError(f"no metrics.csv in {run}")
    with metrics.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRIC_COLUMNS:
            raise ConfigError(f"{metrics} does not have the metrics columns {METRIC_COLUMNS}")
        rows = list(reader)
    mem_rows = [r for r in rows if r["phase"] == "xbm"]
    if mem_rows:
        stream = [(int(r["iter"]), int(r["valid_neg_mem"]), int(r["valid_neg_batch"])) for r in mem_rows]
    else:
        print("notice: run has no memory phase; valid_mem is reported as 0", file=sys.stderr)
        stream = [(int(r["iter"]), 0, int(r["valid_neg_batch"])) for r in rows]
    report = mining_report(stream, window=args.window)
    atomic_write(run / "mining.csv", mining_csv(report))
    if report:
        last = report[-1]
        print(f"mean valid negatives (last {args.window} iters): memory {last['mean_mem']:.1f}, batch {last['mean_batch']:.1f}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="xbm", description="Cross-batch memory metric learning.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{train,eval,drift,stats}")

    def common(p):
        p.add_argument("--config", help="TOML config or JSON run manifest")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        return p

    common(sub.add_parser("train", help="train a model")).set_defaults(func=cmd_train)
    p = common(sub.add_parser("eval", help="Recall@K of a checkpoint"))
    p.add_argument("--checkpoint", help="checkpoint written by train")
    p.add_argument("--data", help="delimited dataset; defaults to the configured dataset")
    p.add_argument("--ks", help="comma-separated K values, e.g. 1,10,100")
    p.set_defaults(func=cmd_eval)
    common(sub.add_parser("drift", help="feature drift and stale-gradient report")).set_defaults(func=cmd_drift)
    p = sub.add_parser("stats", help="valid-negative mining report for a run directory")
    p.add_argument("run", nargs="?", help="run directory (containing metrics.csv)")
    p.add_argument("--out", help="same as the positional run directory")
    p.add_argument("--window", type=int, default=50)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, FormatError, ShapeError) as exc:
        print(f"xbm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit code
        print(f"xbm {args.command}: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
