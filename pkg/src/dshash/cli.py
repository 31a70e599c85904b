"""Command-line front end: ``dshash synth|split|train|encode|eval|sweep``.

Settings resolve as defaults < ``--config`` file < command-line flags. The
config file holds ``key = value`` lines using the long flag names with
dashes or underscores (``bits = 32``, ``max_iters = 20``).
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from itertools import product
from pathlib import Path

import numpy as np

from . import __version__
from .codec import encode_batch, load_model, pack, save_model
from .data import SplitSpec, load_dir, read_matrix, save_dataset, split, synth_multimodal
from .errors import DSHError, InvalidArgumentError
from .optimizer import TrainConfig, train
from .retrieval import Task, evaluate, format_table

logger = logging.getLogger("dshash")

# flag name -> TrainConfig field
TRAIN_KEYS = {
    "bits": "r",
    "beta": "beta",
    "eta": "eta",
    "lambda": "lam",
    "gamma": "gamma",
    "anchors": "M",
    "max_iters": "max_iters",
    "tol": "tol",
    "seed": "seed",
    "dcc_sweeps": "dcc_sweeps",
}
_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def read_config_file(path) -> dict:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    text = Path(path).read_text()
    parser.read_string("[dshash]\n" + text, source=str(path))
    return {k.replace("-", "_"): v for k, v in parser["dshash"].items()}


def _coerce(field_name: str, value):
    kind = _FIELD_TYPES[field_name]
    try:
        return int(value) if kind == "int" else float(value)
    except (TypeError, ValueError):
        raise InvalidArgumentError(f"{field_name}: cannot parse {value!r} as {kind}") from None


def resolve(args: argparse.Namespace, keys) -> dict:
    """Merge defaults, config file and explicit flags for ``keys``."""
    settings = {}
    if getattr(args, "config", None):
        file_values = read_config_file(args.config)
        unknown = set(file_values) - set(keys)
        if unknown:
            raise InvalidArgumentError(f"unknown config keys: {', '.join(sorted(unknown))}")
        settings.update(file_values)
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def train_config(settings: dict) -> TrainConfig:
    kwargs = {}
    for key, field_name in TRAIN_KEYS.items():
        if key in settings:
            kwargs[field_name] = _coerce(field_name, settings[key])
    return TrainConfig(**kwargs).validate()


def _add_train_flags(p: argparse.ArgumentParser, multi: bool = False) -> None:
    nargs = "+" if multi else None
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--bits", type=int, nargs=nargs, help="code length r (default 16)")
    p.add_argument("--beta", type=float, nargs=nargs, help="classifier weight (default 1)")
    p.add_argument("--eta", type=float, nargs=nargs, help="label-basis weight (default 1)")
    p.add_argument("--lambda", dest="lambda", type=float, help="ridge regularizer (default 1e-4)")
    p.add_argument("--gamma", type=float, help="modality-weight exponent, > 1 (default 2)")
    p.add_argument("--anchors", type=int, nargs=nargs, help="kernel anchors per modality (default 500)")
    p.add_argument("--max-iters", dest="max_iters", type=int, help="iteration cap (default 50)")
    p.add_argument("--tol", type=float, help="relative objective-change stop (default 1e-5)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--dcc-sweeps", dest="dcc_sweeps", type=int, help="DCC passes per B update (default 3)")


def _write(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# -- commands ----------------------------------------------------------------


def cmd_synth(args) -> int:
    ds = synth_multimodal(args.classes, args.per_class, args.dims, args.noise,
                          args.cross_noise, args.seed)
    out = Path(args.out)
    if args.train_count:
        tr, q = split(ds, SplitSpec(args.train_count, args.seed))
        save_dataset(tr, out / "train", args.format)
        save_dataset(q, out / "query", args.format)
    else:
        save_dataset(ds, out, args.format)
    logger.info("wrote %d samples to %s", ds.n, out)
    return 0


def cmd_split(args) -> int:
    ds = load_dir(args.data)
    tr, q = split(ds, SplitSpec(args.train_count, args.seed))
    out = Path(args.out)
    save_dataset(tr, out / "train", args.format)
    save_dataset(q, out / "query", args.format)
    return 0


def run_training(data_dir, cfg: TrainConfig):
    ds = load_dir(data_dir)
    M = min(cfg.M, ds.n)
    if M != cfg.M:
        logger.warning("only %d training samples; using %d anchors", ds.n, M)
        cfg = TrainConfig(**{**cfg.to_dict(), "M": M})
    return ds, train(ds.modalities, ds.labels, cfg)


def cmd_train(args) -> int:
    settings = resolve(args, list(TRAIN_KEYS) + ["data", "out"])
    cfg = train_config(settings)
    if "data" not in settings or "out" not in settings:
        raise InvalidArgumentError("train needs --data and --out")
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    _, (model, state, trace) = run_training(settings["data"], cfg)
    save_model(model, out / "model.dsh")
    with open(out / "train_log.txt", "w") as fh:
        fh.write("iteration\tobjective\n")
        for i, value in enumerate(trace):
            fh.write(f"{i}\t{value!r}\n")
    report = {
        "iterations": state.iterations,
        "converged": state.converged,
        "objective_trace": trace,
        "alpha": state.alpha.tolist(),
        "train_seconds": state.seconds,
        "config": model.metadata["config"],
    }
    (out / "train_report.json").write_text(json.dumps(report, indent=2) + "\n")
    sys.stdout.write(json.dumps({k: report[k] for k in ("iterations", "converged", "alpha", "train_seconds")}) + "\n")
    return 0


def cmd_encode(args) -> int:
    model = load_model(args.model)
    X = read_matrix(args.features).T
    codes = encode_batch(model, X, args.modality)
    if args.packed:
        words = pack(codes)
        lines = [" ".join(f"{int(w):016x}" for w in row) for row in words]
    else:
        lines = [",".join(str(int(b)) for b in col) for col in codes.T]
    _write("\n".join(lines) + "\n", args.out)
    return 0


def _tasks(name: str):
    return [Task.I2T, Task.T2I] if name == "both" else [Task(name)]


def cmd_eval(args) -> int:
    model = load_model(args.model)
    query = load_dir(args.query)
    db = load_dir(args.db)
    results = evaluate(model, query.modalities, query.labels, db.modalities, db.labels,
                       _tasks(args.task), args.R)
    table = {(t.value, model.r): res.map for t, res in results.items()}
    _write(format_table(table, args.format, title="MAP"), args.out)
    return 0


def _sweep_cell(job):
    index, data_dir, query_dir, db_dir, cfg_dict, tasks, R = job
    cfg = TrainConfig(**cfg_dict)
    ds, (model, state, _) = run_training(data_dir, cfg)
    query = load_dir(query_dir)
    db = ds if db_dir is None else load_dir(db_dir)
    results = evaluate(model, query.modalities, query.labels, db.modalities, db.labels, tasks, R)
    row = {
        "cell": index, "bits": cfg.r, "beta": cfg.beta, "eta": cfg.eta,
        "anchors": model.modalities[0].kernel_map.n_anchors, "seed": cfg.seed,
    }
    for t in tasks:
        row[t.value] = results[t].map
    row.update(train_seconds=state.seconds, iterations=state.iterations)
    return row


def sweep_jobs(settings: dict, grid: dict, data_dir, query_dir, db_dir, tasks, R=None):
    base = train_config(settings)
    axes = {name: grid.get(name) or [getattr(base, field)]
            for name, field in (("bits", "r"), ("beta", "beta"), ("eta", "eta"), ("anchors", "M"))}
    jobs = []
    for index, (r, beta, eta, M) in enumerate(product(*axes.values())):
        cfg = TrainConfig(**{**base.to_dict(), "r": r, "beta": beta, "eta": eta, "M": M,
                             "seed": base.seed + index}).validate()
        jobs.append((index, str(data_dir), str(query_dir), None if db_dir is None else str(db_dir),
                     cfg.to_dict(), tasks, R))
    return jobs


def cmd_sweep(args) -> int:
    grid = {k: getattr(args, k) for k in ("bits", "beta", "eta", "anchors")}
    # grid axes come from the command line; everything else through resolve()
    for k in grid:
        setattr(args, k, None)
    settings = resolve(args, list(TRAIN_KEYS))
    tasks = _tasks(args.task)
    jobs = sweep_jobs(settings, grid, args.data, args.query, args.db, tasks, args.R)
    logger.info("sweeping %d cells with %d worker(s)", len(jobs), args.workers)
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_sweep_cell, jobs))
    else:
        rows = []
        for job in jobs:
            rows.append(_sweep_cell(job))
            logger.info("cell %d done in %.2fs", job[0], rows[-1]["train_seconds"])
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if args.out:
            fh.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dshash", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic paired dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", dest="per_class", type=int, default=200)
    p.add_argument("--dims", type=int, nargs="+", default=[16, 24])
    p.add_argument("--noise", type=float, default=0.2)
    p.add_argument("--cross-noise", dest="cross_noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-count", dest="train_count", type=int,
                   help="also split into OUT/train and OUT/query")
    p.add_argument("--format", choices=["csv", "dsm"], default="csv")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="split a dataset directory into train/query")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--train-count", dest="train_count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=["csv", "dsm"], default="csv")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="learn a hash model")
    _add_train_flags(p)
    p.add_argument("--data", help="training dataset directory")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="hash feature rows with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--modality", type=int, required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--packed", action="store_true", help="emit hex uint64 words instead of +/-1")
    p.add_argument("--out")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("eval", help="cross-modal MAP of a model")
    p.add_argument("--model", required=True)
    p.add_argument("--query", required=True, help="query dataset directory")
    p.add_argument("--db", required=True, help="retrieval dataset directory")
    p.add_argument("--task", choices=["I2T", "T2I", "both"], default="both")
    p.add_argument("--format", choices=["text", "csv", "json"], default="text")
    p.add_argument("--R", type=int, help="ranking cutoff (default: whole database)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid over bits/beta/eta/anchors")
    _add_train_flags(p, multi=True)
    p.add_argument("--data", required=True, help="training dataset directory")
    p.add_argument("--query", required=True)
    p.add_argument("--db", help="retrieval set (default: training set)")
    p.add_argument("--task", choices=["I2T", "T2I", "both"], default="both")
    p.add_argument("--R", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (DSHError, OSError) as exc:
        print(f"dshash: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
