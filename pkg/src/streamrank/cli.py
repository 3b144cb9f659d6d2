"""Command-line entry point.

Subcommands:
  extract         pcap -> 43-feature CSV (optional label sidecar join)
  run-online      streaming train/predict/retrain loop over a CSV or pcap
  compare         offline feature-selection comparison table
  rank            print the feature ranking stored in a checkpoint
  synth-generate  synthetic labeled stream in the feature CSV schema

Exit codes: 0 success, 2 usage or input error, 1 internal error.  The
STREAMRANK_LOG environment variable (DEBUG/INFO/WARNING/ERROR) controls log
verbosity.  Every command is deterministic given its flags, inputs and seed;
report timing values are only written when --timings is passed, since
measured times would break byte-identical reruns.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import METHODS, compare, write_comparison_csv
from .capture import (
    CaptureFormatError,
    LabelSource,
    read_capture,
    read_feature_csv,
    write_feature_csv,
)
from .engine import EngineConfig, InsufficientDataError, StreamEngine, write_report_line
from .model import Hyperparams, load_checkpoint, rank_features, save_checkpoint
from .synth import DriftSchedule, RegimeSpec, generate, planted_concept

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2


class InputError(Exception):
    """Bad arguments or unusable input files; maps to exit code 2."""


def _setup_logging() -> None:
    level = os.environ.get("STREAMRANK_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"no such file: {path}")
    return p


def _add_engine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window-size", type=int, default=200, help="packets per window (N)")
    p.add_argument("--mse-threshold", type=float, default=0.05, help="retrain when window MSE exceeds this")
    p.add_argument("--lambda", dest="lam", type=float, default=1e-4, help="L2 regularization strength")
    p.add_argument("--alpha", type=float, default=0.01, help="constant learning rate")
    p.add_argument("--batch-size", type=int, default=32, help="mini-batch size (M)")
    p.add_argument("--pretrain-windows", type=int, default=100, help="windows of history used for pretraining")
    p.add_argument("--epochs", type=int, default=5, help="passes per pretrain/retrain")
    p.add_argument("--seed", type=int, default=0, help="RNG seed for all randomness")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streamrank", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"streamrank {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="decode a pcap into the 43-feature CSV")
    p.add_argument("pcap")
    p.add_argument("--labels", help="label sidecar CSV (by packet index or 5-tuple+time range)")
    p.add_argument("--out", required=True, help="output feature CSV path")

    p = sub.add_parser("run-online", help="run the streaming loop over a feature CSV or pcap")
    p.add_argument("input", help="feature CSV or pcap file")
    p.add_argument("--labels", help="label sidecar CSV (pcap input only)")
    p.add_argument("--out-dir", required=True)
    _add_engine_flags(p)
    p.add_argument("--frozen", action="store_true", help="never retrain (offline baseline)")
    p.add_argument("--top-k", type=int, default=10, help="ranking entries per report line")
    p.add_argument("--checkpoint-every", type=int, default=0, metavar="C",
                   help="also write a checkpoint every C windows (0 = final only)")
    p.add_argument("--timings", action="store_true",
                   help="write measured wall times into reports (breaks byte-identical reruns)")

    p = sub.add_parser("compare", help="offline feature-selection comparison")
    p.add_argument("csv", help="labeled feature CSV")
    p.add_argument("--k", type=int, default=20, help="features to select")
    p.add_argument("--methods", default=",".join(METHODS), help="comma-separated method names")
    p.add_argument("--out", help="output CSV (default: print to stdout)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda", dest="lam", type=float, default=1e-4)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=32)

    p = sub.add_parser("rank", help="print the feature ranking of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--top-k", type=int, default=0, help="limit output length (0 = all)")
    p.add_argument("--json", action="store_true", help="emit JSON instead of a table")

    p = sub.add_parser("synth-generate", help="write a synthetic labeled stream as a feature CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--window-size", type=int, default=200)
    p.add_argument("--windows", type=int, default=120, help="total stream length in windows")
    p.add_argument("--noise", type=float, default=0.0, help="label flip probability")
    p.add_argument("--planted", type=int, default=5, help="number of informative features")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--drift-at", type=int, default=0, metavar="W",
                   help="switch concepts after W windows (0 = stationary)")
    p.add_argument("--drift-mode", choices=("negate", "flip"), default="negate",
                   help="negate the whole concept, or flip one planted feature's sign")
    return parser


def _load_records(path: Path, labels: str | None):
    if path.suffix.lower() in (".pcap", ".cap"):
        source = LabelSource.load(_require_file(labels)) if labels else None
        return read_capture(path, source)
    if labels:
        raise InputError("--labels applies only to pcap input")
    return read_feature_csv(path)


def cmd_extract(args: argparse.Namespace) -> int:
    path = _require_file(args.pcap)
    source = LabelSource.load(_require_file(args.labels)) if args.labels else None
    reader = read_capture(path, source)
    count = write_feature_csv(reader, args.out)
    if reader.skipped:
        logger.warning("skipped %d undecodable packets", reader.skipped)
    print(f"wrote {count} records to {args.out}")
    return EXIT_OK


def cmd_run_online(args: argparse.Namespace) -> int:
    in_path = _require_file(args.input)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = EngineConfig(
        window_size=args.window_size,
        mse_threshold=args.mse_threshold,
        pretrain_windows=args.pretrain_windows,
        pretrain_epochs=args.epochs,
        epochs_per_retrain=args.epochs,
        hyper=Hyperparams(lam=args.lam, alpha=args.alpha, batch_size=args.batch_size),
        seed=args.seed,
        frozen=args.frozen,
    )
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    engine = StreamEngine(config)
    records = _load_records(in_path, args.labels)
    n_windows = n_retrained = 0
    try:
        with open(out_dir / "reports.jsonl", "w", encoding="utf-8") as fh:
            for report in engine.run(records):
                write_report_line(fh, report, top_k=args.top_k, include_timing=args.timings)
                n_windows += 1
                n_retrained += int(report.retrained)
                if args.checkpoint_every and report.window_index % args.checkpoint_every == 0:
                    save_checkpoint(
                        engine.model, out_dir / f"checkpoint_{report.window_index:06d}.json"
                    )
    except InsufficientDataError as exc:
        raise InputError(str(exc)) from exc
    save_checkpoint(engine.model, out_dir / "checkpoint.json")
    manifest = {
        "version": __version__,
        "command": "run-online",
        "config": {
            "window_size": config.window_size,
            "mse_threshold": config.mse_threshold,
            "pretrain_windows": config.pretrain_windows,
            "pretrain_epochs": config.pretrain_epochs,
            "epochs_per_retrain": config.epochs_per_retrain,
            "lambda": config.hyper.lam,
            "alpha": config.hyper.alpha,
            "batch_size": config.hyper.batch_size,
            "frozen": config.frozen,
            "top_k": args.top_k,
        },
        "seed": config.seed,
        "inputs": {str(in_path): _sha256(in_path)},
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    print(f"processed {n_windows} windows ({n_retrained} retrained); outputs in {out_dir}")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    path = _require_file(args.csv)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise InputError(f"unknown methods: {', '.join(unknown)} (known: {', '.join(METHODS)})")
    records = list(read_feature_csv(path))
    if not records:
        raise InputError(f"{path}: no records")
    if any(r.label is None for r in records):
        raise InputError(f"{path}: compare needs labels on every row")
    X = np.stack([r.features for r in records])
    y = np.array([r.label for r in records], dtype=int)
    if not 1 <= args.k <= X.shape[1]:
        raise InputError(f"--k must be in [1, {X.shape[1]}]")
    hyper = Hyperparams(lam=args.lam, alpha=args.alpha, batch_size=args.batch_size)
    rows = compare(X, y, args.k, methods, seed=args.seed, hyper=hyper)
    if args.out:
        write_comparison_csv(rows, args.out)
        print(f"wrote comparison to {args.out}")
    else:
        print("method,elapsed_s,accuracy,selected_indices")
        for row in rows:
            sel = ";".join(str(i) for i in row.selected)
            print(f"{row.method},{row.elapsed!r},{row.accuracy!r},{sel}")
    return EXIT_OK


def cmd_rank(args: argparse.Namespace) -> int:
    path = _require_file(args.checkpoint)
    try:
        model = load_checkpoint(path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: not a valid checkpoint: {exc}") from exc
    ranking = rank_features(model)
    entries = ranking.entries
    if args.top_k > 0:
        entries = entries[: args.top_k]
    if args.json:
        doc = {
            "bias": ranking.bias,
            "entries": [
                {"rank": e.rank, "index": e.index, "name": e.name, "weight": e.weight}
                for e in entries
            ],
        }
        print(json.dumps(doc, indent=2))
    else:
        print(f"{'rank':>4}  {'feature':>7}  {'name':<20}  weight")
        for e in entries:
            print(f"{e.rank:>4}  f{e.index:02d}{'':>4}  {e.name:<20}  {e.weight:+.6g}")
        print(f"bias (dummy weight): {ranking.bias:+.6g}")
    return EXIT_OK


def cmd_synth_generate(args: argparse.Namespace) -> int:
    if args.windows < 1:
        raise InputError("--windows must be >= 1")
    if args.drift_at < 0 or args.drift_at >= args.windows:
        if args.drift_at != 0:
            raise InputError("--drift-at must fall inside the stream")
    rng = np.random.default_rng(args.seed)
    weights, planted = planted_concept(rng, n_planted=args.planted)
    if args.drift_at:
        second = -weights if args.drift_mode == "negate" else weights.copy()
        if args.drift_mode == "flip":
            second[planted[0]] *= -1.0
        schedule = DriftSchedule(
            (
                RegimeSpec(weights, args.noise, args.drift_at),
                RegimeSpec(second, args.noise, args.windows - args.drift_at),
            )
        )
    else:
        schedule = DriftSchedule((RegimeSpec(weights, args.noise, args.windows),))
    count = write_feature_csv(generate(schedule, args.window_size, args.seed), args.out)
    print(f"wrote {count} records to {args.out} (planted features: "
          + ",".join(f"f{i + 1:02d}" for i in planted) + ")")
    return EXIT_OK


_COMMANDS = {
    "extract": cmd_extract,
    "run-online": cmd_run_online,
    "compare": cmd_compare,
    "rank": cmd_rank,
    "synth-generate": cmd_synth_generate,
}


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (InputError, CaptureFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # internal failure
        logger.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
