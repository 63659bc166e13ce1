"""Command-line entry point: ``qtransfer {prepare,train,transfer,sweep,report,selftest}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import dataio, harness, metrics, selftest

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_NO_DATA = 2
EXIT_USAGE = 64

REMEDIATION = (
    "expected gzip IDX files under {root}/mnist and {root}/fashion "
    "(train-images-idx3-ubyte.gz, train-labels-idx1-ubyte.gz, t10k-...); "
    "run scripts/fetch_datasets.py {root} or set --data-dir / ${env}"
)


class UsageError(Exception):
    pass


def _sweep_flags(p: argparse.ArgumentParser, single: bool) -> None:
    g = p.add_argument_group("data and training")
    g.add_argument("--source-size", type=int, help="source training samples (default 12000)")
    g.add_argument("--test-size", type=int, help="target test samples (default 400)")
    g.add_argument("--data-seed", type=int, help="seed for source/large/test sampling (default 0)")
    g.add_argument("--lr", type=float, help="Adam learning rate (default 0.01)")
    g.add_argument("--batch-size", type=int, help="mini-batch size (default 32)")
    g.add_argument("--epochs-large", type=int, help="epochs on large sets (default 30)")
    g.add_argument("--epochs-small", type=int, help="epochs on small sets (default 200)")
    if single:
        p.add_argument("--task", required=True, choices=sorted(harness.TASKS))
        p.add_argument("--model", required=True, choices=harness.MODELS)
        p.add_argument("--n", type=int, required=True, choices=(3, 4))
        p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qtransfer", description=__doc__)
    p.add_argument("--data-dir", help=f"dataset root (default ${dataio.DATA_DIR_ENV} or ./data)")
    p.add_argument("--cache-dir", help=f"pretraining cache (default ${harness.CACHE_ENV} or ./.qtransfer-cache)")
    p.add_argument("--json", action="store_true", help="one JSON record per line on stdout")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("prepare", help="build reduced-feature caches")
    sp.add_argument("--tasks", nargs="+", default=sorted(harness.TASKS), choices=sorted(harness.TASKS))
    sp.add_argument("--n", type=int, nargs="+", default=[3, 4], choices=(3, 4))
    sp.add_argument("--out", help="output directory (default <cache-dir>/features)")
    _sweep_flags(sp, single=False)

    sp = sub.add_parser("train", help="pretrain one source model")
    _sweep_flags(sp, single=True)

    sp = sub.add_parser("transfer", help="run one transfer cell")
    _sweep_flags(sp, single=True)
    sp.add_argument("--m", type=int, required=True, help="number of retrained later layers")
    sp.add_argument("--target-size", type=int, default=40)

    sp = sub.add_parser("sweep", help="run a grid of cells")
    sp.add_argument("--config", help="JSON document with sweep fields; overrides flags")
    sp.add_argument("--tasks", nargs="+")
    sp.add_argument("--models", nargs="+")
    sp.add_argument("--ns", type=int, nargs="+")
    sp.add_argument("--ms", type=int, nargs="+", help="retraining depths (default 0..n)")
    sp.add_argument("--sizes", type=int, nargs="+")
    sp.add_argument("--seeds", type=int, nargs="+")
    sp.add_argument("--results", default="results/records.jsonl", help="append-only record store")
    sp.add_argument("--workers", type=int, default=1)
    _sweep_flags(sp, single=False)

    sp = sub.add_parser("report", help="write CSV and summary tables")
    sp.add_argument("--results", default="results/records.jsonl")
    sp.add_argument("--out", required=True)

    sub.add_parser("selftest", help="oracle, gradient and parameter-count checks")
    return p


TRAIN_FLAGS = {"lr": "lr", "batch_size": "batch_size", "epochs_large": "epochs_large", "epochs_small": "epochs_small"}
SWEEP_FLAGS = ("tasks", "models", "ns", "ms", "sizes", "seeds", "source_size", "test_size", "data_seed")


def sweep_config(args, file_doc: dict | None = None) -> harness.SweepConfig:
    """Defaults, then flags, then the config file (highest precedence)."""
    doc: dict = {}
    train_opts: dict = {}
    for name in SWEEP_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            doc[name] = value
    for flag, key in TRAIN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            train_opts[key] = value
    if file_doc:
        file_doc = dict(file_doc)
        train_opts.update(file_doc.pop("train", {}))
        doc.update(file_doc)
    doc["train"] = train_opts
    try:
        return harness.SweepConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _emit(args, obj, text: str) -> None:
    if args.json:
        print(json.dumps(obj, sort_keys=True))
    else:
        print(text)


def cmd_prepare(args) -> int:
    cfg = sweep_config(args)
    out = Path(args.out) if args.out else harness.cache_dir(args.cache_dir) / "features"
    out.mkdir(parents=True, exist_ok=True)
    root = str(dataio.data_dir(args.data_dir))
    for task in args.tasks:
        for n in args.n:
            data = harness.task_data(task, n, cfg.source_size, cfg.test_size, cfg.data_seed, root)
            for part, x, y in (
                ("source", data.source_x, data.source_y),
                ("target", data.target_x, data.target_y),
                ("test", data.test_x, data.test_y),
            ):
                path = out / f"{task}-n{n}-{part}.qtf"
                dataio.save_features(path, x, y)
                _emit(args, {"file": str(path), "count": len(y)}, f"{path}: {len(y)} samples")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = sweep_config(args)
    params, history, cached = harness.pretrain_source(
        args.task, args.model, args.n, args.seed, cfg, args.data_dir, args.cache_dir
    )
    info = {
        "task": args.task,
        "model": args.model,
        "n": args.n,
        "seed": args.seed,
        "n_params": len(params),
        "cached": cached,
        "final_loss": history[-1] if history else None,
        "loss_history": history,
    }
    _emit(args, info, f"{args.task} {args.model} n={args.n} seed={args.seed}: final source loss "
          f"{info['final_loss']} ({'cached' if cached else 'trained'})")
    return EXIT_OK


def cmd_transfer(args) -> int:
    if not 0 <= args.m <= args.n:
        raise UsageError(f"--m must be between 0 and --n ({args.n}), got {args.m}")
    cfg = sweep_config(args)
    rec = harness.run_transfer(
        args.task, args.model, args.n, args.m, args.target_size, args.seed, cfg, args.data_dir, args.cache_dir
    )
    _emit(args, json.loads(rec.to_json()), rec.to_json())
    return EXIT_OK


def cmd_sweep(args) -> int:
    file_doc = None
    if args.config:
        try:
            file_doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(file_doc, dict):
            raise UsageError("config must be a JSON object")
    cfg = sweep_config(args, file_doc)
    if cfg.ms is not None and cfg.ns and max(cfg.ms) > max(cfg.ns):
        raise UsageError(f"m={max(cfg.ms)} exceeds every requested n {list(cfg.ns)}")
    if args.workers < 1:
        raise UsageError("--workers must be positive")

    def show(rec):
        _emit(args, json.loads(rec.to_json()), f"{rec.task} {rec.model} n={rec.n} m={rec.m} "
              f"size={rec.target_size} seed={rec.seed}: {rec.status} acc={rec.accuracy:.4f}")

    records = harness.sweep(cfg, args.results, args.workers, args.data_dir, args.cache_dir, on_record=show)
    return EXIT_FAILED if any(r.status != "ok" for r in records) else EXIT_OK


def cmd_report(args) -> int:
    records = harness.load_records(args.results)
    files = harness.report(records, args.out)
    _emit(args, {k: str(v) for k, v in files.items()}, "\n".join(str(v) for v in files.values()))
    return EXIT_OK


def cmd_selftest(args) -> int:
    results = selftest.run()
    for name, ok, detail in results:
        _emit(args, {"check": name, "ok": ok, "detail": detail}, f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_FAILED


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "transfer": cmd_transfer,
    "sweep": cmd_sweep,
    "report": cmd_report,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage; keep 2 for missing data and use 64 here
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    root = dataio.data_dir(args.data_dir)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"qtransfer: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"qtransfer: missing data: {exc}", file=sys.stderr)
        print(REMEDIATION.format(root=root, env=dataio.DATA_DIR_ENV), file=sys.stderr)
        return EXIT_NO_DATA
    except (metrics.MetricError, harness.DatasetError, dataio.FormatError) as exc:
        print(f"qtransfer: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
