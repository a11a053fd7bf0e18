"""Command-line front end: run experiments, centralized reference runs,
partition/augmentation inspection, and SVG reports.

Exit codes: 0 success, 1 validation error (bad flags or config), 2 runtime
failure.  FEDBALANCE_OUTPUT_DIR, when set, overrides --out for every
subcommand that writes files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .augment import TransformKind, apply_transform
from .config import ConfigError, ExperimentConfig, dump_config, parse_config
from .data import (
    LabeledDataset,
    LabeledExample,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split_train_test,
)
from .federation import ProtocolTrace, run_experiment
from .metrics import (
    RoundRecord,
    evaluate,
    global_objective,
    read_metrics_csv,
    write_metrics_csv,
)
from .model import init_params, load_params, save_params
from .partition import partition, shard_statistics
from .rng import RngStream
from .svg import line_chart

log = logging.getLogger("fedbalance")

OUTPUT_DIR_ENV = "FEDBALANCE_OUTPUT_DIR"


class _CliParser(argparse.ArgumentParser):
    """argparse that exits 1 on usage errors (validation, per our contract)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(self._err(message))

    def _err(self, message) -> int:
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        return 1


def _read_config(path: str) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text)


def _build_dataset(cfg: ExperimentConfig) -> LabeledDataset:
    ds_cfg = cfg.dataset
    if ds_cfg.source == "file":
        path = Path(ds_cfg.path)
        if not path.exists():
            raise FileNotFoundError(f"dataset not found: {path}")
        return load_dataset(path)
    rng = RngStream(cfg.federation.master_seed, "data")
    return generate_synthetic(
        ds_cfg.num_classes,
        ds_cfg.per_class,
        (ds_cfg.height, ds_cfg.width),
        ds_cfg.noise_sigma,
        rng,
    )


def _out_dir(args) -> Path:
    out = os.environ.get(OUTPUT_DIR_ENV) or args.out
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(out: Path, cfg: ExperimentConfig, command: str) -> None:
    manifest = {
        "command": command,
        "config": dump_config(cfg),
        "seed": cfg.federation.master_seed,
        "versions": {
            "fedbalance": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "kernel_backend": _kernels.BACKEND,
        },
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _write_table(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _reference_loader(directory: str | None):
    if not directory:
        return None
    base = Path(directory)

    def load(round_id: int):
        path = base / f"round_{round_id:04d}.fbmp"
        return load_params(path) if path.exists() else None

    return load


def cmd_run(args) -> int:
    cfg = _read_config(args.config)
    out = _out_dir(args)
    ds = _build_dataset(cfg)
    rng = RngStream(cfg.federation.master_seed)
    train, test = split_train_test(ds, cfg.test_fraction, rng.lane("split"))
    shards = partition(train, cfg.partition, rng.lane("partition"))

    trace = None
    if cfg.report.protocol_trace:
        trace = ProtocolTrace(out / "trace.jsonl")
    try:
        records, params = run_experiment(
            cfg.federation,
            shards,
            test,
            trace=trace,
            reference_loader=_reference_loader(cfg.report.divergence_reference),
        )
    finally:
        if trace is not None:
            trace.close()

    write_metrics_csv(records, out / "metrics.csv", include_timing=cfg.report.timing)
    header, rows = shard_statistics(shards)
    _write_table(out / "shard_stats.csv", header, rows)
    save_params(params, out / "model.fbmp")
    _write_manifest(out, cfg, "run")
    final = records[-1]
    print(
        f"run finished: {cfg.federation.num_rounds} rounds, "
        f"final test accuracy {final.test_accuracy:.4f}, outputs in {out}"
    )
    return 0


def cmd_centralized(args) -> int:
    """Pooled-data reference training with per-round checkpoints."""
    cfg = _read_config(args.config)
    out = _out_dir(args)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)

    ds = _build_dataset(cfg)
    rng = RngStream(cfg.federation.master_seed)
    train, test = split_train_test(ds, cfg.test_fraction, rng.lane("split"))
    shards = partition(train, cfg.partition, rng.lane("partition"))

    fed = cfg.federation
    params = init_params(fed.arch, rng.lane("init"))
    save_params(params, ckpt_dir / "round_0000.fbmp")

    records = []
    accuracy, loss = evaluate(params, test)
    records.append(RoundRecord(0, accuracy, loss, global_objective(params, shards)))

    state = fed.optimizer
    for round_id in range(1, fed.num_rounds + 1):
        started = time.perf_counter()
        params, state = _centralized_round(params, state, train, fed, rng, round_id)
        elapsed = time.perf_counter() - started
        save_params(params, ckpt_dir / f"round_{round_id:04d}.fbmp")
        accuracy, loss = evaluate(params, test)
        records.append(
            RoundRecord(
                round_id,
                accuracy,
                loss,
                global_objective(params, shards),
                wall_time_s=elapsed,
            )
        )

    write_metrics_csv(records, out / "metrics.csv", include_timing=cfg.report.timing)
    save_params(params, out / "model.fbmp")
    _write_manifest(out, cfg, "centralized")
    print(
        f"centralized run finished: final test accuracy {records[-1].test_accuracy:.4f}, "
        f"checkpoints in {ckpt_dir}"
    )
    return 0


def _centralized_round(params, state, train, fed, rng, round_id):
    """E epochs of batch-B training over the pooled set; state persists."""
    from .data import stack_examples
    from .model import loss_and_grad, optimizer_step

    images, labels = stack_examples(train.examples, fed.arch.image_shape)
    gen = rng.lane("central-train", round_id=round_id).generator()
    n = len(train.examples)
    for _ in range(fed.local_epochs):
        order = gen.permutation(n)
        for start in range(0, n, fed.batch_size):
            idx = order[start : start + fed.batch_size]
            _, grads = loss_and_grad(params, images[idx], labels[idx])
            params, state = optimizer_step(state, params, grads)
    return params, state


def cmd_partition(args) -> int:
    cfg = _read_config(args.config)
    out = _out_dir(args)
    ds = _build_dataset(cfg)
    rng = RngStream(cfg.federation.master_seed)
    shards = partition(ds, cfg.partition, rng.lane("partition"))

    assignment = [["client_id", "example_index", "label"]]
    for shard in shards:
        for idx, ex in zip(shard.indices, shard.examples):
            assignment.append([shard.client_id, idx, ex.label])
    _write_table(out / "assignment.csv", assignment[0], assignment[1:])
    header, rows = shard_statistics(shards)
    _write_table(out / "shard_stats.csv", header, rows)
    _write_manifest(out, cfg, "partition")
    print(f"partitioned {len(ds)} examples into {len(shards)} shards; outputs in {out}")
    return 0


def _write_pgm(path: Path, pixels: np.ndarray) -> None:
    levels = np.rint(pixels * 255.0).astype(np.int64)
    h, w = pixels.shape
    lines = ["P2", f"{w} {h}", "255"]
    lines += [" ".join(str(v) for v in row) for row in levels]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_augment_preview(args) -> int:
    ds_path = Path(args.dataset)
    if not ds_path.exists():
        raise FileNotFoundError(f"dataset not found: {ds_path}")
    ds = load_dataset(ds_path)
    if not 0 <= args.index < len(ds):
        raise ConfigError(f"example index {args.index} out of range [0, {len(ds)})")
    out = _out_dir(args)
    example = ds.examples[args.index]
    rng = RngStream(args.seed, "preview")

    _write_pgm(out / "original.pgm", example.image.pixels)
    for kind in TransformKind:
        name = kind.name.lower()
        result = apply_transform(example.image, kind, rng.sublane(name))
        single = LabeledDataset(
            ds.num_classes, (LabeledExample(result, example.label),), ds.image_shape
        )
        save_dataset(single, out / f"{kind.value:02d}_{name}.fbds")
        _write_pgm(out / f"{kind.value:02d}_{name}.pgm", result.pixels)
    print(f"wrote {len(TransformKind)} transformed images to {out}")
    return 0


def cmd_report(args) -> int:
    series = []
    for path in args.csvs:
        records = read_metrics_csv(path)
        xs = [float(r.round) for r in records]
        ys = [r.test_accuracy for r in records]
        series.append((Path(path).stem, xs, ys))
    svg = line_chart(series)
    env_dir = os.environ.get(OUTPUT_DIR_ENV)
    out_path = Path(env_dir) / Path(args.out).name if env_dir else Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(svg, encoding="utf-8")
    print(f"wrote chart with {len(series)} series to {out_path}")
    return 0


def cmd_print_config(args) -> int:
    cfg = _read_config(args.config)
    sys.stdout.write(dump_config(cfg))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _CliParser(prog="fedbalance", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one federated experiment")
    run.add_argument("--config", required=True, help="YAML experiment config")
    run.add_argument("--out", default="out/run", help="output directory")
    run.set_defaults(func=cmd_run)

    central = sub.add_parser("centralized", help="pooled-data reference training")
    central.add_argument("--config", required=True)
    central.add_argument("--out", default="out/centralized")
    central.set_defaults(func=cmd_centralized)

    part = sub.add_parser("partition", help="write shard assignment and statistics")
    part.add_argument("--config", required=True)
    part.add_argument("--out", default="out/partition")
    part.set_defaults(func=cmd_partition)

    prev = sub.add_parser("augment-preview", help="contact sheet of all transforms")
    prev.add_argument("--dataset", required=True, help="binary dataset file")
    prev.add_argument("--index", type=int, default=0, help="example index")
    prev.add_argument("--seed", type=int, default=0)
    prev.add_argument("--out", default="out/augment-preview")
    prev.set_defaults(func=cmd_augment_preview)

    report = sub.add_parser("report", help="SVG accuracy chart from metrics CSVs")
    report.add_argument("csvs", nargs="+", help="metrics CSV files")
    report.add_argument("--out", default="report.svg", help="output SVG path")
    report.set_defaults(func=cmd_report)

    printc = sub.add_parser("print-config", help="dump the effective configuration")
    printc.add_argument("--config", required=True)
    printc.set_defaults(func=cmd_print_config)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"fedbalance: config error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"fedbalance: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures map to exit 2
        print(f"fedbalance: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
