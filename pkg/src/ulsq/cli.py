"""Command line front end.

Subcommands: count-params, summary, split, train, eval, gradcheck. Exit
codes: 0 success, 1 usage error, 2 data or integrity error. Training is
configured through a JSON file whose keys mirror the config dataclasses;
explicit flags override the file, the file overrides defaults.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import architectures, autograd, data, metrics, model_io, training
from .errors import FormatError, IngestionError, IntegrityError, UsageError


class _CliUsage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad arguments by default; usage problems must exit 1
    def error(self, message):
        raise _CliUsage(message)


_CONFIG_KEYS = {
    "architecture", "epochs", "batch_size", "seed", "augment",
    "rotation_deg_max", "zoom_frac_max", "shift_frac_max", "hflip", "vflip",
    "dropout", "data_root", "manifest", "val_frac", "validate_each_epoch",
    "subset_per_class", "out_dir",
}

_AUG_KEYS = {"rotation_deg_max", "zoom_frac_max", "shift_frac_max", "hflip", "vflip"}


def _load_config_file(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError(f"config {path} must be a JSON object")
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return doc


def _resolve_train_config(args) -> tuple[training.TrainConfig, data.AugmentConfig, str]:
    cfg = _load_config_file(args.config) if args.config else {}
    overrides = {
        "architecture": args.arch,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "seed": args.seed,
        "data_root": args.data,
    }
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    out_dir = args.out_dir or cfg.pop("out_dir", None)
    aug_kwargs = {k: cfg.pop(k) for k in list(cfg) if k in _AUG_KEYS}
    train_cfg = training.TrainConfig(**cfg)
    aug_cfg = data.AugmentConfig(seed=train_cfg.seed, **aug_kwargs)
    if out_dir is None:
        out_dir = f"runs/{train_cfg.architecture}_seed{train_cfg.seed}"
    return train_cfg, aug_cfg, out_dir


def _resolved_dict(train_cfg, aug_cfg, out_dir) -> dict:
    doc = dataclasses.asdict(train_cfg)
    for key in _AUG_KEYS:
        doc[key] = getattr(aug_cfg, key)
    doc["out_dir"] = str(out_dir)
    return doc


def _partitions(train_cfg: training.TrainConfig):
    if train_cfg.manifest:
        _, split = data.read_manifest(train_cfg.manifest, train_cfg.data_root)
        return split
    if not train_cfg.data_root:
        raise UsageError("train needs --data (or data_root/manifest in the config)")
    pairs = data.scan_dataset(train_cfg.data_root)
    if train_cfg.subset_per_class:
        pairs = data.stratified_subset(pairs, train_cfg.subset_per_class, train_cfg.seed)
    return data.stratified_split(pairs, train_cfg.val_frac, train_cfg.seed)


def _write_csvs(out_dir: Path, logs, report) -> None:
    with (out_dir / "curves.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss", "train_acc", "val_acc"])
        for line in logs:
            writer.writerow([line["epoch"], line["mean_loss"], line["train_acc"],
                             "" if line["val_acc"] is None else line["val_acc"]])
    if report is not None and report.auc is not None:
        with (out_dir / "roc.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fpr", "tpr"])
            for fpr, tpr in report.roc.points:
                writer.writerow([fpr, tpr])


def _cmd_count_params(args) -> int:
    spec = architectures.arch_spec(args.arch)
    n = architectures.count_trainable_params(spec)
    print(f"{n} ({architectures.format_storage(n)})")
    return 0


def _cmd_summary(args) -> int:
    spec = architectures.arch_spec(args.arch)
    rows = architectures.summary(spec)
    total = architectures.count_trainable_params(spec)
    print(f"{'layer':<18}{'output':<14}{'params':>10}{'cumulative':>12}")
    for row in rows:
        shape = "x".join(str(d) for d in row.output_shape)
        print(f"{row.name:<18}{shape:<14}{row.params:>10,}{row.cumulative:>12,}")
    print(f"total: {total:,} parameters ({architectures.format_storage(total)})")
    return 0


def _cmd_split(args) -> int:
    pairs = data.scan_dataset(args.data)
    split = data.stratified_split(pairs, args.val_frac, args.seed)
    data.write_manifest(split, args.data, args.out)
    print(f"train: {len(split.train)}  val: {len(split.val)}  -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    train_cfg, aug_cfg, out_dir = _resolve_train_config(args)
    split = _partitions(train_cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    network = architectures.build(train_cfg.architecture, seed=train_cfg.seed,
                                  dropout=train_cfg.dropout)
    state = training.AdamState.for_network(network)
    resolved = _resolved_dict(train_cfg, aug_cfg, out_dir)

    log_path = out_dir / "epochs.jsonl"
    with log_path.open("w") as log_file:
        def on_epoch(line):
            log_file.write(json.dumps(line) + "\n")
            log_file.flush()

        logs, results = training.run_training(
            network, split.train, split.val, state, train_cfg,
            augment_config=aug_cfg, on_epoch=on_epoch)

    model_io.save_weights(network, out_dir / "weights.ulsq")
    report = metrics.report_from_results(results) if results else None
    model_io.write_report(report, logs, resolved, out_dir / "report.json")
    _write_csvs(out_dir, logs, report)
    if report is not None:
        print(f"val accuracy: {report.accuracy:.4f}"
              + (f"  auc: {report.auc:.4f}" if report.auc is not None else ""))
    print(f"artifacts written to {out_dir}")
    return 0


def _cmd_eval(args) -> int:
    network = model_io.load_weights(args.weights)
    _, split = data.read_manifest(args.manifest, args.data)
    if not split.val:
        raise IngestionError("empty dataset: the manifest's val partition has no files")
    batches = data.batch_iter(split.val, args.batch_size, 0, shuffle=False)
    results = training.evaluate(network, batches)
    report = metrics.report_from_results(results)
    doc = report.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
        if report.roc is not None:
            roc_path = Path(args.out).with_suffix(".roc.csv")
            with roc_path.open("w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["fpr", "tpr"])
                writer.writerows(report.roc.points)
        print(f"report written to {args.out}")
    else:
        print(json.dumps(doc, indent=2))
    return 0


def _cmd_gradcheck(args) -> int:
    network = architectures.build(args.arch, seed=args.seed,
                                  input_size=(args.size, args.size, 3))
    rng = np.random.default_rng(args.seed)
    batch = rng.random((args.batch, args.size, args.size, 3))
    labels = np.arange(args.batch) % 2
    report = autograd.grad_check(network, batch, labels, epsilon=args.eps)
    print(f"max relative error: {report.max_rel_error:.3e}")
    if args.verbose:
        for name, err in sorted(report.per_param.items(), key=lambda kv: -kv[1]):
            print(f"  {name:<28}{err:.3e}")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="ulsq", description="Compact fire-module CNN engine "
                     "for binary cell-image classification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("count-params", help="exact trainable parameter count")
    p.add_argument("--arch", required=True)
    p.set_defaults(func=_cmd_count_params)

    p = sub.add_parser("summary", help="per-layer shapes and parameter ledger")
    p.add_argument("--arch", required=True)
    p.set_defaults(func=_cmd_summary)

    p = sub.add_parser("split", help="write a stratified train/val manifest")
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--val-frac", type=float, default=0.2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config")
    p.add_argument("--arch")
    p.add_argument("--data")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate stored weights on a manifest's val split")
    p.add_argument("--weights", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--data")
    p.add_argument("--batch-size", type=int, dest="batch_size", default=32)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check at reduced input size")
    p.add_argument("--arch", required=True)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _CliUsage as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:  # includes ShapeError
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (IngestionError, FormatError, IntegrityError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
