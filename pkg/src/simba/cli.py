"""Command-line surface.

Subcommands: ``train``, ``eval``, ``forecast``, ``gradcheck``, ``bench``,
``gen-data``.  Exit codes: 0 success, 2 usage/configuration error,
3 numeric failure.  ``eval`` and ``forecast`` never mutate state, so they
are idempotent.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import audit, bench
from . import checkpoint as ckpt
from . import config as C
from . import data as D
from . import tensor as T
from . import train as TR
from .errors import ConfigError, NumericError, SimbaError
from .model import ForecastModel, VisionModel
from .tensor import Tensor

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _say(quiet: bool, *parts) -> None:
    if not quiet:
        print(*parts)


def cmd_train(args) -> int:
    cfg = C.load_run_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.optim.seed = args.seed
    out_dir = args.out or cfg.out_dir
    if out_dir is None:
        raise ConfigError("out_dir", "set out_dir in the config or pass --out")
    dataset = C.build_dataset(cfg)
    model = C.build_model(cfg, dataset)
    report = TR.train_loop(model, dataset, cfg.optim, out_dir=out_dir, quiet=args.quiet)

    summary = [
        f"task: {cfg.task}",
        f"steps: {len(report.step_losses)}",
        f"non-finite flags: {report.nonfinite_count}",
        f"skipped steps: {report.skipped_steps}",
        f"aborted: {report.aborted}",
        f"wall time: {report.wall_time:.1f}s",
        f"checkpoint: {report.checkpoint_stem}",
    ] + [f"final {k}: {v:.6g}" for k, v in report.final_metrics.items()]
    with open(os.path.join(out_dir, "summary.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(summary) + "\n")
    _say(args.quiet, "\n".join(summary))
    if report.aborted:
        raise NumericError(
            f"training aborted after {report.nonfinite_count} non-finite steps"
        )
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = C.load_run_config(args.config)
    if args.checkpoint is None:
        raise ConfigError("checkpoint", "eval requires --checkpoint")
    model, _ = ckpt.load_checkpoint(args.checkpoint)
    dataset = C.build_dataset(cfg)
    if isinstance(model, VisionModel):
        metrics = TR.evaluate(model, dataset)
        print(f"top1={metrics['top1']!r} ce={metrics['ce']!r}")
    else:
        metrics = TR.evaluate(model, dataset, split="test")
        print(f"horizon={model.cfg.horizon} mse={metrics['mse']!r} mae={metrics['mae']!r}")
    return EXIT_OK


def cmd_forecast(args) -> int:
    cfg = C.load_run_config(args.config)
    if args.checkpoint is None:
        raise ConfigError("checkpoint", "forecast requires --checkpoint")
    model, manifest = ckpt.load_checkpoint(args.checkpoint)
    if not isinstance(model, ForecastModel):
        raise ConfigError("checkpoint", "forecast requires a forecasting checkpoint")
    stats = getattr(model, "standardization", None)
    if stats is None:
        raise ConfigError("checkpoint", "checkpoint carries no standardization statistics")
    date_col = cfg.data_spec.get("date_col", True) if cfg.data_source == "csv" else True
    series = D.load_csv_series(
        args.input_csv,
        date_col_present=date_col,
        lookback=model.cfg.lookback,
        horizon=model.cfg.horizon,
        fractions=(1.0, 0.0, 0.0),
    )
    if series.num_channels != model.cfg.num_channels:
        raise ConfigError(
            "input_csv",
            f"{series.num_channels} channels, model expects {model.cfg.num_channels}",
        )
    if series.total_len < model.cfg.lookback:
        raise ConfigError(
            "input_csv", f"need at least {model.cfg.lookback} rows, got {series.total_len}"
        )
    mean = np.asarray(stats["mean"])
    std = np.asarray(stats["std"])
    window = series.values[-model.cfg.lookback :]
    x = (window - mean) / std
    with T.no_grad():
        pred = model.forward(Tensor(x[None], dtype=model.cfg.dtype)).numpy()[0]
    pred = pred.astype(np.float64) * std + mean
    lines = [",".join(series.channel_names)]
    for row in pred:
        lines.append(",".join(repr(float(v)) for v in row))
    out_path = args.out_csv
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    with open(out_path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    _say(args.quiet, f"wrote {pred.shape[0]} x {pred.shape[1]} forecast to {out_path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = audit.run_audit(args.scope, seed=args.seed or 0)
    failed = False
    for name, err in results:
        ok = err < audit.TOLERANCE
        failed |= not ok
        print(f"{name:24s} max_rel_err={err:.3e} {'PASS' if ok else 'FAIL'}")
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_bench(args) -> int:
    sizes = None
    if args.sizes:
        try:
            sizes = tuple(int(s) for s in args.sizes.split(","))
        except ValueError:
            raise ConfigError("sizes", f"expected comma-separated integers, got {args.sizes!r}")
    if args.suite == "ssm-kernel":
        rows = bench.bench_ssm_kernel(sizes or bench.DEFAULT_SCAN_LENGTHS)
    else:
        rows = bench.bench_einfft(sizes or bench.DEFAULT_EMM_CHANNELS)
    csv_text = bench.rows_to_csv(rows)
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        with open(args.out, "w", encoding="utf-8", newline="\n") as f:
            f.write(csv_text)
        _say(args.quiet, f"wrote {len(rows)} rows to {args.out}")
    else:
        print(csv_text, end="")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    cfg = C.load_run_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out_dir = args.out or cfg.out_dir
    if out_dir is None:
        raise ConfigError("out_dir", "set out_dir in the config or pass --out")
    dataset = C.build_dataset(cfg)
    stem = os.path.join(out_dir, "dataset")
    dataset.save(stem)
    if isinstance(dataset, D.ImageDataset):
        baseline = D.nearest_centroid_accuracy(dataset)
        _say(
            args.quiet,
            f"images: {len(dataset)} x {dataset.images.shape[1:]} in [{dataset.images.min():.3f}, "
            f"{dataset.images.max():.3f}], {dataset.num_classes} classes",
        )
        _say(args.quiet, f"nearest-centroid baseline accuracy: {baseline:.3f}")
    else:
        _say(
            args.quiet,
            f"series: {dataset.total_len} x {dataset.num_channels}, "
            f"splits {dataset.train_end}/{dataset.val_end - dataset.train_end}/"
            f"{dataset.total_len - dataset.val_end}",
        )
        _say(args.quiet, f"channel mean {dataset.mean.round(3).tolist()}")
        _say(args.quiet, f"channel std  {dataset.std.round(3).tolist()}")
    _say(args.quiet, f"wrote {stem}.json / {stem}.bin")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simba",
        description="Selective state-space sequence mixing with FFT channel mixing",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON run config")
        p.add_argument("--checkpoint", help="checkpoint stem (no extension)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--quiet", action="store_true", help="suppress informational output")

    p = sub.add_parser("train", help="train a model and write checkpoints + metrics")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("forecast", help="predict a horizon from the tail of a CSV")
    common(p)
    p.add_argument("--input-csv", required=True, help="input series CSV")
    p.add_argument("--out-csv", required=True, help="where to write the (T x C) prediction")
    p.set_defaults(fn=cmd_forecast)

    p = sub.add_parser("gradcheck", help="finite-difference audit of tape gradients")
    p.add_argument("--scope", required=True, help="op name, module group, 'block', 'model', or 'all'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("bench", help="timing evidence: scan vs FFT kernel, EMM vs dense")
    p.add_argument("--suite", required=True, choices=("ssm-kernel", "einfft"))
    p.add_argument("--sizes", help="comma-separated sizes")
    p.add_argument("--out", help="CSV output path (default: stdout)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset container")
    common(p)
    p.set_defaults(fn=cmd_gen_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SimbaError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
