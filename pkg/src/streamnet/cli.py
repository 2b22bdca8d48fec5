"""Command-line front end.

Commands: train one cell, sweep a noise x architecture matrix, analyze
first-layer weight distributions of saved checkpoints, plot CSV artifacts as
SVG, and dump intensity-slice / noise previews as PPM images.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import analysis, config, data_io, plotting, training
from .config import ConfigError, RunConfig
from .data_io import DataFormatError, SyntheticSpec
from .slicing import (NoiseSpec, Xorshift64Star, corrupt_with_noise,
                      make_slice_spec, slice_image, subseed)


def _load_config(args) -> RunConfig:
    text = None
    source = "<defaults>"
    if args.config:
        if not os.path.exists(args.config):
            raise ConfigError(f"config: file not found: {args.config}")
        with open(args.config) as fh:
            text = fh.read()
        source = args.config
    return config.resolve(text, args.set or [], source)


def _load_datasets(cfg: RunConfig):
    kind = cfg["dataset"]
    if kind == "synthetic":
        train, test = data_io.generate_synthetic(SyntheticSpec(
            n_classes=cfg["synthetic_classes"],
            train_per_class=cfg["synthetic_train_per_class"],
            test_per_class=cfg["synthetic_test_per_class"],
            channels=cfg["synthetic_channels"],
            size=cfg["synthetic_size"],
            seed=cfg["synthetic_seed"],
        ))
    elif kind == "cifar10":
        train, test = data_io.load_cifar10(cfg["data_dir"])
    else:
        train = data_io.load_raw_dataset(cfg["raw_train_path"], "train")
        test = data_io.load_raw_dataset(cfg["raw_test_path"], "test")
    if cfg["subset_train"]:
        train = data_io.subset_stratified(train, cfg["subset_train"], cfg["subset_seed"])
    if cfg["subset_test"]:
        test = data_io.subset_stratified(test, cfg["subset_test"], cfg["subset_seed"])
    return train, test


def _experiment(cfg: RunConfig, spec, seed: int) -> training.ExperimentConfig:
    if cfg["adam_conventional_betas"]:
        beta1, beta2 = 0.9, 0.999
    else:
        beta1, beta2 = cfg["beta1"], cfg["beta2"]
    return training.ExperimentConfig(
        network=spec,
        noise_ratio=cfg["noise_ratio"],
        epochs=cfg["epochs"],
        seed=seed,
        batch_size=cfg["batch_size"],
        train_noise=cfg["train_noise"],
        eval_every=cfg["eval_every"],
        dataset=cfg["dataset"],
        lr=cfg["lr"],
        beta1=beta1,
        beta2=beta2,
        epsilon=cfg["epsilon"],
        noise_per_channel=cfg["noise_per_channel"],
    )


def _echo_config(cfg: RunConfig, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    data_io.atomic_write(os.path.join(out_dir, "config.txt"), cfg.render().encode())


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _load_config(args)
    train_set, test_set = _load_datasets(cfg)
    spec = config.network_spec(cfg, train_set.n_classes, train_set.image_shape,
                               seed=cfg["seed"])
    cell = _experiment(cfg, spec, cfg["seed"])
    out_dir = cfg["out_dir"]
    _echo_config(cfg, out_dir)
    summary = training.run_cell(cell, train_set, test_set, out_dir, resume=False)
    print(f"{cell.tag} seed {cell.seed}: "
          f"final clean {summary['final_clean']:.4f}, "
          f"final noisy {summary['final_noisy']:.4f}")
    print(f"log: {summary['csv']}")
    print(f"checkpoint: {summary['checkpoint']}")
    return 0


def _sweep_cells(cfg: RunConfig, n_classes: int, input_shape: tuple) -> list:
    cells = []
    for token in cfg["sweep_architectures"]:
        vertex, scale = config.parse_architecture_token(token)
        for ratio in cfg["sweep_noise_ratios"]:
            for seed in cfg["sweep_seeds"]:
                spec = config.network_spec(cfg, n_classes, input_shape,
                                           vertex=vertex, scale=scale, seed=seed)
                cells.append(dataclasses.replace(_experiment(cfg, spec, seed),
                                                 noise_ratio=ratio))
    return cells


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    train_set, test_set = _load_datasets(cfg)
    cells = _sweep_cells(cfg, train_set.n_classes, train_set.image_shape)
    if args.dry_run:
        for cell in cells:
            print(f"{cell.dataset}_{cell.tag}_{cell.seed}")
        print(f"{len(cells)} cells")
        return 0
    out_dir = cfg["out_dir"]
    _echo_config(cfg, out_dir)
    workers = cfg["workers"] or None
    results = training.sweep(cells, {cfg["dataset"]: (train_set, test_set)},
                             out_dir, workers)
    failed = [r for r in results if r["status"] == "failed"]
    for r in results:
        print(f"{r['dataset']}_{r['tag']}_{r['seed']}: {r['status']} "
              f"clean {r['final_clean']:.4f} noisy {r['final_noisy']:.4f}")
    if failed:
        for r in failed:
            print(f"FAILED {r['tag']} seed {r['seed']}:\n{r.get('error', '')}",
                  file=sys.stderr)
        return 1
    return 0


def cmd_analyze(args) -> int:
    nets = []
    for path in args.checkpoints:
        net, _, _ = data_io.load_checkpoint(path)
        tag = os.path.splitext(os.path.basename(path))[0]
        nets.append((tag, net))
    report = analysis.diversity_report(nets, bins=args.bins, alpha=args.alpha)
    os.makedirs(args.out_dir, exist_ok=True)
    report_path = os.path.join(args.out_dir, "kl_report.csv")
    data_io.atomic_write(report_path, report.to_csv().encode())
    print(f"report: {report_path} (range [{report.value_range[0]:.6g}, "
          f"{report.value_range[1]:.6g}], bins {report.bins}, alpha {report.alpha})")
    for tag, net in nets:
        hist_path = os.path.join(args.out_dir, f"{tag}_hist.csv")
        data_io.atomic_write(
            hist_path,
            analysis.histogram_csv(net, args.bins, report.value_range).encode())
        print(f"histogram: {hist_path}")
    for row in report.rows:
        print(f"{row.tag},{row.channel}: kl {row.kl:.6f}")
    return 0


def _read_csv_rows(path: str, numeric_from: int) -> tuple:
    """Returns (header, rows); malformed lines are reported by line number.

    Columns from index ``numeric_from`` on must parse as floats.
    """
    with open(path) as fh:
        lines = fh.read().strip().splitlines()
    if not lines:
        raise DataFormatError(f"{path}:1: empty CSV")
    header = lines[0].split(",")
    rows = []
    for lineno, line in enumerate(lines[1:], 2):
        cells = line.split(",")
        if len(cells) != len(header):
            raise DataFormatError(f"{path}:{lineno}: expected {len(header)} "
                                  f"columns, got {len(cells)}")
        try:
            rows.append(cells[:numeric_from]
                        + [float(c) for c in cells[numeric_from:]])
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: non-numeric cell") from None
    return header, rows


def cmd_plot(args) -> int:
    log_header = ["epoch", "train_loss", "clean_acc", "noisy_acc", "wall_ms"]
    hist_header = ["channel", "bin_lo", "bin_hi", "count"]
    line_series, bar_series = [], []
    for path in args.csvs:
        with open(path) as fh:
            first = fh.readline().strip()
        numeric_from = 1 if first.startswith("channel") else 0
        header, rows = _read_csv_rows(path, numeric_from)
        label = os.path.splitext(os.path.basename(path))[0]
        if header == log_header:
            col = log_header.index(args.column)
            line_series.append((label, [(r[0], r[col]) for r in rows]))
        elif header == hist_header:
            bars = [(r[1], r[2], r[3]) for r in rows if r[0] == args.channel]
            if not bars:
                raise DataFormatError(f"{path}: no rows for channel {args.channel!r}")
            bar_series.append((label, bars))
        else:
            raise DataFormatError(f"{path}:1: unrecognized CSV header")
    if line_series and bar_series:
        raise DataFormatError("cannot mix training logs and histograms in one plot")
    if line_series:
        svg = plotting.line_chart(line_series, title=args.title or args.column,
                                  y_label=args.column)
    elif bar_series:
        svg = plotting.bar_chart(bar_series, title=args.title or "weight distribution")
    else:
        raise DataFormatError("no input CSVs given")
    data_io.atomic_write(args.out, svg.encode())
    print(f"wrote {args.out}")
    return 0


def cmd_slice_preview(args) -> int:
    image = data_io.read_ppm(args.image)
    spec = make_slice_spec(args.slices)
    os.makedirs(args.out_dir, exist_ok=True)
    slices = slice_image(image, spec)
    for i, s in enumerate(slices):
        data_io.write_ppm(os.path.join(args.out_dir, f"slice_{i:02d}.ppm"), s)
    recon = np.sum(slices, axis=0)
    data_io.write_ppm(os.path.join(args.out_dir, "reconstruction.ppm"), recon)
    noise = NoiseSpec(args.noise, seed=args.seed)
    noisy = corrupt_with_noise(image, noise, Xorshift64Star(subseed(args.seed, 0)))
    tag = f"{int(round(args.noise * 100)):03d}"
    data_io.write_ppm(os.path.join(args.out_dir, f"noisy_{tag}.ppm"), noisy)
    print(f"wrote {len(slices)} slices, reconstruction, and noisy_{tag}.ppm "
          f"to {args.out_dir}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamnet",
        description="Multi-stream CNNs over intensity slices: training, "
                    "noise sweeps, weight-distribution analysis, plots.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")

    p = sub.add_parser("train", help="train one experiment cell")
    add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="run the architecture x noise x seed matrix")
    add_config_args(p)
    p.add_argument("--dry-run", action="store_true",
                   help="list the cells without training")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="KL divergence report over checkpoints")
    p.add_argument("checkpoints", nargs="+", help="checkpoint files to compare")
    p.add_argument("--out-dir", default="analysis")
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--alpha", type=float, default=1.0)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("plot", help="render CSV logs or histograms as SVG")
    p.add_argument("csvs", nargs="+", help="training-log or histogram CSVs")
    p.add_argument("--out", required=True, help="output .svg path")
    p.add_argument("--column", default="noisy_acc",
                   choices=["train_loss", "clean_acc", "noisy_acc"])
    p.add_argument("--channel", default="all",
                   help="histogram channel to plot (default: all)")
    p.add_argument("--title", default="")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("slice-preview",
                       help="dump intensity slices and a noisy copy of one PPM image")
    p.add_argument("image", help="input image (binary PPM, P6)")
    p.add_argument("--slices", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="preview")
    p.set_defaults(func=cmd_slice_preview)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
