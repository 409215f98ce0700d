"""Command-line experiment harness.

Subcommands: ``gradcheck``, ``geometry``, ``train`` and ``sweep``. Exit codes:
0 success, 2 configuration or data error, 3 unsupported request,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import geometry
from .config import (ARCH_PRESETS, ConfigError, ExperimentConfig, apply_overrides, load_config,
                     resolve_lambda)
from .data import IdxError
from .layers import save_params
from .train import (Architecture, NonFiniteLossError, TrainRecord, UnsupportedGradcheck, audit_geometry,
                    block_hyperplanes, build_model, fit, gradcheck, hidden_blocks)

log = logging.getLogger("bnit")

EXIT_OK, EXIT_CONFIG, EXIT_UNSUPPORTED, EXIT_NUMERIC = 0, 2, 3, 4
GRADCHECK_THRESHOLD = 1e-5
TRAIN_CSV_VERSION = "# bnit-train v1"
SWEEP_CSV_VERSION = "# bnit-sweep v1"
GEO_FIELDS = ("plane_fraction_mean", "sample_count_mean", "norm_count_corr", "mean_jaccard")


def _fmt(x) -> str:
    return repr(float(x))


def _lam_tag(lam: float) -> str:
    return f"{lam:g}".replace(".", "p")


def audited_layers(arch: Architecture, which: str) -> list[int]:
    idx = [i + 1 for i, a in enumerate(arch.activations) if a.value != "identity"]
    return idx[:1] if which == "first" else idx


class RecordWriter:
    """Streams TrainRecords to CSV so a diverging run leaves its partial curve behind."""

    def __init__(self, path: Path, layers: list[int]):
        self.layers = layers
        self.fh = path.open("w", newline="")
        self.fh.write(TRAIN_CSV_VERSION + "\n")
        self.w = csv.writer(self.fh, lineterminator="\n")
        self.w.writerow(["epoch", "train_loss", "val_error_rate"]
                        + [f"L{k}_{f}" for k in layers for f in GEO_FIELDS])

    def __call__(self, rec: TrainRecord) -> None:
        row = [rec.epoch, _fmt(rec.train_loss), _fmt(rec.val_error_rate)]
        for k in self.layers:
            geo = rec.geometry.get(k)
            row += [_fmt(geo[f]) if geo else "" for f in GEO_FIELDS]
        self.w.writerow(row)
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


def run_training(cfg: ExperimentConfig, arch: Architecture, lam: float, seed: int, train, val,
                 csv_path: Path, checkpoint: Path | None = None, learning_rate: float | None = None):
    init = dataclasses.replace(cfg.init, bias_lambda=lam, seed=seed)
    opt = cfg.optim if learning_rate is None else dataclasses.replace(cfg.optim, learning_rate=learning_rate)
    model = build_model(arch, init)
    writer = RecordWriter(csv_path, audited_layers(arch, cfg.geometry_layers))
    try:
        records = fit(model, train, val, opt, seed, geometry_every=cfg.geometry_every,
                      geometry_layers=cfg.geometry_layers, on_record=writer)
    finally:
        writer.close()
    if checkpoint is not None:
        save_params(checkpoint, model.state_dict())
    return records


def _check_shapes(arch: Architecture, train) -> None:
    if arch.sizes[0] != train.n_features:
        raise ConfigError(f"architecture input size {arch.sizes[0]} != data feature count {train.n_features}")
    if arch.sizes[-1] < train.n_classes:
        raise ConfigError(f"architecture output size {arch.sizes[-1]} < number of classes {train.n_classes}")


def _mean_std(values) -> tuple[float, float]:
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), float(a.std())


# ---- subcommands -------------------------------------------------------------

def cmd_gradcheck(cfg: ExperimentConfig) -> int:
    arch = cfg.architecture()
    train, _ = cfg.data.load()
    _check_shapes(arch, train)
    worst = 0.0
    try:
        for seed in cfg.seeds:
            worst = max(worst, gradcheck(arch, train, seed, cfg.gradcheck_probes, init_cfg=cfg.init,
                                         batch_size=cfg.gradcheck_batch))
    except UnsupportedGradcheck as exc:
        print(f"UNSUPPORTED {exc}")
        return EXIT_UNSUPPORTED
    status = "PASS" if worst < GRADCHECK_THRESHOLD else "FAIL"
    print(f"{status} max_rel_err={worst:.3e}")
    return EXIT_OK if status == "PASS" else EXIT_NUMERIC


def cmd_geometry(cfg: ExperimentConfig) -> int:
    arch = cfg.architecture()
    train, _ = cfg.data.load()
    _check_shapes(arch, train)
    out = cfg.out_dir() / "geometry"
    X = train.X
    summary_path = out / "geometry_summary.csv"
    out.mkdir(parents=True, exist_ok=True)
    with summary_path.open("w", newline="") as fh:
        fh.write(geometry.CSV_VERSION + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "seed", "activation"] + list(GEO_FIELDS) + ["degenerate"])
        for lam_spec in cfg.lambda_grid:
            lam = resolve_lambda(lam_spec, X)
            for seed in cfg.seeds:
                model = build_model(arch, dataclasses.replace(cfg.init, bias_lambda=lam, seed=seed))
                lin, bn, act = next(hidden_blocks(model))
                W, b = block_hyperplanes(lin, bn, X)
                mask = geometry.activation_mask(W, b, X, act.kind)
                rep = geometry.geometry_report(mask, X, seed=seed)
                geometry.write_report_csv(rep, out, f"lam{_lam_tag(lam)}_seed{seed}", lam, 1, 0)
                s = rep.summary()
                w.writerow([_fmt(lam), seed, act.kind.value] + [_fmt(s[f]) for f in GEO_FIELDS]
                           + [int(rep.degenerate)])
                print(f"lambda={lam:g} seed={seed} {act.kind.value}: plane_fraction_mean={s['plane_fraction_mean']:.4f} "
                      f"norm_count_corr={s['norm_count_corr']:.4f} mean_jaccard={s['mean_jaccard']:.4f}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig) -> int:
    arch = cfg.architecture()
    train, val = cfg.data.load()
    _check_shapes(arch, train)
    lam = resolve_lambda(cfg.init.bias_lambda if cfg.train_lambda is None else cfg.train_lambda, train.X)
    out = cfg.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    finals = []
    for seed in cfg.seeds:
        try:
            records = run_training(cfg, arch, lam, seed, train, val, out / f"train_seed{seed}.csv",
                                   checkpoint=out / f"train_seed{seed}.bnit")
        except NonFiniteLossError as exc:
            print(f"DIVERGED seed={seed}: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        finals.append(records[-1].val_error_rate)
        print(f"seed={seed} final val_error_rate={records[-1].val_error_rate:.4f}")
    with (out / "train_summary.csv").open("w", newline="") as fh:
        fh.write(TRAIN_CSV_VERSION + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "final_val_error_rate"])
        for seed, err in zip(cfg.seeds, finals):
            w.writerow([seed, _fmt(err)])
        mean, std = _mean_std(finals)
        w.writerow(["mean", _fmt(mean)])
        w.writerow(["std", _fmt(std)])
    return EXIT_OK


def sweep_families(cfg: ExperimentConfig) -> dict[str, Architecture]:
    """The three architecture families compared in a sweep, sharing sizes and batchnorm."""
    return {name: cfg.arch.build(activation=act, binary=binary)
            for name, (act, binary) in (("fp", ARCH_PRESETS["htanh"]), ("binary", ARCH_PRESETS["binary"]),
                                        ("relu", ARCH_PRESETS["relu"]))}


def run_sweep(cfg: ExperimentConfig) -> dict[tuple[str, float], list[float]]:
    """Train every (family, lambda, seed); returns final validation errors keyed by (family, lambda)."""
    train, val = cfg.data.load()
    families = sweep_families(cfg)
    for arch in families.values():
        _check_shapes(arch, train)
    out = cfg.out_dir() / "sweep"
    out.mkdir(parents=True, exist_ok=True)
    lambdas = [resolve_lambda(lam, train.X) for lam in cfg.lambda_grid]
    plan = [("fp", lam) for lam in lambdas] + [("binary", lam) for lam in lambdas] + [("relu", 0.0)]
    rates = {"fp": cfg.fp_learning_rate, "binary": cfg.binary_learning_rate, "relu": cfg.fp_learning_rate}
    results: dict[tuple[str, float], list[float]] = {}
    for family, lam in plan:
        errs = []
        for seed in cfg.seeds:
            path = out / f"{family}_lam{_lam_tag(lam)}_seed{seed}.csv"
            records = run_training(cfg, families[family], lam, seed, train, val, path,
                                   learning_rate=rates[family])
            errs.append(records[-1].val_error_rate)
        results[(family, lam)] = errs
        mean, std = _mean_std(errs)
        log.info("%s lambda=%g: val error %.4f +- %.4f", family, lam, mean, std)
    with (out / "sweep_table.csv").open("w", newline="") as fh:
        fh.write(SWEEP_CSV_VERSION + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "lambda", "fp_mean", "fp_std", "binary_mean", "binary_std"])
        for lam in lambdas:
            w.writerow(["htanh", _fmt(lam), *map(_fmt, _mean_std(results[("fp", lam)])),
                        *map(_fmt, _mean_std(results[("binary", lam)]))])
        w.writerow(["relu_baseline", _fmt(0.0), *map(_fmt, _mean_std(results[("relu", 0.0)])), "", ""])
    return results


def cmd_sweep(cfg: ExperimentConfig) -> int:
    if not cfg.lambda_grid:
        raise ConfigError("sweep needs a non-empty lambda_grid")
    try:
        results = run_sweep(cfg)
    except NonFiniteLossError as exc:
        print(f"DIVERGED: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"{'lambda':>8} {'htanh':>16} {'binary':>16}")
    for (family, lam), errs in results.items():
        if family == "fp":
            fm, fs = _mean_std(errs)
            bm, bs = _mean_std(results[("binary", lam)])
            print(f"{lam:8g} {100 * fm:9.2f} ± {100 * fs:4.2f} {100 * bm:9.2f} ± {100 * bs:4.2f}")
    rm, rs = _mean_std(results[("relu", 0.0)])
    print(f"{'relu':>8} {100 * rm:9.2f} ± {100 * rs:4.2f}")
    return EXIT_OK


COMMANDS = {"gradcheck": cmd_gradcheck, "geometry": cmd_geometry, "train": cmd_train, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bnit", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", type=Path, help="INI experiment config")
        p.add_argument("--seed", type=int, action="append", help="seed (repeatable)")
        p.add_argument("--lambda", dest="lambdas", action="append",
                       help="bias half-width lambda (repeatable; 'max_norm+1' allowed)")
        p.add_argument("--out", type=Path, help="output directory (default $BNIT_OUT or ./runs)")
        p.add_argument("--epochs", type=int)
        p.add_argument("--arch", choices=sorted(ARCH_PRESETS), help="architecture family preset")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        cfg = apply_overrides(cfg, seeds=args.seed, lambdas=args.lambdas, out=args.out,
                              epochs=args.epochs, arch=args.arch)
        if args.command == "train" and args.lambdas:
            if len(cfg.lambda_grid) != 1:
                raise ConfigError("train takes a single --lambda")
            cfg = dataclasses.replace(cfg, train_lambda=cfg.lambda_grid[0])
        return COMMANDS[args.command](cfg)
    except (ConfigError, IdxError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
