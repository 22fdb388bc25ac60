"""Command-line entry point.

    cpformer <command> [--config FILE] [--KEY VALUE ...]

Commands: train, eval, ablate, concepts, robustness, plot, selfcheck.
Every config key is also a flag; flags override the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import data as data_mod
from .concepts import CONCEPT_NAMES, soft_target_matrix
from .config import RunConfig, parse_config
from .errors import ConfigError, CPformerError, DataError
from .evaluation import ablation_run, evaluate, noise_robustness, prediction_dump
from .model import init_params
from .plotting import (plot_ablation, plot_predictions, plot_training, read_prediction_csv,
                       write_prediction_csv,
                       write_prediction_svg)
from .training import load_checkpoint, save_checkpoint, train, train_config_dict

log = logging.getLogger("cpformer")

COMMANDS = ("train", "eval", "ablate", "concepts", "robustness", "plot", "selfcheck")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cpformer", description="Concept- and physics-regularised Transformer forecaster.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat JSON config file")
    parser.add_argument("-v", "--verbose", action="store_true")
    for f in fields(RunConfig):
        parser.add_argument(f"--{f.name}", dest=f"opt_{f.name}", metavar="VALUE")
    return parser


def load_data(cfg: RunConfig) -> data_mod.Series:
    if cfg.data == "synthetic:seasonal":
        return data_mod.synthetic_seasonal_series(seed=cfg.seed)
    if cfg.data == "synthetic:euler":
        return data_mod.synthetic_euler_series(seed=cfg.seed)
    if cfg.data.startswith("synthetic:"):
        raise ConfigError(f"unknown synthetic dataset {cfg.data!r} (synthetic:seasonal, synthetic:euler)")
    try:
        raw = data_mod.load_dataset(cfg.data)
    except FileNotFoundError:
        raise DataError(f"data file not found: {cfg.data}") from None
    return raw.series(cfg.channel or raw.columns[0])


def prepare(cfg: RunConfig, series: data_mod.Series) -> data_mod.PreparedData:
    split = data_mod.SplitSpec(cfg.train_frac, cfg.val_frac, 1.0 - cfg.train_frac - cfg.val_frac)
    return data_mod.prepare(series, cfg.L, cfg.tau, split, standardize=cfg.standardize)


class Artifacts:
    """Output paths: <dataset>_<channel>_<command>_s<seed>_<confighash>.<ext>."""

    def __init__(self, cfg: RunConfig, series: data_mod.Series, command: str):
        self.cfg = cfg
        self.dir = cfg.output_dir
        self.dir.mkdir(parents=True, exist_ok=True)
        self.series = series
        self.command = command
        self.written: list[Path] = []

    def stem(self, command: str | None = None) -> str:
        clean = lambda s: re.sub(r"[^A-Za-z0-9]+", "-", s).strip("-") or "x"
        return (f"{clean(self.series.name)}_{clean(self.series.channel)}_{command or self.command}"
                f"_s{self.cfg.seed}_{self.cfg.digest()}")

    def path(self, suffix: str, command: str | None = None) -> Path:
        p = self.dir / f"{self.stem(command)}{suffix}"
        if command is None:
            self.written.append(p)
        return p

    def record_config(self) -> None:
        p = self.path(".config.json")
        p.write_text(json.dumps(self.cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def trained_params(cfg: RunConfig, prepared: data_mod.PreparedData, arts: Artifacts):
    """Load the checkpoint named in the config or left by `train`; otherwise train now."""
    model = cfg.model_config()
    candidates = [Path(cfg.checkpoint)] if cfg.checkpoint else [arts.path(".cpf", command="train")]
    for ckpt in candidates:
        if ckpt.exists():
            params, model, _ = load_checkpoint(ckpt)
            log.info("loaded checkpoint %s", ckpt)
            return params, model
        if cfg.checkpoint:
            raise DataError(f"checkpoint not found: {ckpt}")
    log.info("no checkpoint for this config; training from seed %d", cfg.seed)
    params, _ = train(prepared.train, init_params(model, cfg.seed), model, cfg.train_config())
    return params, model


def cmd_train(cfg, series, prepared, arts) -> None:
    model = cfg.model_config()
    tc = cfg.train_config()
    params, history = train(prepared.train, init_params(model, cfg.seed), model, tc)
    save_checkpoint(arts.path(".cpf"), params, model, {"train": train_config_dict(tc)})
    history.to_csv(arts.path(".log.csv"))
    if len(history):
        plot_training(arts.path(".png"), history)
        last = history.records[-1].breakdown
        print(f"{len(history)} steps; final {last}")


def cmd_eval(cfg, series, prepared, arts) -> None:
    params, model = trained_params(cfg, prepared, arts)
    horizon = cfg.horizon
    if horizon is None:
        horizon = 24 if series.interval_name == "weekly" else 96
    report = evaluate(params, model, prepared, horizon=horizon, stride=cfg.stride)
    report.to_csv(arts.path(".csv"))
    text = report.pretty()
    arts.path(".txt").write_text(text + "\n")
    t, y, yhat = prediction_dump(params, model, prepared.test)
    write_prediction_csv(arts.path(".predictions.csv"), t, prepared.scaler.inverse(y), prepared.scaler.inverse(yhat))
    print(text)


def cmd_ablate(cfg, series, prepared, arts) -> None:
    seeds = list(range(cfg.seed, cfg.seed + cfg.n_seeds))
    report = ablation_run(prepared, cfg.model_config(), cfg.train_config(), seeds)
    report.to_csv(arts.path(".csv"))
    arts.path(".txt").write_text(report.pretty() + "\n")
    plot_ablation(arts.path(".png"), report)
    print(report.pretty())


def cmd_concepts(cfg, series, prepared, arts) -> None:
    # exported in the series' own units; row i holds the soft targets for time tau+1+i
    values = series.values
    n = cfg.tau + 1
    if len(values) <= n:
        raise DataError(f"series of length {len(values)} too short for tau={cfg.tau}")
    windows = np.lib.stride_tricks.sliding_window_view(values, n)[:-1]
    targets = soft_target_matrix(windows, cfg.tau)
    lines = [",".join(CONCEPT_NAMES)] + [",".join(repr(float(v)) for v in row) for row in targets]
    arts.path(".csv").write_text("\n".join(lines) + "\n")
    print(f"{len(targets)} soft-target rows (t = {n}..{len(values) - 1})")


def cmd_robustness(cfg, series, prepared, arts) -> None:
    params, model = trained_params(cfg, prepared, arts)
    report = noise_robustness(params, model, prepared, cfg.noise_fraction, cfg.bins, seed=cfg.seed)
    report.to_csv(arts.path(".csv"))
    arts.path(".txt").write_text(report.pretty() + "\n")
    print(report.pretty())


def cmd_plot(cfg, series, prepared, arts) -> None:
    if cfg.predictions:
        try:
            t, y, yhat = read_prediction_csv(cfg.predictions)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read prediction dump {cfg.predictions}: {exc}") from None
    else:
        prepared = prepared()
        params, model = trained_params(cfg, prepared, arts)
        t, y, yhat = prediction_dump(params, model, prepared.test)
        y, yhat = prepared.scaler.inverse(y), prepared.scaler.inverse(yhat)
    title = f"{series.name} / {series.channel}"
    write_prediction_csv(arts.path(".csv"), t, y, yhat)
    write_prediction_svg(arts.path(".svg"), t, y, yhat, title)
    plot_predictions(arts.path(".png"), t, y, yhat, title)
    print(f"{len(t)} test predictions plotted")


def run_command(command: str, cfg: RunConfig) -> int:
    if command == "selfcheck":
        from .selfcheck import run_selfcheck

        return run_selfcheck()
    series = load_data(cfg)
    arts = Artifacts(cfg, series, command)
    handler = globals()[f"cmd_{command}"]
    if command in ("concepts", "plot"):
        # these may not need sample windows at all, so splitting is deferred
        handler(cfg, series, lambda: prepare(cfg, series), arts)
    else:
        handler(cfg, series, prepare(cfg, series), arts)
    arts.record_config()
    for p in arts.written:
        print(f"wrote {p}")
    return 0


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("opt_") and v is not None}
        cfg = parse_config(args.config, overrides)
        return run_command(args.command, cfg)
    except CPformerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
