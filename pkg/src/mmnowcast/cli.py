"""Command-line entry point: ``mmnowcast <subcommand> [options]``.

Experiment settings come from an optional TOML file with ``[experiment]``,
``[train]`` and ``[e2e]`` tables (the same layout as the
``config.resolved.toml`` snapshot every run writes); flags override the file.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import datagen, harness, nn
from .grid import builtin_ieee6, load_case
from .tensor import ConfigurationError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["main", "build_parser", "load_config"]


def load_config(path: str | None, overrides: dict | None = None) -> harness.ExperimentConfig:
    """Build an :class:`ExperimentConfig` from a TOML file plus flag overrides."""
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file {p} does not exist")
        data = tomllib.loads(p.read_text())
    exp = dict(data.get("experiment", {}))
    known = {f.name for f in dataclasses.fields(harness.ExperimentConfig)} - {"train", "e2e"}
    unknown = set(exp) - known
    if unknown:
        raise ConfigurationError(f"unknown [experiment] keys: {sorted(unknown)}")
    train_fields = {f.name for f in dataclasses.fields(nn.TrainConfig)}
    sections = {}
    for name in ("train", "e2e"):
        sec = dict(data.get(name, {}))
        bad = set(sec) - train_fields
        if bad:
            raise ConfigurationError(f"unknown [{name}] keys: {sorted(bad)}")
        sections[name] = sec
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k.startswith("train.") or k.startswith("e2e."):
            sec, key = k.split(".", 1)
            sections[sec][key] = v
        else:
            exp[k] = v
    defaults = harness.ExperimentConfig()
    train = dataclasses.replace(defaults.train, **sections["train"])
    e2e = dataclasses.replace(defaults.e2e, **sections["e2e"])
    if "models" in exp:
        exp["models"] = tuple(exp["models"])
    return harness.ExperimentConfig(train=train, e2e=e2e, **exp)


def _common_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--dataset", dest="dataset_dir", help="dataset directory written by 'datagen'")
    p.add_argument("--n-samples", type=int, help="samples to generate when no dataset is given")
    p.add_argument("--case", dest="case_path", help="grid case file (bundled 6-bus case by default)")
    p.add_argument("--fusion", choices=("concat", "bilinear"))
    p.add_argument("--meteo-extractor", choices=("none", "fnn"))
    p.add_argument("--renewables", choices=harness.RENEWABLE_MODES)
    p.add_argument("--master-seed", type=int)
    p.add_argument("--epochs", type=int, dest="train.max_epochs", help="max epochs for MSE training")
    p.add_argument("--e2e-epochs", type=int, dest="e2e.max_epochs", help="max epochs for cost training")
    p.add_argument("--cold-start", action="store_true", default=None, help="E2E from random weights")
    p.add_argument("--workers", type=int, help="trials run in parallel processes")
    p.add_argument("--out", dest="output_dir", help="output directory")


_OVERRIDE_KEYS = ("dataset_dir", "n_samples", "case_path", "fusion", "meteo_extractor", "renewables", "master_seed",
                  "train.max_epochs", "e2e.max_epochs", "cold_start", "workers", "output_dir", "trials", "models")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmnowcast", description="Decision-focused multi-modal nowcasting toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="build and save a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-samples", type=int, default=10_000)
    p.add_argument("--resolution", type=int, default=192, help="rendered sky-image side before preprocessing")
    p.add_argument("--case", dest="case_path")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train and evaluate one model for one trial")
    p.add_argument("model", choices=harness.MODEL_IDS)
    p.add_argument("--trial", type=int, default=0, help="trial index under the master seed")
    _common_experiment_flags(p)

    p = sub.add_parser("experiment", help="run the model x trial matrix")
    p.add_argument("--models", nargs="+", choices=harness.MODEL_IDS)
    p.add_argument("--trials", type=int)
    _common_experiment_flags(p)

    p = sub.add_parser("surface", help="system-cost surfaces over PV x wind prediction errors")
    p.add_argument("--case", dest="case_path")
    p.add_argument("--max-error", type=float, default=25.0)
    p.add_argument("--step", type=float, default=2.5)
    p.add_argument("--scales", type=float, nargs="+", default=[1.0, 0.5])
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="summary CSV and SVG from a results.csv")
    p.add_argument("results")
    p.add_argument("--out", required=True)
    return parser


def _print_summary(summary) -> None:
    print(f"{'model':<12} {'n':>3} {'MSE':>10} {'MAE':>8} {'%RMSE':>7} {'excess% med':>12} {'excess% std':>12}")
    for m, e in summary.items():
        print(f"{m:<12} {e['n']:>3} {e['mse_mean']:>10.5f} {e['mae_mean']:>8.4f} {e['rmse_pct_mean']:>7.2f} "
              f"{e['excess_pct_median']:>12.3f} {e['excess_pct_std']:>12.3f}")


def _cmd_datagen(args) -> int:
    case = load_case(args.case_path) if args.case_path else builtin_ieee6()
    cfg = datagen.DatasetConfig(seed=args.seed, n_samples=args.n_samples, render_resolution=args.resolution)
    ds = datagen.build_dataset(config=cfg, case=case)
    out = datagen.save_dataset(ds, args.out)
    print(f"wrote {len(ds)} samples to {out}")
    return 0


def _experiment_config(args, extra: dict) -> harness.ExperimentConfig:
    ov = {k: getattr(args, k, None) for k in _OVERRIDE_KEYS}
    ov.update(extra)
    return load_config(args.config, ov)


def _cmd_experiment(args) -> int:
    cfg = _experiment_config(args, {})
    if cfg.output_dir is None:
        raise ConfigurationError("an output directory is required (--out or output_dir in the config)")
    result = harness.run_experiment(cfg)
    _print_summary(result.summary())
    print(f"results in {cfg.output_dir}")
    return 0


def _cmd_train(args) -> int:
    cfg = _experiment_config(args, {"models": (args.model,), "trials": args.trial + 1})
    out = cfg.output_dir
    cfg = dataclasses.replace(cfg, output_dir=None)
    case = cfg.case()
    ds = cfg.dataset()
    seed = harness.trial_seeds(cfg.master_seed, cfg.trials)[args.trial]
    trial = harness._Trial(cfg, ds, case, args.trial, seed)
    results = trial.run()
    ptrain = {args.trial: trial.perfect_train} if trial.perfect_train is not None else {}
    seeds = {"master": cfg.master_seed, "dataset": ds.config.seed, f"trial{args.trial}": seed}
    res = harness.ExperimentResult(dataclasses.replace(cfg, output_dir=out), results, trial.histories, ptrain, seeds)
    for r in results:
        print(f"{r.model} trial {r.trial}: MSE {r.mse:.5f}  %RMSE {r.rmse_pct:.2f}  "
              f"mean cost {r.mean_cost:.2f}  excess {r.excess_pct:.3f}%  epochs {r.epochs}")
    if out is not None:
        harness.write_experiment(res, out)
        print(f"results in {out}")
    return 0


def _cmd_surface(args) -> int:
    case = load_case(args.case_path) if args.case_path else builtin_ieee6()
    if args.max_error <= 0 or args.step <= 0:
        raise ConfigurationError("--max-error and --step must be positive")
    errors = [round(-args.max_error + i * args.step, 10) for i in range(int(round(2 * args.max_error / args.step)) + 1)]
    res = harness.run_cost_surface(case, errors, tuple(args.scales), out_dir=args.out)
    print(f"zero-error cost {res.base_cost:.4f}; surfaces for scales {sorted(res.surfaces)} in {args.out}")
    return 0


def _cmd_report(args) -> int:
    p = Path(args.results)
    if not p.exists():
        raise FileNotFoundError(f"results file {p} does not exist")
    summary = harness.report(harness.read_results_csv(p), args.out)
    _print_summary(summary)
    return 0


_COMMANDS = {"datagen": _cmd_datagen, "train": _cmd_train, "experiment": _cmd_experiment,
             "surface": _cmd_surface, "report": _cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigurationError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
