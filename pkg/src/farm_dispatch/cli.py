"""Command-line entry point: ``farm-dispatch <command> ...``."""

from __future__ import annotations

import argparse
import itertools
import sys
from pathlib import Path

import numpy as np

from . import runner
from .config import AGENTS, ENVS, RunConfig, load_run_config, parse_months, parse_seeds
from .data import SplitSpec, SyntheticSpec, generate_synthetic, load_csv, write_csv
from .errors import DegenerateError, FarmDispatchError
from .forecast import fit_bands, read_bands_csv, write_bands_csv, write_normalizer_csv
from .heater import fit_heater_normalizer
from .metrics import (peak_profile, read_monthly_csv, satisfaction_rate, total_cost, total_import,
                      wilcoxon_signed_rank, write_monthly_csv, write_profile_csv, write_stats_csv)


def _run_config(args) -> RunConfig:
    over = {"env": args.env, "agent": args.agent, "data": args.data, "data_seed": args.data_seed,
            "steps": args.steps, "forecast_mode": args.forecast_mode}
    if args.train_months:
        over["train_months"] = parse_months(args.train_months)
    if args.test_months:
        over["test_months"] = parse_months(args.test_months)
    if args.seeds:
        over["seeds"] = parse_seeds(args.seeds)
    elif args.seed is not None:
        over["seeds"] = [args.seed]
    if args.force:
        over["force"] = True
    if args.config:
        return load_run_config(args.config, **over)
    return RunConfig(**{k: v for k, v in over.items() if v is not None})


def _write_report(report, ws, out: Path) -> None:
    runner.write_hourly_csv(report, out / "hourly.csv")
    if report.ledgers:
        runner.write_daily_csv(report, out / "daily.csv")
    write_monthly_csv(report, out / "monthly.csv")
    # read back to validate what was written
    rows = read_monthly_csv(out / "monthly.csv")
    if sorted(rows) != sorted(report.monthly):
        raise FarmDispatchError(f"monthly.csv in {out} does not cover the evaluated months")


def cmd_gen_data(args) -> int:
    year = generate_synthetic(SyntheticSpec(seed=args.seed))
    write_csv(year, args.out)
    load_csv(args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_validate_data(args) -> int:
    year = load_csv(args.file)
    print(f"{args.file}: {len(year)} hourly rows, load {year.load.sum():.1f} kWh, pv {year.pv.sum():.1f} kWh")
    return 0


def cmd_calibrate(args) -> int:
    """Fit residual bands on the training months; writes the band CSV and a ``<name>.normalizer.csv`` sidecar."""
    year = load_csv(args.data) if args.data else generate_synthetic(SyntheticSpec(seed=args.data_seed))
    split = SplitSpec(parse_months(args.train_months))
    out = Path(args.out) if args.out else runner.output_root() / "calibration" / "bands.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    bd, bpv = fit_bands(year.load, split), fit_bands(year.pv, split)
    write_bands_csv(out, bd, bpv)
    sidecar = out.with_name(out.stem + ".normalizer.csv")
    write_normalizer_csv(sidecar, fit_heater_normalizer(year, split))
    read_bands_csv(out)
    print(f"wrote {out} and {sidecar}")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    root = runner.output_root(args.out)
    ws = runner.Workspace.build(cfg)
    for seed in cfg.seeds:
        out = runner.run_dir(root, cfg, seed)
        out.mkdir(parents=True, exist_ok=True)
        (out / "stats.ndjson").unlink(missing_ok=True)
        policy, arrays, _ = runner.train(cfg, seed, ws, out / "stats.ndjson")
        runner.save_run_checkpoint(out / "checkpoint.bin", cfg, arrays)
        runner.load_run_checkpoint(out / "checkpoint.bin", cfg)
        _write_report(runner.evaluate(policy, ws, cfg.agent, seed), ws, out)
        print(f"trained {cfg.env}/{cfg.agent} seed {seed} -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _run_config(args)
    root = runner.output_root(args.out)
    ws = runner.Workspace.build(cfg)
    for seed in cfg.seeds:
        out = runner.run_dir(root, cfg, seed)
        ckpt = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.bin"
        arrays = runner.load_run_checkpoint(ckpt, cfg)
        out.mkdir(parents=True, exist_ok=True)
        report = runner.evaluate(runner.restore_policy(cfg, arrays, ws), ws, cfg.agent, seed)
        _write_report(report, ws, out)
        print(f"evaluated {cfg.env}/{cfg.agent} seed {seed}: import {total_import(report):.3f} kWh, "
              f"cost {total_cost(report):.3f}")
    return 0


METRICS = ("cost", "import_kwh", "peak_kw")


def compare_rows(reports: dict) -> list[dict]:
    """Pairwise Wilcoxon rows over monthly values; ``reports`` maps name -> monthly dict.

    Positive median improvement means the first report of the pair is lower (better).
    """
    names = list(reports)
    months = sorted(reports[names[0]])
    for n in names[1:]:
        if sorted(reports[n]) != months:
            raise FarmDispatchError(f"report {n!r} covers different months than {names[0]!r}")
    rows = []
    for a, b in itertools.combinations(names, 2):
        for metric in METRICS:
            diffs = np.array([reports[b][m][metric] - reports[a][m][metric] for m in months])
            try:
                _, p = wilcoxon_signed_rank(diffs)
            except DegenerateError:
                p = None
            rows.append({"comparison": f"{a} vs {b}", "metric": metric, "p_value": p,
                         "median_improvement": float(np.median(diffs)), "n": len(months)})
    return rows


def cmd_compare(args) -> int:
    if len(args.reports) < 2:
        raise FarmDispatchError("compare needs at least two report directories")
    reports = {}
    for d in args.reports:
        name = str(Path(d))
        if name in reports:
            name = f"{name}#{len(reports)}"
        reports[name] = read_monthly_csv(Path(d) / "monthly.csv")
    out = Path(args.output) if args.output else runner.output_root(args.out) / "stats.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_stats_csv(compare_rows(reports), out)
    print(f"wrote {out}")
    return 0


def cmd_report(args) -> int:
    """Re-emit monthly.csv and profile.csv (against the no-battery / device-off baseline) for a run."""
    cfg = _run_config(args)
    root = runner.output_root(args.out)
    ws = runner.Workspace.build(cfg)
    base = runner.evaluate(runner.IdlePolicy(), ws, "baseline", 0)
    for seed in cfg.seeds:
        out = runner.run_dir(root, cfg, seed)
        report = runner.read_hourly_csv(out / "hourly.csv", cfg.agent, seed, cfg.env)
        write_monthly_csv(report, out / "monthly.csv")
        write_profile_csv(peak_profile(base), peak_profile(report), out / "profile.csv")
        msg = f"{cfg.env}/{cfg.agent} seed {seed}: import {total_import(report):.3f} kWh " \
              f"(baseline {total_import(base):.3f}), cost {total_cost(report):.3f}"
        if report.ledgers:
            msg += f", satisfaction {satisfaction_rate(report.ledgers):.3f}"
        print(msg)
    return 0


def _add_run_args(p):
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--env", choices=ENVS)
    p.add_argument("--agent", choices=AGENTS)
    p.add_argument("--data", help="CSV data file (synthetic data when omitted)")
    p.add_argument("--data-seed", type=int)
    p.add_argument("--train-months", help="comma-separated months")
    p.add_argument("--test-months", help="comma-separated months (default: all others)")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", help="'1,2,3' or '1..5'")
    p.add_argument("--steps", type=int, help="training steps per seed")
    p.add_argument("--forecast-mode", choices=("one", "all"))
    p.add_argument("--force", action="store_true", help="allow agent/env pairs outside the usual experiments")
    p.add_argument("--out", help="output root (default $FARM_DISPATCH_OUT or ./runs)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="farm-dispatch", description="Battery and water-heater dispatch agents.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic year as CSV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("validate-data", help="check a CSV data file")
    p.add_argument("file")
    p.set_defaults(func=cmd_validate_data)

    p = sub.add_parser("calibrate", help="fit forecast bands and normalizer")
    p.add_argument("--data", help="CSV data file (synthetic data when omitted)")
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--train-months", default="1,7")
    p.add_argument("--out", help="band table CSV (default $FARM_DISPATCH_OUT/calibration/bands.csv)")
    p.set_defaults(func=cmd_calibrate)

    for name, func, text in (("train", cmd_train, "train agents and write run artifacts"),
                             ("evaluate", cmd_evaluate, "evaluate checkpoints on the test months"),
                             ("report", cmd_report, "write monthly and profile CSVs for trained runs")):
        p = sub.add_parser(name, help=text)
        _add_run_args(p)
        if name == "evaluate":
            p.add_argument("--checkpoint", help="checkpoint file (default: the run directory's)")
        p.set_defaults(func=func)

    p = sub.add_parser("compare", help="Wilcoxon signed-rank tests between run directories")
    p.add_argument("reports", nargs="+", help="run directories holding monthly.csv")
    p.add_argument("--output", help="stats.csv path")
    p.add_argument("--out", help="output root (default $FARM_DISPATCH_OUT or ./runs)")
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FarmDispatchError, OSError) as exc:
        print(f"farm-dispatch: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
