"""Command-line entry points.

    powerhedge backtest run --config study.cfg
    powerhedge backtest month --config study.cfg --month 2016-03
    powerhedge data stats --spot spot.csv --demand demand.csv

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .backtest import (
    BacktestConfig,
    MonthResult,
    emit_report,
    load_study_data,
    run_month,
    run_study,
)
from .errors import ConfigError, DataError, NumericalError
from .marketdata import (
    BUCKET_LABELS,
    demand_to_load,
    read_demand_csv,
    read_spot_csv,
    sd_bucket_histogram,
)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="powerhedge",
        description="Coregionalized GP hedging of monthly power forwards.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    backtest_p = sub.add_parser("backtest", help="run hedging backtests")
    bt_sub = backtest_p.add_subparsers(dest="subcommand", required=True)
    run_p = bt_sub.add_parser("run", help="run the full configured study")
    month_p = bt_sub.add_parser("month", help="run a single delivery month")
    for sp in (run_p, month_p):
        sp.add_argument("--config", required=True, help="flat key=value config file")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--out-dir", help="override the output directory")
        sp.add_argument("--format", choices=("csv", "json"), help="override the report format")
    month_p.add_argument("--month", required=True, help="delivery month, YYYY-MM")

    data_p = sub.add_parser("data", help="inspect raw data files")
    data_sub = data_p.add_subparsers(dest="subcommand", required=True)
    stats_p = data_sub.add_parser("stats", help="per-class SD-bucket histograms")
    stats_p.add_argument("--spot", required=True, help="hourly spot price CSV")
    stats_p.add_argument("--demand", required=True, help="half-hourly demand CSV")
    return parser


def _load_config(args):
    config = BacktestConfig.from_file(args.config)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.out_dir is not None:
        updates["out_dir"] = args.out_dir
    if args.format is not None:
        updates["report_format"] = args.format
    return replace(config, **updates) if updates else config


def _cmd_run(args, out):
    config = _load_config(args)
    data = load_study_data(config)
    report = run_study(config, data)
    paths = emit_report(report, config.out_dir, config.report_format)
    if config.figures:
        from .figures import render_figures

        paths += render_figures(report, config.out_dir)
    label_w = max(len(report.model_label), len(report.comparator_label))
    print(f"{'month':<9} {report.model_label:>{label_w}} {report.comparator_label:>{label_w}}   excess", file=out)
    by_month = {r.month: r for r in report.rows}
    skip_reason = {s.month: s.reason for s in report.skips}
    for month in report.months:
        row = by_month.get(month)
        if row is None:
            print(f"{month:<9} skipped: {skip_reason[month]}", file=out)
        else:
            print(
                f"{month:<9} {row.payoff_mio_gbp:>{label_w}.4f} "
                f"{row.cmp_payoff_mio_gbp:>{label_w}.4f} {row.excess_mio_gbp:>+8.4f}",
                file=out,
            )
    totals = report.totals_mio_gbp
    print(
        f"{'total':<9} {totals[report.model_label]:>{label_w}.4f} "
        f"{totals[report.comparator_label]:>{label_w}.4f} {report.total_excess_mio_gbp:>+8.4f}",
        file=out,
    )
    for path in paths:
        print(f"wrote {path}", file=out)
    return 0


def _cmd_month(args, out):
    config = _load_config(args)
    data = load_study_data(config)
    outcome = run_month(config, args.month, data)
    if not isinstance(outcome, MonthResult):
        print(f"{outcome.month} skipped: {outcome.reason}", file=out)
        return 0
    for name in (
        "month", "initiation", "quote_base", "quote_peak", "v_base", "v_peak",
        "payoff_mio_gbp", "cmp_v_base", "cmp_v_peak", "cmp_payoff_mio_gbp",
        "excess_mio_gbp", "capped_hours", "global_max_mwh",
        "log_marginal_likelihood", "optimizer_converged", "comparator_clamped",
    ):
        value = getattr(outcome, name)
        text = f"{value:.6g}" if isinstance(value, float) else str(value)
        print(f"{name} = {text}", file=out)
    return 0


def _print_histogram(title, histogram, out):
    print(title, file=out)
    header = f"  {'class':<9} {'n':>6} {'mean':>10} {'sd':>10}  " + "  ".join(f"{b:>8}" for b in BUCKET_LABELS)
    print(header, file=out)
    for label in ("peak", "off-peak"):
        stats = histogram[label]
        n = sum(stats.counts)
        pct = "  ".join(f"{p:>7.2f}%" for p in stats.percentages)
        print(f"  {label:<9} {n:>6} {stats.mean:>10.2f} {stats.sd:>10.2f}  {pct}", file=out)


def _cmd_stats(args, out):
    spot = read_spot_csv(args.spot)
    _print_histogram("spot price (GBP/MWh), |value - class mean| in SD buckets:", sd_bucket_histogram(spot), out)
    demand = read_demand_csv(args.demand)
    load, gaps = demand_to_load(demand)
    print(f"\ndemand: {len(demand)} half-hourly readings -> {len(load)} hourly loads, {len(gaps)} gap(s)", file=out)
    _print_histogram("hourly load (MWh), |value - class mean| in SD buckets:", sd_bucket_histogram(load), out)
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = sys.stdout
    try:
        if args.command == "backtest" and args.subcommand == "run":
            return _cmd_run(args, out)
        if args.command == "backtest":
            return _cmd_month(args, out)
        return _cmd_stats(args, out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
