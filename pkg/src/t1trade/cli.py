"""Command-line entry point: ``t1trade {optimize,backtest,replay,volatility,report}``."""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .accounting import (
    ReturnLedger,
    VolatilitySample,
    format_pct,
    monthly_return,
    volatility_histogram,
    yearly_from_monthly,
)
from .backtest import IntradayBacktester, write_decision_log
from .market_data import DEFAULT_CLOCK, MarketDataError, parse_daily_csv, parse_minute_csv
from .mlp import ForecastConfig
from .portfolio import MonteCarloPortfolio
from .replay import FixtureError, load_fixtures, load_portfolio_table, replay
from .strategy import StrategyConfig

logger = logging.getLogger("t1trade")

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2

# option name -> (type, default)
OPTIONS = {
    "daily": (str, None),
    "minute": (str, None),
    "fixtures": (str, None),
    "portfolio": (str, None),
    "weights": (str, None),
    "out_dir": (str, "."),
    "start": (dt.date.fromisoformat, None),
    "end": (dt.date.fromisoformat, None),
    "origin_date": (dt.date.fromisoformat, None),
    "rf": (float, 0.04),
    "samples": (int, 50_000),
    "seed": (int, 0),
    "threshold": (float, 0.001),
    "threshold_base": (str, "price_1120"),
    "fee": (float, 0.0005),
    "stop_loss": (float, None),
    "net": (bool, False),
    "lags": (int, 60),
    "nets": (int, 100),
    "folds": (int, 5),
    "hidden": (str, "1-10"),
    "epochs": (int, 500),
    "lr": (float, 0.01),
    "jobs": (int, 1),
    "bin_width": (float, 0.001),
    "monthly_mode": (str, "prices"),
}


class ConfigError(Exception):
    pass


def _open_bin(path):
    try:
        return open(path, "rb")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None


def _parse_bool(text):
    if isinstance(text, bool):
        return text
    if text.strip().lower() in ("1", "true", "yes", "on"):
        return True
    if text.strip().lower() in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; keys are long flag names (``stop-loss`` or ``stop_loss``)."""
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    for n, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        if key not in OPTIONS:
            raise ConfigError(f"{path}:{n}: unknown key {key!r}")
        values[key] = value
    return values


def resolve(args) -> argparse.Namespace:
    """Defaults < config file < command-line flags."""
    from_file = read_config_file(args.config) if getattr(args, "config", None) else {}
    for key, (kind, default) in OPTIONS.items():
        if getattr(args, key, None) is not None:
            continue
        if key in from_file:
            conv = _parse_bool if kind is bool else kind
            try:
                setattr(args, key, conv(from_file[key]))
            except ValueError as exc:
                raise ConfigError(f"config key {key}: {exc}") from None
        else:
            setattr(args, key, default)
    return args


def _hidden(spec: str) -> tuple[int, ...]:
    out = []
    for part in str(spec).split(","):
        if "-" in part:
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        elif part.strip():
            out.append(int(part))
    return tuple(out)


def forecast_config(args) -> ForecastConfig:
    return ForecastConfig(
        lags=args.lags, n_networks=args.nets, cv_folds=args.folds, hidden_candidates=_hidden(args.hidden),
        max_epochs=args.epochs, learning_rate=args.lr, base_seed=args.seed,
    )


def strategy_config(args) -> StrategyConfig:
    return StrategyConfig(threshold=args.threshold, fee_rate=args.fee, stop_loss=args.stop_loss,
                          report_gross=not args.net, threshold_base=args.threshold_base)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create {out}: {exc.strerror}") from None
    return out


def _require(args, name):
    value = getattr(args, name)
    if value is None:
        raise ConfigError(f"--{name.replace('_', '-')} is required")
    path = Path(value)
    if not path.is_file():
        raise ConfigError(f"input file not found: {path}")
    return path


def _load_daily(path):
    with _open_bin(path) as fh:
        return parse_daily_csv(fh)


def _load_minute(path):
    with _open_bin(path) as fh:
        return parse_minute_csv(fh)


def write_weights(path, tickers, weights):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "weight"])
        for t, x in zip(tickers, weights):
            w.writerow([t, f"{x:.4f}"])


def read_weights(path) -> dict[str, float]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["ticker", "weight"]:
            raise ConfigError(f"{path}: header must be ticker,weight")
        weights = {r["ticker"]: float(r["weight"]) for r in reader}
    total = math.fsum(weights.values())
    if total <= 0 or any(w < 0 for w in weights.values()):
        raise ConfigError(f"{path}: weights must be non-negative with positive sum")
    if abs(total - 1.0) > 1e-9:
        logger.info("renormalizing weights from %s (sum %.6f)", path, total)
        weights = {t: w / total for t, w in weights.items()}
    return weights


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, (dt.date, dt.datetime)):
        return o.isoformat()
    if hasattr(o, "tolist"):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _point(p):
    return {"expected_return_yearly": p.expected_return_yearly, "volatility_yearly": p.volatility_yearly,
            "sharpe": None if math.isnan(p.sharpe) else p.sharpe}


def cmd_optimize(args) -> int:
    daily = _load_daily(_require(args, "daily"))
    model = MonteCarloPortfolio(n_samples=args.samples, risk_free_rate=args.rf, random_state=args.seed)
    model.fit_series(daily, args.start, args.end)
    out = _out_dir(args)
    write_weights(out / "weights.csv", model.tickers_, model.max_sharpe_.weights)
    write_weights(out / "weights_min_vol.csv", model.tickers_, model.min_vol_.weights)
    with open(out / "frontier.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["volatility", "expected_return", "sharpe"])
        for vol, ret, sh in model.scatter_:
            w.writerow([repr(float(vol)), repr(float(ret)), "" if math.isnan(sh) else repr(float(sh))])
    summary = {
        "tickers": list(model.tickers_),
        "n_samples": args.samples,
        "rf": args.rf,
        "seed": args.seed,
        "max_sharpe": _point(model.max_sharpe_),
        "min_vol": _point(model.min_vol_),
    }
    _dump_json(out / "optimize_summary.json", summary)
    for name, p in (("max Sharpe", model.max_sharpe_), ("min volatility", model.min_vol_)):
        print(f"{name:>15}: E={format_pct(p.expected_return_yearly)}%  sigma={p.volatility_yearly:.4f}  "
              f"Sharpe={p.sharpe:.4f}")
    return EXIT_OK


def _origin_and_monthly(daily, tickers, first_day, last_day, origin_date):
    origin, monthly = {}, {}
    for t in tickers:
        series = daily.get(t)
        if series is None:
            raise ConfigError(f"no daily data for {t}")
        o = series.close_on(origin_date) if origin_date else series.last_close_before(first_day)
        if o is None:
            raise ConfigError(f"no origin close for {t}")
        origin[t] = o
        closes = [d for d in series.dates() if d <= last_day and d >= first_day]
        monthly[t] = monthly_return(o, series.close_on(max(closes))) if closes else None
    if any(v is None for v in monthly.values()):
        monthly = None
    return origin, monthly


def cmd_backtest(args) -> int:
    minute = _load_minute(_require(args, "minute"))
    weights = read_weights(_require(args, "weights")) if args.weights else {t: 1 / len(minute) for t in minute}
    days = sorted({d for t in weights if t in minute for d in minute[t].dates()
                   if (args.start is None or d >= args.start) and (args.end is None or d <= args.end)})
    if not days:
        raise ConfigError("no minute data in the backtest range")
    if args.daily:
        daily = _load_daily(_require(args, "daily"))
        origin, monthly = _origin_and_monthly(daily, weights, days[0], days[-1], args.origin_date)
    else:
        logger.warning("no --daily given: origin price taken as each ticker's first minute close")
        origin = {t: minute[t].bars[0].price for t in weights if t in minute}
        monthly = None
    if args.origin_date and args.origin_date >= days[0]:
        raise ConfigError("origin date must precede the backtest start")
    bt = IntradayBacktester(forecast_config(args), strategy_config(args), DEFAULT_CLOCK, args.seed, args.jobs)
    result = bt.run(minute, weights, origin, monthly, args.start, args.end)
    out = _out_dir(args)
    with open(out / "decisions.csv", "w", newline="", encoding="utf-8") as fh:
        write_decision_log(result.records, fh)
    report = result.ledger.to_report()
    report["audit"] = {"stock_days": len(result.audit.decisions),
                       "lookahead_violations": [list(map(str, v)) for v in result.audit.violations()]}
    _dump_json(out / "report.json", report)
    print_report(report)
    return EXIT_VALIDATION if result.audit.violations() else EXIT_OK


def cmd_replay(args) -> int:
    source = _require(args, "fixtures") if args.fixtures else None
    rows, errors = load_fixtures(source)
    result = replay(rows, strategy_config(args), errors)
    out = _out_dir(args)
    with open(out / "replay_diff.csv", "w", newline="", encoding="utf-8") as fh:
        result.write_diff_csv(fh)
    summary = result.summary()
    summary["mismatched_rows"] = [
        {"date": r.row.day, "ticker": r.row.ticker, "recomputed_pct": r.recomputed_pct,
         "printed_pct": r.row.printed_return_pct, "diff_pp": r.diff_pp}
        for r in result.mismatches
    ]
    summary["excluded_rows"] = [{"date": r.row.day, "ticker": r.row.ticker, "reason": r.status}
                                for r in result.excluded]

    table = load_portfolio_table(_require(args, "portfolio") if args.portfolio else None)
    sums = result.daily_sums_pct()
    if {p.ticker for p in table} >= set(sums):
        if args.monthly_mode == "printed":
            monthly = {p.ticker: p.printed_monthly_pct / 100 for p in table}
        else:
            monthly = {p.ticker: monthly_return(p.close_start, p.close_end) for p in table}
        ledger = ReturnLedger({p.ticker: p.weight for p in table}, {p.ticker: p.close_start for p in table},
                              per_stock_monthly=monthly)
        report = ledger.to_report()
        for p in table:
            report["per_stock"][p.ticker]["october_daily_sum"] = sums.get(p.ticker, 0.0) / 100
        intraday = sum(p.weight * sums.get(p.ticker, 0.0) / 100 for p in table)
        report["portfolio"]["intraday_gain"] = intraday
        report["portfolio"]["total"] = intraday + ledger.origin_gain()
        report["portfolio"]["yearly_projection"] = yearly_from_monthly(report["portfolio"]["total"])
        report["monthly_mode"] = args.monthly_mode
        summary["table2_reconstruction"] = {
            p.ticker: {"replayed_pct": sums.get(p.ticker), "printed_pct": p.printed_october_sum_pct,
                       "defective": p.ticker in result.defective_tickers()}
            for p in table
        }
        _dump_json(out / "report.json", report)
    _dump_json(out / "replay_summary.json", summary)

    print(f"rows {summary['rows']}, scored {summary['scored']}, excluded {summary['excluded']}, "
          f"ambiguous {summary['ambiguous']}, mismatches {summary['mismatches']}")
    print(f"match rate {summary['match_rate']:.4f} (strict {summary['strict_match_rate']:.4f})")
    for r in result.mismatches:
        print(f"  MISMATCH {r.row.day} {r.row.ticker}: recomputed {r.recomputed_pct:.4f}% "
              f"printed {r.row.printed_return_pct:g}%")
    for line, msg in errors:
        print(f"  MALFORMED line {line}: {msg}")
    return EXIT_VALIDATION if (result.mismatches or errors) else EXIT_OK


def volatility_samples_from_fixtures(rows) -> list[VolatilitySample]:
    result = replay(rows)
    dup = {(r.row.ticker, r.row.day) for r in result.excluded if "duplicated" in r.status}
    return [VolatilitySample(r.ticker, r.day, r.p1120, r.real1450) for r in rows if (r.ticker, r.day) not in dup]


def volatility_samples_from_minute(minute, clock=DEFAULT_CLOCK) -> list[VolatilitySample]:
    samples = []
    for t in sorted(minute):
        for d in minute[t].dates():
            a = minute[t].bar_at(dt.datetime.combine(d, clock.morning_cutoff))
            b = minute[t].bar_at(dt.datetime.combine(d, clock.decision_time))
            if a is not None and b is not None:
                samples.append(VolatilitySample(t, d, a.price, b.price))
    return samples


def cmd_volatility(args) -> int:
    if args.minute:
        samples = volatility_samples_from_minute(_load_minute(_require(args, "minute")))
    else:
        rows, _ = load_fixtures(_require(args, "fixtures") if args.fixtures else None)
        samples = volatility_samples_from_fixtures(rows)
    if not samples:
        raise ConfigError("no (11:20, 14:50) price pairs found")
    hist = volatility_histogram(samples, args.bin_width)
    out = _out_dir(args)
    with open(out / "histogram.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_start", "count", "frequency"])
        for start, count, freq in hist:
            w.writerow([f"{start:g}", count, repr(freq)])
    sig = [s.sigma for s in samples]
    over = sum(s > 0.002 for s in sig) / len(sig)
    print(f"{len(sig)} samples; P(sigma > 0.002) = {over:.4f}; max sigma = {max(sig):.4f}")
    for s in samples:
        if s.sigma > 0.03:
            print(f"  sigma > 0.03: {s.ticker} {s.day} {s.p_a} -> {s.p_b} ({s.sigma:.4f})")
    return EXIT_OK


REPORT_KEYS = {"origin_gain", "intraday_gain", "total", "yearly_projection"}


def print_report(report: dict, file=None):
    file = file or sys.stdout
    portfolio = report.get("portfolio")
    if not isinstance(portfolio, dict) or not REPORT_KEYS <= set(portfolio):
        raise ConfigError(f"report JSON must contain portfolio.{{{', '.join(sorted(REPORT_KEYS))}}}")
    origin = portfolio["origin_gain"]
    print("Portfolio", file=file)
    print(f"  origin position gain : {'absent' if origin is None else format_pct(origin) + '%'}", file=file)
    print(f"  intraday trading gain: {format_pct(portfolio['intraday_gain'])}%", file=file)
    print(f"  total                : {format_pct(portfolio['total'])}%", file=file)
    print(f"  yearly projection    : {format_pct(portfolio['yearly_projection'])}%", file=file)
    if origin is not None:
        print(f"  origin yearly        : {format_pct(yearly_from_monthly(origin))}%", file=file)
    print(f"  intraday yearly      : {format_pct(yearly_from_monthly(portfolio['intraday_gain']))}%", file=file)


def cmd_report(args) -> int:
    path = Path(args.report)
    try:
        report = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    print_report(report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file; flags override it")
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    strat = argparse.ArgumentParser(add_help=False)
    strat.add_argument("--threshold", type=float, help="no-trade band as a fraction (default 0.001)")
    strat.add_argument("--threshold-base", dest="threshold_base", choices=["price_1120", "origin"])
    strat.add_argument("--fee", type=float, help="fee per leg (default 0.0005)")
    strat.add_argument("--stop-loss", dest="stop_loss", type=float)
    strat.add_argument("--net", action="store_const", const=True, help="account net of fees")

    parser = argparse.ArgumentParser(prog="t1trade", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", parents=[common], help="Monte Carlo max-Sharpe / min-volatility weights")
    p.add_argument("--daily")
    p.add_argument("--start", type=dt.date.fromisoformat)
    p.add_argument("--end", type=dt.date.fromisoformat)
    p.add_argument("--rf", type=float)
    p.add_argument("--samples", type=int)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("backtest", parents=[common, strat], help="retrain-every-day intraday backtest")
    p.add_argument("--minute")
    p.add_argument("--daily")
    p.add_argument("--weights")
    p.add_argument("--start", type=dt.date.fromisoformat)
    p.add_argument("--end", type=dt.date.fromisoformat)
    p.add_argument("--origin-date", dest="origin_date", type=dt.date.fromisoformat)
    p.add_argument("--lags", type=int)
    p.add_argument("--nets", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--hidden", help="hidden sizes, e.g. 1-10 or 2,4,8")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("replay", parents=[common, strat], help="replay recorded predictions and diff returns")
    p.add_argument("--fixtures", help="fixture CSV (default: bundled appendix transcription)")
    p.add_argument("--portfolio", help="portfolio table CSV (default: bundled)")
    p.add_argument("--monthly-mode", dest="monthly_mode", choices=["prices", "printed"])
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("volatility", parents=[common], help="histogram of 11:20 -> 14:50 volatility")
    p.add_argument("--minute")
    p.add_argument("--fixtures")
    p.add_argument("--bin-width", dest="bin_width", type=float)
    p.set_defaults(func=cmd_volatility)

    p = sub.add_parser("report", parents=[common], help="print a report JSON")
    p.add_argument("report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        resolve(args)
        return args.func(args)
    except (ConfigError, MarketDataError, FixtureError, FileNotFoundError) as exc:
        print(f"t1trade {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        print(f"t1trade {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
