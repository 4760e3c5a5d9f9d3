"""
Day-by-day backtest: retrain on each morning, decide at 11:20, settle at 14:50.

Each stock-day only reaches the minute data through a :class:`DayView`, which
records every timestamp it reads. The view logs the latest timestamp read
before the decision is taken. :meth:`ReadAudit.violations` lists stock-days
whose pre-decision reads went past the 11:20 cutoff.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import threading
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .accounting import ReturnLedger
from .market_data import DEFAULT_CLOCK, BarSeries, SkipDay, TradingSessionClock
from .mlp import EnsembleFailure, ForecastConfig, forecast
from .strategy import (
    DailyTradeRecord,
    StrategyConfig,
    TradeDecision,
    Action,
    apply_stop_loss,
    decide,
    hold_record,
    realize,
)

logger = logging.getLogger(__name__)

__all__ = [
    "ReadAudit",
    "DayView",
    "BacktestResult",
    "IntradayBacktester",
    "stock_day_seed",
    "run_stock_day",
    "DECISION_LOG_HEADER",
    "write_decision_log",
]

DECISION_LOG_HEADER = ["date", "ticker", "action", "p1120", "pred1450", "real1450", "rt_gross", "rt_net"]


class ReadAudit:
    def __init__(self):
        self._lock = threading.Lock()
        self._max_read: dict[tuple[str, dt.date], dt.datetime] = {}
        self.decisions: dict[tuple[str, dt.date], tuple[dt.datetime | None, dt.datetime]] = {}

    def record_read(self, key, timestamp: dt.datetime):
        with self._lock:
            cur = self._max_read.get(key)
            if cur is None or timestamp > cur:
                self._max_read[key] = timestamp

    def mark_decision(self, key, cutoff: dt.datetime):
        with self._lock:
            self.decisions[key] = (self._max_read.get(key), cutoff)

    def violations(self) -> list[tuple[str, dt.date, dt.datetime]]:
        return sorted(
            (key[0], key[1], seen)
            for key, (seen, cutoff) in self.decisions.items()
            if seen is not None and seen > cutoff
        )


class DayView:
    """Read access to one ticker's bars on one day, logged to an audit."""

    def __init__(self, series: BarSeries, day: dt.date, clock: TradingSessionClock, audit: ReadAudit | None = None):
        self._series = series
        self.day = day
        self.clock = clock
        self._audit = audit
        self.key = (series.ticker.code, day)

    def _read(self, bars):
        if self._audit is not None:
            for b in bars:
                self._audit.record_read(self.key, b.timestamp)
        return bars

    def morning_window(self, min_bars: int | None = None) -> np.ndarray:
        c = self.clock
        bars = [b for b in self._series.day_bars(self.day) if c.morning_open <= b.timestamp.time() <= c.morning_cutoff]
        self._read(bars)
        if min_bars is not None and len(bars) < min_bars:
            raise SkipDay(f"{self.key[0]} {self.day}: {len(bars)} morning bars, need {min_bars}")
        return np.array([b.price for b in bars], dtype=float)

    def price(self, time: dt.time) -> float | None:
        bar = self._series.bar_at(dt.datetime.combine(self.day, time))
        if bar is None:
            return None
        self._read([bar])
        return bar.price

    def afternoon_path(self) -> list[float]:
        c = self.clock
        bars = [b for b in self._series.day_bars(self.day) if c.afternoon_open <= b.timestamp.time() <= c.decision_time]
        self._read(bars)
        return [b.price for b in bars]

    def mark_decision(self):
        if self._audit is not None:
            self._audit.mark_decision(self.key, dt.datetime.combine(self.day, self.clock.morning_cutoff))


def stock_day_seed(seed: int, ticker: str, day: dt.date) -> int:
    entropy = [int(seed), day.toordinal(), int(ticker[2:]), 0 if ticker.startswith("SZ") else 1]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def run_stock_day(view: DayView, origin: float, forecast_config: ForecastConfig,
                  strategy_config: StrategyConfig) -> tuple[DailyTradeRecord, float | None]:
    """One stock-day. Returns the record and the predicted 14:50 price (None if skipped)."""
    ticker, day = view.key
    clock = view.clock
    horizon = clock.steps_to_decision()
    try:
        window = view.morning_window(min_bars=forecast_config.lags + 1)
    except SkipDay as exc:
        logger.warning("skip: %s", exc)
        view.mark_decision()
        return hold_record(ticker, day, TradeDecision(Action.HOLD, float("nan"), float("nan")), origin,
                           note="insufficient morning bars"), None
    p_1120 = view.price(clock.morning_cutoff)
    if p_1120 is None:
        logger.warning("skip: %s %s has no %s bar", ticker, day, clock.morning_cutoff)
        view.mark_decision()
        return hold_record(ticker, day, TradeDecision(Action.HOLD, float("nan"), float("nan")), origin,
                           note="missing cutoff bar"), None
    if np.ptp(window) == 0:
        # nothing to learn from a flat morning; the lag model can only add noise
        logger.info("%s %s: flat morning, holding", ticker, day)
        view.mark_decision()
        return hold_record(ticker, day, TradeDecision(Action.HOLD, p_1120, p_1120), origin,
                           note="flat morning"), p_1120
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            fc = forecast(window, horizon, forecast_config)
    except (EnsembleFailure, SkipDay) as exc:
        logger.warning("skip: %s %s forecast failed: %s", ticker, day, exc)
        view.mark_decision()
        return hold_record(ticker, day, TradeDecision(Action.HOLD, p_1120, float("nan")), origin,
                           note="forecast failed"), None
    decision = decide(p_1120, fc.target_price, strategy_config, origin=origin)
    view.mark_decision()

    if strategy_config.stop_loss is not None and decision.action is not Action.HOLD:
        path = view.afternoon_path()
        real = view.price(clock.decision_time)
        if real is None or not path or path[-1] != real:
            logger.warning("%s %s: afternoon path does not end at the decision bar", ticker, day)
        record = apply_stop_loss(decision, path, origin, strategy_config, ticker, day)
    else:
        real = view.price(clock.decision_time)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            record = realize(decision, real, origin, strategy_config, ticker, day)
        if real is None and decision.action is not Action.HOLD:
            logger.warning("%s %s: no %s bar, forced hold", ticker, day, clock.decision_time)
    return record, fc.target_price


@dataclass
class BacktestResult:
    records: list[DailyTradeRecord]
    predictions: dict[tuple[str, dt.date], float | None]
    ledger: ReturnLedger
    audit: ReadAudit


def _fmt(x):
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    return repr(float(x))


def write_decision_log(records: Sequence[DailyTradeRecord], out):
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(DECISION_LOG_HEADER)
    for r in records:
        writer.writerow([
            r.day.isoformat() if r.day else "", r.ticker, r.decision.action.value,
            _fmt(r.decision.p_1120), _fmt(r.decision.predicted_1450), _fmt(r.real_1450), repr(r.r_t_gross), repr(r.r_t_net),
        ])


@dataclass
class IntradayBacktester:
    """Walk forward over trading days, retraining the forecaster every stock-day."""

    forecast_config: ForecastConfig = field(default_factory=ForecastConfig)
    strategy_config: StrategyConfig = field(default_factory=StrategyConfig)
    clock: TradingSessionClock = DEFAULT_CLOCK
    seed: int = 0
    n_jobs: int = 1

    def run(self, minute_series: Mapping[str, BarSeries], weights: Mapping[str, float],
            origin_prices: Mapping[str, float], monthly_returns: Mapping[str, float] | None = None,
            start: dt.date | None = None, end: dt.date | None = None) -> BacktestResult:
        missing = [t for t in weights if t not in minute_series or t not in origin_prices]
        if missing:
            raise KeyError(f"no minute data or origin price for {missing}")
        audit = ReadAudit()
        tasks = []
        for ticker in sorted(weights):
            for day in minute_series[ticker].dates():
                if (start is None or day >= start) and (end is None or day <= end):
                    tasks.append((ticker, day))

        def work(task):
            ticker, day = task
            view = DayView(minute_series[ticker], day, self.clock, audit)
            config = replace(self.forecast_config, base_seed=stock_day_seed(self.seed, ticker, day), n_jobs=1)
            return run_stock_day(view, origin_prices[ticker], config, self.strategy_config)

        if self.n_jobs != 1 and len(tasks) > 1:
            with ThreadPoolExecutor(max_workers=None if self.n_jobs < 0 else self.n_jobs) as pool:
                results = list(pool.map(work, tasks))
        else:
            results = [work(t) for t in tasks]

        ledger = ReturnLedger(
            weights=dict(weights),
            origin_prices=dict(origin_prices),
            per_stock_monthly=None if monthly_returns is None else dict(monthly_returns),
            gross=self.strategy_config.report_gross,
        )
        records = []
        for (ticker, day), (record, _) in zip(tasks, results):
            ledger.add(record)
            records.append(record)
        predictions = {task: pred for task, (_, pred) in zip(tasks, results)}
        return BacktestResult(records, predictions, ledger, audit)
