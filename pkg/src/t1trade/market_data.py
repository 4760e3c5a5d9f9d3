"""
Minute and daily close-price series for Shanghai/Shenzhen A-shares.

Ingestion is CSV only. Minute files carry ``datetime,ticker,close`` and daily
files ``date,ticker,close``; both are parsed into one :class:`BarSeries` per
ticker. Prices are kept as :class:`~decimal.Decimal` so that a parsed file can
be written back in canonical form; numeric work happens on float arrays
obtained from :meth:`BarSeries.closes`.
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
import io
import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import IO, Iterable, Mapping

import numpy as np

__all__ = [
    "MarketDataError",
    "SkipDay",
    "Resolution",
    "Ticker",
    "Bar",
    "BarSeries",
    "TradingSessionClock",
    "DEFAULT_CLOCK",
    "parse_minute_csv",
    "parse_daily_csv",
    "write_minute_csv",
    "write_daily_csv",
    "price_at",
    "morning_training_window",
]

_TICKER_RE = re.compile(r"^(SZ|SH)\d{6}$")
MINUTE_HEADER = ["datetime", "ticker", "close"]
DAILY_HEADER = ["date", "ticker", "close"]


class MarketDataError(ValueError):
    """Raised for malformed or inconsistent price data."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SkipDay(Exception):
    """Not enough data to act on a stock-day; the caller holds instead."""


class Resolution(str, enum.Enum):
    MINUTE = "minute"
    DAILY = "daily"


@dataclass(frozen=True, order=True)
class Ticker:
    code: str

    def __post_init__(self):
        if not isinstance(self.code, str) or not _TICKER_RE.match(self.code):
            raise MarketDataError(f"invalid ticker {self.code!r}; expected SZ/SH + 6 digits")

    def __str__(self):
        return self.code


@dataclass(frozen=True)
class TradingSessionClock:
    """Exchange-local session boundaries and the two trade times."""

    morning_open: dt.time = dt.time(9, 30)
    morning_cutoff: dt.time = dt.time(11, 20)
    morning_close: dt.time = dt.time(11, 30)
    afternoon_open: dt.time = dt.time(13, 0)
    decision_time: dt.time = dt.time(14, 50)
    afternoon_close: dt.time = dt.time(15, 0)

    def __post_init__(self):
        seq = [
            self.morning_open,
            self.morning_cutoff,
            self.morning_close,
            self.afternoon_open,
            self.decision_time,
            self.afternoon_close,
        ]
        if any(a >= b for a, b in zip(seq, seq[1:])):
            raise ValueError("session times must be strictly increasing")

    def in_session(self, t: dt.time) -> bool:
        return (self.morning_open <= t <= self.morning_close) or (
            self.afternoon_open <= t <= self.afternoon_close
        )

    def steps_to_decision(self) -> int:
        """Minute steps from the cutoff bar to the decision bar, lunch collapsed.

        With the default clock this is 10 (11:21-11:30) + 110 (13:01-14:50) = 120.
        """
        return _minutes(self.morning_cutoff, self.morning_close) + _minutes(
            self.afternoon_open, self.decision_time
        )


def _minutes(a: dt.time, b: dt.time) -> int:
    return (b.hour * 60 + b.minute) - (a.hour * 60 + a.minute)


DEFAULT_CLOCK = TradingSessionClock()


@dataclass(frozen=True)
class Bar:
    timestamp: dt.datetime
    close: Decimal

    def __post_init__(self):
        if not isinstance(self.close, Decimal):
            object.__setattr__(self, "close", Decimal(str(self.close)))
        if not self.close.is_finite() or self.close <= 0:
            raise MarketDataError(f"non-positive price {self.close} at {self.timestamp}")

    @property
    def price(self) -> float:
        return float(self.close)


@dataclass(frozen=True)
class BarSeries:
    ticker: Ticker
    resolution: Resolution
    bars: tuple[Bar, ...]
    _index: Mapping[dt.datetime, int] = field(init=False, repr=False, compare=False)
    _days: Mapping[dt.date, tuple[int, int]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        bars = tuple(self.bars)
        object.__setattr__(self, "bars", bars)
        if isinstance(self.ticker, str):
            object.__setattr__(self, "ticker", Ticker(self.ticker))
        object.__setattr__(self, "resolution", Resolution(self.resolution))
        for prev, cur in zip(bars, bars[1:]):
            if cur.timestamp == prev.timestamp:
                raise MarketDataError(f"duplicate timestamp {cur.timestamp} for {self.ticker}")
            if cur.timestamp < prev.timestamp:
                raise MarketDataError(f"unsorted timestamps for {self.ticker} at {cur.timestamp}")
        index = {b.timestamp: i for i, b in enumerate(bars)}
        days: dict[dt.date, tuple[int, int]] = {}
        for i, b in enumerate(bars):
            d = b.timestamp.date()
            lo, _ = days.get(d, (i, i))
            days[d] = (lo, i + 1)
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_days", days)

    def __len__(self):
        return len(self.bars)

    def closes(self) -> np.ndarray:
        return np.array([b.price for b in self.bars], dtype=float)

    def dates(self) -> list[dt.date]:
        return list(self._days)

    def bar_at(self, timestamp: dt.datetime) -> Bar | None:
        i = self._index.get(timestamp)
        return None if i is None else self.bars[i]

    def day_bars(self, day: dt.date) -> tuple[Bar, ...]:
        lo, hi = self._days.get(day, (0, 0))
        return self.bars[lo:hi]

    def close_on(self, day: dt.date) -> float | None:
        """Last close of `day` (the daily close for daily series)."""
        bars = self.day_bars(day)
        return bars[-1].price if bars else None

    def last_close_before(self, day: dt.date) -> float | None:
        prior = [d for d in self._days if d < day]
        return self.close_on(max(prior)) if prior else None


def _read_rows(source, header):
    if isinstance(source, (bytes, bytearray)):
        source = io.StringIO(bytes(source).decode("utf-8"))
    elif isinstance(source, str):
        source = io.StringIO(source)
    elif isinstance(source, io.BufferedIOBase) or "b" in getattr(source, "mode", ""):
        source = io.TextIOWrapper(source, encoding="utf-8", newline="")
    reader = csv.reader(source)
    first = next(reader, None)
    if first is None:
        raise MarketDataError("empty input; missing header", line=1)
    if [c.strip() for c in first] != header:
        raise MarketDataError(f"expected header {','.join(header)!r}, got {','.join(first)!r}", line=1)
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 3:
            raise MarketDataError(f"expected 3 fields, got {len(row)}", line=lineno)
        yield lineno, [c.strip() for c in row]


def _parse_price(text, lineno):
    try:
        price = Decimal(text)
    except InvalidOperation:
        raise MarketDataError(f"malformed price {text!r}", line=lineno) from None
    if not price.is_finite() or price <= 0:
        raise MarketDataError(f"non-positive price {text}", line=lineno)
    return price


def _group(rows, resolution):
    grouped: dict[str, list[Bar]] = {}
    for lineno, ts, code, price in rows:
        try:
            Ticker(code)
        except MarketDataError as exc:
            raise MarketDataError(str(exc), line=lineno) from None
        bars = grouped.setdefault(code, [])
        if bars and ts == bars[-1].timestamp:
            raise MarketDataError(f"duplicate timestamp {ts} for {code}", line=lineno)
        if bars and ts < bars[-1].timestamp:
            raise MarketDataError(f"unsorted input for {code} at {ts}", line=lineno)
        bars.append(Bar(ts, price))
    return {code: BarSeries(Ticker(code), resolution, tuple(bars)) for code, bars in grouped.items()}


def parse_minute_csv(source, clock: TradingSessionClock = DEFAULT_CLOCK) -> dict[str, BarSeries]:
    """Parse a ``datetime,ticker,close`` CSV into minute series keyed by ticker code.

    `source` may be bytes, str, or a text/binary file object. Rows outside the
    trading sessions of `clock` are rejected.
    """

    def rows():
        for lineno, (stamp, code, price) in _read_rows(source, MINUTE_HEADER):
            try:
                ts = dt.datetime.strptime(stamp, "%Y-%m-%d %H:%M")
            except ValueError:
                raise MarketDataError(f"malformed datetime {stamp!r}", line=lineno) from None
            if not clock.in_session(ts.time()):
                raise MarketDataError(f"{stamp} is outside trading sessions", line=lineno)
            yield lineno, ts, code, _parse_price(price, lineno)

    return _group(rows(), Resolution.MINUTE)


def parse_daily_csv(source) -> dict[str, BarSeries]:
    """Parse a ``date,ticker,close`` CSV into daily series keyed by ticker code."""

    def rows():
        for lineno, (stamp, code, price) in _read_rows(source, DAILY_HEADER):
            try:
                ts = dt.datetime.strptime(stamp, "%Y-%m-%d")
            except ValueError:
                raise MarketDataError(f"malformed date {stamp!r}", line=lineno) from None
            yield lineno, ts, code, _parse_price(price, lineno)

    return _group(rows(), Resolution.DAILY)


def canonical_price(price: Decimal) -> str:
    """Two decimals, or four below 1 CNY."""
    places = Decimal("0.0001") if price < 1 else Decimal("0.01")
    return str(price.quantize(places))


def _write(series: Iterable[BarSeries], header, fmt, out: IO[str] | None):
    buf = out if out is not None else io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for s in sorted(series, key=lambda s: s.ticker):
        for b in s.bars:
            writer.writerow([b.timestamp.strftime(fmt), s.ticker.code, canonical_price(b.close)])
    return buf.getvalue() if out is None else None


def write_minute_csv(series: Iterable[BarSeries], out=None):
    return _write(series, MINUTE_HEADER, "%Y-%m-%d %H:%M", out)


def write_daily_csv(series: Iterable[BarSeries], out=None):
    return _write(series, DAILY_HEADER, "%Y-%m-%d", out)


def price_at(series: BarSeries, day: dt.date, time: dt.time) -> float | None:
    """Close of the bar labelled exactly `day` `time`, or None when absent."""
    bar = series.bar_at(dt.datetime.combine(day, time))
    return None if bar is None else bar.price


def morning_training_window(
    series: BarSeries,
    day: dt.date,
    clock: TradingSessionClock = DEFAULT_CLOCK,
    min_bars: int | None = None,
) -> np.ndarray:
    """Closes with ``morning_open <= t <= morning_cutoff`` on `day`, in time order.

    Raises
    ------
    SkipDay
        If `min_bars` is given and the window is shorter.
    """
    prices = [
        b.price
        for b in series.day_bars(day)
        if clock.morning_open <= b.timestamp.time() <= clock.morning_cutoff
    ]
    if min_bars is not None and len(prices) < min_bars:
        raise SkipDay(f"{series.ticker} {day}: {len(prices)} morning bars, need {min_bars}")
    return np.array(prices, dtype=float)
