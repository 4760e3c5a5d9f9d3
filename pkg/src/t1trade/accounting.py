"""Monthly, daily-sum, yearly and portfolio returns, and two-point daily volatility."""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Mapping, Sequence

import numpy as np

from .portfolio import check_weights
from .strategy import DailyTradeRecord

__all__ = [
    "VolatilitySample",
    "ReturnLedger",
    "monthly_return",
    "yearly_from_monthly",
    "yearly_from_daily",
    "portfolio_return",
    "daily_volatility",
    "volatility_histogram",
    "format_pct",
]


def monthly_return(p_s: float, p_e: float) -> float:
    if not p_s > 0:
        raise ValueError("buying price must be positive")
    return (p_e - p_s) / p_s


def yearly_from_monthly(r_m: float) -> float:
    """Compound a monthly return over twelve months."""
    if not r_m > -1:
        raise ValueError("monthly return must exceed -100%")
    return (1.0 + r_m) ** 12 - 1.0


def yearly_from_daily(daily_returns: Iterable[float]) -> float:
    """Sum one month's daily returns, then compound twelve months."""
    total = math.fsum(daily_returns)
    if not total > -1:
        raise ValueError("summed daily returns must exceed -100%")
    return (1.0 + total) ** 12 - 1.0


def portfolio_return(weights, per_asset_returns) -> float:
    w = check_weights(weights, atol=1e-9)
    r = np.asarray(per_asset_returns, dtype=float).reshape(-1)
    if r.shape != w.shape:
        raise ValueError(f"{w.shape[0]} weights but {r.shape[0]} returns")
    return float(w @ r)


def daily_volatility(p_a: float, p_b: float) -> float:
    """``|p_a - p_b| / p_a`` between the 11:20 and 14:50 prices."""
    if not p_a > 0:
        raise ValueError("p_a must be positive")
    return abs(p_a - p_b) / p_a


@dataclass(frozen=True)
class VolatilitySample:
    ticker: str
    day: dt.date | None
    p_a: float
    p_b: float

    @property
    def sigma(self) -> float:
        return daily_volatility(self.p_a, self.p_b)


def volatility_histogram(samples: Sequence[VolatilitySample] | Sequence[float], bin_width: float = 0.001):
    """Left-closed, right-open bins starting at 0.

    Returns a list of ``(bin_start, count, frequency)`` covering every bin up
    to the largest sample.
    """
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    sig = np.array([s.sigma if isinstance(s, VolatilitySample) else float(s) for s in samples])
    if sig.size == 0:
        raise ValueError("no volatility samples")
    # exact decimal binning so that e.g. 0.002 lands in [0.002, 0.003)
    width = Decimal(str(bin_width))
    idx = np.array([int(Decimal(repr(float(s))) // width) for s in sig])
    counts = np.bincount(idx)
    return [(float(i * width), int(c), int(c) / sig.size) for i, c in enumerate(counts)]


def format_pct(fraction: float | None, places: int = 2) -> str:
    """Render a fraction as a percentage, rounding half away from zero."""
    if fraction is None:
        return "n/a"
    q = Decimal(1).scaleb(-places)
    return str((Decimal(repr(fraction)) * 100).quantize(q, rounding=ROUND_HALF_UP))


@dataclass
class ReturnLedger:
    """Per-stock trade records and origin-holding returns under one weight vector."""

    weights: Mapping[str, float]
    origin_prices: Mapping[str, float]
    per_stock_daily: dict[str, list[DailyTradeRecord]] = field(default_factory=dict)
    per_stock_monthly: dict[str, float] | None = None
    gross: bool = True

    def __post_init__(self):
        check_weights(list(self.weights.values()), atol=1e-6)
        for ticker, records in self.per_stock_daily.items():
            self._check_sorted(ticker, records)

    @property
    def tickers(self) -> list[str]:
        return list(self.weights)

    @staticmethod
    def _check_sorted(ticker, records):
        days = [r.day for r in records]
        if any(a is not None and b is not None and a >= b for a, b in zip(days, days[1:])):
            raise ValueError(f"{ticker}: daily records not strictly date-ordered")

    def add(self, record: DailyTradeRecord):
        if record.ticker not in self.weights:
            raise KeyError(f"{record.ticker} has no weight")
        records = self.per_stock_daily.setdefault(record.ticker, [])
        records.append(record)
        self._check_sorted(record.ticker, records)

    def daily_sum(self, ticker: str) -> float:
        attr = "r_t_gross" if self.gross else "r_t_net"
        return math.fsum(getattr(r, attr) for r in self.per_stock_daily.get(ticker, []))

    def intraday_gain(self) -> float:
        return portfolio_return(list(self.weights.values()), [self.daily_sum(t) for t in self.tickers])

    def origin_gain(self) -> float | None:
        if self.per_stock_monthly is None:
            return None
        return portfolio_return(list(self.weights.values()), [self.per_stock_monthly[t] for t in self.tickers])

    def total(self) -> float:
        origin = self.origin_gain()
        return self.intraday_gain() + (origin or 0.0)

    def contributions(self) -> dict[str, float]:
        if self.per_stock_monthly is None:
            return {}
        return {t: w * self.per_stock_monthly[t] for t, w in self.weights.items()}

    def to_report(self) -> dict:
        per_stock = {}
        for t in self.tickers:
            monthly = None if self.per_stock_monthly is None else self.per_stock_monthly[t]
            daily = self.daily_sum(t)
            per_stock[t] = {
                "weight": self.weights[t],
                "monthly_return": monthly,
                "october_daily_sum": daily,
                "yearly_projection": yearly_from_monthly((monthly or 0.0) + daily),
            }
        total = self.total()
        return {
            "returns_basis": "gross" if self.gross else "net",
            "per_stock": per_stock,
            "portfolio": {
                "origin_gain": self.origin_gain(),
                "intraday_gain": self.intraday_gain(),
                "total": total,
                "yearly_projection": yearly_from_monthly(total),
            },
        }
