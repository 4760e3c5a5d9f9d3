"""
Intraday round trips that leave end-of-day holdings unchanged.

Under T+1, shares bought today cannot be sold today. The strategy therefore
trades against a position opened on an earlier day. At 11:20 it either buys
extra shares or sells part of the holding. At 14:50 it reverses that leg.
The quantity traded equals the origin position. Daily returns are normalized
by the origin price.
"""

from __future__ import annotations

import datetime as dt
import enum
import logging
import warnings
from dataclasses import dataclass
from decimal import Decimal
from typing import Sequence

logger = logging.getLogger(__name__)

__all__ = [
    "Action",
    "StrategyConfig",
    "TradeDecision",
    "DailyTradeRecord",
    "decide",
    "realize",
    "apply_stop_loss",
    "hold_record",
]


class Action(str, enum.Enum):
    BUY_THEN_SELL = "BuyThenSell"
    SELL_THEN_BUY = "SellThenBuy"
    HOLD = "Hold"


@dataclass(frozen=True)
class StrategyConfig:
    """Trading rule parameters.

    ``threshold_base`` selects what the no-trade band is relative to:
    ``"price_1120"`` (default) or ``"origin"``.
    """

    threshold: float = 0.001
    fee_rate: float = 0.0005
    stop_loss: float | None = None
    report_gross: bool = True
    threshold_base: str = "price_1120"

    def __post_init__(self):
        if self.threshold < 0 or self.fee_rate < 0:
            raise ValueError("threshold and fee_rate must be non-negative")
        if self.stop_loss is not None and not self.stop_loss > 0:
            raise ValueError("stop_loss must be positive when set")
        if self.threshold_base not in ("price_1120", "origin"):
            raise ValueError(f"unknown threshold_base {self.threshold_base!r}")


@dataclass(frozen=True)
class TradeDecision:
    action: Action
    p_1120: float
    predicted_1450: float


@dataclass(frozen=True)
class DailyTradeRecord:
    ticker: str
    day: dt.date | None
    decision: TradeDecision
    real_1450: float | None
    s_t: float | None
    b_t: float | None
    origin: float
    r_t_gross: float
    r_t_net: float
    note: str = ""

    @property
    def executed(self) -> bool:
        return self.decision.action is not Action.HOLD

    @property
    def share_legs(self) -> tuple[int, ...]:
        """Signed share changes (in origin-position units) of the day's legs."""
        if self.decision.action is Action.BUY_THEN_SELL:
            return (+1, -1)
        if self.decision.action is Action.SELL_THEN_BUY:
            return (-1, +1)
        return ()

    @property
    def r_t(self) -> float:
        return self.r_t_gross


def _dec(x) -> Decimal:
    # via str(): 27.9 -> Decimal("27.9") exactly, so printed prices compare exactly
    return Decimal(str(x))


def decide(p_1120: float, predicted_1450: float, config: StrategyConfig = StrategyConfig(),
           origin: float | None = None) -> TradeDecision:
    """Trade direction from the 11:20 price and the predicted 14:50 price.

    No trade when ``|predicted - p_1120| <= threshold * base``. The band is
    evaluated in decimal arithmetic on the prices' shortest repr.
    """
    if not (p_1120 > 0 and predicted_1450 > 0):
        raise ValueError("prices must be positive")
    if config.threshold_base == "origin":
        if origin is None or not origin > 0:
            raise ValueError("origin price required for an origin-based threshold")
        base = origin
    else:
        base = p_1120
    diff = _dec(predicted_1450) - _dec(p_1120)
    band = _dec(config.threshold) * _dec(base)
    if abs(diff) <= band:
        action = Action.HOLD
    elif diff > 0:
        action = Action.BUY_THEN_SELL
    else:
        action = Action.SELL_THEN_BUY
    return TradeDecision(action, float(p_1120), float(predicted_1450))


def hold_record(ticker, day, decision: TradeDecision, origin: float, real_1450=None, note="") -> DailyTradeRecord:
    hold = TradeDecision(Action.HOLD, decision.p_1120, decision.predicted_1450)
    return DailyTradeRecord(ticker, day, hold, real_1450, None, None, origin, 0.0, 0.0, note)


def _close(decision, close_price, origin, config, ticker, day, real_1450, note=""):
    p = decision.p_1120
    if decision.action is Action.BUY_THEN_SELL:
        b_t, s_t = p, close_price
    else:
        s_t, b_t = p, close_price
    gross = (s_t - b_t) / origin
    net = gross - 2.0 * config.fee_rate * p / origin
    return DailyTradeRecord(ticker, day, decision, real_1450, s_t, b_t, origin, gross, net, note)


def realize(decision: TradeDecision, real_1450: float | None, origin: float,
            config: StrategyConfig = StrategyConfig(), ticker: str = "", day: dt.date | None = None) -> DailyTradeRecord:
    """Close the intraday leg at the real 14:50 price.

    ``r_t = (s_t - b_t) / origin``. Net return deducts two fee legs on the
    11:20 notional. A missing 14:50 price forces a hold.
    """
    if not origin > 0:
        raise ValueError("origin price must be positive")
    if decision.action is Action.HOLD:
        return hold_record(ticker, day, decision, origin, real_1450)
    if real_1450 is None:
        warnings.warn(f"{ticker} {day}: no 14:50 price, holding", RuntimeWarning, stacklevel=2)
        return hold_record(ticker, day, decision, origin, None, note="missing 14:50 bar")
    if not real_1450 > 0:
        raise ValueError("prices must be positive")
    return _close(decision, real_1450, origin, config, ticker, day, real_1450)


def apply_stop_loss(decision: TradeDecision, afternoon_path: Sequence[float], origin: float,
                    config: StrategyConfig, ticker: str = "", day: dt.date | None = None) -> DailyTradeRecord:
    """Like :func:`realize`, but exit early once the open leg loses more than ``stop_loss``.

    `afternoon_path` is the time-ordered afternoon closes ending at 14:50.
    The leg is closed at the first bar whose mark-to-market return (relative
    to origin) is below ``-stop_loss``, otherwise at the last bar.
    """
    if config.stop_loss is None:
        raise ValueError("stop_loss is not configured")
    if not origin > 0:
        raise ValueError("origin price must be positive")
    path = [float(x) for x in afternoon_path]
    real_1450 = path[-1] if path else None
    if decision.action is Action.HOLD:
        return hold_record(ticker, day, decision, origin, real_1450)
    if not path:
        warnings.warn(f"{ticker} {day}: empty afternoon path, holding", RuntimeWarning, stacklevel=2)
        return hold_record(ticker, day, decision, origin, None, note="empty afternoon path")
    p = decision.p_1120
    sign = 1.0 if decision.action is Action.BUY_THEN_SELL else -1.0
    for i, price in enumerate(path[:-1]):
        if sign * (price - p) / origin < -config.stop_loss:
            logger.info("%s %s: stop loss hit at bar %d (%.4f)", ticker, day, i, price)
            return _close(decision, price, origin, config, ticker, day, real_1450, note="stop loss")
    return _close(decision, path[-1], origin, config, ticker, day, real_1450)
