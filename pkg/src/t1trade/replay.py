"""
Replay of recorded daily trades with their stored predictions.

Each fixture row holds the 11:20 price, the real and predicted 14:50 prices,
the recorded daily return (in percent) and the origin price. Replaying applies
:func:`~t1trade.strategy.decide` and :func:`~t1trade.strategy.realize` to the
row, skipping the forecaster entirely, and diffs the result against the
recorded return.

Recorded predictions are rounded to the decimals they are printed with. When
that rounding straddles the no-trade band the decision is not determined by
the row. Such rows are marked ``ambiguous`` and accepted if any admissible
action reproduces the recorded return.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import math
from collections import defaultdict
from dataclasses import dataclass
from decimal import Decimal
from importlib import resources
from typing import Iterable

from .strategy import Action, StrategyConfig, TradeDecision, decide, realize

__all__ = [
    "FixtureRow",
    "PortfolioRow",
    "ReplayedRow",
    "ReplayResult",
    "FixtureError",
    "FIXTURE_HEADER",
    "load_fixtures",
    "load_portfolio_table",
    "replay",
    "MATCH_TOLERANCE_PP",
]

FIXTURE_HEADER = ["date", "ticker", "p1120", "real1450", "pred1450", "printed_return_pct", "origin"]
MATCH_TOLERANCE_PP = 0.01
OUT_OF_BAND_RATIO = 10.0

MATCH = "match"
AMBIGUOUS = "ambiguous"
MISMATCH = "mismatch"
OUT_OF_BAND = "excluded:out-of-band-prediction"
DUPLICATE = "excluded:duplicated-row"


class FixtureError(ValueError):
    pass


@dataclass(frozen=True)
class FixtureRow:
    day: dt.date
    ticker: str
    p1120: float
    real1450: float
    pred1450: float
    printed_return_pct: float
    origin: float
    # half a unit in the last printed decimal of the prediction
    pred_half_ulp: float = 0.005
    line: int = 0


@dataclass(frozen=True)
class PortfolioRow:
    ticker: str
    weight: float
    close_start: float
    close_end: float
    printed_monthly_pct: float
    printed_october_sum_pct: float


@dataclass(frozen=True)
class ReplayedRow:
    row: FixtureRow
    action: Action
    recomputed_pct: float
    resolved_pct: float
    status: str
    admissible: tuple[Action, ...]

    @property
    def diff_pp(self) -> float:
        return abs(self.resolved_pct - self.row.printed_return_pct)

    @property
    def excluded(self) -> bool:
        return self.status.startswith("excluded")


def _half_ulp(text: str) -> float:
    exp = Decimal(text).as_tuple().exponent
    return float(Decimal(5).scaleb(exp - 1))


def _open_source(source):
    if source is None:
        return resources.files("t1trade").joinpath("data/appendix_days.csv").open("r", encoding="utf-8")
    if isinstance(source, (str, bytes)) and ("\n" in (source if isinstance(source, str) else source.decode())):
        return io.StringIO(source if isinstance(source, str) else source.decode("utf-8"))
    if hasattr(source, "read"):
        return source
    return open(source, "r", encoding="utf-8", newline="")


def load_fixtures(source=None) -> tuple[list[FixtureRow], list[tuple[int, str]]]:
    """Read a fixture CSV; defaults to the bundled appendix transcription.

    Returns the parsed rows and a list of ``(line, message)`` for rows that
    could not be parsed.
    """
    rows, errors = [], []
    with _open_source(source) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != FIXTURE_HEADER:
            raise FixtureError(f"fixture header must be {','.join(FIXTURE_HEADER)}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec or not any(c.strip() for c in rec):
                continue
            try:
                if len(rec) != len(FIXTURE_HEADER):
                    raise ValueError(f"expected {len(FIXTURE_HEADER)} fields, got {len(rec)}")
                date, ticker, p, real, pred, printed, origin = (c.strip() for c in rec)
                row = FixtureRow(
                    day=dt.date.fromisoformat(date),
                    ticker=ticker,
                    p1120=float(p),
                    real1450=float(real),
                    pred1450=float(pred),
                    printed_return_pct=float(printed),
                    origin=float(origin),
                    pred_half_ulp=_half_ulp(pred),
                    line=lineno,
                )
                if min(row.p1120, row.real1450, row.pred1450, row.origin) <= 0:
                    raise ValueError("non-positive price")
            except (ValueError, ArithmeticError) as exc:
                errors.append((lineno, str(exc)))
                continue
            rows.append(row)
    return rows, errors


def load_portfolio_table(source=None) -> list[PortfolioRow]:
    """Weights, start/end closes and recorded monthly and daily-sum returns per stock."""
    if source is None:
        fh = resources.files("t1trade").joinpath("data/portfolio_table.csv").open("r", encoding="utf-8")
    else:
        fh = open(source, "r", encoding="utf-8", newline="")
    with fh:
        return [
            PortfolioRow(
                r["ticker"],
                float(r["weight"]),
                float(r["close_start"]),
                float(r["close_end"]),
                float(r["printed_monthly_pct"]),
                float(r["printed_october_sum_pct"]),
            )
            for r in csv.DictReader(fh)
        ]


def _flag_defects(rows: list[FixtureRow]) -> dict[int, str]:
    flags: dict[int, str] = {}
    by_ticker: dict[str, list[int]] = defaultdict(list)
    for i, r in enumerate(rows):
        by_ticker[r.ticker].append(i)
        ratio = r.pred1450 / r.p1120
        if ratio > OUT_OF_BAND_RATIO or ratio < 1.0 / OUT_OF_BAND_RATIO:
            flags[i] = OUT_OF_BAND
    for idxs in by_ticker.values():
        idxs.sort(key=lambda i: rows[i].day)
        for a, b in zip(idxs, idxs[1:]):
            ra, rb = rows[a], rows[b]
            flat = ra.real1450 == ra.p1120 and ra.pred1450 == ra.p1120
            if not flat and (ra.p1120, ra.real1450, ra.pred1450, ra.printed_return_pct) == (
                rb.p1120, rb.real1450, rb.pred1450, rb.printed_return_pct
            ):
                # either date could be the genuine one
                flags.setdefault(a, DUPLICATE)
                flags.setdefault(b, DUPLICATE)
    return flags


_ORDER = [Action.SELL_THEN_BUY, Action.HOLD, Action.BUY_THEN_SELL]


def _pct(action: Action, row: FixtureRow, config: StrategyConfig) -> float:
    rec = realize(TradeDecision(action, row.p1120, row.pred1450), row.real1450, row.origin, config, row.ticker, row.day)
    return 100.0 * (rec.r_t_gross if config.report_gross else rec.r_t_net)


def _admissible(row: FixtureRow, config: StrategyConfig) -> tuple[Action, ...]:
    # decide() is monotone in the prediction, so the interval's endpoints bound the set
    lo = max(row.pred1450 - row.pred_half_ulp, 1e-12)
    hi = row.pred1450 + row.pred_half_ulp
    a = _ORDER.index(decide(row.p1120, lo, config, origin=row.origin).action)
    b = _ORDER.index(decide(row.p1120, hi, config, origin=row.origin).action)
    return tuple(_ORDER[a : b + 1])


@dataclass
class ReplayResult:
    rows: list[ReplayedRow]
    errors: list[tuple[int, str]]
    tolerance_pp: float = MATCH_TOLERANCE_PP

    @property
    def scored(self) -> list[ReplayedRow]:
        return [r for r in self.rows if not r.excluded]

    @property
    def mismatches(self) -> list[ReplayedRow]:
        return [r for r in self.rows if r.status == MISMATCH]

    @property
    def excluded(self) -> list[ReplayedRow]:
        return [r for r in self.rows if r.excluded]

    @property
    def match_rate(self) -> float:
        scored = self.scored
        return sum(r.status != MISMATCH for r in scored) / len(scored) if scored else float("nan")

    @property
    def strict_match_rate(self) -> float:
        """Match rate using only the decision implied by the printed prediction."""
        scored = self.scored
        if not scored:
            return float("nan")
        ok = sum(abs(r.recomputed_pct - r.row.printed_return_pct) <= self.tolerance_pp + 1e-9 for r in scored)
        return ok / len(scored)

    def defective_tickers(self) -> set[str]:
        return {r.row.ticker for r in self.excluded}

    def daily_sums_pct(self) -> dict[str, float]:
        """Per-stock sum of resolved returns over non-excluded rows, in percent."""
        sums: dict[str, list[float]] = defaultdict(list)
        for r in self.rows:
            if not r.excluded:
                sums[r.row.ticker].append(r.resolved_pct)
        return {t: math.fsum(v) for t, v in sums.items()}

    def summary(self) -> dict:
        return {
            "rows": len(self.rows),
            "scored": len(self.scored),
            "excluded": len(self.excluded),
            "ambiguous": sum(r.status == AMBIGUOUS for r in self.rows),
            "mismatches": len(self.mismatches),
            "match_rate": self.match_rate,
            "strict_match_rate": self.strict_match_rate,
            "malformed_rows": [{"line": line, "error": msg} for line, msg in self.errors],
            "defective_tickers": sorted(self.defective_tickers()),
        }

    def write_diff_csv(self, out):
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["date", "ticker", "action", "admissible", "recomputed_pct", "resolved_pct",
                         "printed_pct", "diff_pp", "status"])
        for r in self.rows:
            writer.writerow([
                r.row.day.isoformat(), r.row.ticker, r.action.value, "|".join(a.value for a in r.admissible),
                f"{r.recomputed_pct:.4f}", f"{r.resolved_pct:.4f}", f"{r.row.printed_return_pct:g}",
                f"{r.diff_pp:.4f}", r.status,
            ])


def replay(rows: Iterable[FixtureRow], config: StrategyConfig = StrategyConfig(),
           errors: list[tuple[int, str]] | None = None, tolerance_pp: float = MATCH_TOLERANCE_PP) -> ReplayResult:
    """Recompute every row's daily return from its recorded prediction."""
    rows = list(rows)
    flags = _flag_defects(rows)
    out = []
    for i, row in enumerate(rows):
        if i in flags:
            action = Action.HOLD
            pct = float("nan")
            out.append(ReplayedRow(row, action, pct, pct, flags[i], ()))
            continue
        action = decide(row.p1120, row.pred1450, config, origin=row.origin).action
        pct = _pct(action, row, config)
        if abs(pct - row.printed_return_pct) <= tolerance_pp + 1e-9:
            out.append(ReplayedRow(row, action, pct, pct, MATCH, (action,)))
            continue
        admissible = _admissible(row, config)
        for alt in admissible:
            alt_pct = _pct(alt, row, config)
            if alt != action and abs(alt_pct - row.printed_return_pct) <= tolerance_pp + 1e-9:
                out.append(ReplayedRow(row, action, pct, alt_pct, AMBIGUOUS, admissible))
                break
        else:
            out.append(ReplayedRow(row, action, pct, pct, MISMATCH, admissible))
    return ReplayResult(out, list(errors or []), tolerance_pp)
