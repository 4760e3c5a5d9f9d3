"""
Mean-variance portfolio selection by random-weight Monte Carlo.

Asset statistics come from simple daily returns of daily closes. Candidate
long-only portfolios are drawn by normalizing i.i.d. uniforms, and the scan
keeps the maximum-Sharpe and minimum-volatility samples.
"""

from __future__ import annotations

import datetime as dt
import logging
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .market_data import BarSeries

logger = logging.getLogger(__name__)

TRADING_DAYS = 252
# Fixed so that sample index -> weights is independent of n_samples and of
# how chunks are distributed over workers.
_CHUNK = 8192

__all__ = [
    "AssetStats",
    "FrontierPoint",
    "FrontierScan",
    "MonteCarloPortfolio",
    "estimate_stats",
    "stats_from_prices",
    "portfolio_moments",
    "sharpe_ratio",
    "sample_weights",
    "scan_frontier",
    "check_weights",
]


@dataclass(frozen=True)
class AssetStats:
    tickers: tuple[str, ...]
    mean_daily: np.ndarray
    cov_daily: np.ndarray
    annualization_factor: int = TRADING_DAYS

    def __post_init__(self):
        n = len(self.tickers)
        mu = np.asarray(self.mean_daily, dtype=float).reshape(-1)
        cov = np.atleast_2d(np.asarray(self.cov_daily, dtype=float))
        if mu.shape != (n,) or cov.shape != (n, n):
            raise ValueError(f"shape mismatch: {n} tickers, mean {mu.shape}, cov {cov.shape}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
            raise ValueError("covariance matrix is not symmetric")
        if np.any(np.diag(cov) < 0):
            raise ValueError("negative variance on covariance diagonal")
        eig = np.linalg.eigvalsh(cov)
        if eig[0] < -1e-10 * max(eig[-1], 0.0):
            raise ValueError("covariance matrix is not positive semi-definite")
        object.__setattr__(self, "mean_daily", mu)
        object.__setattr__(self, "cov_daily", cov)
        object.__setattr__(self, "tickers", tuple(self.tickers))

    @property
    def n_assets(self) -> int:
        return len(self.tickers)


@dataclass(frozen=True)
class FrontierPoint:
    weights: np.ndarray
    expected_return_yearly: float
    volatility_yearly: float
    sharpe: float


@dataclass(frozen=True)
class FrontierScan:
    max_sharpe: FrontierPoint
    min_vol: FrontierPoint
    # columns: volatility, expected_return, sharpe
    scatter: np.ndarray


def check_weights(w, n_assets=None, atol=1e-12) -> np.ndarray:
    """Validate a long-only, fully-invested weight vector."""
    w = np.asarray(w, dtype=float).reshape(-1)
    if n_assets is not None and w.shape[0] != n_assets:
        raise ValueError(f"expected {n_assets} weights, got {w.shape[0]}")
    if np.any(w < 0) or np.any(w > 1):
        raise ValueError("weights must lie in [0, 1]")
    if abs(w.sum() - 1.0) > atol:
        raise ValueError(f"weights sum to {w.sum()!r}, not 1")
    return w


def stats_from_prices(prices, tickers: Sequence[str], annualization_factor=TRADING_DAYS) -> AssetStats:
    """Mean and sample covariance of simple returns from a (days, assets) price matrix."""
    prices = check_array(prices, ensure_min_samples=2, dtype=float)
    if prices.shape[1] != len(tickers):
        raise ValueError("one ticker per price column is required")
    if np.any(prices <= 0):
        raise ValueError("prices must be positive")
    returns = prices[1:] / prices[:-1] - 1.0
    mean = returns.mean(axis=0)
    if returns.shape[0] < 2:
        warnings.warn("a single return observation: covariance set to zero", RuntimeWarning, stacklevel=2)
        cov = np.zeros((len(tickers), len(tickers)))
    else:
        cov = np.atleast_2d(np.cov(returns, rowvar=False, ddof=1))
        cov = 0.5 * (cov + cov.T)
    return AssetStats(tuple(tickers), mean, cov, annualization_factor)


def _joined_prices(daily_series: Mapping[str, BarSeries], start=None, end=None):
    if not daily_series:
        raise ValueError("no daily series given")
    per_ticker = {}
    for code, series in daily_series.items():
        closes = {
            b.timestamp.date(): b.price
            for b in series.bars
            if (start is None or b.timestamp.date() >= start) and (end is None or b.timestamp.date() <= end)
        }
        per_ticker[code] = closes
    all_dates = set().union(*(set(c) for c in per_ticker.values()))
    common = set.intersection(*(set(c) for c in per_ticker.values()))
    if not common:
        raise ValueError("date intersection across tickers is empty")
    dropped = sorted(all_dates - common)
    if dropped:
        logger.warning("dropping %d dates not shared by every ticker: %s", len(dropped), [d.isoformat() for d in dropped])
    dates = sorted(common)
    if len(dates) < 2:
        raise ValueError(f"only {len(dates)} joined observation(s); at least 2 are needed")
    tickers = list(per_ticker)
    return tickers, dates, np.array([[per_ticker[t][d] for t in tickers] for d in dates])


def estimate_stats(
    daily_series: Mapping[str, BarSeries],
    window: tuple[dt.date | None, dt.date | None] = (None, None),
    annualization_factor: int = TRADING_DAYS,
) -> AssetStats:
    """Estimate return statistics from daily series over an inclusive date window.

    Dates are inner-joined across tickers before returns are taken.
    """
    tickers, _, prices = _joined_prices(daily_series, *window)
    return stats_from_prices(prices, tickers, annualization_factor)


def portfolio_moments(stats: AssetStats, w) -> tuple[float, float]:
    """Annualized (expected return, volatility) of weights `w`."""
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.shape[0] != stats.n_assets:
        raise ValueError(f"dimension mismatch: {w.shape[0]} weights for {stats.n_assets} assets")
    f = stats.annualization_factor
    ret = float(w @ stats.mean_daily) * f
    var = float(w @ stats.cov_daily @ w)
    return ret, float(np.sqrt(max(var, 0.0) * f))


def _moments_batch(stats: AssetStats, W: np.ndarray):
    f = stats.annualization_factor
    ret = (W @ stats.mean_daily) * f
    var = np.einsum("ij,jk,ik->i", W, stats.cov_daily, W)
    return ret, np.sqrt(np.clip(var, 0.0, None) * f)


def sharpe_ratio(expected_return_yearly: float, volatility_yearly: float, rf: float) -> float:
    if not volatility_yearly > 0:
        raise ZeroDivisionError("Sharpe ratio undefined at zero volatility")
    return (expected_return_yearly - rf) / volatility_yearly


def _chunk(seed: int, k: int, n_assets: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
    u = rng.random((_CHUNK, n_assets))
    return u / u.sum(axis=1, keepdims=True)


def sample_weights(n_assets: int, n_samples: int, seed: int = 0) -> np.ndarray:
    """Draw `n_samples` long-only weight vectors, one per row.

    Each row is `n_assets` uniforms divided by their sum. Rows are generated in
    fixed-size chunks, chunk ``k`` seeded from ``(seed, k)``, so row ``i`` is
    the same whatever `n_samples` is or however chunks are scheduled.
    """
    if n_assets < 1 or n_samples < 1:
        raise ValueError("n_assets and n_samples must be >= 1")
    n_chunks = -(-n_samples // _CHUNK)
    return np.concatenate([_chunk(seed, k, n_assets) for k in range(n_chunks)])[:n_samples]


def scan_frontier(stats: AssetStats, n_samples: int = 50_000, rf: float = 0.04, seed: int = 0) -> FrontierScan:
    """Evaluate sampled portfolios and pick max-Sharpe and min-volatility points.

    Ties go to the earliest sample. If every sampled volatility is zero the
    Sharpe ratio is undefined and the highest-return sample is reported.
    """
    W = sample_weights(stats.n_assets, n_samples, seed)
    ret, vol = _moments_batch(stats, W)
    with np.errstate(divide="ignore", invalid="ignore"):
        sharpe = np.where(vol > 0, (ret - rf) / vol, np.nan)
    if np.all(np.isnan(sharpe)):
        i_best = int(np.argmax(ret))
    else:
        i_best = int(np.nanargmax(sharpe))
    i_min = int(np.argmin(vol))

    def point(i):
        return FrontierPoint(W[i].copy(), float(ret[i]), float(vol[i]), float(sharpe[i]))

    return FrontierScan(point(i_best), point(i_min), np.column_stack([vol, ret, sharpe]))


class MonteCarloPortfolio(BaseEstimator):
    """Random-weight mean-variance optimizer.

    Parameters
    ----------
    n_samples : int, default=50000
        Number of random portfolios.
    risk_free_rate : float, default=0.04
        Annual risk-free rate used in the Sharpe ratio.
    annualization_factor : int, default=252
    objective : {"max_sharpe", "min_vol"}, default="max_sharpe"
        Which scanned point becomes ``weights_``.
    random_state : int, default=0

    Attributes
    ----------
    stats_ : AssetStats
    max_sharpe_, min_vol_ : FrontierPoint
    scatter_ : ndarray of shape (n_samples, 3)
    weights_ : ndarray of shape (n_assets,)
    """

    def __init__(self, n_samples=50_000, risk_free_rate=0.04, annualization_factor=TRADING_DAYS,
                 objective="max_sharpe", random_state=0):
        self.n_samples = n_samples
        self.risk_free_rate = risk_free_rate
        self.annualization_factor = annualization_factor
        self.objective = objective
        self.random_state = random_state

    def fit(self, X, y=None, tickers=None):
        """Fit on a (days, assets) matrix of daily closes."""
        if self.objective not in ("max_sharpe", "min_vol"):
            raise ValueError(f"unknown objective {self.objective!r}")
        columns = getattr(X, "columns", None)
        X = check_array(X, ensure_min_samples=2, dtype=float)
        if tickers is None:
            tickers = list(columns) if columns is not None else [f"asset{i}" for i in range(X.shape[1])]
        self.stats_ = stats_from_prices(X, list(tickers), self.annualization_factor)
        self._scan(self.stats_)
        return self

    def fit_series(self, daily_series: Mapping[str, BarSeries], start=None, end=None):
        self.stats_ = estimate_stats(daily_series, (start, end), self.annualization_factor)
        self._scan(self.stats_)
        return self

    def _scan(self, stats):
        seed = 0 if self.random_state is None else int(self.random_state)
        scan = scan_frontier(stats, self.n_samples, self.risk_free_rate, seed)
        self.max_sharpe_ = scan.max_sharpe
        self.min_vol_ = scan.min_vol
        self.scatter_ = scan.scatter
        self.tickers_ = stats.tickers
        self.n_features_in_ = stats.n_assets
        chosen = self.max_sharpe_ if self.objective == "max_sharpe" else self.min_vol_
        self.weights_ = chosen.weights

    def score(self, X=None, y=None):
        """Sharpe ratio of the chosen portfolio."""
        check_is_fitted(self, "weights_")
        chosen = self.max_sharpe_ if self.objective == "max_sharpe" else self.min_vol_
        return chosen.sharpe
