"""Markowitz selection, MLP-ensemble forecasting and T+1 intraday backtesting for A-shares."""

from .accounting import (
    ReturnLedger,
    VolatilitySample,
    daily_volatility,
    monthly_return,
    portfolio_return,
    volatility_histogram,
    yearly_from_daily,
    yearly_from_monthly,
)
from .market_data import (
    Bar,
    BarSeries,
    TradingSessionClock,
    morning_training_window,
    parse_daily_csv,
    parse_minute_csv,
    price_at,
)
from .mlp import ForecastConfig, MLPEnsembleForecaster, embed, forecast, median_combine
from .portfolio import MonteCarloPortfolio, estimate_stats, portfolio_moments, scan_frontier, sharpe_ratio
from .strategy import Action, StrategyConfig, apply_stop_loss, decide, realize

__version__ = "0.1.0"
