"""
Ensemble of single-hidden-layer perceptrons for minute-price forecasting.

A day's morning prices are min-max scaled to [-1, 1], embedded as
``lags``-long windows predicting the next value, and fitted by full-batch
gradient descent on mean squared error. The hidden width is chosen by blocked
(time-ordered) k-fold cross-validation, after which ``n_networks`` networks
with independent seeds are trained and rolled forward recursively. Their
per-step forecasts are combined by the median.

Seeds
-----
Every random draw comes from ``numpy.random.default_rng`` seeded with an
integer tuple:

* ensemble network ``i``: ``(base_seed, 0, i)``
* cross-validation fit for width ``h`` on fold ``k``: ``(base_seed, 1, h, k)``

so results never depend on the order in which fits are executed.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted, column_or_1d

from .market_data import SkipDay

logger = logging.getLogger(__name__)

__all__ = [
    "ForecastConfig",
    "MinMaxScaler1D",
    "LagMatrix",
    "TrainedNetwork",
    "EnsembleForecast",
    "TrainingDiverged",
    "EnsembleFailure",
    "MLPEnsembleForecaster",
    "embed",
    "blocked_folds",
    "loss_and_gradient",
    "train_network",
    "cv_scores",
    "select_hidden_size",
    "forecast",
    "median_combine",
    "network_seed",
    "cv_seed",
]


class TrainingDiverged(ArithmeticError):
    """Loss became non-finite during training."""


class EnsembleFailure(RuntimeError):
    """More than half of the ensemble's networks failed to train."""


@dataclass(frozen=True)
class ForecastConfig:
    lags: int = 60
    n_networks: int = 100
    combine: str = "median"
    cv_folds: int = 5
    hidden_candidates: tuple[int, ...] = tuple(range(1, 11))
    max_epochs: int = 500
    learning_rate: float = 0.01
    tolerance: float = 1e-6
    base_seed: int = 0
    n_jobs: int = 1
    price_floor: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "hidden_candidates", tuple(int(h) for h in self.hidden_candidates))
        if self.lags < 1:
            raise ValueError("lags must be >= 1")
        if self.n_networks < 1:
            raise ValueError("n_networks must be >= 1")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")
        if not self.hidden_candidates or min(self.hidden_candidates) < 1:
            raise ValueError("hidden_candidates must be non-empty positive counts")
        if self.combine not in ("median", "mean"):
            raise ValueError(f"unknown combine operator {self.combine!r}")
        if self.learning_rate <= 0 or self.tolerance < 0 or self.max_epochs < 1:
            raise ValueError("invalid optimizer settings")


def network_seed(base_seed: int, index: int) -> tuple[int, ...]:
    return (int(base_seed), 0, int(index))


def cv_seed(base_seed: int, hidden_size: int, fold: int) -> tuple[int, ...]:
    return (int(base_seed), 1, int(hidden_size), int(fold))


@dataclass(frozen=True)
class MinMaxScaler1D:
    """``scaled = (x - shift) / scale``.

    Fitted to map [min, max] onto [-1, 1]; a constant series is centred on its
    value with unit scale.
    """

    shift: float
    scale: float

    @classmethod
    def fit(cls, values) -> "MinMaxScaler1D":
        lo, hi = float(np.min(values)), float(np.max(values))
        if hi > lo:
            return cls((hi + lo) / 2.0, (hi - lo) / 2.0)
        return cls(lo, 1.0)

    def transform(self, x):
        return (np.asarray(x, dtype=float) - self.shift) / self.scale

    def inverse_transform(self, z):
        return np.asarray(z, dtype=float) * self.scale + self.shift


@dataclass(frozen=True)
class LagMatrix:
    inputs: np.ndarray
    targets: np.ndarray
    scaler: MinMaxScaler1D
    # scaled copy of the full series, needed to seed recursive forecasts
    scaled_series: np.ndarray = field(repr=False)

    @property
    def n_rows(self) -> int:
        return self.inputs.shape[0]

    @property
    def lags(self) -> int:
        return self.inputs.shape[1]


def embed(series, lags: int) -> LagMatrix:
    """Sliding windows of `lags` scaled prices, each paired with the next price."""
    x = np.asarray(series, dtype=float).reshape(-1)
    if lags < 1:
        raise ValueError("lags must be >= 1")
    if x.shape[0] <= lags:
        raise SkipDay(f"series of length {x.shape[0]} is too short for {lags} lags")
    scaler = MinMaxScaler1D.fit(x)
    z = scaler.transform(x)
    windows = sliding_window_view(z, lags + 1)
    return LagMatrix(windows[:, :lags].copy(), windows[:, lags].copy(), scaler, z)


def blocked_folds(n_rows: int, n_folds: int):
    """Yield ``(train_idx, val_idx)`` over contiguous time blocks."""
    idx = np.arange(n_rows)
    for val in np.array_split(idx, n_folds):
        train = np.setdiff1d(idx, val, assume_unique=True)
        assert not np.intersect1d(train, val).size
        yield train, val


@dataclass(frozen=True)
class TrainedNetwork:
    hidden_size: int
    w_in: np.ndarray
    b_in: np.ndarray
    w_out: np.ndarray
    b_out: float
    final_training_loss: float
    initial_training_loss: float
    n_epochs: int

    def predict(self, X) -> np.ndarray:
        return np.tanh(np.asarray(X) @ self.w_in + self.b_in) @ self.w_out + self.b_out

    @property
    def params(self):
        return self.w_in, self.b_in, self.w_out, self.b_out


def loss_and_gradient(params, X, y):
    """Mean squared error of a tanh/linear network and its gradient.

    `params` is ``(w_in, b_in, w_out, b_out)``; the gradient has the same
    structure.
    """
    w_in, b_in, w_out, b_out = params
    hidden = np.tanh(X @ w_in + b_in)
    resid = hidden @ w_out + b_out - y
    loss = float(np.mean(resid**2))
    d_out = 2.0 * resid / y.shape[0]
    g_w_out = hidden.T @ d_out
    g_b_out = float(d_out.sum())
    d_hidden = np.outer(d_out, w_out) * (1.0 - hidden**2)
    g_w_in = X.T @ d_hidden
    g_b_in = d_hidden.sum(axis=0)
    return loss, (g_w_in, g_b_in, g_w_out, g_b_out)


def train_network(data: LagMatrix | tuple, hidden_size: int, seed, config: ForecastConfig) -> TrainedNetwork:
    """Fit one network by full-batch gradient descent.

    `data` is a :class:`LagMatrix` or an ``(inputs, targets)`` pair. Training
    stops after ``config.max_epochs`` or when the relative loss improvement
    drops below ``config.tolerance``; the lowest-loss parameters seen are kept.
    """
    X, y = (data.inputs, data.targets) if isinstance(data, LagMatrix) else data
    if X.shape[0] == 0:
        raise ValueError("no training rows")
    if hidden_size < 1:
        raise ValueError("hidden_size must be >= 1")
    rng = np.random.default_rng(seed)
    p = X.shape[1]
    w_in = rng.uniform(-0.5, 0.5, (p, hidden_size))
    b_in = rng.uniform(-0.5, 0.5, hidden_size)
    w_out = rng.uniform(-0.5, 0.5, hidden_size)
    b_out = float(rng.uniform(-0.5, 0.5))
    lr = config.learning_rate

    best = None
    initial = prev = None
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        with np.errstate(all="ignore"):
            loss, (g_w_in, g_b_in, g_w_out, g_b_out) = loss_and_gradient((w_in, b_in, w_out, b_out), X, y)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
        if initial is None:
            initial = loss
        if best is None or loss < best[0]:
            best = (loss, w_in, b_in, w_out, b_out)
        if prev is not None and (prev <= 0 or (prev - loss) / prev < config.tolerance):
            break
        prev = loss
        w_in = w_in - lr * g_w_in
        b_in = b_in - lr * g_b_in
        w_out = w_out - lr * g_w_out
        b_out = b_out - lr * g_b_out

    loss, w_in, b_in, w_out, b_out = best
    return TrainedNetwork(hidden_size, w_in, b_in, w_out, b_out, loss, initial, epoch)


def _validation_mse(args):
    X, y, train, val, h, seed, config = args
    net = train_network((X[train], y[train]), h, seed, config)
    return float(np.mean((net.predict(X[val]) - y[val]) ** 2))


def _map(fn, items, n_jobs):
    if n_jobs is not None and n_jobs != 1 and len(items) > 1:
        workers = None if n_jobs < 0 else n_jobs
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def cv_scores(data: LagMatrix, config: ForecastConfig) -> dict[int, float]:
    """Mean blocked-fold validation MSE (scaled space) per hidden-size candidate."""
    candidates = sorted(set(config.hidden_candidates))
    folds = list(blocked_folds(data.n_rows, config.cv_folds))
    jobs = [
        (data.inputs, data.targets, train, val, h, cv_seed(config.base_seed, h, k), config)
        for h in candidates
        for k, (train, val) in enumerate(folds)
    ]
    scores = np.array(_map(_validation_mse, jobs, config.n_jobs)).reshape(len(candidates), len(folds))
    return {h: float(s) for h, s in zip(candidates, scores.mean(axis=1))}


def _select(data: LagMatrix, config: ForecastConfig) -> int:
    candidates = sorted(set(config.hidden_candidates))
    if len(candidates) == 1:
        return candidates[0]
    if data.n_rows < config.cv_folds:
        warnings.warn(
            f"{data.n_rows} rows < {config.cv_folds} folds; using hidden size {candidates[0]}",
            RuntimeWarning,
            stacklevel=3,
        )
        return candidates[0]
    scores = cv_scores(data, config)
    best_h, best_score = candidates[0], scores[candidates[0]]
    for h in candidates[1:]:
        if scores[h] < best_score:
            best_h, best_score = h, scores[h]
    return best_h


def select_hidden_size(series, config: ForecastConfig) -> int:
    """Hidden width with the lowest blocked-CV error; ties go to the smaller width."""
    return _select(embed(series, config.lags), config)


def median_combine(values) -> float:
    """Median by sorting: the middle value, or the mean of the two middle values."""
    v = np.sort(np.asarray(values, dtype=float).reshape(-1))
    n = v.shape[0]
    if n == 0:
        raise ValueError("median of an empty collection")
    mid = n // 2
    return float(v[mid]) if n % 2 else float((v[mid - 1] + v[mid]) / 2.0)


def _combine_columns(matrix: np.ndarray, how: str) -> np.ndarray:
    if how == "mean":
        return matrix.mean(axis=0)
    return np.array([median_combine(col) for col in matrix.T])


@dataclass(frozen=True)
class EnsembleForecast:
    horizon: int
    per_network: np.ndarray
    combined: np.ndarray
    target_price: float
    hidden_size: int
    n_failed: int = 0


def _recursive_paths(networks: Sequence[TrainedNetwork], history: np.ndarray, horizon: int) -> np.ndarray:
    """Roll every network forward `horizon` steps from the last lags of `history` (scaled)."""
    w_in = np.stack([n.w_in for n in networks])
    b_in = np.stack([n.b_in for n in networks])
    w_out = np.stack([n.w_out for n in networks])
    b_out = np.array([n.b_out for n in networks])
    lags = w_in.shape[1]
    window = np.tile(history[-lags:], (len(networks), 1))
    out = np.empty((len(networks), horizon))
    for step in range(horizon):
        hidden = np.tanh(np.einsum("np,nph->nh", window, w_in) + b_in)
        nxt = np.einsum("nh,nh->n", hidden, w_out) + b_out
        out[:, step] = nxt
        window = np.concatenate([window[:, 1:], nxt[:, None]], axis=1)
    return out


class MLPEnsembleForecaster(BaseEstimator):
    """Median-combined ensemble of MLPs, refitted on each call to :meth:`fit`.

    Parameters mirror :class:`ForecastConfig`; ``random_state`` is its
    ``base_seed``.

    Attributes
    ----------
    hidden_size_ : int
    networks_ : list of TrainedNetwork
        Networks that trained successfully, in index order.
    n_failed_ : int
    lag_matrix_ : LagMatrix
    """

    def __init__(self, lags=60, n_networks=100, combine="median", cv_folds=5,
                 hidden_candidates=tuple(range(1, 11)), max_epochs=500, learning_rate=0.01,
                 tol=1e-6, random_state=0, n_jobs=1, price_floor=1e-6):
        self.lags = lags
        self.n_networks = n_networks
        self.combine = combine
        self.cv_folds = cv_folds
        self.hidden_candidates = hidden_candidates
        self.max_epochs = max_epochs
        self.learning_rate = learning_rate
        self.tol = tol
        self.random_state = random_state
        self.n_jobs = n_jobs
        self.price_floor = price_floor

    @classmethod
    def from_config(cls, config: ForecastConfig) -> "MLPEnsembleForecaster":
        return cls(
            lags=config.lags, n_networks=config.n_networks, combine=config.combine,
            cv_folds=config.cv_folds, hidden_candidates=config.hidden_candidates,
            max_epochs=config.max_epochs, learning_rate=config.learning_rate,
            tol=config.tolerance, random_state=config.base_seed, n_jobs=config.n_jobs,
            price_floor=config.price_floor,
        )

    def to_config(self) -> ForecastConfig:
        return ForecastConfig(
            lags=self.lags, n_networks=self.n_networks, combine=self.combine,
            cv_folds=self.cv_folds, hidden_candidates=tuple(self.hidden_candidates),
            max_epochs=self.max_epochs, learning_rate=self.learning_rate,
            tolerance=self.tol, base_seed=0 if self.random_state is None else int(self.random_state),
            n_jobs=self.n_jobs, price_floor=self.price_floor,
        )

    def fit(self, y, X=None):
        """Fit on a 1-D price series (oldest first)."""
        config = self.to_config()
        y = column_or_1d(np.asarray(y, dtype=float))
        if not np.all(np.isfinite(y)):
            raise ValueError("series contains non-finite values")
        data = embed(y, config.lags)
        self.lag_matrix_ = data
        self.hidden_size_ = _select(data, config)

        def fit_one(i):
            try:
                return train_network(data, self.hidden_size_, network_seed(config.base_seed, i), config)
            except TrainingDiverged as exc:
                logger.warning("network %d aborted: %s", i, exc)
                return None

        fitted = _map(fit_one, list(range(config.n_networks)), config.n_jobs)
        self.networks_ = [n for n in fitted if n is not None]
        self.n_failed_ = config.n_networks - len(self.networks_)
        if self.n_failed_ * 2 > config.n_networks:
            raise EnsembleFailure(f"{self.n_failed_} of {config.n_networks} networks failed")
        if self.n_failed_:
            warnings.warn(f"{self.n_failed_} networks aborted", RuntimeWarning, stacklevel=2)
        self.n_features_in_ = config.lags
        return self

    def forecast(self, horizon: int, target_step: int | None = None) -> EnsembleForecast:
        """Recursive `horizon`-step forecast; `target_step` (1-based) defaults to the last step."""
        check_is_fitted(self, "networks_")
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        target_step = horizon if target_step is None else target_step
        if not 1 <= target_step <= horizon:
            raise ValueError("target_step must lie in [1, horizon]")
        data = self.lag_matrix_
        paths = data.scaler.inverse_transform(_recursive_paths(self.networks_, data.scaled_series, horizon))
        if not np.all(np.isfinite(paths)):
            raise EnsembleFailure("non-finite forecast")
        low = paths < self.price_floor
        if low.any():
            warnings.warn(f"{int(low.sum())} forecasts clamped to {self.price_floor}", RuntimeWarning, stacklevel=2)
            paths = np.where(low, self.price_floor, paths)
        combined = _combine_columns(paths, self.combine)
        return EnsembleForecast(
            horizon=horizon,
            per_network=paths,
            combined=combined,
            target_price=float(combined[target_step - 1]),
            hidden_size=self.hidden_size_,
            n_failed=self.n_failed_,
        )

    def predict(self, horizon: int) -> np.ndarray:
        return self.forecast(horizon).combined


def forecast(series, horizon: int, config: ForecastConfig = ForecastConfig(), target_step: int | None = None) -> EnsembleForecast:
    """Select the hidden width, train the ensemble on `series`, and forecast."""
    return MLPEnsembleForecaster.from_config(config).fit(series).forecast(horizon, target_step)


def with_seed(config: ForecastConfig, seed: int) -> ForecastConfig:
    return replace(config, base_seed=int(seed))
