import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from t1trade.market_data import SkipDay
from t1trade.mlp import (
    EnsembleFailure,
    ForecastConfig,
    LagMatrix,
    MLPEnsembleForecaster,
    TrainingDiverged,
    blocked_folds,
    cv_scores,
    cv_seed,
    embed,
    forecast,
    loss_and_gradient,
    median_combine,
    select_hidden_size,
    train_network,
)

SMALL = ForecastConfig(lags=4, n_networks=5, hidden_candidates=(2,), max_epochs=200, base_seed=1)


def sliding_oracle(series, lags):
    xs, ys = [], []
    for k in range(len(series) - lags):
        xs.append(list(series[k:k + lags]))
        ys.append(series[k + lags])
    return xs, ys


def test_embed_enumeration():
    m = embed([1, 2, 3, 4, 5], 2)
    assert m.n_rows == 3
    np.testing.assert_array_equal(m.scaler.inverse_transform(m.inputs), [[1, 2], [2, 3], [3, 4]])
    np.testing.assert_array_equal(m.scaler.inverse_transform(m.targets), [3, 4, 5])
    assert m.inputs.min() == -1 and m.targets.max() == 1


def test_embed_morning_window_rows():
    assert embed(np.linspace(10, 11, 111), 60).n_rows == 111 - 60


def test_embed_constant_series():
    m = embed([5, 5, 5, 5], 2)
    assert m.scaler.scale == 1.0
    assert np.all(m.targets == m.targets[0])
    np.testing.assert_array_equal(m.scaler.inverse_transform(m.targets), [5, 5])


def test_embed_too_short():
    with pytest.raises(SkipDay):
        embed([1, 2, 3], 3)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(1.0, 500.0), min_size=3, max_size=40), st.integers(1, 10))
def test_embed_matches_sliding_window(series, lags):
    if len(series) <= lags:
        with pytest.raises(SkipDay):
            embed(series, lags)
        return
    m = embed(series, lags)
    xs, ys = sliding_oracle(series, lags)
    np.testing.assert_allclose(m.scaler.inverse_transform(m.inputs), xs, rtol=1e-12)
    np.testing.assert_allclose(m.scaler.inverse_transform(m.targets), ys, rtol=1e-12)
    assert m.n_rows == len(series) - lags


@pytest.mark.parametrize("seed", range(6))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p, h, m = rng.integers(1, 6), rng.integers(1, 5), 7
    X, y = rng.normal(size=(m, p)), rng.normal(size=m)
    params = [rng.normal(size=(p, h)), rng.normal(size=h), rng.normal(size=h), float(rng.normal())]
    _, grads = loss_and_gradient(params, X, y)
    eps = 1e-6
    for k, (param, grad) in enumerate(zip(params, grads)):
        arr = np.atleast_1d(np.array(param, dtype=float))
        g = np.atleast_1d(np.asarray(grad, dtype=float))
        for idx in np.ndindex(arr.shape):
            plus, minus = arr.copy(), arr.copy()
            plus[idx] += eps
            minus[idx] -= eps
            fp = [*params]
            fm = [*params]
            fp[k] = plus if arr.ndim and np.ndim(param) else float(plus[0])
            fm[k] = minus if arr.ndim and np.ndim(param) else float(minus[0])
            numeric = (loss_and_gradient(fp, X, y)[0] - loss_and_gradient(fm, X, y)[0]) / (2 * eps)
            denom = max(abs(numeric), abs(g[idx]), 1e-8)
            assert abs(numeric - g[idx]) / denom < 1e-4


def test_training_decreases_loss_toward_zero_targets():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(20, 3))
    net = train_network((X, np.zeros(20)), 3, seed=(0, 0, 0), config=ForecastConfig(max_epochs=300))
    assert net.final_training_loss <= net.initial_training_loss
    assert np.all(np.isfinite(net.w_in)) and np.isfinite(net.b_out)
    assert net.final_training_loss < 0.1 * net.initial_training_loss


def test_linear_series_beats_mean_predictor():
    m = embed(np.arange(1.0, 41.0), 2)
    net = train_network(m, 3, seed=(0, 0, 0), config=ForecastConfig(max_epochs=500))
    mse = float(np.mean((net.predict(m.inputs) - m.targets) ** 2))
    baseline = float(np.var(m.targets))
    assert mse < baseline


def test_training_is_deterministic():
    m = embed(np.sin(np.arange(50) / 3) + 2, 5)
    a = train_network(m, 4, (3, 0, 1), SMALL)
    b = train_network(m, 4, (3, 0, 1), SMALL)
    for x, y in zip(a.params, b.params):
        assert np.array_equal(x, y)


def test_divergence_raises():
    X = np.array([[1.0, np.inf], [0.0, 1.0]])
    with pytest.raises(TrainingDiverged):
        train_network((X, np.zeros(2)), 2, 0, ForecastConfig())


def test_oversized_step_keeps_best_parameters():
    m = embed(np.sin(np.arange(50) / 3) + 2, 5)
    net = train_network(m, 4, 0, ForecastConfig(learning_rate=50.0, max_epochs=50))
    assert net.final_training_loss <= net.initial_training_loss


def test_blocked_folds_are_contiguous_and_disjoint():
    seen = []
    for train, val in blocked_folds(51, 5):
        assert not set(train) & set(val)
        assert np.all(np.diff(val) == 1)
        assert len(train) + len(val) == 51
        seen.extend(val)
    assert sorted(seen) == list(range(51))


def test_select_singleton_and_duplicate_candidates():
    s = np.sin(np.arange(80) / 4) + 3
    assert select_hidden_size(s, ForecastConfig(lags=5, hidden_candidates=(3,))) == 3
    assert select_hidden_size(s, ForecastConfig(lags=5, hidden_candidates=(4, 4), max_epochs=20)) == 4


def test_select_falls_back_with_few_rows():
    with pytest.warns(RuntimeWarning, match="folds"):
        h = select_hidden_size([1, 2, 3, 4, 5], ForecastConfig(lags=2, hidden_candidates=(5, 2)))
    assert h == 2


def test_select_on_white_noise_matches_independent_rerun():
    rng = np.random.default_rng(11)
    series = 10 + rng.normal(size=90)
    config = ForecastConfig(lags=10, cv_folds=5, hidden_candidates=(1, 3, 6), max_epochs=60, base_seed=4)
    chosen = select_hidden_size(series, config)

    # independent re-evaluation: rebuild lag rows, fold blocks, and refit each (h, fold)
    lo, hi = series.min(), series.max()
    z = (series - (hi + lo) / 2) / ((hi - lo) / 2)
    xs, ys = sliding_oracle(list(z), 10)
    X, y = np.array(xs), np.array(ys)
    n = len(y)
    sizes = [n // 5 + (1 if i < n % 5 else 0) for i in range(5)]
    bounds = np.cumsum([0] + sizes)
    scores = {}
    for h in (1, 3, 6):
        errs = []
        for k in range(5):
            val = np.arange(bounds[k], bounds[k + 1])
            train = np.array([i for i in range(n) if i < bounds[k] or i >= bounds[k + 1]])
            net = train_network((X[train], y[train]), h, cv_seed(4, h, k), config)
            errs.append(np.mean((net.predict(X[val]) - y[val]) ** 2))
        scores[h] = np.mean(errs)
    assert chosen == min(scores, key=lambda h: (scores[h], h))
    got = cv_scores(embed(series, 10), config)
    for h in scores:
        assert got[h] == pytest.approx(scores[h], rel=1e-12)


@pytest.mark.parametrize("values, want", [([3, 1, 2], 2), ([1, 2, 3, 100], 2.5), ([7], 7)])
def test_median_combine_examples(values, want):
    assert median_combine(values) == want


def test_median_combine_empty():
    with pytest.raises(ValueError):
        median_combine([])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
def test_median_matches_sort_oracle(values):
    s = sorted(values)
    n = len(s)
    want = s[n // 2] if n % 2 else (s[n // 2 - 1] + s[n // 2]) / 2
    assert median_combine(values) == want


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=21), st.data())
def test_median_robust_to_minority_outliers(values, data):
    n = len(values)
    k = data.draw(st.integers(0, (n - 1) // 2))
    idx = data.draw(st.permutations(range(n)))[:k]
    corrupted = list(values)
    for i in idx:
        corrupted[i] = data.draw(st.floats(-1e9, 1e9))
    untouched = [v for i, v in enumerate(values) if i not in idx]
    med = median_combine(corrupted)
    assert min(untouched) <= med <= max(untouched)


def test_forecast_single_network_is_its_path():
    s = np.sin(np.arange(40) / 3) + 5
    cfg = ForecastConfig(lags=5, n_networks=1, hidden_candidates=(3,), max_epochs=100)
    f = forecast(s, 7, cfg)
    np.testing.assert_array_equal(f.combined, f.per_network[0])
    assert f.target_price == f.combined[-1]
    assert forecast(s, 7, cfg, target_step=3).target_price == f.combined[2]


def test_forecast_constant_series():
    cfg = ForecastConfig(lags=5, n_networks=5, hidden_candidates=(2,), max_epochs=500, learning_rate=0.05)
    f = forecast(np.full(30, 5.0), 10, cfg)
    assert np.all(np.isfinite(f.per_network))
    assert abs(f.target_price - 5.0) < 0.05


def test_forecast_sinusoid_beats_last_value():
    t = np.arange(320)
    s = np.sin(2 * np.pi * t / 50) + 3
    train, future = s[:300], s[300:]
    f = forecast(train, 20, ForecastConfig(lags=60, n_networks=15))
    rmse = np.sqrt(np.mean((f.combined - future) ** 2))
    baseline = np.sqrt(np.mean((train[-1] - future) ** 2))
    assert rmse <= baseline


def test_forecast_deterministic_serial_vs_parallel():
    rng = np.random.default_rng(3)
    s = 30 + np.cumsum(rng.normal(0, 0.05, 111))
    cfg = ForecastConfig(n_networks=12, hidden_candidates=(1, 2, 3), max_epochs=100, base_seed=9)
    a = forecast(s, 120, cfg)
    b = forecast(s, 120, cfg)
    c = forecast(s, 120, ForecastConfig(**{**cfg.__dict__, "n_jobs": 4}))
    assert np.array_equal(a.per_network, b.per_network)
    assert np.array_equal(a.per_network, c.per_network)
    assert a.hidden_size == c.hidden_size


def _failing_for(indices, monkeypatch):
    import t1trade.mlp as mlp

    real = mlp.train_network

    def flaky(data, h, seed, config):
        if seed[1] == 0 and seed[2] in indices:
            raise TrainingDiverged("forced")
        return real(data, h, seed, config)

    monkeypatch.setattr(mlp, "train_network", flaky)


def test_ensemble_failure_when_majority_diverges(monkeypatch):
    _failing_for({0, 1, 3}, monkeypatch)
    s = np.sin(np.arange(40) / 3) + 5
    with pytest.raises(EnsembleFailure):
        forecast(s, 3, ForecastConfig(lags=5, n_networks=5, hidden_candidates=(2,), max_epochs=20))


def test_ensemble_survives_minority_failures(monkeypatch):
    _failing_for({1, 3}, monkeypatch)
    s = np.sin(np.arange(40) / 3) + 5
    with pytest.warns(RuntimeWarning, match="2 networks aborted"):
        f = forecast(s, 3, ForecastConfig(lags=5, n_networks=5, hidden_candidates=(2,), max_epochs=20))
    assert f.per_network.shape == (3, 3) and f.n_failed == 2


def test_estimator_api():
    est = MLPEnsembleForecaster(lags=5, n_networks=3, hidden_candidates=(2,), max_epochs=50)
    params = est.get_params()
    assert params["lags"] == 5 and clone(est).get_params() == params
    s = np.sin(np.arange(40) / 3) + 5
    pred = est.fit(s).predict(4)
    assert pred.shape == (4,)
    assert est.hidden_size_ == 2 and len(est.networks_) == 3
    assert MLPEnsembleForecaster.from_config(est.to_config()).get_params() == params


def test_default_ensemble_runtime_on_a_morning():
    rng = np.random.default_rng(0)
    s = 27 + np.cumsum(rng.normal(0, 0.02, 111))
    t0 = time.perf_counter()
    f = forecast(s, 120, ForecastConfig())
    assert time.perf_counter() - t0 < 30
    assert f.per_network.shape == (100, 120)
