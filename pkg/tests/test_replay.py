import datetime as dt
import io
import time

import pytest

from t1trade.replay import (
    FIXTURE_HEADER,
    FixtureError,
    load_fixtures,
    load_portfolio_table,
    replay,
)
from t1trade.strategy import Action, StrategyConfig

HEADER = ",".join(FIXTURE_HEADER) + "\n"


def _one(line):
    rows, errors = load_fixtures(HEADER + line + "\n")
    assert not errors
    return replay(rows).rows[0]


def test_bundled_fixtures_shape():
    rows, errors = load_fixtures()
    assert len(rows) == 480 and not errors
    assert len({r.ticker for r in rows}) == 30
    assert all(sum(r.ticker == t for r in rows) == 16 for t in {r.ticker for r in rows})
    assert len(load_portfolio_table()) == 30


def test_buy_row_matches():
    r = _one("2020-10-29,SZ000002,27.09,27.45,27.24,1.28,28.02")
    assert r.action is Action.BUY_THEN_SELL
    assert r.status == "match" and r.diff_pp < 0.005


def test_band_edge_row_holds():
    r = _one("2020-10-09,SZ002594,123.68,120.00,123.56,0,116.24")
    assert r.action is Action.HOLD and r.recomputed_pct == 0.0 and r.status == "match"


def test_origin_base_breaks_band_edge_row():
    rows, _ = load_fixtures(HEADER + "2020-10-09,SZ002594,123.68,120.00,123.56,0,116.24\n")
    r = replay(rows, StrategyConfig(threshold_base="origin")).rows[0]
    # the printed prediction trades; only its rounding interval reaches back into the band
    assert r.action is Action.SELL_THEN_BUY and r.recomputed_pct != 0.0
    assert r.status == "ambiguous"


def test_rounded_prediction_is_ambiguous():
    # 77.44 - 77.36 = 0.08 > 0.07736, but 77.435 would hold
    r = _one("2020-10-23,SZ000333,77.36,75.64,77.44,0,72.60")
    assert r.action is Action.BUY_THEN_SELL
    assert r.status == "ambiguous" and r.resolved_pct == 0.0
    assert set(r.admissible) == {Action.HOLD, Action.BUY_THEN_SELL}


def test_clear_mismatch_is_reported():
    r = _one("2020-10-09,SZ000002,27.00,28.00,30.00,0,28.02")
    assert r.status == "mismatch" and r.admissible == (Action.BUY_THEN_SELL,)


def test_out_of_band_prediction_excluded():
    r = _one("2020-10-30,SZ000858,254.94,243.75,245351,0.99,221.00")
    assert r.status == "excluded:out-of-band-prediction" and r.excluded


def test_duplicate_rows_flagged_but_flat_days_kept():
    text = HEADER + (
        "2020-10-29,SZ000725,4.90,4.86,4.88,-0.81,4.95\n"
        "2020-10-30,SZ000725,4.90,4.86,4.88,-0.81,4.95\n"
        "2020-10-29,SH600028,3.92,3.92,3.92,0,3.91\n"
        "2020-10-30,SH600028,3.92,3.92,3.92,0,3.91\n"
    )
    rows, _ = load_fixtures(text)
    res = replay(rows)
    assert [r.status for r in res.rows[:2]] == ["excluded:duplicated-row"] * 2
    assert all(not r.excluded for r in res.rows[2:])
    assert res.defective_tickers() == {"SZ000725"}


def test_malformed_rows_listed_and_skipped():
    text = HEADER + (
        "2020-10-09,SZ000002,27.90,27.90,27.89,0,28.02\n"
        "2020-10-12,SZ000002,abc,27.90,27.89,0,28.02\n"
        "2020-10-13,SZ000002,27.90,27.95\n"
        "2020-10-14,SZ000002,-1,27.95,27.80,0,28.02\n"
    )
    rows, errors = load_fixtures(text)
    assert len(rows) == 1
    assert [line for line, _ in errors] == [3, 4, 5]
    assert replay(rows, errors=errors).summary()["malformed_rows"][0]["line"] == 3


def test_bad_header():
    with pytest.raises(FixtureError):
        load_fixtures("a,b,c\n1,2,3\n")


def test_half_ulp_from_printed_decimals():
    rows, _ = load_fixtures(HEADER + "2020-10-09,SZ000002,27.90,27.90,27.9,0,28.02\n")
    assert rows[0].pred_half_ulp == pytest.approx(0.05)


def test_full_replay_summary_and_diff_csv():
    rows, errors = load_fixtures()
    t0 = time.perf_counter()
    res = replay(rows, errors=errors)
    assert time.perf_counter() - t0 < 1.0
    s = res.summary()
    assert s["rows"] == 480 and s["excluded"] == 3
    assert res.match_rate >= 0.9
    assert s["defective_tickers"] == ["SZ000725", "SZ000858"]
    out = io.StringIO()
    res.write_diff_csv(out)
    lines = out.getvalue().splitlines()
    assert len(lines) == 481
    mism = [l for l in lines if l.endswith(",mismatch")]
    assert len(mism) == len(res.mismatches)


def test_table2_reconstruction_for_clean_stocks():
    rows, _ = load_fixtures()
    res = replay(rows)
    sums = res.daily_sums_pct()
    bad = res.defective_tickers()
    for p in load_portfolio_table():
        if p.ticker not in bad:
            assert sums[p.ticker] == pytest.approx(p.printed_october_sum_pct, abs=0.05), p.ticker


def test_replay_dates_parse():
    rows, _ = load_fixtures()
    assert min(r.day for r in rows) == dt.date(2020, 10, 9)
    assert max(r.day for r in rows) == dt.date(2020, 10, 30)
