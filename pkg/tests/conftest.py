import datetime as dt

import numpy as np
import pytest


def session_times():
    """Every minute label in both sessions, 09:30-11:30 and 13:00-15:00."""
    out = []
    for start, end in ((dt.time(9, 30), dt.time(11, 30)), (dt.time(13, 0), dt.time(15, 0))):
        t = dt.datetime.combine(dt.date(2000, 1, 1), start)
        stop = dt.datetime.combine(dt.date(2000, 1, 1), end)
        while t <= stop:
            out.append(t.time())
            t += dt.timedelta(minutes=1)
    return out


def synthetic_minute_csv(tickers, days, seed=0, start_price=20.0, constant=False):
    rng = np.random.default_rng(seed)
    lines = ["datetime,ticker,close"]
    for tk in tickers:
        price = start_price
        for day in days:
            for t in session_times():
                if not constant:
                    price = max(0.5, price * (1 + rng.normal(0, 0.002)))
                lines.append(f"{day.isoformat()} {t.strftime('%H:%M')},{tk},{price:.2f}")
    return "\n".join(lines) + "\n"


@pytest.fixture
def three_days():
    return [dt.date(2020, 10, 9), dt.date(2020, 10, 12), dt.date(2020, 10, 13)]


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion's outcome; call with (number, passed, detail)."""

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE[number] = (bool(passed), line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n][1])
