"""Per-ticker technical indicators over daily bars.

All functions are causal (value at t uses bars <= t) and never return NaN:
rolling statistics over the first ``n - 1`` bars use the available prefix,
and Wilder averages use the prefix mean until ``n`` changes are available.
0/0 conventions: RSI -> 50, CCI -> 0, DX -> 0.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

CCI_CONSTANT = 0.015
TURBULENCE_RIDGE = 1e-8


@dataclass(frozen=True)
class IndicatorConfig:
    rsi_period: int = 30
    cci_period: int = 30
    dx_period: int = 30
    sma_periods: tuple[int, ...] = (30, 60)
    macd_fast: int = 12
    macd_slow: int = 26
    macd_signal: int = 9
    boll_period: int = 20
    boll_k: float = 2.0
    turbulence_lookback: int = 252

    def __post_init__(self) -> None:
        periods = [self.rsi_period, self.cci_period, self.dx_period, self.macd_fast, self.macd_slow,
                   self.macd_signal, self.boll_period, self.turbulence_lookback, *self.sma_periods]
        if any(int(p) < 2 for p in periods):
            raise ConfigError(f"indicator periods must all be >= 2, got {periods}")
        if self.boll_k < 0:
            raise ConfigError("boll_k must be non-negative")


def _series(x, min_len: int = 1, what: str = "series") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size < min_len:
        raise DataError(f"{what} needs a 1-d input with at least {min_len} values, got shape {arr.shape}")
    return arr


def _windows(x: np.ndarray, n: int):
    for t in range(len(x)):
        yield t, x[max(0, t - n + 1) : t + 1]


def sma(close, n: int) -> np.ndarray:
    """Simple moving average; the first n-1 values average the available prefix."""
    x = _series(close, what="sma")
    if n < 1:
        raise ConfigError("sma period must be >= 1")
    out = np.empty_like(x)
    for t, w in _windows(x, n):
        out[t] = w.mean()
    return out


def ema(close, n: int) -> np.ndarray:
    """Exponential moving average, factor 2/(n+1), seeded with the first value."""
    x = _series(close, what="ema")
    if n < 1:
        raise ConfigError("ema period must be >= 1")
    alpha = 2.0 / (n + 1.0)
    out = np.empty_like(x)
    acc = x[0]
    for i, v in enumerate(x):
        if i:
            acc = acc + alpha * (v - acc)
        out[i] = acc
    return out


def macd(close, cfg: IndicatorConfig = IndicatorConfig()) -> np.ndarray:
    """MACD line: EMA(fast) - EMA(slow)."""
    return ema(close, cfg.macd_fast) - ema(close, cfg.macd_slow)


def _rolling_std(x: np.ndarray, n: int) -> np.ndarray:
    out = np.empty_like(x)
    for t, w in _windows(x, n):
        d = w - w.mean()
        out[t] = np.sqrt(np.mean(d * d))
    return out


def bollinger(close, cfg: IndicatorConfig = IndicatorConfig()) -> tuple[np.ndarray, np.ndarray]:
    """(upper, lower) = SMA(p) +/- k * rolling population std, with prefix warm-up."""
    x = _series(close, what="bollinger")
    mid = sma(x, cfg.boll_period)
    band = cfg.boll_k * _rolling_std(x, cfg.boll_period)
    return mid + band, mid - band


def wilder_average(values: np.ndarray, n: int) -> np.ndarray:
    """Wilder smoothing of ``values[1:]`` (index 0 carries no change and yields 0).

    For t <= n the result is the plain mean of values[1..t]; after that
    ``avg_t = (avg_{t-1} * (n - 1) + values[t]) / n``.
    """
    out = np.zeros(len(values))
    total = 0.0
    for t in range(1, len(values)):
        if t <= n:
            total += values[t]
            out[t] = total / t
        else:
            out[t] = (out[t - 1] * (n - 1) + values[t]) / n
    return out


def rsi(close, n: int = 30) -> np.ndarray:
    x = _series(close, min_len=2, what="rsi")
    delta = np.concatenate(([0.0], np.diff(x)))
    gain = wilder_average(np.where(delta > 0, delta, 0.0), n)
    loss = wilder_average(np.where(delta < 0, -delta, 0.0), n)
    out = np.full(len(x), 50.0)
    has_loss = loss > 0
    only_gain = (~has_loss) & (gain > 0)
    out[only_gain] = 100.0
    rs = gain[has_loss] / loss[has_loss]
    out[has_loss] = 100.0 - 100.0 / (1.0 + rs)
    return out


def typical_price(high, low, close) -> np.ndarray:
    return (np.asarray(high, float) + np.asarray(low, float) + np.asarray(close, float)) / 3.0


def cci(high, low, close, n: int = 30) -> np.ndarray:
    """(TP - SMA_n(TP)) / (0.015 * mean absolute deviation of TP about that SMA)."""
    tp = _series(typical_price(high, low, close), what="cci")
    out = np.zeros_like(tp)
    for t, w in _windows(tp, n):
        mean = w.mean()
        mad = np.mean(np.abs(w - mean))
        # exact-zero test would miss constant windows whose mean rounds off
        if mad <= 1e-12 * np.max(np.abs(w)):
            continue
        out[t] = (tp[t] - mean) / (CCI_CONSTANT * mad)
    return out


def directional_movement(high, low, close):
    """Per-bar (+DM, -DM, true range); bar 0 has none and is all zeros."""
    h = _series(high, min_len=2, what="dx")
    lo = _series(low, min_len=2, what="dx")
    c = _series(close, min_len=2, what="dx")
    up = np.concatenate(([0.0], h[1:] - h[:-1]))
    down = np.concatenate(([0.0], lo[:-1] - lo[1:]))
    plus = np.where((up > down) & (up > 0), up, 0.0)
    minus = np.where((down > up) & (down > 0), down, 0.0)
    prev = np.concatenate(([c[0]], c[:-1]))
    tr = np.maximum.reduce([h - lo, np.abs(h - prev), np.abs(lo - prev)])
    tr[0] = 0.0
    return plus, minus, tr


def dx(high, low, close, n: int = 30) -> np.ndarray:
    """Directional movement index 100 * |+DI - -DI| / (+DI + -DI), Wilder-smoothed."""
    plus, minus, tr = directional_movement(high, low, close)
    s_plus, s_minus, s_tr = (wilder_average(v, n) for v in (plus, minus, tr))
    safe_tr = np.where(s_tr > 0, s_tr, 1.0)
    pdi = np.where(s_tr > 0, 100.0 * s_plus / safe_tr, 0.0)
    mdi = np.where(s_tr > 0, 100.0 * s_minus / safe_tr, 0.0)
    total = pdi + mdi
    out = np.where(total > 0, 100.0 * np.abs(pdi - mdi) / np.where(total > 0, total, 1.0), 0.0)
    # |a-b|/(a+b) can round a hair above 1
    return np.minimum(out, 100.0)


def simple_returns(close_panel) -> np.ndarray:
    """Day-over-day returns of a [date, ticker] close matrix; row 0 is zero."""
    p = np.asarray(close_panel, dtype=np.float64)
    out = np.zeros_like(p)
    out[1:] = p[1:] / p[:-1] - 1.0
    return out


def turbulence(returns_panel, lookback: int = 252) -> np.ndarray:
    """Rolling Mahalanobis distance of each day's cross-ticker return vector.

    ``d_t = (r_t - mu)^T pinv(S + ridge*I) (r_t - mu)`` where mu and the sample
    covariance S come from the ``lookback`` rows before t. Days with fewer than
    ``lookback`` prior rows, and windows whose rows are all identical, give 0.
    """
    r = np.asarray(returns_panel, dtype=np.float64)
    if r.ndim != 2 or r.shape[1] < 1:
        raise DataError(f"turbulence expects a [date, ticker] matrix, got shape {r.shape}")
    if lookback < 2:
        raise ConfigError("turbulence lookback must be >= 2")
    k = r.shape[1]
    out = np.zeros(r.shape[0])
    ridge = TURBULENCE_RIDGE * np.eye(k)
    for t in range(lookback, r.shape[0]):
        hist = r[t - lookback : t]
        if np.all(hist == hist[0]):
            continue
        mu = hist.mean(axis=0)
        centred = hist - mu
        cov = centred.T @ centred / (lookback - 1)
        dev = r[t] - mu
        value = float(dev @ np.linalg.pinv(cov + ridge, hermitian=True) @ dev)
        out[t] = max(value, 0.0)
    return out


def day_of_week(date) -> int:
    """Monday = 0 ... Sunday = 6. Accepts date, datetime64 or ISO string."""
    if isinstance(date, np.datetime64):
        date = date.astype("datetime64[D]").item()
    elif isinstance(date, str):
        try:
            date = dt.date.fromisoformat(date)
        except ValueError as exc:
            raise DataError(f"invalid date {date!r}") from exc
    if not isinstance(date, dt.date):
        raise DataError(f"invalid date {date!r}")
    return date.weekday()


def day_of_week_array(dates: np.ndarray) -> np.ndarray:
    # 1970-01-01 was a Thursday (weekday 3)
    days = np.asarray(dates, dtype="datetime64[D]").astype(np.int64)
    return ((days + 3) % 7).astype(np.float64)
