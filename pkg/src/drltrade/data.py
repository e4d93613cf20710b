"""Bar ingestion, synthetic markets, feature-frame assembly and sliding windows.

File formats (UTF-8, comma separated, one header line):

* bar file, one per ticker: ``date,open,high,low,close,volume``
* vix file: ``date,close``
* frame export: ``date,<column>,...`` with column names as produced by
  :func:`build_feature_frame`

Dates are ISO ``YYYY-MM-DD``. Numbers are written with ``repr`` so a write
followed by a load is bit exact.

Frame layout: column 0 is the account balance, then one contiguous block per
ticker holding its market features in a fixed order followed by that
ticker's share holdings. Balance and holdings are placeholders (0) in the
frame; the environment fills them from the account history.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import indicators as ind
from .errors import ConfigError, DataError
from .tensor import Rng

log = logging.getLogger(__name__)

BAR_HEADER = ("date", "open", "high", "low", "close", "volume")
VIX_HEADER = ("date", "close")
BALANCE = "balance"
HOLDINGS = "holdings"


def _dates(values) -> np.ndarray:
    return np.asarray(values, dtype="datetime64[D]")


def _fmt(v: float) -> str:
    return repr(float(v))


@dataclass
class BarSeries:
    ticker: str
    dates: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray

    def __post_init__(self) -> None:
        self.dates = _dates(self.dates)
        for name in ("open", "high", "low", "close", "volume"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        self.validate()

    def __len__(self) -> int:
        return len(self.dates)

    def validate(self) -> None:
        n = len(self.dates)
        for name in ("open", "high", "low", "close", "volume"):
            if getattr(self, name).shape != (n,):
                raise DataError(f"{self.ticker}: column {name} has length {len(getattr(self, name))}, expected {n}")
        for i in range(n):
            problem = _bar_problem(self.open[i], self.high[i], self.low[i], self.close[i], self.volume[i])
            if problem:
                raise DataError(f"{self.ticker}: {problem}", row=i + 2)
            if i and self.dates[i] <= self.dates[i - 1]:
                raise DataError(f"{self.ticker}: dates not strictly increasing", row=i + 2)

    def take(self, index) -> "BarSeries":
        return BarSeries(self.ticker, self.dates[index], self.open[index], self.high[index],
                         self.low[index], self.close[index], self.volume[index])


@dataclass
class VixSeries:
    dates: np.ndarray
    close: np.ndarray

    def __post_init__(self) -> None:
        self.dates = _dates(self.dates)
        self.close = np.asarray(self.close, dtype=np.float64)
        if self.close.shape != self.dates.shape:
            raise DataError("vix dates and values differ in length")
        if np.any(np.diff(self.dates.astype(np.int64)) <= 0):
            raise DataError("vix dates not strictly increasing")


def _bar_problem(o, h, lo, c, v) -> str | None:
    values = (o, h, lo, c, v)
    if not all(np.isfinite(values)):
        return "non-finite value"
    if min(o, h, lo, c) <= 0:
        return "prices must be positive"
    if v < 0:
        return "volume must be non-negative"
    if not (lo <= o <= h and lo <= c <= h):
        return f"bar violates low <= open,close <= high (o={o}, h={h}, l={lo}, c={c})"
    return None


# -- file I/O ---------------------------------------------------------------------


def _read_table(path, header: Sequence[str]) -> list[tuple[int, dict[str, str]]]:
    path = Path(path)
    if not path.exists():
        raise DataError("file not found", path=str(path))
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            cols = [c.strip().lower() for c in next(reader)]
        except StopIteration:
            raise DataError("empty file", path=str(path)) from None
        missing = [c for c in header if c not in cols]
        if missing:
            raise DataError(f"missing column(s) {', '.join(missing)}", row=1, path=str(path))
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not f.strip() for f in raw):
                continue
            if len(raw) != len(cols):
                raise DataError(f"expected {len(cols)} fields, got {len(raw)}", row=lineno, path=str(path))
            rows.append((lineno, dict(zip(cols, (f.strip() for f in raw)))))
    return rows


def load_bars(path, ticker: str | None = None) -> BarSeries:
    """Parse and validate one ticker's bar file; errors cite the file row."""
    path = Path(path)
    ticker = ticker or path.stem
    dates, cols = [], {k: [] for k in BAR_HEADER[1:]}
    prev = None
    for lineno, rec in _read_table(path, BAR_HEADER):
        try:
            d = np.datetime64(rec["date"], "D")
            vals = {k: float(rec[k]) for k in BAR_HEADER[1:]}
        except ValueError as exc:
            raise DataError(f"unparseable row ({exc})", row=lineno, path=str(path)) from None
        problem = _bar_problem(vals["open"], vals["high"], vals["low"], vals["close"], vals["volume"])
        if problem:
            raise DataError(problem, row=lineno, path=str(path))
        if prev is not None and d <= prev:
            raise DataError("dates not strictly increasing", row=lineno, path=str(path))
        prev = d
        dates.append(d)
        for k, v in vals.items():
            cols[k].append(v)
    if not dates:
        raise DataError("no data rows", path=str(path))
    return BarSeries(ticker, np.array(dates), **{k: np.array(v) for k, v in cols.items()})


def write_bars(path, series: BarSeries) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BAR_HEADER)
        for i in range(len(series)):
            w.writerow([str(series.dates[i]), _fmt(series.open[i]), _fmt(series.high[i]), _fmt(series.low[i]),
                        _fmt(series.close[i]), _fmt(series.volume[i])])
    return path


def load_vix(path) -> VixSeries:
    path = Path(path)
    dates, values = [], []
    for lineno, rec in _read_table(path, VIX_HEADER):
        try:
            d, v = np.datetime64(rec["date"], "D"), float(rec["close"])
        except ValueError as exc:
            raise DataError(f"unparseable row ({exc})", row=lineno, path=str(path)) from None
        if not np.isfinite(v):
            raise DataError("non-finite value", row=lineno, path=str(path))
        if dates and d <= dates[-1]:
            raise DataError("dates not strictly increasing", row=lineno, path=str(path))
        dates.append(d)
        values.append(v)
    return VixSeries(np.array(dates, dtype="datetime64[D]"), np.array(values))


def write_vix(path, vix: VixSeries) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VIX_HEADER)
        for d, v in zip(vix.dates, vix.close):
            w.writerow([str(d), _fmt(v)])
    return path


# -- synthetic markets ------------------------------------------------------------------


def trading_days(start, n_days: int) -> np.ndarray:
    """``n_days`` consecutive weekdays beginning at (or rolled forward from) ``start``."""
    first = np.busday_offset(np.datetime64(start, "D"), 0, roll="forward")
    return np.busday_offset(first, np.arange(n_days), roll="forward")


def synth_market(
    n_tickers: int,
    n_days: int,
    seed: int,
    drift: float = 0.0005,
    volatility: float = 0.01,
    initial_price: float = 50.0,
    start_date: str = "2015-05-05",
    base_volume: float = 1e7,
) -> list[BarSeries]:
    """Geometric-Brownian daily bars.

    Log close increments are ``drift - vol^2/2 + vol * z``. Each ticker draws
    from its own stream ``Rng(seed, j + 1)``, so adding tickers leaves the
    earlier ones unchanged. Opens gap from the previous close, highs/lows
    bracket open and close; with ``volatility == 0`` every price of a ticker
    is the same constant.
    """
    if n_days < 1 or n_tickers < 1:
        raise ConfigError("synth_market needs n_days >= 1 and n_tickers >= 1")
    if volatility < 0 or initial_price <= 0:
        raise ConfigError("volatility must be >= 0 and initial_price > 0")
    dates = trading_days(start_date, n_days)
    out = []
    for j in range(n_tickers):
        rng = Rng(seed, j + 1)
        p0 = initial_price * rng.uniform(0.5, 1.5)
        steps = drift - 0.5 * volatility**2 + volatility * rng.normal(n_days - 1)
        close = p0 * np.exp(np.concatenate(([0.0], np.cumsum(steps))))
        prev_close = np.concatenate(([p0], close[:-1]))
        open_ = prev_close * np.exp(0.25 * volatility * rng.normal(n_days))
        high = np.maximum(open_, close) * np.exp(0.5 * volatility * np.abs(rng.normal(n_days)))
        low = np.minimum(open_, close) * np.exp(-0.5 * volatility * np.abs(rng.normal(n_days)))
        volume = np.round(base_volume * np.exp(0.3 * rng.normal(n_days)))
        out.append(BarSeries(f"SYN{j:02d}", dates, open_, high, low, close, volume))
    return out


def synth_vix(n_days: int, seed: int, start_date: str = "2015-05-05", level: float = 20.0) -> VixSeries:
    """Mean-reverting volatility-index proxy, floored at 9."""
    if n_days < 1:
        raise ConfigError("synth_vix needs n_days >= 1")
    rng = Rng(seed, 0)
    z = rng.normal(n_days)
    v = np.empty(n_days)
    v[0] = level
    for t in range(1, n_days):
        v[t] = max(9.0, v[t - 1] + 0.1 * (level - v[t - 1]) + 1.5 * z[t])
    return VixSeries(trading_days(start_date, n_days), v)


# -- calendars and frames -----------------------------------------------------------------


def align_calendar(series_list: Sequence[BarSeries]) -> list[BarSeries]:
    """Restrict every series to the dates they all share."""
    if not series_list:
        raise DataError("align_calendar needs at least one series")
    common = series_list[0].dates
    for s in series_list[1:]:
        common = np.intersect1d(common, s.dates)
    if common.size == 0:
        raise DataError("series share no trading dates")
    return [s.take(np.isin(s.dates, common)) for s in series_list]


def market_feature_names(cfg: ind.IndicatorConfig) -> tuple[str, ...]:
    """Per-ticker market features in block order."""
    smas = tuple(f"close_{p}_sma" for p in cfg.sma_periods)
    return (
        "open", "high", "low", "close", "volume", "day", "macd", "boll_ub", "boll_lb",
        f"rsi_{cfg.rsi_period}", f"cci_{cfg.cci_period}", f"dx_{cfg.dx_period}",
        *smas, "vix", "turbulence",
    )


def compact_feature_names(cfg: ind.IndicatorConfig) -> tuple[str, ...]:
    """Nine-feature subset; with holdings that is ten columns per ticker (291 for 29 tickers)."""
    return ("open", "high", "low", "close", "volume", "macd",
            f"rsi_{cfg.rsi_period}", f"cci_{cfg.cci_period}", f"dx_{cfg.dx_period}")


@dataclass(frozen=True)
class FrameConfig:
    indicators: ind.IndicatorConfig = field(default_factory=ind.IndicatorConfig)
    volume_scale: float = 1e6
    # None selects every market feature; otherwise a subset in any order (block order is fixed)
    features: tuple[str, ...] | None = None

    def feature_list(self) -> tuple[str, ...]:
        names = market_feature_names(self.indicators)
        if self.features is None:
            return names
        unknown = [f for f in self.features if f not in names]
        if unknown:
            raise ConfigError(f"unknown feature(s) {unknown}; choose from {list(names)}")
        if "close" not in self.features:
            raise ConfigError("feature subset must include 'close'")
        return tuple(n for n in names if n in self.features)


@dataclass
class FeatureFrame:
    dates: np.ndarray
    tickers: tuple[str, ...]
    features: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        self.dates = _dates(self.dates)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.tickers = tuple(self.tickers)
        self.features = tuple(self.features)
        if self.values.shape != (len(self.dates), len(self.columns)):
            raise DataError(f"frame values have shape {self.values.shape}, "
                            f"expected ({len(self.dates)}, {len(self.columns)})")
        if not np.all(np.isfinite(self.values)):
            raise DataError("frame contains non-finite cells")

    @property
    def block_width(self) -> int:
        return len(self.features) + 1

    @property
    def columns(self) -> list[str]:
        cols = [BALANCE]
        for t in self.tickers:
            cols.extend(f"{t}.{f}" for f in self.features)
            cols.append(f"{t}.{HOLDINGS}")
        return cols

    @property
    def n_days(self) -> int:
        return len(self.dates)

    @property
    def n_columns(self) -> int:
        return 1 + len(self.tickers) * self.block_width

    def __len__(self) -> int:
        return self.n_days

    def feature_columns(self, feature: str) -> np.ndarray:
        """Column index of ``feature`` in every ticker block."""
        k = self.features.index(feature) if feature != HOLDINGS else len(self.features)
        return 1 + np.arange(len(self.tickers)) * self.block_width + k

    @property
    def holdings_columns(self) -> np.ndarray:
        return self.feature_columns(HOLDINGS)

    def closes(self) -> np.ndarray:
        return self.values[:, self.feature_columns("close")]

    def index_of(self, date) -> int:
        d = np.datetime64(date, "D")
        i = int(np.searchsorted(self.dates, d))
        if i >= len(self.dates) or self.dates[i] != d:
            raise DataError(f"date {d} not in frame")
        return i

    def slice(self, start: int, stop: int) -> "FeatureFrame":
        return FeatureFrame(self.dates[start:stop], self.tickers, self.features, self.values[start:stop])


def build_feature_frame(
    series_list: Sequence[BarSeries],
    vix: VixSeries | None = None,
    cfg: FrameConfig = FrameConfig(),
) -> FeatureFrame:
    """Assemble the daily feature matrix from calendar-aligned bar series."""
    if not series_list:
        raise DataError("no bar series given")
    dates = series_list[0].dates
    for s in series_list[1:]:
        if not np.array_equal(s.dates, dates):
            raise DataError(f"{s.ticker}: calendar differs from {series_list[0].ticker}; run align_calendar first")
    tickers = tuple(s.ticker for s in series_list)
    if len(set(tickers)) != len(tickers):
        raise DataError(f"duplicate tickers in {tickers}")
    features = cfg.feature_list()
    icfg = cfg.indicators
    n = len(dates)

    vix_col = np.zeros(n)
    if "vix" in features:
        if vix is None:
            raise ConfigError("feature 'vix' selected but no vix series supplied")
        pos = np.searchsorted(vix.dates, dates)
        ok = (pos < len(vix.dates)) & (vix.dates[np.minimum(pos, len(vix.dates) - 1)] == dates)
        if not np.all(ok):
            raise DataError(f"vix series lacks {int((~ok).sum())} frame date(s), first {dates[~ok][0]}")
        vix_col = vix.close[pos]
    turb = np.zeros(n)
    if "turbulence" in features:
        panel = np.column_stack([s.close for s in series_list])
        turb = ind.turbulence(ind.simple_returns(panel), icfg.turbulence_lookback)
    day = ind.day_of_week_array(dates)

    values = np.zeros((n, 1 + len(tickers) * (len(features) + 1)))
    for j, s in enumerate(series_list):
        up, lo = ind.bollinger(s.close, icfg) if {"boll_ub", "boll_lb"} & set(features) else (None, None)
        cols = {
            "open": lambda: s.open,
            "high": lambda: s.high,
            "low": lambda: s.low,
            "close": lambda: s.close,
            "volume": lambda: s.volume / cfg.volume_scale,
            "day": lambda: day,
            "macd": lambda: ind.macd(s.close, icfg),
            "boll_ub": lambda: up,
            "boll_lb": lambda: lo,
            f"rsi_{icfg.rsi_period}": lambda: ind.rsi(s.close, icfg.rsi_period) if n >= 2 else np.full(n, 50.0),
            f"cci_{icfg.cci_period}": lambda: ind.cci(s.high, s.low, s.close, icfg.cci_period),
            f"dx_{icfg.dx_period}": lambda: ind.dx(s.high, s.low, s.close, icfg.dx_period) if n >= 2 else np.zeros(n),
            "vix": lambda: vix_col,
            "turbulence": lambda: turb,
        }
        for p in icfg.sma_periods:
            cols[f"close_{p}_sma"] = lambda p=p: ind.sma(s.close, p)
        base = 1 + j * (len(features) + 1)
        for k, f in enumerate(features):
            values[:, base + k] = cols[f]()
    return FeatureFrame(dates, tickers, features, values)


def save_frame(path, frame: FeatureFrame) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *frame.columns])
        for d, row in zip(frame.dates, frame.values):
            w.writerow([str(d), *(_fmt(v) for v in row)])
    return path


def load_frame(path) -> FeatureFrame:
    path = Path(path)
    if not path.exists():
        raise DataError("file not found", path=str(path))
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "date" or len(header) < 2 or header[1] != BALANCE:
            raise DataError("frame header must start with 'date,balance'", row=1, path=str(path))
        tickers: list[str] = []
        features: list[str] = []
        for col in header[2:]:
            t, _, f = col.rpartition(".")
            if not t:
                raise DataError(f"bad column name {col!r}", row=1, path=str(path))
            if not tickers or tickers[-1] != t:
                tickers.append(t)
            if len(tickers) == 1 and f != HOLDINGS:
                features.append(f)
        dates, rows = [], []
        for lineno, raw in enumerate(reader, start=2):
            if len(raw) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(raw)}", row=lineno, path=str(path))
            try:
                dates.append(np.datetime64(raw[0], "D"))
                rows.append([float(v) for v in raw[1:]])
            except ValueError as exc:
                raise DataError(f"unparseable row ({exc})", row=lineno, path=str(path)) from None
    frame = FeatureFrame(np.array(dates, dtype="datetime64[D]"), tuple(tickers), tuple(features),
                         np.array(rows).reshape(len(rows), len(header) - 1))
    if frame.columns != header[1:]:
        raise DataError("column layout is not balance + per-ticker blocks", row=1, path=str(path))
    return frame


# -- splits and windows -----------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train_start: np.datetime64
    train_end: np.datetime64
    eval_start: np.datetime64
    eval_end: np.datetime64

    def __post_init__(self) -> None:
        for name in ("train_start", "train_end", "eval_start", "eval_end"):
            object.__setattr__(self, name, np.datetime64(getattr(self, name), "D"))
        if not (self.train_start <= self.train_end < self.eval_start <= self.eval_end):
            raise ConfigError("split needs train_start <= train_end < eval_start <= eval_end")


def split(frame: FeatureFrame, spec: SplitSpec) -> tuple[FeatureFrame, FeatureFrame]:
    """Closed-interval train and eval sub-frames."""
    if frame.n_days == 0:
        raise DataError("cannot split an empty frame")
    first, last = frame.dates[0], frame.dates[-1]
    if spec.train_start < first or spec.eval_end > last:
        raise DataError(f"split {spec.train_start}..{spec.eval_end} outside frame range {first}..{last}")
    train = (frame.dates >= spec.train_start) & (frame.dates <= spec.train_end)
    evl = (frame.dates >= spec.eval_start) & (frame.dates <= spec.eval_end)
    if not train.any():
        raise DataError("train split is empty")
    if not evl.any():
        raise DataError("eval split is empty")
    ti, ei = np.flatnonzero(train), np.flatnonzero(evl)
    return frame.slice(ti[0], ti[-1] + 1), frame.slice(ei[0], ei[-1] + 1)


@dataclass
class WindowView:
    matrix: np.ndarray
    end_date: np.datetime64


def window_rows(t: int, window: int) -> np.ndarray:
    """Frame row indices of the window ending at t; rows before 0 repeat row 0."""
    return np.maximum(np.arange(t - window + 1, t + 1), 0)


def window_at(frame: FeatureFrame, t: int, window: int = 90) -> WindowView:
    if frame.n_days == 0:
        raise DataError("cannot window an empty frame")
    if not 0 <= t < frame.n_days:
        raise DataError(f"window end {t} outside frame of {frame.n_days} days")
    if window < 1:
        raise ConfigError("window must be >= 1")
    return WindowView(frame.values[window_rows(t, window)], frame.dates[t])
