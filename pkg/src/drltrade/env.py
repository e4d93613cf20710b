"""Portfolio-trading environment over a :class:`~drltrade.data.FeatureFrame`.

Each step takes one action per ticker in [-1, 1]. It executes at that day's
closes, moves to the next day, and pays ``reward_scale * (v_next - v_now)``,
where ``v`` is balance plus holdings marked at the day's closes.

Execution rules:

* an action becomes ``round(a * hmax)`` shares, with halves rounded away from zero;
* every sell runs before any buy;
* sells are capped at current holdings;
* buys run in ticker order and are capped at what the cash left can pay
  for, cost included.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .data import FeatureFrame, window_rows
from .errors import ConfigError, EnvError, NonFiniteError, ShapeError


@dataclass(frozen=True)
class EnvConfig:
    hmax: int = 1000
    initial_balance: float = 1_000_000.0
    cost_rate: float = 0.0
    reward_scale: float = 1e-4
    window: int = 90

    def __post_init__(self) -> None:
        if self.hmax < 1:
            raise ConfigError("hmax must be >= 1")
        if not self.initial_balance > 0:
            raise ConfigError("initial_balance must be > 0")
        if not 0 <= self.cost_rate < 1:
            raise ConfigError("cost_rate must lie in [0, 1)")
        if self.window < 1:
            raise ConfigError("window must be >= 1")


@dataclass
class EnvState:
    day: int
    balance: float
    holdings: np.ndarray
    start_day: int
    # account as of the start of each in-episode day, indexed by day - start_day
    balance_history: list[float] = field(default_factory=list)
    holdings_history: list[np.ndarray] = field(default_factory=list)


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict


def round_shares(action: np.ndarray, hmax: int) -> np.ndarray:
    """``action * hmax`` to the nearest integer, halves away from zero."""
    scaled = np.asarray(action, dtype=np.float64) * hmax
    return (np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)).astype(np.int64)


def episode_return(rewards: Iterable[float]) -> float:
    return math.fsum(rewards)


class TradingEnv:
    """Single-instance trading MDP; episodes run from ``start_day`` to the last frame row."""

    def __init__(self, frame: FeatureFrame, config: EnvConfig = EnvConfig()):
        if frame.n_days < 2:
            raise EnvError("frame needs at least two days to trade")
        self.frame = frame
        self.config = config
        self.closes = frame.closes()
        if np.any(self.closes <= 0):
            raise EnvError("frame close prices must be positive")
        self.n_assets = len(frame.tickers)
        self._holdings_cols = frame.holdings_columns
        self.state: EnvState | None = None
        self.done = True
        self.trajectory: list[dict] = []

    @property
    def observation_shape(self) -> tuple[int, int]:
        return (self.config.window, self.frame.n_columns)

    def portfolio_value(self, state: EnvState | None = None) -> float:
        s = state or self._require_state()
        return float(s.balance + np.dot(s.holdings.astype(np.float64), self.closes[s.day]))

    def reset(self, start_day: int = 0, seed: int | None = None) -> tuple[EnvState, np.ndarray]:
        """Fresh account at ``start_day``. The market replays the frame, so ``seed`` changes nothing."""
        del seed
        if not 0 <= start_day < self.frame.n_days - 1:
            raise EnvError(f"start_day {start_day} outside [0, {self.frame.n_days - 2}]")
        holdings = np.zeros(self.n_assets, dtype=np.int64)
        self.state = EnvState(start_day, float(self.config.initial_balance), holdings, start_day,
                              [float(self.config.initial_balance)], [holdings.copy()])
        self.done = False
        self.trajectory = []
        return self.state, self.observe()

    def observe(self, state: EnvState | None = None) -> np.ndarray:
        s = state or self._require_state()
        rows = window_rows(s.day, self.config.window)
        obs = self.frame.values[rows].copy()
        offset = rows - s.start_day
        bal = np.full(len(rows), 1.0)
        held = np.zeros((len(rows), self.n_assets))
        inside = offset >= 0
        if inside.any():
            bal[inside] = np.asarray(s.balance_history)[offset[inside]] / self.config.initial_balance
            held[inside] = np.asarray(s.holdings_history, dtype=np.float64)[offset[inside]]
        obs[:, 0] = bal
        obs[:, self._holdings_cols] = held
        return obs

    def step(self, action) -> StepResult:
        s = self._require_state()
        if self.done:
            raise EnvError("episode is done; call reset")
        a = np.asarray(action, dtype=np.float64)
        if a.shape != (self.n_assets,):
            raise ShapeError("action dimension must equal the ticker count", a.shape, (self.n_assets,))
        if not np.all(np.isfinite(a)):
            raise NonFiniteError("action contains NaN or Inf", name="action")
        a = np.clip(a, -1.0, 1.0)
        cfg = self.config
        prices = self.closes[s.day]
        value_before = self.portfolio_value(s)
        wanted = round_shares(a, cfg.hmax)
        executed = np.zeros(self.n_assets, dtype=np.int64)
        cost_paid = 0.0

        for j in np.flatnonzero(wanted < 0):
            n = min(int(-wanted[j]), int(s.holdings[j]))
            if n:
                notional = n * prices[j]
                s.balance += notional - notional * cfg.cost_rate
                cost_paid += notional * cfg.cost_rate
                s.holdings[j] -= n
                executed[j] = -n
        for j in np.flatnonzero(wanted > 0):
            unit = prices[j] * (1.0 + cfg.cost_rate)
            n = min(int(wanted[j]), int(s.balance // unit))
            while n > 0 and n * unit > s.balance:
                n -= 1
            if n:
                s.balance -= n * unit
                cost_paid += n * prices[j] * cfg.cost_rate
                s.holdings[j] += n
                executed[j] = n

        s.day += 1
        s.balance_history.append(s.balance)
        s.holdings_history.append(s.holdings.copy())
        value_after = self.portfolio_value(s)
        raw = value_after - value_before
        reward = cfg.reward_scale * raw
        self.done = s.day >= self.frame.n_days - 1
        info = {"raw_reward": raw, "portfolio_value": value_after, "trades": executed, "cost": cost_paid}
        self.trajectory.append({
            "date": str(self.frame.dates[s.day]), "reward": reward, "portfolio_value": value_after,
            "balance": s.balance, "holdings": s.holdings.copy(), "trades": executed,
        })
        return StepResult(self.observe(s), reward, self.done, info)

    def write_trajectory(self, path) -> Path:
        """Dump the current episode's steps as CSV for inspection."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tickers = self.frame.tickers
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "reward", "portfolio_value", "balance",
                        *(f"{t}.holdings" for t in tickers), *(f"{t}.trade" for t in tickers)])
            for rec in self.trajectory:
                w.writerow([rec["date"], repr(rec["reward"]), repr(rec["portfolio_value"]), repr(rec["balance"]),
                            *map(int, rec["holdings"]), *map(int, rec["trades"])])
        return path

    def _require_state(self) -> EnvState:
        if self.state is None:
            raise EnvError("environment has not been reset")
        return self.state
