"""Flat ``key = value`` run configuration.

One setting per line; ``#`` starts a comment; blank lines are ignored.
Keys are dotted (``ppo.learning_rate``). Unknown keys are rejected, and
every key not given takes the default listed in :data:`SCHEMA`. A key whose
default is ``None`` is required by the commands that use it.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip())


def _str(text: str) -> str:
    return text.strip()


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, tuple):
        return ",".join(map(str, value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


# key -> (default, parser)
SCHEMA: dict[str, tuple[Any, Callable[[str], Any]]] = {
    "seed": (0, int),
    "out": ("out", _str),
    # market data
    "data.source": ("synth", _str),  # synth | files
    "data.dir": ("", _str),
    "data.tickers": ("", _str),  # comma list; empty = every *.csv in data.dir except the vix file
    "data.vix": ("", _str),
    "synth.n_tickers": (2, int),
    "synth.n_days": (600, int),
    "synth.drift": (0.001, float),
    "synth.volatility": (0.005, float),
    "synth.initial_price": (10.0, float),
    "synth.start_date": ("2015-05-05", _str),
    "synth.vix": (True, _bool),
    "features.subset": ("all", _str),  # all | compact | comma list of feature names
    "features.volume_scale": (1e6, float),
    "frame": ("", _str),  # prebuilt frame file; overrides data.*
    # split (required for train and evaluate)
    "split.train_start": (None, _str),
    "split.train_end": (None, _str),
    "split.eval_start": (None, _str),
    "split.eval_end": (None, _str),
    # environment
    "env.hmax": (1000, int),
    "env.initial_balance": (1_000_000.0, float),
    "env.cost_rate": (0.0, float),
    "env.reward_scale": (1e-4, float),
    "env.window": (90, int),
    # architecture
    "arch.kind": ("mlp", _str),
    "arch.hidden": ((64, 64), _ints),
    "arch.dense_width": (512, int),
    "arch.dropout_p": (0.1, float),
    "arch.use_input_norm": (False, _bool),
    # optimisation
    "ppo.gamma": (0.99, float),
    "ppo.gae_lambda": (0.95, float),
    "ppo.clip_eps": (0.2, float),
    "ppo.learning_rate": (3e-4, float),
    "ppo.n_steps": (2048, int),
    "ppo.n_epochs": (10, int),
    "ppo.minibatch_size": (64, int),
    "ppo.vf_coef": (0.5, float),
    "ppo.ent_coef": (0.0, float),
    "ppo.max_grad_norm": (0.5, float),
    "ppo.total_timesteps": (50_000, int),
    "train.checkpoint_every": (0, int),
    "train.start_day": (0, int),
    "evaluate.checkpoint": ("", _str),
    "compare.mlp": ("", _str),
    "compare.cnn_v1": ("", _str),
    "compare.grcnn": ("", _str),
}


class RunConfig:
    def __init__(self, values: dict[str, Any] | None = None):
        self.values = {k: default for k, (default, _) in SCHEMA.items()}
        for key, value in (values or {}).items():
            self.set(key, value)

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            try:
                cfg.set(key.strip(), value.strip())
            except ConfigError as exc:
                raise ConfigError(f"{source}:{lineno}: {exc}") from None
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_text(path.read_text(encoding="utf-8"), str(path))

    def set(self, key: str, value: Any) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        default, parser = SCHEMA[key]
        if isinstance(value, str) and default is None and not value.strip():
            value = None  # blank required key stays unset
        elif isinstance(value, str):
            try:
                value = parser(value)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from None
        self.values[key] = value

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def require(self, key: str) -> Any:
        value = self.values[key]
        if value is None or value == "":
            raise ConfigError(f"missing required key {key!r}")
        return value

    def section(self, prefix: str) -> dict[str, Any]:
        """``{suffix: value}`` for every key under ``prefix.``."""
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.values.items() if k.startswith(p)}

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.values.items())

    def write(self, directory) -> Path:
        path = Path(directory) / "resolved_config.txt"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text(), encoding="utf-8")
        return path
