"""``drltrade`` command line: synth | features | train | evaluate | compare.

Every command takes ``--config <file>`` (see :mod:`drltrade.config`) and
the overrides ``--seed`` and ``--out``. It writes its outputs plus
``resolved_config.txt`` into the output directory. On failure it prints
``error: <category>: <message>`` on one line to stderr and exits with that
category's code.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import data as D
from .config import RunConfig
from .env import EnvConfig, TradingEnv
from .errors import ArchitectureError, ConfigError, DataError, DrlTradeError
from .indicators import IndicatorConfig
from .policy import ArchSpec, PolicyNet, build, load_policy, save_policy
from .ppo import PpoConfig, learn

log = logging.getLogger("drltrade")

MODELS = ("mlp", "cnn_v1", "grcnn")
IO_EXIT = 6
VIX_FILE = "vix.csv"


# -- config -> domain objects ---------------------------------------------------------


def env_config(cfg: RunConfig) -> EnvConfig:
    return EnvConfig(**cfg.section("env"))


def arch_spec(cfg: RunConfig) -> ArchSpec:
    return ArchSpec(**cfg.section("arch"))


def ppo_config(cfg: RunConfig) -> PpoConfig:
    return PpoConfig(**cfg.section("ppo"), seed=cfg["seed"])


def split_spec(cfg: RunConfig) -> D.SplitSpec:
    keys = ("train_start", "train_end", "eval_start", "eval_end")
    try:
        return D.SplitSpec(*(np.datetime64(cfg.require(f"split.{k}"), "D") for k in keys))
    except ValueError as exc:
        raise ConfigError(f"bad split date: {exc}") from None


def frame_config(cfg: RunConfig) -> D.FrameConfig:
    subset = cfg["features.subset"]
    icfg = IndicatorConfig()
    if subset == "all":
        features = None
    elif subset == "compact":
        features = D.compact_feature_names(icfg)
    else:
        features = tuple(s.strip() for s in subset.split(",") if s.strip())
    return D.FrameConfig(icfg, cfg["features.volume_scale"], features)


def synth_inputs(cfg: RunConfig):
    s = cfg.section("synth")
    if s["n_days"] < 1 or s["n_tickers"] < 1:
        raise ConfigError("synth.n_days and synth.n_tickers must be >= 1")
    bars = D.synth_market(s["n_tickers"], s["n_days"], cfg["seed"], s["drift"], s["volatility"],
                          s["initial_price"], s["start_date"])
    vix = D.synth_vix(s["n_days"], cfg["seed"], s["start_date"]) if s["vix"] else None
    return bars, vix


def file_inputs(cfg: RunConfig):
    directory = Path(cfg.require("data.dir"))
    if cfg["data.tickers"]:
        tickers = [t.strip() for t in cfg["data.tickers"].split(",") if t.strip()]
    else:
        vix_name = Path(cfg["data.vix"]).name if cfg["data.vix"] else VIX_FILE
        tickers = sorted(p.stem for p in directory.glob("*.csv") if p.name != vix_name)
    if not tickers:
        raise DataError(f"no ticker files found in {directory}")
    bars = []
    for t in tickers:
        path = directory / f"{t}.csv"
        if not path.exists():
            raise DataError(f"ticker {t}: file not found", path=str(path))
        bars.append(D.load_bars(path, t))
    vix = D.load_vix(cfg["data.vix"]) if cfg["data.vix"] else None
    return bars, vix


def load_market_frame(cfg: RunConfig) -> D.FeatureFrame:
    if cfg["frame"]:
        return D.load_frame(cfg["frame"])
    source = cfg["data.source"]
    if source == "synth":
        bars, vix = synth_inputs(cfg)
    elif source == "files":
        bars, vix = file_inputs(cfg)
    else:
        raise ConfigError(f"data.source must be 'synth' or 'files', got {source!r}")
    return D.build_feature_frame(D.align_calendar(bars), vix, frame_config(cfg))


# -- commands ---------------------------------------------------------------------------


def cmd_synth(cfg: RunConfig, out: Path) -> list[Path]:
    bars, vix = synth_inputs(cfg)
    out.mkdir(parents=True, exist_ok=True)
    written = [D.write_bars(out / f"{b.ticker}.csv", b) for b in bars]
    if vix is not None:
        written.append(D.write_vix(out / VIX_FILE, vix))
    cfg.write(out)
    print(f"wrote {len(bars)} bar files of {len(bars[0])} rows to {out}")
    return written


def cmd_features(cfg: RunConfig, out: Path) -> D.FeatureFrame:
    frame = load_market_frame(cfg)
    D.save_frame(out / "frame.csv", frame)
    cfg.write(out)
    print(f"{frame.n_columns} columns, {frame.n_days} days, {frame.dates[0]} .. {frame.dates[-1]}")
    return frame


def cmd_train(cfg: RunConfig, out: Path) -> list[dict]:
    frame = load_market_frame(cfg)
    train_frame, _ = D.split(frame, split_spec(cfg))
    env = TradingEnv(train_frame, env_config(cfg))
    net = build(arch_spec(cfg), env.observation_shape, env.n_assets, seed=cfg["seed"])
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out)
    every = cfg["train.checkpoint_every"]
    rows = learn(env, net, ppo_config(cfg), log_path=out / "train_log.csv",
                 checkpoint_dir=out / "checkpoints" if every else None, checkpoint_every=every,
                 start_day=cfg["train.start_day"])
    save_policy(out / "final", net, {"timestep": str(rows[-1]["timestep"]), "tickers": ",".join(frame.tickers)})
    print(f"trained {net.spec.kind} for {rows[-1]['timestep']} timesteps; "
          f"last mean episode return {rows[-1]['mean_episode_return']:.6g}")
    return rows


def max_drawdown(values: np.ndarray) -> float:
    """Largest peak-to-trough fall as a fraction of the peak."""
    peaks = np.maximum.accumulate(values)
    return float(np.max((peaks - values) / peaks)) if len(values) else 0.0


def evaluate_policy(net: PolicyNet, frame: D.FeatureFrame, spec: D.SplitSpec, env_cfg: EnvConfig) -> dict:
    """Run the mean action from ``eval_start`` through ``eval_end`` once."""
    if net.obs_shape != (env_cfg.window, frame.n_columns) or net.action_dim != len(frame.tickers):
        raise ArchitectureError(
            f"checkpoint expects observations {net.obs_shape} and {net.action_dim} actions; frame gives "
            f"({env_cfg.window}, {frame.n_columns}) and {len(frame.tickers)}")
    _, eval_frame = D.split(frame, spec)
    start = frame.index_of(eval_frame.dates[0])
    stop = frame.index_of(eval_frame.dates[-1])
    if stop <= start:
        raise DataError("eval split needs at least two days")
    env = TradingEnv(frame.slice(0, stop + 1), env_cfg)
    _, obs = env.reset(start)
    dates = [str(frame.dates[start])]
    rewards = [0.0]
    values = [env.portfolio_value()]
    done = False
    while not done:
        res = env.step(net.act(obs, None, deterministic=True).action)
        dates.append(str(env.frame.dates[env.state.day]))
        rewards.append(res.reward)
        values.append(res.info["portfolio_value"])
        obs, done = res.observation, res.done
    cumulative = np.cumsum(rewards)
    return {"dates": dates, "rewards": np.array(rewards), "cumulative": cumulative,
            "values": np.array(values), "env": env}


def cmd_evaluate(cfg: RunConfig, out: Path, checkpoint: str | None = None) -> dict:
    ck = checkpoint or cfg.require("evaluate.checkpoint")
    manifest = Path(ck if str(ck).endswith(".manifest") else f"{ck}.manifest")
    if not manifest.exists():
        raise DataError("checkpoint not found", path=str(manifest))
    net, _ = load_policy(ck)
    frame = load_market_frame(cfg)
    env_cfg = env_config(cfg)
    result = evaluate_policy(net, frame, split_spec(cfg), env_cfg)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out)
    with (out / "evaluation.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "reward", "cumulative_reward", "portfolio_value"])
        for d, r, c, v in zip(result["dates"], result["rewards"], result["cumulative"], result["values"]):
            w.writerow([d, repr(float(r)), repr(float(c)), repr(float(v))])
    result["env"].write_trajectory(out / "trajectory.csv")
    values = result["values"]
    summary = {
        "model": net.spec.kind,
        "checkpoint": str(ck),
        "days": len(result["dates"]),
        "final_cumulative_reward": float(result["cumulative"][-1]),
        "initial_value": float(values[0]),
        "final_value": float(values[-1]),
        "value_change_scaled": env_cfg.reward_scale * (float(values[-1]) - float(values[0])),
        "max_drawdown": max_drawdown(values),
    }
    write_summary(out / "summary.txt", summary)
    print(f"{net.spec.kind}: final cumulative reward {summary['final_cumulative_reward']:.6g}, "
          f"max drawdown {summary['max_drawdown']:.4%}")
    return summary


def write_summary(path: Path, entries: dict) -> None:
    lines = [f"{k} = {repr(v) if isinstance(v, float) else v}" for k, v in entries.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_summary(path: Path) -> dict[str, str]:
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        key, sep, value = line.partition(" = ")
        if sep:
            out[key] = value
    return out


def read_evaluation(directory: Path) -> tuple[list[str], np.ndarray]:
    path = directory / "evaluation.csv"
    if not path.exists():
        raise DataError("evaluation output not found", path=str(path))
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError("evaluation output is empty", path=str(path))
    return [r["date"] for r in rows], np.array([float(r["cumulative_reward"]) for r in rows])


def rank_models(finals: dict[str, float]) -> list[list[str]]:
    """Groups of model names from best to worst; equal finals share a group."""
    groups: list[list[str]] = []
    for name in sorted(finals, key=lambda n: (-finals[n], MODELS.index(n))):
        if groups and finals[groups[-1][0]] == finals[name]:
            groups[-1].append(name)
        else:
            groups.append([name])
    return groups


def cmd_compare(cfg: RunConfig, out: Path) -> dict:
    curves = {}
    dates = None
    for model in MODELS:
        directory = Path(cfg.require(f"compare.{model}"))
        d, cum = read_evaluation(directory)
        if dates is None:
            dates = d
        elif d != dates:
            raise DataError(f"{model} evaluation covers {d[0]}..{d[-1]} ({len(d)} days), "
                            f"expected {dates[0]}..{dates[-1]} ({len(dates)} days)")
        curves[model] = cum
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out)
    with (out / "comparison.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *MODELS])
        for i, d in enumerate(dates):
            w.writerow([d, *(repr(float(curves[m][i])) for m in MODELS)])
    finals = {m: float(curves[m][-1]) for m in MODELS}
    groups = rank_models(finals)
    ranking = " > ".join(" = ".join(g) for g in groups)
    summary = {f"final.{m}": finals[m] for m in MODELS}
    summary["ranking"] = ranking
    summary["tied"] = str(any(len(g) > 1 for g in groups)).lower()
    write_summary(out / "comparison_summary.txt", summary)
    for m in MODELS:
        print(f"{m:7s} {finals[m]:.6g}")
    print(f"ranking: {ranking}")
    return summary


COMMANDS = {
    "synth": cmd_synth,
    "features": cmd_features,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drltrade", description="Seeded PPO portfolio-trading harness.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
        if name == "evaluate":
            p.add_argument("--checkpoint", help="checkpoint stem or .manifest path")
    return parser


def run(argv: list[str] | None = None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.set("seed", args.seed)
    if args.out is not None:
        cfg.set("out", args.out)
    out = Path(cfg["out"])
    if args.command == "evaluate":
        return cmd_evaluate(cfg, out, args.checkpoint)
    return COMMANDS[args.command](cfg, out)


def main(argv: list[str] | None = None) -> int:
    try:
        run(argv)
    except DrlTradeError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return IO_EXIT
    return 0


if __name__ == "__main__":
    sys.exit(main())
