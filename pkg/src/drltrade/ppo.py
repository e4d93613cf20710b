"""Proximal policy optimisation for a single :class:`~drltrade.env.TradingEnv`.

One iteration runs four steps:

1. collect ``n_steps`` transitions with the current policy;
2. compute GAE advantages and returns;
3. run ``n_epochs`` passes of shuffled minibatch Adam updates on the clipped
   surrogate plus value loss, with advantages normalised per minibatch and
   gradients clipped to a global norm;
4. write one log row.

Random streams of ``seed``: 0 initialises weights (see :func:`policy.build`),
1 samples actions, 2 shuffles minibatches, 3 draws dropout masks.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .env import TradingEnv, episode_return
from .errors import ConfigError, DrlTradeError, NonFiniteError
from .policy import PolicyNet, save_policy
from .tensor import AdamState, Rng, Tensor, adam_step, clip_grad_norm, minimum, no_grad

log = logging.getLogger(__name__)

SAMPLE_STREAM, SHUFFLE_STREAM, DROPOUT_STREAM = 1, 2, 3
ADV_EPS = 1e-8
LOG_COLUMNS = ("iteration", "timestep", "mean_episode_return", "episodes", "policy_loss", "value_loss",
               "entropy", "clip_fraction", "approx_kl", "grad_norm")


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    learning_rate: float = 3e-4
    n_steps: int = 2048
    n_epochs: int = 10
    minibatch_size: int = 64
    vf_coef: float = 0.5
    ent_coef: float = 0.0
    max_grad_norm: float = 0.5
    total_timesteps: int = 2048
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ConfigError("gae_lambda must lie in [0, 1]")
        if self.clip_eps <= 0:
            raise ConfigError("clip_eps must be > 0")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.n_steps < 1 or self.n_epochs < 1 or self.minibatch_size < 1 or self.total_timesteps < 1:
            raise ConfigError("n_steps, n_epochs, minibatch_size and total_timesteps must be >= 1")
        if self.minibatch_size > self.n_steps:
            raise ConfigError("minibatch_size must not exceed n_steps")
        if self.max_grad_norm <= 0:
            raise ConfigError("max_grad_norm must be > 0")

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


@dataclass
class RolloutBuffer:
    observations: np.ndarray
    actions: np.ndarray  # unclipped samples
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray  # 1.0 where the episode ended after that step
    bootstrap_value: float
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    episode_returns: list[float] = field(default_factory=list)
    partial_return: float = 0.0

    def __len__(self) -> int:
        return len(self.rewards)


def collect_rollout(env: TradingEnv, net: PolicyNet, n_steps: int, rng: Rng, start_day: int = 0) -> RolloutBuffer:
    """Step the policy ``n_steps`` times, resetting the env at ``start_day`` whenever an episode ends.

    An episode already in progress in ``env`` is continued.
    """
    if env.n_assets != net.action_dim:
        raise ConfigError(f"env trades {env.n_assets} tickers but the policy emits {net.action_dim} actions")
    if env.observation_shape != net.obs_shape:
        raise ConfigError(f"env observations are {env.observation_shape}, policy expects {net.obs_shape}")
    obs = env.reset(start_day)[1] if env.state is None or env.done else env.observe()
    running = episode_return(r["reward"] for r in env.trajectory)
    d = net.action_dim
    buf = RolloutBuffer(
        observations=np.empty((n_steps, *net.obs_shape)),
        actions=np.empty((n_steps, d)),
        log_probs=np.empty(n_steps),
        rewards=np.empty(n_steps),
        values=np.empty(n_steps),
        dones=np.zeros(n_steps),
        bootstrap_value=0.0,
    )
    for i in range(n_steps):
        try:
            out = net.act(obs, rng)
            buf.observations[i] = obs
            buf.actions[i] = out.sample
            buf.log_probs[i] = out.log_prob
            buf.values[i] = out.value
            res = env.step(out.action)
        except DrlTradeError as exc:
            raise type(exc)(f"rollout step {i}: {exc}") from exc
        buf.rewards[i] = res.reward
        running += res.reward
        obs = res.observation
        if res.done:
            buf.dones[i] = 1.0
            buf.episode_returns.append(running)
            running = 0.0
            obs = env.reset(start_day)[1]
    with no_grad():
        buf.bootstrap_value = float(net.forward(obs, mode="eval")[2].data[0])
    buf.partial_return = running
    return buf


def compute_gae(buf: RolloutBuffer, gamma: float, lam: float) -> RolloutBuffer:
    """Fill ``advantages`` and ``returns``.

    ``delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t`` and
    ``A_t = delta_t + gamma * lam * (1 - done_t) * A_{t+1}``.
    """
    n = len(buf)
    adv = np.zeros(n)
    next_value = buf.bootstrap_value
    next_adv = 0.0
    for t in range(n - 1, -1, -1):
        live = 1.0 - buf.dones[t]
        delta = buf.rewards[t] + gamma * next_value * live - buf.values[t]
        next_adv = delta + gamma * lam * live * next_adv
        adv[t] = next_adv
        next_value = buf.values[t]
    buf.advantages = adv
    buf.returns = adv + buf.values
    return buf


def clipped_surrogate(ratio, advantage, clip_eps: float) -> np.ndarray:
    """Per-sample ``min(r * A, clip(r, 1 - eps, 1 + eps) * A)``."""
    r = np.asarray(ratio, dtype=np.float64)
    a = np.asarray(advantage, dtype=np.float64)
    return np.minimum(r * a, np.clip(r, 1.0 - clip_eps, 1.0 + clip_eps) * a)


def normalise_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + ADV_EPS)


def _finite(name: str, t: Tensor) -> None:
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteError("non-finite loss term", name)


def ppo_loss(net: PolicyNet, batch: dict, clip_eps: float, vf_coef: float, ent_coef: float,
             mode: str = "train", rng: Rng | None = None, normalise: bool = True):
    """Returns (loss tensor, diagnostics) for one minibatch.

    ``batch`` holds ``observations``, ``actions``, ``log_probs`` (old),
    ``advantages`` and ``returns``.
    """
    if len(batch["advantages"]) == 0:
        raise ConfigError("empty minibatch")
    adv = batch["advantages"]
    if normalise and len(adv) > 1:
        adv = normalise_advantages(adv)
    new_lp, entropy, values = net.evaluate_actions(batch["observations"], batch["actions"], mode=mode, rng=rng)
    log_ratio = new_lp - Tensor(batch["log_probs"])
    ratio = log_ratio.exp()
    surr = minimum(ratio * adv, ratio.clip(1.0 - clip_eps, 1.0 + clip_eps) * adv)
    policy_loss = -surr.mean()
    value_loss = (values - Tensor(batch["returns"])).square().mean()
    entropy_mean = entropy.mean()
    for name, term in (("ratio", ratio), ("policy_loss", policy_loss), ("value_loss", value_loss),
                       ("entropy", entropy_mean)):
        _finite(name, term)
    loss = policy_loss + vf_coef * value_loss - ent_coef * entropy_mean
    _finite("loss", loss)
    r = ratio.data
    diagnostics = {
        "policy_loss": policy_loss.item(),
        "value_loss": value_loss.item(),
        "entropy": entropy_mean.item(),
        "clip_fraction": float(np.mean(np.abs(r - 1.0) > clip_eps)),
        "approx_kl": float(np.mean((r - 1.0) - log_ratio.data)),
        "loss": loss.item(),
    }
    return loss, diagnostics


def _minibatch(buf: RolloutBuffer, idx: np.ndarray) -> dict:
    return {
        "observations": buf.observations[idx],
        "actions": buf.actions[idx],
        "log_probs": buf.log_probs[idx],
        "advantages": buf.advantages[idx],
        "returns": buf.returns[idx],
    }


def train_update(net: PolicyNet, buf: RolloutBuffer, cfg: PpoConfig, adam: AdamState,
                 shuffle_rng: Rng, dropout_rng: Rng | None = None) -> dict:
    """``n_epochs`` passes of shuffled minibatch updates; returns diagnostics averaged over minibatches."""
    if buf.advantages is None:
        raise ConfigError("compute_gae must run before train_update")
    names = list(net.params)
    params = [net.params[n] for n in names]
    totals: dict[str, list[float]] = {}
    n = len(buf)
    for _ in range(cfg.n_epochs):
        order = shuffle_rng.permutation(n)
        for lo in range(0, n, cfg.minibatch_size):
            idx = order[lo : lo + cfg.minibatch_size]
            net.zero_grad()
            loss, diag = ppo_loss(net, _minibatch(buf, idx), cfg.clip_eps, cfg.vf_coef, cfg.ent_coef,
                                  mode="train", rng=dropout_rng)
            loss.backward()
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
            diag["grad_norm"] = clip_grad_norm(grads, cfg.max_grad_norm)
            adam_step([p.data for p in params], grads, adam, names)
            for key, value in diag.items():
                totals.setdefault(key, []).append(value)
    net.zero_grad()
    for name, p in net.params.items():
        if not np.all(np.isfinite(p.data)):
            raise NonFiniteError("parameter became non-finite", name)
    return {k: math.fsum(v) / len(v) for k, v in totals.items()}


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def learn(env: TradingEnv, net: PolicyNet, cfg: PpoConfig, log_path=None, checkpoint_dir=None,
          checkpoint_every: int = 0, start_day: int = 0) -> list[dict]:
    """Train until ``total_timesteps`` are consumed; one log row per iteration.

    Every iteration collects a full ``n_steps`` rollout, so the run ends after
    ``ceil(total_timesteps / n_steps)`` iterations. ``mean_episode_return``
    averages episodes finished during the iteration, falling back to the
    return so far of the episode in progress when none finished.
    """
    sample_rng = Rng(cfg.seed, SAMPLE_STREAM)
    shuffle_rng = Rng(cfg.seed, SHUFFLE_STREAM)
    dropout_rng = Rng(cfg.seed, DROPOUT_STREAM)
    adam = AdamState(learning_rate=cfg.learning_rate)
    iterations = math.ceil(cfg.total_timesteps / cfg.n_steps)
    rows: list[dict] = []
    writer = fh = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        fh = open(log_path, "w", newline="", encoding="utf-8")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
    env.state = None
    try:
        for it in range(1, iterations + 1):
            buf = collect_rollout(env, net, cfg.n_steps, sample_rng, start_day)
            compute_gae(buf, cfg.gamma, cfg.gae_lambda)
            diag = train_update(net, buf, cfg, adam, shuffle_rng, dropout_rng)
            finished = buf.episode_returns
            mean_ret = math.fsum(finished) / len(finished) if finished else buf.partial_return
            row = {
                "iteration": it,
                "timestep": it * cfg.n_steps,
                "mean_episode_return": float(mean_ret),
                "episodes": len(finished),
                **{k: float(diag[k]) for k in ("policy_loss", "value_loss", "entropy", "clip_fraction",
                                                 "approx_kl", "grad_norm")},
            }
            rows.append(row)
            if writer is not None:
                writer.writerow([_fmt(row[c]) for c in LOG_COLUMNS])
                fh.flush()
            log.info("iteration %d/%d: return %.6g, policy %.4g, value %.4g", it, iterations,
                     mean_ret, row["policy_loss"], row["value_loss"])
            if checkpoint_dir is not None and checkpoint_every and it % checkpoint_every == 0:
                save_policy(Path(checkpoint_dir) / f"iter_{it:05d}", net, {"timestep": str(row["timestep"])})
    finally:
        if fh is not None:
            fh.close()
    return rows
