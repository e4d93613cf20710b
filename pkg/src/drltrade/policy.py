"""Actor-critic networks over a ``[window, F]`` observation.

Three trunks share one pair of heads (actor mean and critic value) plus a
state-independent ``log_std``:

* ``mlp``: flatten, then dense 64, ReLU, dense 64, ReLU.
* ``cnn_v1``: conv 32 (8x8, stride 4), ReLU, dropout; conv 64 (4x4,
  stride 2), ReLU, dropout; flatten; dense 512, ReLU.
* ``grcnn``: column normalisation; conv 32 (8x8, stride 4), BN, ReLU,
  2x2 max-pool; conv 64 (4x4, stride 2), BN, ReLU; conv 128 (3x3) and
  conv 256 (3x3), each with BN and ReLU; flatten; dense 512, ReLU.

In ``grcnn`` the pool and the layers after the first conv shrink any kernel
dimension that exceeds the incoming spatial extent, so narrow inputs still
reduce to at least 1x1. The first conv and every ``cnn_v1`` layer are
fixed; an input too small for them raises :class:`ArchitectureError`.

Parameter counts (``H x W`` spatial sizes taken from :meth:`PolicyNet.layer_shapes`):

* dense ``in -> out``: ``in*out + out``
* conv ``C -> O`` with a ``kh x kw`` kernel: ``O*C*kh*kw + O``, plus ``2*O`` for BN
* heads on trunk width ``h``: ``h*D + D + h + 1``, plus ``D`` for ``log_std``
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ArchitectureError, ConfigError, DataError, ModeError, NonFiniteError, ShapeError
from .tensor import (
    RunningStats,
    Rng,
    Tensor,
    batchnorm,
    column_normalize,
    conv2d,
    dense,
    dropout,
    gaussian_entropy,
    gaussian_log_prob,
    gaussian_log_prob_np,
    load_checkpoint,
    maxpool2d,
    no_grad,
    relu,
    save_checkpoint,
)

KINDS = ("mlp", "cnn_v1", "grcnn")
TRUNK_GAIN = math.sqrt(2.0)
ACTOR_GAIN = 0.01
CRITIC_GAIN = 1.0
NORM_EPS = 1e-8


@dataclass(frozen=True)
class ArchSpec:
    kind: str = "mlp"
    hidden: tuple[int, ...] = (64, 64)
    dense_width: int = 512
    dropout_p: float = 0.1
    use_input_norm: bool = False

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown architecture {self.kind!r}; choose one of {KINDS}")
        if self.kind == "grcnn" and not self.use_input_norm:
            object.__setattr__(self, "use_input_norm", True)
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must lie in [0, 1)")
        if any(h < 1 for h in self.hidden) or self.dense_width < 1:
            raise ConfigError("layer widths must be >= 1")


@dataclass(frozen=True)
class Step:
    op: str  # conv | bn | relu | pool | dropout | flatten | dense
    name: str = ""
    kernel: tuple[int, int] = (1, 1)
    stride: tuple[int, int] = (1, 1)
    width: int = 0


@dataclass
class ActResult:
    action: np.ndarray  # clipped to [-1, 1]
    sample: np.ndarray  # unclipped Gaussian draw
    log_prob: float  # of the unclipped draw
    value: float


def _layer_plan(spec: ArchSpec, obs_shape: tuple[int, int]) -> tuple[list[Step], list[tuple[str, tuple[int, ...]]]]:
    """Resolve kernel sizes and record every intermediate shape (per sample)."""
    window, feats = obs_shape
    steps: list[Step] = []
    shapes: list[tuple[str, tuple[int, ...]]] = []
    shape: tuple[int, ...] = (1, window, feats)

    def conv(name, out_ch, kernel, stride, adjustable):
        nonlocal shape
        _, h, w = shape
        kh, kw = kernel
        if adjustable:
            kh, kw = min(kh, h), min(kw, w)
        if h < kh or w < kw:
            raise ArchitectureError(f"input {h}x{w} is smaller than the {kh}x{kw} kernel", layer=name)
        shape = (out_ch, (h - kh) // stride[0] + 1, (w - kw) // stride[1] + 1)
        steps.append(Step("conv", name, (kh, kw), stride, out_ch))
        shapes.append((name, shape))

    def pool(name, size):
        nonlocal shape
        c, h, w = shape
        kh, kw = min(size[0], h), min(size[1], w)
        shape = (c, (h - kh) // kh + 1, (w - kw) // kw + 1)
        steps.append(Step("pool", name, (kh, kw), (kh, kw)))
        shapes.append((name, shape))

    def dense_(name, width):
        nonlocal shape
        steps.append(Step("dense", name, width=width))
        shape = (width,)
        shapes.append((name, shape))

    def flatten():
        nonlocal shape
        steps.append(Step("flatten"))
        shape = (int(np.prod(shape)),)
        shapes.append(("flatten", shape))

    if spec.kind == "mlp":
        flatten()
        for i, width in enumerate(spec.hidden, start=1):
            dense_(f"fc{i}", width)
            steps.append(Step("relu"))
    elif spec.kind == "cnn_v1":
        conv("conv1", 32, (8, 8), (4, 4), adjustable=False)
        steps += [Step("relu"), Step("dropout")]
        conv("conv2", 64, (4, 4), (2, 2), adjustable=False)
        steps += [Step("relu"), Step("dropout")]
        flatten()
        dense_("fc1", spec.dense_width)
        steps.append(Step("relu"))
    else:
        conv("conv1", 32, (8, 8), (4, 4), adjustable=False)
        steps += [Step("bn", "bn1"), Step("relu")]
        pool("pool1", (2, 2))
        for i, (ch, k, s) in enumerate([(64, 4, 2), (128, 3, 1), (256, 3, 1)], start=2):
            conv(f"conv{i}", ch, (k, k), (s, s), adjustable=True)
            steps += [Step("bn", f"bn{i}"), Step("relu")]
        flatten()
        dense_("fc1", spec.dense_width)
        steps.append(Step("relu"))
    return steps, shapes


def orthogonal(rows: int, cols: int, gain: float, rng: Rng) -> np.ndarray:
    """Orthogonal ``[rows, cols]`` matrix (orthonormal rows or columns) scaled by ``gain``."""
    a = rng.normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


class PolicyNet:
    def __init__(self, spec: ArchSpec, obs_shape: tuple[int, int], action_dim: int, seed: int = 0):
        if action_dim < 1:
            raise ConfigError("action_dim must be >= 1")
        if len(obs_shape) != 2 or min(obs_shape) < 1:
            raise ConfigError(f"obs_shape must be (window, F), got {obs_shape}")
        self.spec = spec
        self.obs_shape = (int(obs_shape[0]), int(obs_shape[1]))
        self.action_dim = int(action_dim)
        self.seed = int(seed)
        self.steps, self._shapes = _layer_plan(spec, self.obs_shape)
        self.params: dict[str, Tensor] = {}
        self.running: dict[str, RunningStats] = {}
        self._init_params(Rng(seed, 0))

    # -- construction --------------------------------------------------------

    def _add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = Tensor(value, requires_grad=True, name=name)

    def _init_params(self, rng: Rng) -> None:
        channels = 1
        width = 0
        for step in self.steps:
            if step.op == "conv":
                fan_in = channels * step.kernel[0] * step.kernel[1]
                bound = 1.0 / math.sqrt(fan_in)
                self._add(f"{step.name}.weight", rng.uniform(-bound, bound, (step.width, channels, *step.kernel)))
                self._add(f"{step.name}.bias", np.zeros(step.width))
                channels = step.width
            elif step.op == "bn":
                self._add(f"{step.name}.gamma", np.ones(channels))
                self._add(f"{step.name}.beta", np.zeros(channels))
                self.running[step.name] = RunningStats(np.zeros(channels), np.ones(channels))
            elif step.op == "flatten":
                width = int(np.prod(self._shape_before_flatten()))
            elif step.op == "dense":
                self._add(f"{step.name}.weight", orthogonal(step.width, width, TRUNK_GAIN, rng))
                self._add(f"{step.name}.bias", np.zeros(step.width))
                width = step.width
        self.trunk_width = width
        self._add("actor.weight", orthogonal(self.action_dim, width, ACTOR_GAIN, rng))
        self._add("actor.bias", np.zeros(self.action_dim))
        self._add("critic.weight", orthogonal(1, width, CRITIC_GAIN, rng))
        self._add("critic.bias", np.zeros(1))
        self._add("log_std", np.zeros(self.action_dim))

    def _shape_before_flatten(self) -> tuple[int, ...]:
        prev: tuple[int, ...] = (1, *self.obs_shape)
        for name, shape in self._shapes:
            if name == "flatten":
                return prev
            prev = shape
        return prev

    # -- introspection -------------------------------------------------------

    def layer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Declared per-sample output shape of every conv, pool, flatten and dense layer."""
        return list(self._shapes)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.params.items())

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # -- forward -------------------------------------------------------------

    def forward(self, obs, mode: str = "eval", rng: Rng | None = None, trace: list | None = None):
        """Returns (mean ``[N, D]``, log_std ``[D]``, value ``[N]``).

        ``obs`` is ``[window, F]`` or ``[N, window, F]``. In ``train`` mode
        batch norm uses batch statistics (and updates the running ones) and
        dropout needs ``rng``. ``trace`` collects (layer, shape) pairs.
        """
        if mode not in ("train", "eval"):
            raise ModeError(f"unknown mode {mode!r}")
        x = obs if isinstance(obs, Tensor) else Tensor(obs)
        if x.ndim == 2:
            x = x.reshape(1, *x.shape)
        if x.ndim != 3 or x.shape[1:] != self.obs_shape:
            raise ShapeError("observation does not match the network input", x.shape, self.obs_shape)
        if not np.all(np.isfinite(x.data)):
            raise NonFiniteError("observation contains NaN or Inf", name="obs")
        n = x.shape[0]
        if self.spec.use_input_norm:
            x = column_normalize(x, NORM_EPS)
        if self.spec.kind != "mlp":
            x = x.reshape(n, 1, *self.obs_shape)
        p = self.params
        for step in self.steps:
            if step.op == "conv":
                x = conv2d(x, p[f"{step.name}.weight"], p[f"{step.name}.bias"], step.stride)
            elif step.op == "bn":
                x = batchnorm(x, p[f"{step.name}.gamma"], p[f"{step.name}.beta"], mode=mode,
                              running=self.running[step.name])
            elif step.op == "relu":
                x = relu(x)
            elif step.op == "pool":
                x = maxpool2d(x, step.kernel, step.stride)
            elif step.op == "dropout":
                x = dropout(x, self.spec.dropout_p, mode, rng)
            elif step.op == "flatten":
                x = x.reshape(n, -1)
            elif step.op == "dense":
                x = dense(x, p[f"{step.name}.weight"], p[f"{step.name}.bias"])
            if trace is not None and step.op in ("conv", "pool", "flatten", "dense"):
                trace.append((step.name or "flatten", x.shape[1:]))
        mean = dense(x, p["actor.weight"], p["actor.bias"])
        value = dense(x, p["critic.weight"], p["critic.bias"]).reshape(n)
        return mean, p["log_std"], value

    __call__ = forward

    def act(self, obs, rng: Rng, deterministic: bool = False) -> ActResult:
        """Sample one action for a single observation using running statistics."""
        with no_grad():
            mean, log_std, value = self.forward(obs, mode="eval")
        mu = mean.data[0]
        ls = log_std.data
        sample = mu.copy() if deterministic else mu + np.exp(ls) * rng.normal(mu.shape)
        log_prob = float(gaussian_log_prob_np(mu, ls, sample))
        return ActResult(np.clip(sample, -1.0, 1.0), sample, log_prob, float(value.data[0]))

    def evaluate_actions(self, obs_batch, action_batch, mode: str = "train", rng: Rng | None = None):
        """Differentiable (log_probs ``[N]``, entropies ``[N]``, values ``[N]``)."""
        actions = np.asarray(action_batch, dtype=np.float64)
        obs = np.asarray(obs_batch.data if isinstance(obs_batch, Tensor) else obs_batch, dtype=np.float64)
        if obs.ndim == 2:
            obs = obs[None]
        if actions.ndim == 1:
            actions = actions[None]
        if actions.shape != (obs.shape[0], self.action_dim):
            raise ShapeError("action batch must be [N, action_dim] matching the observations",
                             actions.shape, (obs.shape[0], self.action_dim))
        mean, log_std, value = self.forward(obs, mode=mode, rng=rng)
        log_probs = gaussian_log_prob(mean, log_std, actions)
        entropy = gaussian_entropy(log_std) + Tensor(np.zeros(obs.shape[0]))
        return log_probs, entropy, value

    # -- state ---------------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {name: t.data.copy() for name, t in self.params.items()}
        for name, rs in self.running.items():
            arrays[f"{name}.running_mean"] = rs.mean.copy()
            arrays[f"{name}.running_var"] = rs.var.copy()
        return arrays

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        expected = self.state_arrays()
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        if missing or extra:
            raise ArchitectureError(f"checkpoint arrays do not match the network (missing {missing}, extra {extra})")
        for name, ref in expected.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != ref.shape:
                raise ArchitectureError(f"shape {arr.shape} != {ref.shape}", layer=name)
            if name.endswith(".running_mean"):
                self.running[name[: -len(".running_mean")]].mean = arr.copy()
            elif name.endswith(".running_var"):
                self.running[name[: -len(".running_var")]].var = arr.copy()
            else:
                self.params[name].data = arr.copy()

    def meta(self) -> dict[str, str]:
        return {
            "kind": self.spec.kind,
            "hidden": ",".join(map(str, self.spec.hidden)),
            "dense_width": str(self.spec.dense_width),
            "dropout_p": repr(self.spec.dropout_p),
            "use_input_norm": str(self.spec.use_input_norm).lower(),
            "window": str(self.obs_shape[0]),
            "features": str(self.obs_shape[1]),
            "action_dim": str(self.action_dim),
            "seed": str(self.seed),
        }


def build(spec: ArchSpec, obs_shape: tuple[int, int], action_dim: int, seed: int = 0) -> PolicyNet:
    return PolicyNet(spec, obs_shape, action_dim, seed)


def param_count(spec: ArchSpec, obs_shape: tuple[int, int], action_dim: int) -> int:
    """Closed-form parameter count (including ``log_std``), without allocating the network."""
    steps, shapes = _layer_plan(spec, obs_shape)
    total = 0
    channels = 1
    width = 0
    by_name = dict(shapes)
    prev_shape: tuple[int, ...] = (1, *obs_shape)
    for step in steps:
        if step.op == "conv":
            total += step.width * channels * step.kernel[0] * step.kernel[1] + step.width
            channels = step.width
        elif step.op == "bn":
            total += 2 * channels
        elif step.op == "flatten":
            width = int(np.prod(prev_shape))
        elif step.op == "dense":
            total += width * step.width + step.width
            width = step.width
        if step.name in by_name:
            prev_shape = by_name[step.name]
    d = action_dim
    return total + width * d + d + width + 1 + d


def save_policy(stem, net: PolicyNet, extra_meta: dict[str, str] | None = None):
    return save_checkpoint(stem, net.state_arrays(), {**net.meta(), **(extra_meta or {})})


def load_policy(stem) -> tuple[PolicyNet, dict[str, str]]:
    arrays, meta = load_checkpoint(stem)
    try:
        spec = ArchSpec(
            kind=meta["kind"],
            hidden=tuple(int(h) for h in meta["hidden"].split(",") if h),
            dense_width=int(meta["dense_width"]),
            dropout_p=float(meta["dropout_p"]),
            use_input_norm=meta["use_input_norm"] == "true",
        )
        obs_shape = (int(meta["window"]), int(meta["features"]))
        net = PolicyNet(spec, obs_shape, int(meta["action_dim"]), int(meta["seed"]))
    except KeyError as exc:
        raise DataError(f"checkpoint meta lacks {exc.args[0]!r}", path=str(stem)) from None
    net.load_arrays(arrays)
    return net, meta
