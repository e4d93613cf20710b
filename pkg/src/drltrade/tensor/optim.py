"""First-order optimisers in descent orientation (they minimise a loss).

Ascent on an objective J is obtained by passing the gradients of -J.
Parameters are updated in place.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ConfigError, NonFiniteError, ShapeError


@dataclass
class AdamState:
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)


def _check_grads(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], names) -> None:
    if len(params) != len(grads):
        raise ShapeError(f"got {len(params)} parameters but {len(grads)} gradients")
    for i, (p, g) in enumerate(zip(params, grads)):
        label = names[i] if names is not None else f"param[{i}]"
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape differs from parameter {label}", p.shape, g.shape)
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient", label)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState, names=None):
    """One bias-corrected Adam update: ``p -= lr * m_hat / (sqrt(v_hat) + eps)``."""
    if state.learning_rate < 0:
        raise ConfigError("learning_rate must be >= 0")
    _check_grads(params, grads, names)
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    elif len(state.first_moment) != len(params):
        raise ShapeError("Adam state was built for a different parameter list")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], learning_rate: float, names=None):
    _check_grads(params, grads, names)
    for p, g in zip(params, grads):
        p -= learning_rate * g
    return params


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return math.sqrt(math.fsum(float(np.dot(g.ravel(), g.ravel())) for g in grads))


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for g in grads:
            g *= scale
    return norm
