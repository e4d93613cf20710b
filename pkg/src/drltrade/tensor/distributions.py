"""Diagonal Gaussian action distribution with a state-independent log-std."""

from __future__ import annotations

import math

import numpy as np

from .rng import Rng
from .tensor import Tensor, as_tensor, make_result

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
HALF_LOG_2PIE = 0.5 * math.log(2.0 * math.pi * math.e)


def gaussian_log_prob_np(mean: np.ndarray, log_std: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Log density summed over the last axis."""
    z = (action - mean) * np.exp(-log_std)
    return (-0.5 * z * z - log_std - HALF_LOG_2PI).sum(axis=-1)


def gaussian_log_prob(mean: Tensor, log_std: Tensor, action) -> Tensor:
    """Differentiable w.r.t. ``mean`` and ``log_std``; ``action`` is a constant.

    ``log_std`` may be ``[D]`` and broadcast against ``mean`` of ``[N, D]``.
    """
    mean, log_std = as_tensor(mean), as_tensor(log_std)
    a = np.asarray(action, dtype=np.float64)
    inv_std = np.exp(-log_std.data)
    z = (a - mean.data) * inv_std
    out = (-0.5 * z * z - log_std.data - HALF_LOG_2PI).sum(axis=-1)

    def backward(g):
        g = np.expand_dims(g, -1)
        return g * z * inv_std, g * (z * z - 1.0)

    return make_result(out, (mean, log_std), backward)


def gaussian_entropy(log_std: Tensor) -> Tensor:
    """Entropy of the diagonal Gaussian: sum(log_std + 0.5*log(2*pi*e))."""
    return (as_tensor(log_std) + HALF_LOG_2PIE).sum(axis=-1)


def gaussian_sample(mean: np.ndarray, log_std: np.ndarray, rng: Rng):
    """Draw ``mean + exp(log_std) * z``; returns (sample, log_prob, entropy)."""
    z = rng.normal(np.shape(mean))
    sample = mean + np.exp(log_std) * z
    log_prob = gaussian_log_prob_np(mean, log_std, sample)
    entropy = float(np.sum(log_std + HALF_LOG_2PIE))
    return sample, log_prob, entropy
