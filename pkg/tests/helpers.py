"""Independent test oracles: finite differences and small reference kernels."""

from __future__ import annotations

import numpy as np


def numerical_grad(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar function ``fn`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn(x)
        flat[i] = orig - h
        down = fn(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest absolute gap, relative to the largest gradient magnitude."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def naive_conv2d(x, w, b, stride):
    """Scalar loops, accumulation order kernel-row, kernel-col, channel."""
    c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    sh, sw = stride
    ho, wo = (h - kh) // sh + 1, (wd - kw) // sw + 1
    out = np.zeros((c_out, ho, wo))
    for k in range(c_out):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for m in range(kh):
                    for n in range(kw):
                        for c in range(c_in):
                            acc += float(w[k, c, m, n]) * float(x[c, i * sh + m, j * sw + n])
                out[k, i, j] = acc + float(b[k])
    return out


def ema_oracle(x, n):
    """EMA written as an explicit weighted sum (no recursion)."""
    a = 2.0 / (n + 1)
    out = np.empty(len(x))
    for t in range(len(x)):
        total = (1 - a) ** t * x[0]
        for k in range(1, t + 1):
            total += a * (1 - a) ** (t - k) * x[k]
        out[t] = total
    return out


def wilder_oracle(values, n):
    """Prefix mean over values[1..t] for t <= n, then Wilder smoothing, as an explicit sum.

    ``values[0]`` is ignored (there is no change on the first bar); index 0 returns 0.
    """
    out = np.zeros(len(values))
    for t in range(1, len(values)):
        if t <= n:
            out[t] = sum(values[1 : t + 1]) / t
        else:
            seed = sum(values[1 : n + 1]) / n
            w = (n - 1) / n
            total = w ** (t - n) * seed
            for k in range(n + 1, t + 1):
                total += (1.0 / n) * w ** (t - k) * values[k]
            out[t] = total
    return out
