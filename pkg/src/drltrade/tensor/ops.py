"""Layer primitives: numpy forward/backward pairs plus Tensor wrappers.

The ``*_forward`` / ``*_backward`` functions work on plain float64 arrays so
they can be checked in isolation. The lower-case wrappers (``conv2d``,
``relu``, ...) record them on the gradient tape.

Spatial ops accept a single sample ``[C, H, W]`` or a batch ``[N, C, H, W]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ModeError, ShapeError
from .rng import Rng
from .tensor import Tensor, as_tensor, make_result


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv_output_size(size: int, kernel: int, stride: int) -> int:
    return (size - kernel) // stride + 1


# -- convolution ---------------------------------------------------------


def conv2d_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray, stride=(1, 1)) -> np.ndarray:
    """Valid cross-correlation.

    Each output element is accumulated as ``acc += w[o, c, m, n] * x[...]`` with
    ``m`` (kernel row) outermost, then ``n`` (kernel column), then ``c`` (input
    channel), all ascending, starting from 0.0; the bias is added last. The
    loop runs over kernel taps only and is vectorised over batch, output
    channels and positions, so results are bitwise equal to a scalar loop
    using the same order.
    """
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or kernels.ndim != 4:
        raise ShapeError("conv2d expects input [C,H,W] or [N,C,H,W] and kernels [O,C,kh,kw]", x.shape, kernels.shape)
    n_batch, c_in, h, w = x.shape
    c_out, k_in, kh, kw = kernels.shape
    if k_in != c_in:
        raise ShapeError("conv2d input channels differ from kernel channels", x.shape[1:], kernels.shape)
    if bias.shape != (c_out,):
        raise ShapeError("conv2d bias must have one entry per kernel", bias.shape, kernels.shape)
    sh, sw = _pair(stride)
    if h < kh or w < kw:
        raise ShapeError("conv2d input smaller than kernel", x.shape[1:], kernels.shape)
    ho, wo = conv_output_size(h, kh, sh), conv_output_size(w, kw, sw)

    out = np.zeros((n_batch, c_out, ho, wo))
    for m in range(kh):
        rows = slice(m, m + sh * (ho - 1) + 1, sh)
        for n in range(kw):
            cols = slice(n, n + sw * (wo - 1) + 1, sw)
            for c in range(c_in):
                out += kernels[:, c, m, n][None, :, None, None] * x[:, c, rows, cols][:, None]
    out += bias[None, :, None, None]
    return out[0] if single else out


def conv2d_backward(grad_out: np.ndarray, saved_input: np.ndarray, kernels: np.ndarray, stride=(1, 1)):
    """Adjoint of :func:`conv2d_forward`; returns (grad_input, grad_kernels, grad_bias)."""
    single = saved_input.ndim == 3
    x = saved_input[None] if single else saved_input
    g = grad_out[None] if grad_out.ndim == 3 else grad_out
    n_batch, c_in, h, w = x.shape
    c_out, _, kh, kw = kernels.shape
    sh, sw = _pair(stride)
    ho, wo = conv_output_size(h, kh, sh), conv_output_size(w, kw, sw)
    if g.shape != (n_batch, c_out, ho, wo):
        raise ShapeError("conv2d grad_out does not match forward output", g.shape, (n_batch, c_out, ho, wo))

    grad_x = np.zeros_like(x)
    grad_k = np.empty_like(kernels)
    for m in range(kh):
        rows = slice(m, m + sh * (ho - 1) + 1, sh)
        for n in range(kw):
            cols = slice(n, n + sw * (wo - 1) + 1, sw)
            patch = x[:, :, rows, cols]
            grad_k[:, :, m, n] = np.tensordot(g, patch, axes=([0, 2, 3], [0, 2, 3]))
            grad_x[:, :, rows, cols] += np.tensordot(g, kernels[:, :, m, n], axes=([1], [0])).transpose(0, 3, 1, 2)
    grad_b = g.sum(axis=(0, 2, 3))
    return (grad_x[0] if single else grad_x), grad_k, grad_b


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor, stride=(1, 1)) -> Tensor:
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    out = conv2d_forward(x.data, kernels.data, bias.data, stride)
    return make_result(out, (x, kernels, bias), lambda g: conv2d_backward(g, x.data, kernels.data, stride))


# -- relu ------------------------------------------------------------------


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, 0.0)


def relu_backward(grad_out: np.ndarray, saved_input: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return np.where(saved_input > 0, grad_out, 0.0)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return make_result(relu_forward(x.data), (x,), lambda g: (relu_backward(g, x.data),))


# -- dense -----------------------------------------------------------------


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if weights.ndim != 2 or x.shape[-1] != weights.shape[1]:
        raise ShapeError("dense input features differ from weight columns", x.shape, weights.shape)
    if bias.shape != (weights.shape[0],):
        raise ShapeError("dense bias must have one entry per output", bias.shape, weights.shape)
    return x @ weights.T + bias


def dense_backward(grad_out: np.ndarray, saved_input: np.ndarray, weights: np.ndarray):
    g2 = grad_out.reshape(-1, weights.shape[0])
    x2 = saved_input.reshape(-1, weights.shape[1])
    return grad_out @ weights, g2.T @ x2, g2.sum(axis=0)


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    out = dense_forward(x.data, weights.data, bias.data)
    return make_result(out, (x, weights, bias), lambda g: dense_backward(g, x.data, weights.data))


# -- batch norm --------------------------------------------------------------


@dataclass
class RunningStats:
    """Per-channel running mean and (unbiased) variance for eval mode."""

    mean: np.ndarray
    var: np.ndarray
    updates: int = 0


def _bn_axes(x: np.ndarray) -> tuple[int, ...]:
    return (0,) + tuple(range(2, x.ndim))


def _bn_view(v: np.ndarray, ndim: int) -> np.ndarray:
    return v.reshape((1, -1) + (1,) * (ndim - 2))


def batchnorm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    eps: float = 1e-5,
    mode: str = "train",
    running: RunningStats | None = None,
    momentum: float = 0.1,
):
    """Per-channel batch normalisation over ``[N, C, ...]``.

    Train mode uses the batch mean and biased batch variance and, when
    ``running`` is given, folds them into it as
    ``running = (1 - momentum) * running + momentum * batch`` (the variance
    folded in is the unbiased one). Eval mode uses ``running``.
    Returns ``(y, cache)``; ``cache`` feeds :func:`batchnorm_backward`.
    """
    if x.ndim < 2 or x.shape[1] != gamma.shape[0] or beta.shape != gamma.shape:
        raise ShapeError("batchnorm expects [N, C, ...] with gamma/beta of length C", x.shape, gamma.shape)
    axes = _bn_axes(x)
    count = x.size // x.shape[1]
    if mode == "train":
        if count < 2:
            raise ShapeError("batchnorm train mode needs at least 2 values per channel", x.shape)
        mean = x.mean(axis=axes)
        centred = x - _bn_view(mean, x.ndim)
        var = (centred * centred).mean(axis=axes)
        if running is not None:
            running.mean = (1.0 - momentum) * running.mean + momentum * mean
            running.var = (1.0 - momentum) * running.var + momentum * var * (count / (count - 1))
            running.updates += 1
    elif mode == "eval":
        if running is None:
            raise ModeError("batchnorm eval mode requires running statistics")
        mean, var = running.mean, running.var
        centred = x - _bn_view(mean, x.ndim)
    else:
        raise ModeError(f"unknown batchnorm mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centred * _bn_view(inv_std, x.ndim)
    y = x_hat * _bn_view(gamma, x.ndim) + _bn_view(beta, x.ndim)
    return y, (x_hat, inv_std, gamma, mode, count)


def batchnorm_backward(grad_out: np.ndarray, cache):
    """Returns (grad_input, grad_gamma, grad_beta)."""
    x_hat, inv_std, gamma, mode, count = cache
    nd = grad_out.ndim
    axes = _bn_axes(grad_out)
    grad_gamma = (grad_out * x_hat).sum(axis=axes)
    grad_beta = grad_out.sum(axis=axes)
    g_hat = grad_out * _bn_view(gamma, nd)
    if mode == "eval":
        return g_hat * _bn_view(inv_std, nd), grad_gamma, grad_beta
    mean_g = g_hat.mean(axis=axes)
    mean_gx = (g_hat * x_hat).mean(axis=axes)
    grad_x = _bn_view(inv_std, nd) * (g_hat - _bn_view(mean_g, nd) - x_hat * _bn_view(mean_gx, nd))
    return grad_x, grad_gamma, grad_beta


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    eps: float = 1e-5,
    mode: str = "train",
    running: RunningStats | None = None,
    momentum: float = 0.1,
) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    y, cache = batchnorm_forward(x.data, gamma.data, beta.data, eps, mode, running, momentum)
    return make_result(y, (x, gamma, beta), lambda g: batchnorm_backward(g, cache))


# -- max pooling --------------------------------------------------------------


def maxpool2d_forward(x: np.ndarray, kernel=(2, 2), stride=(2, 2)):
    """Returns ``(y, argmax)``; ``argmax`` holds the flat in-window index of each maximum.

    Trailing rows/columns that do not fill a window are dropped. Ties go to
    the first element in row-major window order.
    """
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride)
    if x.ndim < 2 or x.shape[-2] < kh or x.shape[-1] < kw:
        raise ShapeError("maxpool2d input smaller than window", x.shape, (kh, kw))
    ho = conv_output_size(x.shape[-2], kh, sh)
    wo = conv_output_size(x.shape[-1], kw, sw)
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(-2, -1))
    win = win[..., : sh * (ho - 1) + 1 : sh, : sw * (wo - 1) + 1 : sw, :, :]
    flat = win.reshape(win.shape[:-2] + (kh * kw,))
    arg = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return y, arg


def maxpool2d_backward(grad_out: np.ndarray, argmax: np.ndarray, input_shape, kernel=(2, 2), stride=(2, 2)):
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride)
    ho, wo = argmax.shape[-2:]
    lead = argmax.shape[:-2]
    grad = np.zeros(input_shape)
    rows = (np.arange(ho) * sh)[:, None] + argmax // kw
    cols = (np.arange(wo) * sw)[None, :] + argmax % kw
    lead_idx = np.meshgrid(*[np.arange(d) for d in lead], indexing="ij") if lead else []
    index = tuple(np.broadcast_to(li[..., None, None], argmax.shape) for li in lead_idx) + (rows, cols)
    np.add.at(grad, index, grad_out)
    return grad


def maxpool2d(x: Tensor, kernel=(2, 2), stride=(2, 2)) -> Tensor:
    x = as_tensor(x)
    y, arg = maxpool2d_forward(x.data, kernel, stride)
    shape = x.shape
    return make_result(y, (x,), lambda g: (maxpool2d_backward(g, arg, shape, kernel, stride),))


# -- dropout -------------------------------------------------------------------


def dropout_mask(shape, p: float, rng: Rng) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability ``p``, else ``1/(1-p)``."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def dropout(x: Tensor, p: float, mode: str = "train", rng: Rng | None = None, mask: np.ndarray | None = None) -> Tensor:
    """Inverted dropout. ``mask`` may be supplied to replay a fixed pattern."""
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if mode == "eval" or (p == 0.0 and mask is None):
        return x
    if mask is None:
        if rng is None:
            raise ModeError("dropout in train mode needs an Rng")
        mask = dropout_mask(x.shape, p, rng)
    return make_result(x.data * mask, (x,), lambda g: (g * mask,))


# -- column normalisation --------------------------------------------------------


def column_normalize_forward(x: np.ndarray, eps: float = 1e-8):
    """Standardise each column (axis -2 runs over rows) to zero mean, unit scale.

    ``y = (x - mean) / (std + eps)`` with the population std. The centred
    columns get a second mean-removal pass: a large common offset leaves the
    rounded mean up to half an ulp of the offset away, which the second pass
    removes at the scale of the centred values.
    """
    centred = x - x.mean(axis=-2, keepdims=True)
    centred = centred - centred.mean(axis=-2, keepdims=True)
    std = np.sqrt((centred * centred).mean(axis=-2, keepdims=True))
    scale = std + eps
    return centred / scale, (centred, std, scale)


def column_normalize_backward(grad_out: np.ndarray, cache) -> np.ndarray:
    centred, std, scale = cache
    rows = centred.shape[-2]
    g_mean = grad_out.mean(axis=-2, keepdims=True)
    g_dot = (grad_out * centred).sum(axis=-2, keepdims=True)
    safe_std = np.where(std > 0, std, 1.0)
    coupling = np.where(std > 0, g_dot / (scale * scale * rows * safe_std), 0.0)
    return (grad_out - g_mean) / scale - coupling * centred


def column_normalize(x: Tensor, eps: float = 1e-8) -> Tensor:
    x = as_tensor(x)
    y, cache = column_normalize_forward(x.data, eps)
    return make_result(y, (x,), lambda g: (column_normalize_backward(g, cache),))
