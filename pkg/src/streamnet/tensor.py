"""Dense (batch, channel, height, width) layer ops with analytic backward passes.

Everything is plain float64 numpy. Each layer op returns ``(out, cache)``;
the matching ``*_backward`` takes the cache plus the upstream gradient and
returns exact gradients of the forward map. No global state, no mutation of
inputs, so all ops are safe to call concurrently.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

# Sentinel used to pad odd spatial dims before pooling: the most negative
# finite double, so any real activation wins the max and outputs stay finite.
POOL_PAD_VALUE = -np.finfo(np.float64).max


class ShapeError(ValueError):
    """Operation received tensors with incompatible shapes."""


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ShapeError(message)


def as_tensor(data) -> np.ndarray:
    """Coerce to a float64 ndarray without copying when already one."""
    return np.asarray(data, dtype=np.float64)


# ---------------------------------------------------------------------------
# Convolution (stride 1, symmetric zero padding)
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, kh: int, kw: int, pad_h: int, pad_w: int) -> np.ndarray:
    """Expand (n,c,h,w) into patch rows of shape (n*oh*ow, c*kh*kw)."""
    n, c, h, w = x.shape
    if kh == kw == 1 and pad_h == pad_w == 0:
        return np.ascontiguousarray(x.transpose(0, 2, 3, 1)).reshape(n * h * w, c)
    if pad_h or pad_w:
        x = np.pad(x, ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    oh, ow = windows.shape[2], windows.shape[3]
    return (windows.transpose(0, 2, 3, 1, 4, 5)
                   .reshape(n * oh * ow, c * kh * kw))


def _col2im(gcol: np.ndarray, x_shape, kh: int, kw: int, padding: int) -> np.ndarray:
    """Scatter-add patch-row gradients back to the (n,c,h,w) input layout.

    Only used when padding exceeds kernel-size - 1; the common case goes
    through the transposed-convolution route in conv2d_backward.
    """
    n, c, h, w = x_shape
    oh = h + 2 * padding - kh + 1
    ow = w + 2 * padding - kw + 1
    gx = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=np.float64)
    g6 = gcol.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i:i + oh, j:j + ow] += g6[:, :, i, j]
    if padding:
        gx = gx[:, :, padding:padding + h, padding:padding + w]
    return gx


def _conv_core(x: np.ndarray, weight: np.ndarray, pad_h: int, pad_w: int):
    """im2col + matmul; returns (out (n,outC,oh,ow), col)."""
    n, c, h, w = x.shape
    out_c, _, kh, kw = weight.shape
    oh = h + 2 * pad_h - kh + 1
    ow = w + 2 * pad_w - kw + 1
    col = _im2col(x, kh, kw, pad_h, pad_w)
    out = col @ weight.reshape(out_c, -1).T
    return out.reshape(n, oh, ow, out_c).transpose(0, 3, 1, 2), col


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, padding: int = 0):
    """Cross-correlate x (n,c,h,w) with weight (outC,inC,kh,kw), add per-channel bias.

    Stride is fixed at 1. Returns ``(out, cache)`` with out shaped
    (n, outC, h+2p-kh+1, w+2p-kw+1).
    """
    x = as_tensor(x)
    weight = as_tensor(weight)
    bias = as_tensor(bias)
    _require(x.ndim == 4, f"conv2d input must be rank 4, got shape {x.shape}")
    _require(weight.ndim == 4, f"conv2d weight must be rank 4, got shape {weight.shape}")
    n, c, h, w = x.shape
    out_c, in_c, kh, kw = weight.shape
    _require(c == in_c,
             f"conv2d channel mismatch: input has {c} channels, weight expects {in_c}")
    _require(bias.shape == (out_c,),
             f"conv2d bias must have shape ({out_c},), got {bias.shape}")
    oh = h + 2 * padding - kh + 1
    ow = w + 2 * padding - kw + 1
    _require(oh >= 1 and ow >= 1,
             f"conv2d kernel {kh}x{kw} with padding {padding} does not fit input {h}x{w}")
    out, col = _conv_core(x, weight, padding, padding)
    out += bias[None, :, None, None]
    cache = (x.shape, col, weight, padding)
    return out, cache


def conv2d_backward(cache, grad_out: np.ndarray, need_grad_input: bool = True):
    """Gradients of conv2d w.r.t. (input, weight, bias).

    ``need_grad_input=False`` skips the input gradient (returned as None);
    callers use it for the first layer of a network, where nothing upstream
    is trainable and the full-padding correlation is the costliest step.
    """
    if cache is None:
        raise ValueError("conv2d_backward needs the forward cache, got None")
    x_shape, col, weight, padding = cache
    out_c, in_c, kh, kw = weight.shape
    g2 = grad_out.transpose(0, 2, 3, 1).reshape(-1, out_c)
    grad_bias = g2.sum(axis=0)
    grad_weight = (g2.T @ col).reshape(weight.shape)
    if not need_grad_input:
        return None, grad_weight, grad_bias
    if padding <= kh - 1 and padding <= kw - 1:
        # input gradient is the correlation of grad_out with the flipped
        # kernel under "full" padding
        flipped = np.ascontiguousarray(
            weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        grad_x, _ = _conv_core(grad_out, flipped, kh - 1 - padding, kw - 1 - padding)
    else:
        gcol = g2 @ weight.reshape(out_c, -1)
        grad_x = _col2im(gcol, x_shape, kh, kw, padding)
    return grad_x, grad_weight, grad_bias


# ---------------------------------------------------------------------------
# ReLU
# ---------------------------------------------------------------------------

def relu(x: np.ndarray):
    """Elementwise max(0, x). Cache is the input itself."""
    x = as_tensor(x)
    return np.maximum(x, 0.0), x


def relu_backward(cache: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # Subgradient at exactly 0 is 0.
    return grad_out * (cache > 0.0)


# ---------------------------------------------------------------------------
# 2x2 max pooling, stride 2
# ---------------------------------------------------------------------------

def maxpool2x2(x: np.ndarray):
    """Non-overlapping 2x2 window maximum.

    Odd heights/widths are padded on the bottom/right with POOL_PAD_VALUE so
    real entries always win. Ties go to the first element in row-major window
    order, which makes the backward routing deterministic.
    """
    x = as_tensor(x)
    _require(x.ndim == 4, f"maxpool2x2 input must be rank 4, got shape {x.shape}")
    n, c, h, w = x.shape
    ph, pw = h % 2, w % 2
    xp = x
    if ph or pw:
        xp = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)),
                    constant_values=POOL_PAD_VALUE)
    oh, ow = (h + ph) // 2, (w + pw) // 2
    windows = (xp.reshape(n, c, oh, 2, ow, 2)
                 .transpose(0, 1, 2, 4, 3, 5)
                 .reshape(n, c, oh, ow, 4))
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    cache = (x.shape, idx)
    return out, cache


def maxpool2x2_backward(cache, grad_out: np.ndarray) -> np.ndarray:
    """Route each output gradient to its argmax source position."""
    x_shape, idx = cache
    n, c, h, w = x_shape
    oh, ow = idx.shape[2], idx.shape[3]
    g4 = np.zeros((n, c, oh, ow, 4), dtype=np.float64)
    np.put_along_axis(g4, idx[..., None], grad_out[..., None], axis=-1)
    gx = (g4.reshape(n, c, oh, ow, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, 2 * oh, 2 * ow))
    return gx[:, :, :h, :w]


# ---------------------------------------------------------------------------
# Fully connected
# ---------------------------------------------------------------------------

def flatten(x: np.ndarray) -> np.ndarray:
    """Canonical row-major reshape of (n,c,h,w) to (n, c*h*w)."""
    x = as_tensor(x)
    return x.reshape(x.shape[0], -1)


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    """Affine map (n,d) @ (d,m) + (m,)."""
    x = as_tensor(x)
    weight = as_tensor(weight)
    bias = as_tensor(bias)
    _require(x.ndim == 2, f"linear input must be rank 2, got shape {x.shape}")
    _require(x.shape[1] == weight.shape[0],
             f"linear dimension mismatch: input has {x.shape[1]} features, "
             f"weight expects {weight.shape[0]}")
    _require(bias.shape == (weight.shape[1],),
             f"linear bias must have shape ({weight.shape[1]},), got {bias.shape}")
    return x @ weight + bias, (x, weight)


def linear_backward(cache, grad_out: np.ndarray):
    x, weight = cache
    grad_x = grad_out @ weight.T
    grad_weight = x.T @ grad_out
    grad_bias = grad_out.sum(axis=0)
    return grad_x, grad_weight, grad_bias


# ---------------------------------------------------------------------------
# Softmax cross-entropy
# ---------------------------------------------------------------------------

def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch with a numerically stable softmax.

    Returns ``(loss, probs, grad_logits)`` where
    grad_logits = (probs - onehot) / n.
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    _require(logits.ndim == 2, f"logits must be rank 2, got shape {logits.shape}")
    n, k = logits.shape
    _require(labels.shape == (n,),
             f"labels must have shape ({n},), got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    total = e.sum(axis=1, keepdims=True)
    probs = e / total
    log_norm = np.log(total[:, 0])
    loss = float(np.mean(log_norm - z[np.arange(n), labels]))
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, probs, grad


# ---------------------------------------------------------------------------
# Finite differences (shared gradient oracle)
# ---------------------------------------------------------------------------

def finite_difference_gradient(f: Callable[[np.ndarray], float],
                               x: np.ndarray,
                               step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    ``f`` must be pure and deterministic; ``x`` is never mutated from the
    caller's point of view.
    """
    x = as_tensor(x).copy()
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = f(x)
        flat[i] = orig - step
        f_minus = f(x)
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad
