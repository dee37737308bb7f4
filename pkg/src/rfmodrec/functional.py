"""Numpy forward/backward kernels.

Every kernel is a pure function. ``*_forward`` returns ``(out, cache)`` and the
matching ``*_backward`` consumes that cache plus the upstream gradient.
Convolutions follow the cross-correlation convention (no kernel flip), like
every mainstream deep learning library.

Batched layouts: conv2d works on ``(B, C, H, W)``, conv1d on ``(B, C, L)``.
Unbatched inputs (one fewer leading axis) are accepted and returned unbatched.
"""

from __future__ import annotations

from typing import Tuple, Union

import numpy as np

IntPair = Union[int, Tuple[int, int]]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _pair(v: IntPair) -> Tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv_output_len(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------


def conv2d_forward(x, w, b, stride: IntPair = 1, padding: IntPair = 0):
    given = x.shape
    unbatched = x.ndim == 3
    if unbatched:
        x = x[None]
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects input (B,C,H,W) and weights (O,C,kH,kW); got {x.shape} and {w.shape}")
    B, C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if C != Cw:
        raise ShapeError(f"conv2d input channels {C} (input shape {given}) do not match weight C_in {Cw} (weight shape {w.shape})")
    if b is not None and b.shape != (O,):
        raise ShapeError(f"conv2d bias shape {b.shape} does not match {O} filters")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    Ho = conv_output_len(H, kh, sh, ph)
    Wo = conv_output_len(W, kw, sw, pw)
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d kernel {(kh, kw)} larger than padded input {(H + 2 * ph, W + 2 * pw)}")

    # (C, B, Hp, Wp) so the im2col matrix is (C*kh*kw, B*Ho*Wo) and one GEMM does the work
    xp = np.pad(x.transpose(1, 0, 2, 3), ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = np.empty((C, kh, kw, B, Ho, Wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i : i + sh * Ho : sh, j : j + sw * Wo : sw]
    cols = cols.reshape(C * kh * kw, B * Ho * Wo)
    out = w.reshape(O, -1) @ cols
    out = out.reshape(O, B, Ho, Wo).transpose(1, 0, 2, 3)
    if b is not None:
        out = out + b.reshape(1, O, 1, 1)
    out = np.ascontiguousarray(out)
    cache = (cols, x.shape, w, (sh, sw), (ph, pw), unbatched, b is not None)
    return (out[0] if unbatched else out), cache


def conv2d_backward(cache, grad_out):
    cols, xshape, w, (sh, sw), (ph, pw), unbatched, has_bias = cache
    B, C, H, W = xshape
    O, _, kh, kw = w.shape
    g = grad_out[None] if unbatched else grad_out
    Ho = conv_output_len(H, kh, sh, ph)
    Wo = conv_output_len(W, kw, sw, pw)
    if g.shape != (B, O, Ho, Wo):
        expected = (O, Ho, Wo) if unbatched else (B, O, Ho, Wo)
        raise ShapeError(f"conv2d grad_out shape {grad_out.shape} != forward output shape {expected}")

    g2 = g.transpose(1, 0, 2, 3).reshape(O, B * Ho * Wo)
    grad_w = (g2 @ cols.T).reshape(w.shape)
    grad_b = g.sum(axis=(0, 2, 3)) if has_bias else None
    gcols = (w.reshape(O, -1).T @ g2).reshape(C, kh, kw, B, Ho, Wo)
    gxp = np.zeros((C, B, H + 2 * ph, W + 2 * pw), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i : i + sh * Ho : sh, j : j + sw * Wo : sw] += gcols[:, i, j]
    grad_x = gxp[:, :, ph : ph + H, pw : pw + W].transpose(1, 0, 2, 3)
    grad_x = np.ascontiguousarray(grad_x)
    return (grad_x[0] if unbatched else grad_x), grad_w, grad_b


# ---------------------------------------------------------------------------
# conv1d (a height-1 conv2d)
# ---------------------------------------------------------------------------


def conv1d_forward(x, w, b, stride: int = 1, padding: int = 0):
    given = x.shape
    unbatched = x.ndim == 2
    if unbatched:
        x = x[None]
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d expects input (B,C,L) and weights (O,C,k); got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d input channels {x.shape[1]} (input shape {given}) do not match weight C_in {w.shape[1]} (weight shape {w.shape})")
    out, cache = conv2d_forward(x[:, :, None, :], w[:, :, None, :], b, (1, stride), (0, padding))
    return (out[0, :, 0] if unbatched else out[:, :, 0]), (cache, unbatched)


def conv1d_backward(cache, grad_out):
    cache2d, unbatched = cache
    g = grad_out[None] if unbatched else grad_out
    gx, gw, gb = conv2d_backward(cache2d, g[:, :, None, :])
    gx = gx[:, :, 0]
    return (gx[0] if unbatched else gx), gw[:, :, 0], gb


# ---------------------------------------------------------------------------
# max pooling (non-overlapping windows)
# ---------------------------------------------------------------------------


def maxpool2d_forward(x, pool_h: int, pool_w: int):
    *lead, H, W = x.shape
    if H % pool_h or W % pool_w:
        raise ShapeError(f"maxpool window ({pool_h},{pool_w}) does not divide spatial dims ({H},{W}) of input {x.shape}")
    Ho, Wo = H // pool_h, W // pool_w
    n = len(lead)
    win = x.reshape(*lead, Ho, pool_h, Wo, pool_w)
    perm = tuple(range(n)) + (n, n + 2, n + 1, n + 3)
    win = win.transpose(perm).reshape(*lead, Ho, Wo, pool_h * pool_w)
    # np.argmax returns the first occurrence, which is the row-major tie-break
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape, pool_h, pool_w)


def maxpool2d_backward(cache, grad_out):
    idx, xshape, pool_h, pool_w = cache
    *lead, H, W = xshape
    Ho, Wo = H // pool_h, W // pool_w
    if grad_out.shape != idx.shape:
        raise ShapeError(f"maxpool grad_out shape {grad_out.shape} != forward output shape {idx.shape}")
    gwin = np.zeros((*lead, Ho, Wo, pool_h * pool_w), dtype=grad_out.dtype)
    np.put_along_axis(gwin, idx[..., None], grad_out[..., None], axis=-1)
    n = len(lead)
    gwin = gwin.reshape(*lead, Ho, Wo, pool_h, pool_w)
    perm = tuple(range(n)) + (n, n + 2, n + 1, n + 3)
    return gwin.transpose(perm).reshape(xshape)


# ---------------------------------------------------------------------------
# dense, relu
# ---------------------------------------------------------------------------


def dense_forward(x, w, b):
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"dense input width {x.shape[-1]} (input shape {x.shape}) does not match weight D_in {w.shape[1]} (weight shape {w.shape})")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"dense bias shape {b.shape} does not match D_out {w.shape[0]}")
    out = x @ w.T
    if b is not None:
        out = out + b
    return out, (x, w, b is not None)


def dense_backward(cache, grad_out):
    x, w, has_bias = cache
    gx = grad_out @ w
    x2 = x.reshape(-1, x.shape[-1])
    g2 = grad_out.reshape(-1, w.shape[0])
    gw = g2.T @ x2
    gb = g2.sum(axis=0) if has_bias else None
    return gx, gw, gb


def relu_forward(x):
    # np.maximum keeps NaN, so a diverged activation is not silently zeroed
    mask = x > 0
    return np.maximum(x, 0).astype(x.dtype, copy=False), mask


def relu_backward(mask, grad_out):
    return np.where(mask, grad_out, 0).astype(grad_out.dtype, copy=False)


def layer_norm_forward(x, eps: float = 1e-5):
    """Per-sample standardisation over every non-batch axis, no affine terms."""
    axes = tuple(range(1, x.ndim))
    mu = x.mean(axis=axes, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=axes, keepdims=True) + eps)
    y = xc * inv
    return y.astype(x.dtype, copy=False), (y, inv, axes)


def layer_norm_backward(cache, grad_out):
    y, inv, axes = cache
    g = grad_out
    gx = inv * (g - g.mean(axis=axes, keepdims=True) - y * (g * y).mean(axis=axes, keepdims=True))
    return gx.astype(grad_out.dtype, copy=False)


# ---------------------------------------------------------------------------
# softmax cross-entropy
# ---------------------------------------------------------------------------


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy_forward(logits, labels):
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (B,K); got {logits.shape}")
    B, K = logits.shape
    if K < 2:
        raise ShapeError(f"need at least 2 classes, got K={K}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (B,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch size {B}")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ValueError(f"label out of range [0,{K}): {labels[(labels < 0) | (labels >= K)][:5].tolist()}")
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    nll = logsumexp - z[np.arange(B), labels]
    loss = nll.mean()
    probs = np.exp(z - logsumexp[:, None])
    return loss, (probs, labels)


def softmax_cross_entropy_backward(cache, grad_out=1.0):
    probs, labels = cache
    B = probs.shape[0]
    g = probs.copy()
    g[np.arange(B), labels] -= 1
    return g * (np.asarray(grad_out, dtype=probs.dtype) / B)
