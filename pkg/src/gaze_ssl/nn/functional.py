"""Network layers as differentiable functions.

Images use the NHWC layout; convolution kernels are ``(kh, kw, c_in, c_out)``
and linear weights ``(in, out)``.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, _result, as_tensor, logsumexp, relu  # noqa: F401  (re-exported)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int | None = None) -> Tensor:
    """2-D cross-correlation via im2col.  ``padding=None`` keeps odd kernels 'same'."""
    if x.ndim != 4:
        raise ValueError(f"conv2d expects NHWC input, got shape {x.shape}")
    kh, kw, cin, cout = weight.shape
    if x.shape[3] != cin:
        raise ValueError(f"conv2d: input has {x.shape[3]} channels, kernel expects {cin}")
    if padding is None:
        padding = kh // 2
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x.data
    n, hp, wp, _ = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    offsets = [(i, j) for i in range(kh) for j in range(kw)]
    cols = np.concatenate(
        [xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] for i, j in offsets], axis=-1
    ).reshape(n * ho * wo, kh * kw * cin)
    wmat = weight.data.reshape(kh * kw * cin, cout)
    out = (cols @ wmat).reshape(n, ho, wo, cout)
    parents = [x, weight]
    if bias is not None:
        out += bias.data
        parents.append(bias)

    def backward(g):
        g2 = g.reshape(-1, cout)
        dw = (cols.T @ g2).reshape(weight.shape)
        dx = None
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(n, ho, wo, kh * kw * cin)
            dxp = np.zeros(xp.shape, dtype=g.dtype)
            for k, (i, j) in enumerate(offsets):
                dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[..., k * cin:(k + 1) * cin]
            dx = dxp[:, padding:hp - padding, padding:wp - padding, :] if padding else dxp
        grads = [dx, dw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return _result(out, parents, backward, "conv2d")


def max_pool(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping ``size x size`` max pooling; trailing rows/cols that don't fill a window are dropped.

    Gradient goes to the first maximal element of each window (row-major order).
    """
    n, h, w, c = x.shape
    ho, wo = h // size, w // size
    if ho < 1 or wo < 1:
        raise ValueError(f"max_pool: input {h}x{w} smaller than window {size}")
    src = x.data[:, :ho * size, :wo * size, :]
    views = [src[:, i::size, j::size, :] for i in range(size) for j in range(size)]
    out = views[0].copy()
    for v in views[1:]:
        np.maximum(out, v, out=out)
    masks = []
    taken = np.zeros(out.shape, dtype=bool)
    for v in views:
        sel = (v == out) & ~taken
        taken |= sel
        masks.append(sel)

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        k = 0
        for i in range(size):
            for j in range(size):
                gx[:, i:ho * size:size, j:wo * size:size, :] = g * masks[k]
                k += 1
        return (gx,)

    return _result(out, (x,), backward, "max_pool")


def global_avg_pool(x: Tensor) -> Tensor:
    n, h, w, c = x.shape
    scale = 1.0 / (h * w)

    def backward(g):
        return (np.broadcast_to(g[:, None, None, :] * scale, x.shape).astype(g.dtype),)

    return _result(x.data.mean(axis=(1, 2)), (x,), backward, "global_avg_pool")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: input width {x.shape[-1]} != weight rows {weight.shape[0]}")
    out = x.data @ weight.data
    parents = [x, weight]
    if bias is not None:
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        grads = [g @ weight.data.T, x.data.T @ g]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return _result(out, parents, backward, "linear")


def _group_sum(a: np.ndarray) -> np.ndarray:
    # (n, hw, groups, cg) -> (n, 1, groups, 1); two contiguous reductions are much faster than one over (1, 3)
    return a.sum(axis=1, keepdims=True).sum(axis=3, keepdims=True)


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int, eps: float = 1e-5) -> Tensor:
    """Group normalisation over (H, W, C/groups) of an NHWC tensor."""
    n, h, w, c = x.shape
    if c % groups:
        raise ValueError(f"group_norm: {c} channels not divisible into {groups} groups")
    cg = c // groups
    m = h * w * cg
    xg = x.data.reshape(n, h * w, groups, cg)
    mu = _group_sum(xg) / m
    centered = xg - mu
    var = _group_sum(centered * centered) / m
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat.reshape(n, h, w, c) * gamma.data + beta.data

    def backward(g):
        g4 = g.reshape(n, h * w, groups, cg)
        dgamma = (g4 * xhat).reshape(-1, c).sum(axis=0)
        dbeta = g.reshape(-1, c).sum(axis=0)
        dxhat = g4 * gamma.data.reshape(groups, cg)
        s1 = _group_sum(dxhat)
        s2 = _group_sum(dxhat * xhat)
        dx = dxhat * m
        dx -= s1
        dx -= xhat * s2
        dx *= inv_std / m
        return dx.reshape(n, h, w, c), dgamma, dbeta

    return _result(out, (x, gamma, beta), backward, "group_norm")


def l2_normalize(x: Tensor, axis: int = -1, min_norm: float = 1e-12) -> Tensor:
    """Scale each vector along ``axis`` to unit Euclidean norm; zero vectors raise."""
    norm = np.sqrt((x.data ** 2).sum(axis=axis, keepdims=True))
    if np.any(norm <= min_norm):
        raise ValueError("l2_normalize: cannot normalise a zero vector")
    y = x.data / norm

    def backward(g):
        return ((g - y * (g * y).sum(axis=axis, keepdims=True)) / norm,)

    return _result(y, (x,), backward, "l2_normalize")


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy of integer ``labels``."""
    labels = np.asarray(labels)
    rows = np.arange(len(labels))
    picked = logits[rows, labels]
    return (logsumexp(logits, axis=1) - picked).mean()


__all__ = [
    "conv2d", "max_pool", "global_avg_pool", "linear", "group_norm",
    "l2_normalize", "relu", "logsumexp", "cross_entropy", "as_tensor",
]
