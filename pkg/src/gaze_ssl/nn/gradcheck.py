"""Finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_gradients(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], h: float = 1e-3) -> list[np.ndarray]:
    """Central differences of the scalar ``fn(*tensors)`` with respect to every input, in float64."""
    base = [np.array(x, dtype=np.float64) for x in inputs]
    grads = []
    for k, x in enumerate(base):
        g = np.zeros_like(x)
        flat = x.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus = fn(*[Tensor(a, dtype=np.float64) for a in base]).item()
            flat[i] = orig - h
            minus = fn(*[Tensor(a, dtype=np.float64) for a in base]).item()
            flat[i] = orig
            gflat[i] = (plus - minus) / (2 * h)
        grads.append(g)
    return grads


def analytic_gradients(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], dtype=np.float32) -> list[np.ndarray]:
    tensors = [Tensor(np.asarray(x), requires_grad=True, dtype=dtype) for x in inputs]
    out = fn(*tensors)
    out.backward()
    return [np.zeros(t.shape) if t.grad is None else np.asarray(t.grad, dtype=np.float64) for t in tensors]


def relative_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero entries from dominating."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def max_gradient_error(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], h: float = 1e-3,
                       dtype=np.float32, floor: float = 1e-3) -> float:
    """Largest elementwise relative error between backprop (in ``dtype``) and central differences."""
    a = analytic_gradients(fn, inputs, dtype)
    n = numerical_gradients(fn, inputs, h)
    return max(float(relative_errors(x, y, floor).max()) for x, y in zip(a, n))
