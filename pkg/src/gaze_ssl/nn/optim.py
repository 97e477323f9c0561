"""AdamW with decoupled weight decay, and the EMA target update."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import Tensor


@dataclass
class AdamWState:
    lr: float = 1e-2
    weight_decay: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    exp_avg: dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray | None],
               state: AdamWState) -> None:
    """Update ``params`` in place by one AdamW step.

    Weight decay is decoupled: ``p <- p - lr*wd*p`` is applied independently of
    the adaptive, bias-corrected moment step.  A missing gradient counts as zero.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise FloatingPointError(f"non-finite gradient for parameter {name!r} ({bad} entries)")

    state.step += 1
    b1, b2 = state.betas
    bias1 = 1.0 - b1 ** state.step
    bias2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.exp_avg.setdefault(name, np.zeros_like(p))
        v = state.exp_avg_sq.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay:
            p *= p.dtype.type(1.0 - state.lr * state.weight_decay)
        denom = np.sqrt(v / bias2) + state.eps
        p -= (state.lr / bias1) * m / denom


class AdamW:
    """Optimizer over module parameters; reads ``p.grad`` after ``backward``."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-2, weight_decay: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.state = AdamWState(lr=lr, weight_decay=weight_decay, betas=betas, eps=eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        adamw_step(
            {k: p.data for k, p in self.params.items()},
            {k: p.grad for k, p in self.params.items()},
            self.state,
        )


def ema_update(online: Mapping[str, np.ndarray], target: Mapping[str, np.ndarray], momentum: float) -> None:
    """In place ``target <- m*target + (1-m)*online``."""
    if not 0.0 <= momentum <= 1.0:
        raise ValueError(f"EMA momentum must lie in [0, 1], got {momentum}")
    if set(online) != set(target):
        raise KeyError("online and target parameter sets differ")
    for name, xi in target.items():
        theta = online[name]
        if theta.shape != xi.shape:
            raise ValueError(f"{name}: shape {theta.shape} != {xi.shape}")
        if momentum == 1.0:
            continue
        if momentum == 0.0:
            xi[...] = theta
            continue
        xi *= xi.dtype.type(momentum)
        xi += xi.dtype.type(1.0 - momentum) * theta
