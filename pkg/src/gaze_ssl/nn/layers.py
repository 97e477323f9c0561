"""Parameter-holding modules: the small conv encoder and the MLP heads."""

from __future__ import annotations

import copy
from typing import Iterator, Sequence

import numpy as np

from . import functional as F
from .tensor import Tensor


class Parameter(Tensor):
    """A leaf tensor owned by a module; trainable unless frozen."""

    __slots__ = ()

    def __init__(self, data, requires_grad: bool = True):
        super().__init__(data, requires_grad=requires_grad)


class Module:
    """Base class that discovers parameters from attributes, in definition order."""

    def forward(self, *args):
        raise NotImplementedError

    def __call__(self, *args):
        return self.forward(*args)

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> dict[str, Parameter]:
        params: dict[str, Parameter] = {}
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                params[full] = value
            else:
                params.update(value.named_parameters(prefix=f"{full}."))
        return params

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
            p.data = value.astype(p.dtype, copy=True)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def requires_grad_(self, flag: bool) -> "Module":
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def clone(self) -> "Module":
        return copy.deepcopy(self)


def kaiming_uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator,
                 stride: int = 1, padding: int | None = None):
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Parameter(kaiming_uniform(rng, (kernel_size, kernel_size, in_channels, out_channels), fan_in))
        self.bias = Parameter(np.zeros(out_channels, np.float32))
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.weight = Parameter(kaiming_uniform(rng, (in_features, out_features), in_features))
        self.bias = Parameter(np.zeros(out_features, np.float32))

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class GroupNorm(Module):
    def __init__(self, groups: int, channels: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(channels, np.float32))
        self.beta = Parameter(np.zeros(channels, np.float32))
        self.groups = groups
        self.eps = eps

    def forward(self, x):
        return F.group_norm(x, self.gamma, self.beta, self.groups, self.eps)


class ConvBlock(Module):
    """conv3x3 -> group_norm -> relu -> 2x2 max pool."""

    def __init__(self, in_channels: int, out_channels: int, groups: int, rng: np.random.Generator):
        self.conv = Conv2d(in_channels, out_channels, 3, rng)
        self.norm = GroupNorm(min(groups, out_channels), out_channels)

    def forward(self, x):
        return F.max_pool(F.relu(self.norm(self.conv(x))))


class Encoder(Module):
    """Stack of conv blocks followed by global average pooling (the probe tap)."""

    def __init__(self, widths: Sequence[int] = (16, 32, 64, 128), groups: int = 4,
                 in_channels: int = 3, seed: int = 0):
        rng = np.random.default_rng(seed)
        chans = [in_channels, *widths]
        self.blocks = [ConvBlock(a, b, groups, rng) for a, b in zip(chans[:-1], chans[1:])]
        self.widths = tuple(widths)

    @property
    def feature_dim(self) -> int:
        return self.widths[-1]

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return F.global_avg_pool(x)


class MLP(Module):
    """Two-layer perceptron ``in -> hidden -> relu -> out``."""

    def __init__(self, in_features: int, hidden: int, out_features: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.fc1 = Linear(in_features, hidden, rng)
        self.fc2 = Linear(hidden, out_features, rng)

    def forward(self, x):
        return self.fc2(F.relu(self.fc1(x)))


def images_to_tensor(images: np.ndarray) -> Tensor:
    """uint8 ``(N, H, W, 3)`` images -> float32 tensor in [0, 1]."""
    images = np.asarray(images)
    if images.dtype == np.uint8:
        return Tensor(images.astype(np.float32) * np.float32(1.0 / 255.0))
    return Tensor(images.astype(np.float32))
