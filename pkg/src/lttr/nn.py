"""Small module system and standard layers on top of :mod:`lttr.tensor`."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


class Module:
    """Collects :class:`Parameter` attributes and child modules by name."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state(self) -> dict[str, Parameter]:
        """Name -> parameter map; also stamps each parameter with its name."""
        out = {}
        for name, p in self.named_parameters():
            p.name = name
            out[name] = p
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(kaiming_uniform(rng, (d_in, d_out), d_in))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)


class ChannelNorm(LayerNorm):
    """Per-channel normalization over all spatial positions of one sample."""

    def forward(self, x: Tensor) -> Tensor:
        return T.channel_norm(x, self.gain, self.bias)


class Conv(Module):
    """Channels-last convolution with a cubic kernel in ``dims`` spatial axes."""

    def __init__(self, dims: int, c_in: int, c_out: int, rng: np.random.Generator,
                 kernel: int = 3, stride: int = 1, padding: int = 1):
        shape = (kernel,) * dims + (c_in, c_out)
        self.weight = Parameter(kaiming_uniform(rng, shape, c_in * kernel ** dims))
        self.bias = Parameter(np.zeros(c_out))
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor, occupied=None) -> Tensor:
        return T.conv(x, self.weight, self.bias, self.stride, self.padding, occupied)


class FeedForward(Module):
    """Two-layer MLP with a ReLU in between."""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))
