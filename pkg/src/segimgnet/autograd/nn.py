"""Parameter container and the small layer zoo shared by the U-Net and the encoders."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from ..errors import ConfigurationError
from . import ops
from .tensor import Tensor


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


class Parameter(Tensor):
    """A trainable tensor. Gradient tracking is always on; ``adam_state`` is filled lazily."""

    __slots__ = ("adam_state",)

    def __init__(self, data, dtype=np.float32):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.adam_state: Optional[AdamState] = None


def he_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Module:
    """Base class. Parameters and submodules are discovered from instance attributes,
    in assignment order, and named with dotted paths (``stages.0.blocks.1.dw.weight``)."""

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for key, value in vars(self).items():
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

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise ConfigurationError(
                    f"state dict mismatch: missing {missing[:5]}, unexpected {unexpected[:5]}")
        for name, p in own.items():
            if name not in state:
                continue
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ConfigurationError(f"{name}: checkpoint shape {arr.shape} != parameter shape {p.shape}")
            p.data = np.ascontiguousarray(arr, dtype=p.dtype)

    def astype(self, dtype) -> "Module":
        """Cast every parameter in place (float64 for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, groups: int = 1):
        if in_ch % groups or out_ch % groups:
            raise ConfigurationError(f"Conv2d: channels {in_ch}->{out_ch} not divisible by groups={groups}")
        fan_in = (in_ch // groups) * kernel * kernel
        self.weight = Parameter(he_uniform(rng, (out_ch, in_ch // groups, kernel, kernel), fan_in))
        self.bias = Parameter(np.zeros(out_ch, np.float32))
        self.stride, self.padding, self.groups = stride, padding, groups

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class Dense(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.weight = Parameter(he_uniform(rng, (out_features, in_features), in_features))
        self.bias = Parameter(np.zeros(out_features, np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return ops.dense(x, self.weight, self.bias)


class LayerNorm(Module):
    """Per-position normalization over the channel axis."""

    def __init__(self, channels: int, eps: float = 1e-6):
        self.gain = Parameter(np.ones(channels, np.float32))
        self.offset = Parameter(np.zeros(channels, np.float32))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.channel_layernorm(x, self.gain, self.offset, self.eps)


class GroupNorm(Module):
    """Per-sample normalization over channel groups and all positions."""

    def __init__(self, channels: int, groups: int, eps: float = 1e-5):
        if groups < 1 or channels % groups:
            raise ConfigurationError(f"GroupNorm: {channels} channels are not divisible into {groups} groups")
        self.gain = Parameter(np.ones(channels, np.float32))
        self.offset = Parameter(np.zeros(channels, np.float32))
        self.groups = groups
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.group_norm(x, self.groups, self.gain, self.offset, self.eps)
