"""Minimal layer system on top of the tensor engine.

Modules hold parameters (trainable) and buffers (state such as batch-norm
running statistics).  Traversal order is the attribute insertion order, so
parameter naming, checkpoints, and optimizer state are deterministic.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Parameter, ShapeError, Tensor


class Module:
    def __init__(self):
        self._training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    # -- traversal -----------------------------------------------------------

    def _children(self):
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, (Module, Parameter)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Module, Parameter)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = ""):
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            else:
                yield from value.named_parameters(prefix=full + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name, arr in getattr(self, "_buffers", {}).items():
            yield f"{prefix}{name}", arr
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(prefix=f"{prefix}{name}.")

    def register_buffer(self, name: str, arr: np.ndarray) -> None:
        if not hasattr(self, "_buffers"):
            self._buffers = {}
        self._buffers[name] = arr
        setattr(self, "_" + name, arr)

    def train(self, mode: bool = True):
        self._training = mode
        for _, child in self._children():
            if isinstance(child, Module):
                child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    @property
    def training(self) -> bool:
        return self._training

    # -- state ---------------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        """All parameters and buffers as name -> array, in traversal order."""
        state = {name: p.data for name, p in self.named_parameters()}
        for name, arr in self.named_buffers():
            state[name] = arr
        return state

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_arrays()
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise ShapeError(f"state mismatch: missing={missing}, unexpected={unexpected}")
        for name, arr in own.items():
            new = np.asarray(state[name])
            if new.shape != arr.shape:
                raise ShapeError(f"state entry {name}: shape {new.shape} != {arr.shape}")
            arr[...] = new.astype(arr.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())


def _uniform(rng: np.random.Generator, shape, bound: float, dtype) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True, *,
                 rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        bound = 1.0 / math.sqrt(in_features)
        self.weight = Parameter(_uniform(rng, (out_features, in_features), bound, dtype))
        self.bias = Parameter(np.zeros(out_features, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, padding: int = 0, groups: int = 1, bias: bool = True, *,
                 rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.groups = groups
        fan_in = (in_channels // groups) * kernel_size * kernel_size
        bound = 1.0 / math.sqrt(fan_in)
        self.weight = Parameter(_uniform(
            rng, (out_channels, in_channels // groups, kernel_size, kernel_size), bound, dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = T.conv2d(x, self.weight, stride=self.stride, padding=self.padding, groups=self.groups)
        if self.bias is not None:
            y = y + self.bias.reshape(1, -1, 1, 1)
        return y


class ConvTranspose2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, stride: int = 1,
                 bias: bool = True, *, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.stride = stride
        fan_in = in_channels * kernel_size * kernel_size
        bound = 1.0 / math.sqrt(fan_in)
        self.weight = Parameter(_uniform(
            rng, (in_channels, out_channels, kernel_size, kernel_size), bound, dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = T.transposed_conv2d(x, self.weight, stride=self.stride)
        if self.bias is not None:
            y = y + self.bias.reshape(1, -1, 1, 1)
        return y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, *, dtype=np.float64):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(dim, dtype=dtype))
        self.beta = Parameter(np.zeros(dim, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class BatchNorm2d(Module):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1, *, dtype=np.float64):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return T.batch_norm(x, self.gamma, self.beta,
                            running_mean=self._running_mean, running_var=self._running_var,
                            training=self._training, momentum=self.momentum, eps=self.eps)
