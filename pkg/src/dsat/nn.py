"""Layer containers built on the tensor kernel.

Modules register parameters and submodules through attribute assignment,
so ``named_parameters`` yields stable dotted paths such as
``stacks.0.dss.encoder.1.units.0.conv.weight``. Initialization is driven
by those names (see :func:`initialize`), which makes parameter values a
pure function of (seed, name): two models that share a submodule layout
get bit-identical values for the shared parameters regardless of what
else is present.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Parameter, Tensor


@dataclass
class RunContext:
    """Per-call switches threaded through every forward pass.

    The generator is owned by the caller (the training loop), so modules
    themselves stay stateless apart from normalization running stats.
    """

    training: bool = False
    rng: np.random.Generator | None = None
    gate_noise: bool = True
    force_path: str | None = None
    use_dropout: bool = True

    @staticmethod
    def train(rng: np.random.Generator) -> "RunContext":
        return RunContext(training=True, rng=rng)

    @staticmethod
    def eval() -> "RunContext":
        return RunContext(training=False)


class Module:
    """Minimal container with torch-style attribute registration."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "_buffers", {})

    def __setattr__(self, key, value):
        if isinstance(value, Parameter):
            self._params[key] = value
        elif isinstance(value, Module):
            self._modules[key] = value
        object.__setattr__(self, key, value)

    def register_buffer(self, key: str, value: np.ndarray) -> None:
        self._buffers[key] = value
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, p in self._params.items():
            yield (f"{prefix}{key}", p)
        for key, m in self._modules.items():
            yield from m.named_parameters(prefix=f"{prefix}{key}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, b in self._buffers.items():
            yield (f"{prefix}{key}", b)
        for key, m in self._modules.items():
            yield from m.named_buffers(prefix=f"{prefix}{key}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for m in self._modules.values():
            yield from m.modules()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, items=()):
        super().__init__()
        self._items: list[Module] = []
        for item in items:
            self.append(item)

    def append(self, item: Module) -> None:
        setattr(self, str(len(self._items)), item)
        self._items.append(item)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, idx: int) -> Module:
        return self._items[idx]


def _name_digest(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "little")


def initialize(module: Module, seed: int, randomize_zero_init: bool = False) -> None:
    """Fill every parameter from a generator seeded by (seed, name).

    ``randomize_zero_init`` replaces the "zeros"/"ones" rules with small
    random perturbations; gradient checks use it so that residual adapters
    initialized to zero still carry signal through every subgraph.
    """
    seen: set[str] = set()
    for name, p in module.named_parameters():
        if name in seen:
            raise ConfigError(f"duplicate parameter name {name!r}")
        seen.add(name)
        p.name = name
        rng = np.random.default_rng([seed, _name_digest(name)])
        kind = p.init
        if kind == "zeros" and randomize_zero_init:
            p.data[...] = rng.normal(0.0, 0.1, p.shape)
        elif kind == "zeros":
            p.data[...] = 0.0
        elif kind == "ones" and randomize_zero_init:
            p.data[...] = 1.0 + rng.normal(0.0, 0.1, p.shape)
        elif kind == "ones":
            p.data[...] = 1.0
        elif kind == "he":
            std = np.sqrt(2.0 / p.fan_in)
            p.data[...] = rng.normal(0.0, std, p.shape)
        elif kind == "xavier":
            std = np.sqrt(2.0 / (p.fan_in + p.fan_out))
            p.data[...] = rng.normal(0.0, std, p.shape)
        else:
            raise ConfigError(f"unknown init rule {kind!r} for {name}")
    for m in module.modules():
        if isinstance(m, BatchNorm2d):
            m.reset_running_stats()


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel: int, stride: int = 1,
                 padding: int = 0, init: str = "he"):
        super().__init__()
        self.weight = Parameter((cout, cin, kernel, kernel), init=init,
                                fan_in=cin * kernel * kernel,
                                fan_out=cout * kernel * kernel)
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, stride=self.stride, padding=self.padding)


class ConvTranspose2d(Module):
    def __init__(self, cin: int, cout: int, kernel: int, stride: int = 1,
                 padding: int = 0, init: str = "he"):
        super().__init__()
        self.weight = Parameter((cin, cout, kernel, kernel), init=init,
                                fan_in=cin * kernel * kernel,
                                fan_out=cout * kernel * kernel)
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return T.conv_transpose2d(x, self.weight, stride=self.stride, padding=self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter((channels,), init="ones")
        self.beta = Parameter((channels,), init="zeros")
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))
        self.momentum = momentum
        self.eps = eps

    def reset_running_stats(self) -> None:
        self.running_mean[...] = 0.0
        self.running_var[...] = 1.0

    def forward(self, x: Tensor, ctx: RunContext) -> Tensor:
        return T.batch_norm2d(x, self.gamma, self.beta, self.running_mean,
                              self.running_var, training=ctx.training,
                              momentum=self.momentum, eps=self.eps)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter((dim,), init="ones")
        self.beta = Parameter((dim,), init="zeros")
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class Linear(Module):
    """Affine map; accepts (..., in) input via an internal flatten."""

    def __init__(self, cin: int, cout: int, bias: bool = True, init: str = "xavier"):
        super().__init__()
        self.weight = Parameter((cin, cout), init=init, fan_in=cin, fan_out=cout)
        self.bias = Parameter((cout,), init="zeros") if bias else None
        self.cin = cin
        self.cout = cout

    def forward(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        flat = T.reshape(x, (-1, self.cin)) if x.ndim != 2 else x
        out = T.matmul(flat, self.weight)
        if self.bias is not None:
            out = T.add(out, self.bias)
        if x.ndim != 2:
            out = T.reshape(out, lead + (self.cout,))
        return out


class Dropout(Module):
    def __init__(self, rate: float):
        super().__init__()
        self.rate = rate

    def forward(self, x: Tensor, ctx: RunContext) -> Tensor:
        active = ctx.training and ctx.use_dropout
        return T.dropout(x, self.rate, ctx.rng, training=active)


class PreActUnit(Module):
    """BatchNorm -> ReLU -> 3x3 conv, the half-step of a residual block."""

    def __init__(self, channels: int):
        super().__init__()
        self.bn = BatchNorm2d(channels)
        self.conv = Conv2d(channels, channels, 3, padding=1)

    def forward(self, x: Tensor, ctx: RunContext) -> Tensor:
        return self.conv(T.relu(self.bn(x, ctx)))


class ResidualBlock(Module):
    """Pre-activation residual block with a configurable unit count."""

    def __init__(self, channels: int, convs: int = 2):
        super().__init__()
        if convs < 1:
            raise ConfigError("residual block needs at least one conv unit")
        self.units = ModuleList([PreActUnit(channels) for _ in range(convs)])

    def forward(self, x: Tensor, ctx: RunContext) -> Tensor:
        h = x
        for unit in self.units:
            h = unit(h, ctx)
        return T.add(x, h)
