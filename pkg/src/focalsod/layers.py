"""Parameterized layers: a minimal module system plus the named conv blocks."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator, Optional

import numpy as np

from . import ops
from .tensor import DEFAULT_DTYPE, DimensionError, Tensor


def Parameter(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Module:
    """Container tracking parameters, buffers and child modules by attribute."""

    def __init__(self) -> None:
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, key, value):
        if isinstance(value, Module):
            self._modules[key] = value
        elif isinstance(value, Tensor) and value.requires_grad:
            self._params[key] = value
        object.__setattr__(self, key, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    # traversal ------------------------------------------------------------
    def named_modules(self, prefix: str = "") -> Iterator[tuple]:
        yield prefix, self
        for name, m in self._modules.items():
            yield from m.named_modules(f"{prefix}{name}.")

    def named_parameters(self) -> Iterator[tuple]:
        for prefix, m in self.named_modules():
            for name, p in m._params.items():
                yield prefix + name, p

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self) -> Iterator[tuple]:
        for prefix, m in self.named_modules():
            for name, arr in m.buffers().items():
                yield prefix + name, arr

    def buffers(self) -> dict:
        return {}

    def load_buffer(self, name: str, value: np.ndarray) -> None:
        raise KeyError(name)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    # modes ----------------------------------------------------------------
    def train(self, flag: bool = True) -> "Module":
        for _, m in self.named_modules():
            object.__setattr__(m, "training", flag)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def to(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for _, m in self.named_modules():
            m._cast_buffers(dtype)
        return self

    def _cast_buffers(self, dtype) -> None:
        pass

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((k, p.data) for k, p in self.named_parameters())
        state.update((k, v) for k, v in self.named_buffers())
        return state

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        expected = set(params) | {k for k, _ in self.named_buffers()}
        missing = expected - set(state)
        extra = set(state) - expected
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
        modules = dict(self.named_modules())
        for key, value in state.items():
            if key in params:
                p = params[key]
                if p.shape != value.shape:
                    raise DimensionError(f"parameter {key}: checkpoint shape {value.shape} != model shape {p.shape}")
                p.data = np.array(value, dtype=p.dtype)
            else:
                owner, _, leaf = key.rpartition(".")
                modules[owner + "." if owner else ""].load_buffer(leaf, value)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        for i, m in enumerate(modules):
            setattr(self, str(i), m)

    def __getitem__(self, i: int) -> Module:
        return self._modules[str(i)]

    def __len__(self) -> int:
        return len(self._modules)

    def __iter__(self):
        return iter(self._modules.values())


def kaiming(rng: np.random.Generator, shape: tuple, dtype=DEFAULT_DTYPE) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, padding: Optional[int] = None,
                 bias: bool = True):
        super().__init__()
        self.k = k
        self.padding = k // 2 if padding is None else padding
        self.weight = Parameter(kaiming(rng, (c_out, c_in, k, k)))
        if bias:
            self.bias = Parameter(np.zeros(c_out, dtype=DEFAULT_DTYPE))
        else:
            self.bias = None

    @property
    def c_in(self) -> int:
        return self.weight.shape[1]

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=1, padding=self.padding)


class BatchNorm2d(Module):
    def __init__(self, c: int, eps: float = ops.BN_EPS):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(c, dtype=DEFAULT_DTYPE))
        self.beta = Parameter(np.zeros(c, dtype=DEFAULT_DTYPE))
        self.running = ops.RunningStats(c)

    def forward(self, x: Tensor) -> Tensor:
        return ops.batchnorm(x, self.gamma, self.beta, self.running, "train" if self.training else "eval", self.eps)

    def buffers(self) -> dict:
        return {"running_mean": self.running.mean, "running_var": self.running.var}

    def load_buffer(self, name: str, value: np.ndarray) -> None:
        if name == "running_mean":
            self.running.mean = np.array(value, dtype=self.running.mean.dtype)
        elif name == "running_var":
            self.running.var = np.array(value, dtype=self.running.var.dtype)
        else:
            raise KeyError(name)

    def _cast_buffers(self, dtype) -> None:
        self.running.mean = self.running.mean.astype(dtype)
        self.running.var = self.running.var.astype(dtype)


class BConv(Module):
    """Convolution, batch norm, ReLU -- in that order."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, k: int = 3):
        super().__init__()
        self.conv = Conv2d(c_in, c_out, k, rng)
        self.bn = BatchNorm2d(c_out)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.conv.c_in:
            raise DimensionError(f"BConv expects {self.conv.c_in} channels, got input {x.shape}")
        return ops.relu(self.bn(self.conv(x)))


class Conv3(Module):
    """Two 3x3 convolutions with a ReLU between (no output activation)."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(c_in, c_out, 3, rng)
        self.conv2 = Conv2d(c_out, c_out, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv2(ops.relu(self.conv1(x)))


def ca_hidden_width(c: int, reduction: int = 16, min_hidden: int = 4) -> int:
    return max(c // reduction, min_hidden)


class ChannelAttention(Module):
    """Squeeze-excitation gating: GAP -> FC -> ReLU -> FC -> sigmoid -> scale."""

    def __init__(self, c: int, rng: np.random.Generator, reduction: int = 16):
        super().__init__()
        hidden = ca_hidden_width(c, reduction)
        self.fc1 = Conv2d(c, hidden, 1, rng)
        self.fc2 = Conv2d(hidden, c, 1, rng)

    def gate(self, x: Tensor) -> Tensor:
        return ops.sigmoid(self.fc2(ops.relu(self.fc1(ops.gap(x)))))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.fc1.c_in:
            raise DimensionError(f"channel attention expects {self.fc1.c_in} channels, got {x.shape}")
        return ops.mul(x, self.gate(x))


class Compression(BConv):
    """1x1 BConv mapping backbone width to the unified width."""

    def __init__(self, c_in: int, unified: int, rng: np.random.Generator):
        super().__init__(c_in, unified, rng, k=1)


class PredictionHead(Module):
    """1x1 conv to one channel, sigmoid, bilinear resize to the output size."""

    def __init__(self, c_in: int, rng: np.random.Generator):
        super().__init__()
        self.conv = Conv2d(c_in, 1, 1, rng)

    def forward(self, x: Tensor, out_h: int, out_w: int) -> Tensor:
        return ops.resize_bilinear(ops.sigmoid(self.conv(x)), out_h, out_w)
