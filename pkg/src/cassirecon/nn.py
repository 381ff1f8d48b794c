"""Parameter containers and the handful of layers the models are built from."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import DEFAULT_DTYPE, Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(np.array(data, dtype=DEFAULT_DTYPE), requires_grad=True, name=name)


class Module:
    """Registers parameters and submodules in assignment order, torch style."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())

    def __setattr__(self, key, value):
        if isinstance(value, Parameter):
            self._params[key] = value
        elif isinstance(value, Module):
            self._modules[key] = value
        object.__setattr__(self, key, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())

    def load_state_dict(self, state, strict: bool = True):
        own = dict(self.named_parameters())
        if strict:
            missing = set(own) - set(state)
            extra = set(state) - set(own)
            if missing or extra:
                raise KeyError(f"state mismatch: missing={sorted(missing)[:5]} unexpected={sorted(extra)[:5]}")
        for name, value in state.items():
            if name not in own:
                continue
            p = own[name]
            value = np.asarray(value)
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
            p.data = value.astype(p.dtype, copy=True)

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def zero_(self, predicate=None):
        """Zero every parameter (or those whose name satisfies ``predicate``)."""
        for name, p in self.named_parameters():
            if predicate is None or predicate(name):
                p.data[...] = 0.0
        return self


class ModuleList(Module):
    def __init__(self, modules=(), prefix="", start=0):
        super().__init__()
        self._items = []
        self._prefix = prefix
        self._start = start
        for m in modules:
            self.append(m)

    def append(self, m: Module):
        self._modules[f"{self._prefix}{self._start + len(self._items)}"] = m
        self._items.append(m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Conv2d(Module):
    def __init__(self, cin, cout, kernel=1, stride=1, padding=None, groups=1, bias=True, rng=None, zero=False):
        super().__init__()
        if cin % groups or cout % groups:
            raise ValueError(f"Conv2d: channels {cin}->{cout} not divisible by groups={groups}")
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        self.stride = stride
        self.padding = (kh // 2, kw // 2) if padding is None else padding
        self.groups = groups
        fan_in = (cin // groups) * kh * kw
        shape = (cout, cin // groups, kh, kw)
        if zero:
            w = np.zeros(shape)
            b = np.zeros(cout)
        else:
            rng = rng if rng is not None else np.random.default_rng(0)
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=shape)
            b = rng.uniform(-bound, bound, size=cout)
        self.weight = Parameter(w)
        if bias:
            self.bias = Parameter(b)
        else:
            self.bias = None

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


def dwconv(channels, kernel=3, rng=None, zero=False) -> Conv2d:
    return Conv2d(channels, channels, kernel, groups=channels, rng=rng, zero=zero)


class ChannelLayerNorm(Module):
    """Layer norm across the channel axis of an ``(N, C, H, W)`` map."""

    def __init__(self, channels, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))

    def forward(self, x):
        return F.layer_norm(x, self.weight, self.bias, self.eps, axis=1)
