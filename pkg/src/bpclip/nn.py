"""Minimal layer/module system on top of the autograd engine.

Modules register parameters (trainable Tensors) and buffers (plain numpy
arrays, e.g. normalization statistics) under dotted names; the flat
name -> array view is what checkpoints and the tensor archive store.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigurationError


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray):
        self._buffers[name] = np.asarray(value)
        object.__setattr__(self, name, self._buffers[name])

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, child in self._children.items():
            yield from child.named_buffers(prefix + name + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def state_dict(self) -> dict:
        out = {name: p.data for name, p in self.named_parameters()}
        out.update({name: b for name, b in self.named_buffers()})
        return out

    def load_state_dict(self, state: dict, strict: bool = True, cast: bool = False):
        """Copy arrays from `state` into this module's parameters/buffers."""
        own = self.state_dict()
        missing = [k for k in own if k not in state]
        if missing and strict:
            raise ConfigurationError(f"missing tensors: {sorted(missing)[:5]}{'...' if len(missing) > 5 else ''}")
        unexpected = [k for k in state if k not in own]
        if unexpected and strict:
            raise ConfigurationError(f"unexpected tensors: {sorted(unexpected)[:5]}{'...' if len(unexpected) > 5 else ''}")
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        for name, arr in state.items():
            if name not in own:
                continue
            target = params[name].data if name in params else buffers[name]
            arr = np.asarray(arr)
            if arr.shape != target.shape:
                raise ConfigurationError(f"shape mismatch for {name}: archive {arr.shape}, model {target.shape}")
            if arr.dtype != target.dtype:
                if not cast:
                    raise ConfigurationError(f"dtype mismatch for {name}: archive {arr.dtype}, model {target.dtype}")
                arr = arr.astype(target.dtype)
            target[...] = arr

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def freeze(self, predicate):
        """Set requires_grad=False on every parameter whose name matches."""
        frozen = []
        for name, p in self.named_parameters():
            if predicate(name):
                p.requires_grad = False
                frozen.append(name)
        return frozen


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._list = []
        for m in modules:
            self.append(m)

    def append(self, module: Module):
        self._children[str(len(self._list))] = module
        self._list.append(module)

    def __iter__(self):
        return iter(self._list)

    def __len__(self):
        return len(self._list)

    def __getitem__(self, idx):
        return self._list[idx]


def parameter(rng: np.random.Generator, shape, scale: float, dtype) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape).astype(dtype), requires_grad=True)


class Linear(Module):
    """Affine map x @ W + b with W shaped (in_features, out_features)."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 dtype=np.float32, bias: bool = True):
        super().__init__()
        bound = 1.0 / np.sqrt(in_features)
        self.weight = Tensor(
            rng.uniform(-bound, bound, size=(in_features, out_features)).astype(dtype),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = ag.matmul(x, self.weight)
        if self.bias is not None:
            out = ag.add(out, self.bias)
        return out


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0,
                 dtype=np.float32, bias: bool = True):
        super().__init__()
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = parameter(rng, (out_channels, in_channels, kernel_size, kernel_size),
                                np.sqrt(2.0 / fan_in), dtype)
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ag.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm2d(Module):
    """Channel normalization with stored running statistics.

    Statistics are plain buffers and are never updated by the trainer (the
    training recipe freezes them; the affine weight/bias stay trainable
    until set_norm_frozen marks them too).
    """

    EPS = 1e-5

    def __init__(self, channels: int, dtype=np.float32):
        super().__init__()
        self.weight = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        shape = (1, -1, 1, 1)
        scale = (self.weight.data.dtype.type(1.0)
                 / np.sqrt(self.running_var + self.EPS)).reshape(shape)
        mean = self.running_mean.reshape(shape)
        w = ag.reshape(self.weight, shape)
        b = ag.reshape(self.bias, shape)
        normed = ag.mul(ag.sub(x, Tensor(mean)), Tensor(scale))
        return ag.add(ag.mul(normed, w), b)


class Mlp(Module):
    """Two-layer perceptron with a GELU hidden activation."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        self.fc1 = Linear(d_in, d_hidden, rng, dtype)
        self.fc2 = Linear(d_hidden, d_out, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ag.gelu(self.fc1(x)))


class LayerNorm(Module):
    """Last-axis layer normalization (optional wrapper around attention)."""

    EPS = 1e-5

    def __init__(self, dim: int, dtype=np.float32):
        super().__init__()
        self.weight = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        mu = ag.mean(x, axis=-1, keepdims=True)
        centered = ag.sub(x, mu)
        var = ag.mean(ag.mul(centered, centered), axis=-1, keepdims=True)
        normed = ag.div(centered, ag.sqrt(ag.add(var, self.EPS)))
        return ag.add(ag.mul(normed, self.weight), self.bias)
