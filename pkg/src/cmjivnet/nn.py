"""Small neural-network layer library on top of the autodiff primitives.

Modules hold parameters (tensors with requires_grad=True) and buffers
(plain tensors, e.g. batch-norm running statistics) as attributes.
``named_parameters`` / ``named_buffers`` walk the attribute tree, so state
dicts use dotted names like ``fc_encoder.conv1.w``.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def zeros_param(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Module:
    """Base class providing parameter/buffer discovery and train/eval mode."""

    def __init__(self):
        self.training = True

    def _walk(self, prefix: str, want_grad: bool):
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad == want_grad:
                    yield key, value
            elif isinstance(value, Module):
                yield from value._walk(f"{key}.", want_grad)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item._walk(f"{key}.{i}.", want_grad)
                    elif isinstance(item, Tensor) and item.requires_grad == want_grad:
                        yield f"{key}.{i}", item

    def named_parameters(self) -> dict:
        return dict(self._walk("", True))

    def named_buffers(self) -> dict:
        return dict(self._walk("", False))

    def state_dict(self) -> dict:
        out = {k: v.data for k, v in self.named_parameters().items()}
        out.update({k: v.data for k, v in self.named_buffers().items()})
        return out

    def load_state_dict(self, state: dict) -> None:
        slots = {**self.named_parameters(), **self.named_buffers()}
        missing = set(slots) - set(state)
        extra = set(state) - set(slots)
        if missing or extra:
            raise KeyError(f"state dict mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, t in slots.items():
            arr = np.asarray(state[name])
            if arr.shape != t.data.shape:
                raise ValueError(f"{name}: shape {arr.shape} != expected {t.data.shape}")
            t.data = arr.astype(t.data.dtype, copy=True)

    def train(self) -> "Module":
        self.training = True
        for value in vars(self).values():
            if isinstance(value, Module):
                value.train()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        item.train()
        return self

    def eval(self) -> "Module":
        self.training = False
        for value in vars(self).values():
            if isinstance(value, Module):
                value.eval()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        item.eval()
        return self

    def astype(self, dtype) -> "Module":
        for t in (*self.named_parameters().values(), *self.named_buffers().values()):
            t.data = t.data.astype(dtype)
        return self


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        super().__init__()
        self.w = fan_in_uniform(rng, (d_in, d_out), d_in)
        self.b = zeros_param((d_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.affine(x, self.w, self.b)


class Conv2d(Module):
    """3x3 stride-1 same-padding convolution unless configured otherwise."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator,
                 kernel: int = 3, stride: int = 1, padding: int = 1):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.w = fan_in_uniform(rng, (c_out, c_in, kernel, kernel), c_in * kernel * kernel)
        self.b = zeros_param((c_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class ConvTranspose2d(Module):
    """Kernel-4 stride-2 padding-1 upsampling convolution (doubles H and W)."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator,
                 kernel: int = 4, stride: int = 2, padding: int = 1):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.w = fan_in_uniform(rng, (c_in, c_out, kernel, kernel), c_in * kernel * kernel)
        self.b = zeros_param((c_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv_transpose2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class BatchNorm2d(Module):
    """Per-channel batch normalization with running statistics.

    Training mode normalizes by batch moments (biased variance) and updates
    running stats with momentum 0.1; eval mode uses the running stats.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        self.beta = zeros_param((channels,))
        self.running_mean = Tensor(np.zeros(channels, dtype=np.float32))
        self.running_var = Tensor(np.ones(channels, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        c = x.shape[1]
        axes = (0, 2, 3)
        if self.training:
            mu = ad.mean(x, axis=axes, keepdims=True)
            centered = ad.sub(x, mu)
            var = ad.mean(ad.square(centered), axis=axes, keepdims=True)
            m = self.momentum
            self.running_mean.data = ((1 - m) * self.running_mean.data
                                      + m * mu.data.reshape(c)).astype(self.running_mean.dtype)
            self.running_var.data = ((1 - m) * self.running_var.data
                                     + m * var.data.reshape(c)).astype(self.running_var.dtype)
            inv = ad.power(ad.add(var, self.eps), -0.5)
            xhat = ad.mul(centered, inv)
        else:
            mu = self.running_mean.data.reshape(1, c, 1, 1)
            inv = 1.0 / np.sqrt(self.running_var.data.reshape(1, c, 1, 1) + self.eps)
            xhat = ad.mul(ad.sub(x, Tensor(mu.astype(x.dtype))), Tensor(inv.astype(x.dtype)))
        g = ad.reshape(self.gamma, (1, c, 1, 1))
        b = ad.reshape(self.beta, (1, c, 1, 1))
        return ad.add(ad.mul(xhat, g), b)


class Sequential(Module):
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


class Relu(Module):
    def __call__(self, x: Tensor) -> Tensor:
        return ad.relu(x)
