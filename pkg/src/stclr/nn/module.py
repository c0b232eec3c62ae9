"""Layer containers over the autodiff primitives.

Modules own Parameters (and, for batch norm, running-stat buffers), expose
them as flat name -> array maps for checkpointing, and carry the train/eval
flag. Initialization follows the usual conventions for ReLU networks:
conv kernels ~ N(0, 2/fan_in), dense layers ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)),
batch-norm gamma=1 / beta=0.
"""

import numpy as np

from . import ops
from .tensor import Parameter


class Module:
    def __init__(self):
        self.training = True

    def train(self, mode=True):
        self.training = mode
        for child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def children(self):
        for value in self.__dict__.values():
            if isinstance(value, Module):
                yield value
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield item

    def named_parameters(self, prefix=""):
        for key, value in self.__dict__.items():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{path}.")
            elif isinstance(value, (list, tuple)):
                for idx, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{idx}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for key, value in self.__dict__.items():
            path = f"{prefix}{key}"
            if isinstance(value, Module):
                yield from value.named_buffers(f"{path}.")
            elif isinstance(value, (list, tuple)):
                for idx, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{path}.{idx}.")
        for key, value in getattr(self, "_buffers", {}).items():
            yield f"{prefix}{key}", value

    def state_arrays(self):
        """Flat name -> ndarray map of parameters and buffers."""
        arrays = {p_name: p.data for p_name, p in self.named_parameters()}
        arrays.update({b_name: b for b_name, b in self.named_buffers()})
        return arrays

    def load_state_arrays(self, arrays):
        for name, param in self.named_parameters():
            param.data = np.array(arrays[name], dtype=param.dtype)
            param.grad = np.zeros_like(param.data)
        for name, buf in self.named_buffers():
            buf[...] = np.asarray(arrays[name], dtype=buf.dtype)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv3d(Module):
    def __init__(self, in_channels, out_channels, kernel, stride=(1, 1, 1),
                 padding=(0, 0, 0), bias=False, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        kt, kh, kw = kernel
        fan_in = in_channels * kt * kh * kw
        scale = np.sqrt(2.0 / fan_in)
        self.weight = Parameter(
            rng.normal(0.0, scale, size=(out_channels, in_channels, kt, kh, kw)),
            name="weight", dtype=dtype,
        )
        self.bias = Parameter(np.zeros(out_channels), name="bias", dtype=dtype) if bias else None
        self.stride = tuple(stride)
        self.padding = tuple(padding)

    def forward(self, x):
        return ops.conv3d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm3d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.gamma = Parameter(np.ones(channels), name="gamma", dtype=dtype)
        self.beta = Parameter(np.zeros(channels), name="beta", dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self._buffers = {
            "running_mean": np.zeros(channels, dtype=dtype),
            "running_var": np.ones(channels, dtype=dtype),
        }

    @property
    def running_mean(self):
        return self._buffers["running_mean"]

    @property
    def running_var(self):
        return self._buffers["running_var"]

    def forward(self, x):
        return ops.batchnorm3d(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, momentum=self.momentum, eps=self.eps,
        )


class Dense(Module):
    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        bound = 1.0 / np.sqrt(in_features)
        self.weight = Parameter(
            rng.uniform(-bound, bound, size=(out_features, in_features)),
            name="weight", dtype=dtype,
        )
        self.bias = Parameter(
            rng.uniform(-bound, bound, size=out_features), name="bias", dtype=dtype
        )

    def forward(self, x):
        return ops.dense(x, self.weight, self.bias)


class ReLU(Module):
    def forward(self, x):
        return ops.relu(x)


class Sequential(Module):
    def __init__(self, *modules):
        super().__init__()
        self.layers = list(modules)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x
