"""Layer objects with cached forward state and explicit backward passes.

A layer is constructed from hyperparameters only; its parameter arrays are
allocated and registered by :class:`convbias.network.Network`. Per-sample
shapes exclude the batch axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F

CONV_LIKE = "conv_like"
FC_LIKE = "fc_like"
NORM_BIAS = "norm_bias"
GROUPS = (CONV_LIKE, FC_LIKE, NORM_BIAS)


@dataclass
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray
    group: str

    def __post_init__(self):
        if self.group not in GROUPS:
            raise ValueError(f"unknown parameter group {self.group!r}")
        if self.grad.shape != self.value.shape:
            raise ValueError(f"{self.name}: grad shape {self.grad.shape} "
                             f"!= value shape {self.value.shape}")

    @property
    def is_weight(self):
        return self.group != NORM_BIAS


class Layer:
    kind = "layer"

    def __init__(self, name):
        self.name = name
        self.params: dict[str, Parameter] = {}
        self._cache = None

    def param_shapes(self) -> dict[str, tuple[tuple[int, ...], str]]:
        """Map of local parameter name to ``(shape, group)``."""
        return {}

    def fan_in(self) -> int:
        raise TypeError(f"{self.kind} layer has no weights")

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x, train):
        raise NotImplementedError

    def backward(self, dy, need_dx=True):
        raise NotImplementedError

    def _require_cache(self):
        if self._cache is None:
            raise RuntimeError(f"backward called on {self.name!r} before forward")
        cache, self._cache = self._cache, None
        return cache

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class Dense(Layer):
    kind = "FC"

    def __init__(self, in_features, out_features, name, group=FC_LIKE,
                 canonical_sum=False):
        super().__init__(name)
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        self.group = group
        # value-sorted reductions: bit-identical under input relabeling
        self.canonical_sum = canonical_sum

    def param_shapes(self):
        return {"weight": ((self.out_features, self.in_features), self.group),
                "bias": ((self.out_features,), NORM_BIAS)}

    def fan_in(self):
        return self.in_features

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.in_features,):
            raise ValueError(f"{self.name}: expects ({self.in_features},) input, "
                             f"got {tuple(in_shape)}")
        return (self.out_features,)

    def forward(self, x, train):
        W, b = self.params["weight"].value, self.params["bias"].value
        self._cache = x
        if self.canonical_sum:
            return F.fc_forward_canonical(x, W, b)
        return F.fc_forward(x, W, b)

    def backward(self, dy, need_dx=True):
        x = self._require_cache()
        W = self.params["weight"].value
        fn = F.fc_backward_canonical if self.canonical_sum else F.fc_backward
        dx, dW, db = fn(dy, x, W, need_dx)
        self.params["weight"].grad[...] = dW
        self.params["bias"].grad[...] = db
        return dx


class Conv2D(Layer):
    kind = "Conv2D"

    def __init__(self, in_channels, out_channels, kernel, stride, pad, name,
                 group=CONV_LIKE):
        super().__init__(name)
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel, self.stride, self.pad = int(kernel), int(stride), int(pad)
        self.group = group
        if self.kernel < 1 or self.stride < 1 or self.pad < 0:
            raise ValueError(f"{name}: invalid geometry")

    def param_shapes(self):
        k = self.kernel
        return {"weight": ((self.out_channels, self.in_channels, k, k), self.group),
                "bias": ((self.out_channels,), NORM_BIAS)}

    def fan_in(self):
        return self.in_channels * self.kernel ** 2

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise ValueError(f"{self.name}: expects ({self.in_channels}, H, W) input, "
                             f"got {tuple(in_shape)}")
        _, H, W = in_shape
        return (self.out_channels,
                F.output_size(H, self.kernel, self.stride, self.pad),
                F.output_size(W, self.kernel, self.stride, self.pad))

    def forward(self, x, train):
        K, b = self.params["weight"].value, self.params["bias"].value
        y, cols = F.conv2d_forward(x, K, b, self.stride, self.pad, return_cols=True)
        self._cache = (x, cols)
        return y

    def backward(self, dy, need_dx=True):
        x, cols = self._require_cache()
        dx, dK, db = F.conv2d_backward(dy, x, self.params["weight"].value,
                                       self.stride, self.pad, cols, need_dx)
        self.params["weight"].grad[...] = dK
        self.params["bias"].grad[...] = db
        return dx


class Local2D(Layer):
    """Convolution geometry with an independent kernel at every output location."""

    kind = "Local2D"

    def __init__(self, in_channels, out_channels, in_size, kernel, stride, pad,
                 name, group=CONV_LIKE):
        super().__init__(name)
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.in_size = int(in_size)
        self.kernel, self.stride, self.pad = int(kernel), int(stride), int(pad)
        self.group = group
        self.out_size = F.output_size(self.in_size, self.kernel, self.stride, self.pad)

    def param_shapes(self):
        k, o = self.kernel, self.out_size
        return {"weight": ((self.out_channels, o, o, self.in_channels, k, k), self.group),
                "bias": ((self.out_channels, o, o), NORM_BIAS)}

    def fan_in(self):
        return self.in_channels * self.kernel ** 2

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.in_channels, self.in_size, self.in_size):
            raise ValueError(
                f"{self.name}: expects {(self.in_channels, self.in_size, self.in_size)} "
                f"input, got {tuple(in_shape)}")
        return (self.out_channels, self.out_size, self.out_size)

    def forward(self, x, train):
        K, b = self.params["weight"].value, self.params["bias"].value
        y, cols = F.local2d_forward(x, K, b, self.stride, self.pad, return_cols=True)
        self._cache = (x, cols)
        return y

    def backward(self, dy, need_dx=True):
        x, cols = self._require_cache()
        dx, dK, db = F.local2d_backward(dy, x, self.params["weight"].value,
                                        self.stride, self.pad, cols, need_dx)
        self.params["weight"].grad[...] = dK
        self.params["bias"].grad[...] = db
        return dx


class BatchNorm(Layer):
    kind = "BatchNorm"

    def __init__(self, num_features, name, eps=1e-5, momentum=0.1):
        super().__init__(name)
        self.num_features = int(num_features)
        self.eps = eps
        self.momentum = momentum
        self.running_mean = None
        self.running_var = None

    def param_shapes(self):
        return {"scale": ((self.num_features,), NORM_BIAS),
                "shift": ((self.num_features,), NORM_BIAS)}

    def init_buffers(self, dtype):
        self.running_mean = np.zeros(self.num_features, dtype=dtype)
        self.running_var = np.ones(self.num_features, dtype=dtype)

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def output_shape(self, in_shape):
        if len(in_shape) not in (1, 3) or in_shape[0] != self.num_features:
            raise ValueError(f"{self.name}: expects {self.num_features} channels, "
                             f"got input {tuple(in_shape)}")
        return tuple(in_shape)

    def forward(self, x, train):
        y, cache = F.batchnorm_forward(
            x, self.params["scale"].value, self.params["shift"].value,
            self.running_mean, self.running_var, self.eps, self.momentum, train)
        self._cache = cache
        return y

    def backward(self, dy, need_dx=True):
        cache = self._require_cache()
        dx, dscale, dshift = F.batchnorm_backward(dy, self.params["scale"].value, cache)
        self.params["scale"].grad[...] = dscale
        self.params["shift"].grad[...] = dshift
        return dx


class ReLU(Layer):
    kind = "ReLU"

    def forward(self, x, train):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, dy, need_dx=True):
        return dy * self._require_cache()


class Dropout(Layer):
    """Inverted dropout; identity in eval mode."""

    kind = "Dropout"

    def __init__(self, rate, name):
        super().__init__(name)
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = np.random.default_rng(0)

    def forward(self, x, train):
        if not train or self.rate == 0.0:
            self._cache = 1
            return x
        keep = self.rng.random(x.shape) >= self.rate
        mask = keep.astype(x.dtype) / x.dtype.type(1.0 - self.rate)
        self._cache = mask
        return x * mask

    def backward(self, dy, need_dx=True):
        return dy * self._require_cache()


class Flatten(Layer):
    kind = "Flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy, need_dx=True):
        return dy.reshape(self._require_cache())
