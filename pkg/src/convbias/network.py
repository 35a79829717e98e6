"""Sequential network with a named parameter registry and reverse-mode backward."""
from __future__ import annotations

import copy
import math

import numpy as np

from .layers import (BatchNorm, Dropout, Layer, Parameter, NORM_BIAS)


def rng_init(seed, layer, index, dtype=np.float32):
    """Initial weight tensor for ``layer`` (the ``index``-th layer of a network).

    Weights are uniform in ``[-a, a]`` with ``a = sqrt(6 / fan_in)``; batch
    norm layers get a unit scale. The draw depends only on ``(seed, index,
    shape)``.
    """
    if isinstance(layer, BatchNorm):
        return np.ones(layer.num_features, dtype=dtype)
    shape, _ = layer.param_shapes()["weight"]
    a = math.sqrt(6.0 / layer.fan_in())
    rng = np.random.default_rng([int(seed), int(index)])
    return rng.uniform(-a, a, size=shape).astype(dtype)


class Network:
    """Ordered stack of layers operating on batches of ``input_shape`` samples.

    Parameters are registered as ``"<layer name>.<param>"``. Shapes of adjacent
    layers are checked at construction time.
    """

    def __init__(self, layers, input_shape, seed=0, dtype=np.float32):
        self.layers: list[Layer] = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.dtype = np.dtype(dtype)
        self.seed = int(seed)
        self.mode = "train"
        self.params: dict[str, Parameter] = {}
        self._recorded = False

        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("layer names must be unique")
        self.shapes = [self.input_shape]
        for layer in self.layers:
            self.shapes.append(layer.output_shape(self.shapes[-1]))

        for index, layer in enumerate(self.layers):
            for pname, (shape, group) in layer.param_shapes().items():
                if pname in ("weight", "scale"):
                    value = rng_init(self.seed, layer, index, self.dtype)
                else:
                    value = np.zeros(shape, dtype=self.dtype)
                full = f"{layer.name}.{pname}"
                p = Parameter(full, value, np.zeros_like(value), group)
                layer.params[pname] = p
                self.params[full] = p
            if isinstance(layer, BatchNorm):
                layer.init_buffers(self.dtype)
            if isinstance(layer, Dropout):
                layer.rng = np.random.default_rng([self.seed, index, 1])

    # -- modes ------------------------------------------------------------
    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "eval"
        return self

    # -- passes -----------------------------------------------------------
    def forward(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"expected samples of shape {self.input_shape}, "
                             f"got {x.shape[1:]}")
        train = self.mode == "train"
        for layer in self.layers:
            x = layer.forward(x, train)
        self._recorded = True
        return x

    __call__ = forward

    def backward(self, loss_grad, input_grad=False):
        """Populate every ``Parameter.grad`` from the gradient of the output.

        Returns the gradient with respect to the network input when
        ``input_grad`` is set, else ``None``.
        """
        if not self._recorded:
            raise RuntimeError("backward called before forward")
        self._recorded = False
        dy = np.asarray(loss_grad, dtype=self.dtype)
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            need_dx = input_grad or i > 0
            dy = self.layers[i].backward(dy, need_dx=need_dx)
        return dy if input_grad else None

    def zero_grad(self):
        for p in self.params.values():
            p.grad[...] = 0

    # -- registry helpers -------------------------------------------------
    def weights(self):
        """Weight parameters (everything not tagged norm_bias), in layer order."""
        return [p for p in self.params.values() if p.group != NORM_BIAS]

    def layer(self, name):
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def weight_count(self):
        return sum(p.value.size for p in self.weights())

    def buffers(self):
        out = {}
        for layer in self.layers:
            if isinstance(layer, BatchNorm):
                for bname, arr in layer.buffers().items():
                    out[f"{layer.name}.{bname}"] = arr
        return out

    def state_arrays(self):
        """Parameters and running statistics keyed by registered name."""
        out = {name: p.value for name, p in self.params.items()}
        out.update(self.buffers())
        return out

    def load_state_arrays(self, arrays):
        for name, p in self.params.items():
            p.value[...] = arrays[name]
        for name, buf in self.buffers().items():
            buf[...] = arrays[name]

    def dropout_states(self):
        return {layer.name: layer.rng.bit_generator.state
                for layer in self.layers if isinstance(layer, Dropout)}

    def set_dropout_states(self, states):
        for layer in self.layers:
            if isinstance(layer, Dropout) and layer.name in states:
                layer.rng.bit_generator.state = states[layer.name]

    def copy(self):
        return copy.deepcopy(self)
