"""Shared oracles for the test suite: naive loops and finite differences."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

MNIST_DIR = Path(os.environ.get("MNIST_DIR", "/root/data/mnist"))


def have_mnist():
    return (MNIST_DIR / "train-images-idx3-ubyte").exists() or \
        (MNIST_DIR / "train-images-idx3-ubyte.gz").exists()


def naive_fc(x, W, b):
    N, I = x.shape
    O = W.shape[0]
    y = np.zeros((N, O))
    for n in range(N):
        for o in range(O):
            acc = b[o]
            for i in range(I):
                acc += W[o, i] * x[n, i]
            y[n, o] = acc
    return y


def naive_conv(x, K, b, stride, pad, local=False):
    """Direct summation. ``local`` kernels are indexed ``[c, i, j, d, u, v]``."""
    N, Cin, H, W = x.shape
    Cout = K.shape[0]
    k = K.shape[-1]
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    y = np.zeros((N, Cout, Ho, Wo))
    for n in range(N):
        for c in range(Cout):
            for i in range(Ho):
                for j in range(Wo):
                    acc = b[c, i, j] if local else b[c]
                    for d in range(Cin):
                        for u in range(k):
                            for v in range(k):
                                r, s = i * stride + u - pad, j * stride + v - pad
                                if 0 <= r < H and 0 <= s < W:
                                    w = K[c, i, j, d, u, v] if local else K[c, d, u, v]
                                    acc += w * x[n, d, r, s]
                    y[n, c, i, j] = acc
    return y


def fd_grad(f, x, idx_list, step=1e-5):
    """Central differences of scalar ``f`` at entries ``idx_list`` of ``x`` (in place).

    The perturbation is ``step * (1 + |x|)``.
    """
    out = []
    for idx in idx_list:
        h = step * (1 + abs(x[idx]))
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        out.append((fp - fm) / (2 * h))
    return np.array(out)


def rel_err(a, b, floor=1e-4):
    """Max of ``|a - b| / max(|a|, |b|)``.

    Gradients smaller than ``floor`` (e.g. a bias feeding batch norm, whose
    exact gradient is zero) are compared absolutely, scaled by ``floor``.
    """
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.max(np.abs(a - b) / np.maximum(floor, np.maximum(np.abs(a), np.abs(b))))


def sample_indices(shape, count, rng):
    size = int(np.prod(shape))
    flat = rng.choice(size, size=min(count, size), replace=False)
    return [np.unravel_index(i, shape) for i in flat]


def network_loss(net, x, labels, dropout_states=None):
    from convbias.functional import softmax_xent
    if dropout_states is not None:
        net.set_dropout_states(dropout_states)
    return softmax_xent(net.forward(x), labels)


def check_network_grads(net, x, labels, per_param=12, seed=0, step=1e-5):
    """Max relative error between backprop and central differences.

    Covers a sample of entries from every parameter and from the input.
    Dropout masks are frozen by restoring the generator state before each
    forward pass.
    """
    rng = np.random.default_rng(seed)
    states = net.dropout_states()
    loss, grad = network_loss(net, x, labels, states)
    net.zero_grad()
    dx = net.backward(grad, input_grad=True)
    analytic = {name: p.grad.copy() for name, p in net.params.items()}
    worst = {}

    def f():
        return network_loss(net, x, labels, states)[0]

    for name, p in net.params.items():
        idx = sample_indices(p.value.shape, per_param, rng)
        num = fd_grad(f, p.value, idx, step)
        worst[name] = rel_err(num, [analytic[name][i] for i in idx])
    idx = sample_indices(x.shape, per_param, rng)
    worst["<input>"] = rel_err(fd_grad(f, x, idx, step), [dx[i] for i in idx])
    return worst
