"""Stateless forward/backward kernels on numpy arrays.

Layouts follow the usual NCHW convention. Convolution kernels are
``[Cout, Cin, k, k]``; locally-connected kernels carry one kernel per output
location, ``[Cout, H', W', Cin, k, k]``. Convolution is cross-correlation
(no kernel flip).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32


def tensor_fill(shape, value, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Return a new array of ``shape`` with every element equal to ``value``."""
    shape = tuple(int(d) for d in shape)
    if len(shape) == 0:
        raise ValueError("shape must have at least one dimension")
    if any(d < 1 for d in shape):
        raise ValueError(f"all dimensions must be >= 1, got {shape}")
    return np.full(shape, value, dtype=dtype)


def output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    if kernel < 1 or stride < 1 or pad < 0:
        raise ValueError(f"invalid geometry kernel={kernel} stride={stride} pad={pad}")
    span = size + 2 * pad - kernel
    if span < 0:
        raise ValueError(
            f"kernel {kernel} does not fit input {size} with padding {pad}")
    return span // stride + 1


# ---------------------------------------------------------------------------
# fully connected
# ---------------------------------------------------------------------------

def fc_forward(x, W, b):
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ValueError(f"fc shape mismatch: x{x.shape} W{W.shape}")
    if b.shape != (W.shape[0],):
        raise ValueError(f"bias shape {b.shape} does not match W{W.shape}")
    return x @ W.T + b


def fc_backward(dy, x, W, need_dx=True):
    dW = dy.T @ x
    db = dy.sum(axis=0)
    dx = dy @ W if need_dx else None
    return dx, dW, db


def fc_forward_canonical(x, W, b, chunk=16):
    """Dense forward whose per-output reduction order is input-order free.

    The products of each dot product are sorted by value before summation,
    so relabeling input features (and the matching weight columns) leaves
    every output bit-identical. Much slower than the BLAS path.
    """
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ValueError(f"fc shape mismatch: x{x.shape} W{W.shape}")
    dtype = np.result_type(x, W)
    out = np.empty((x.shape[0], W.shape[0]), dtype=dtype)
    # numpy's reduction order depends on memory layout, so always reduce
    # over a fresh C-ordered buffer
    buf = np.empty((min(chunk, x.shape[0]), W.shape[0], W.shape[1]), dtype=dtype)
    for start in range(0, x.shape[0], chunk):
        xs = x[start:start + chunk]
        prods = buf[:len(xs)]
        np.multiply(xs[:, None, :], W[None, :, :], out=prods)
        prods.sort(axis=-1)
        out[start:start + chunk] = prods.sum(axis=-1)
    return out + b


def fc_backward_canonical(dy, x, W, need_dx=True):
    """Weight gradient accumulated sample by sample (elementwise, fixed order)."""
    dW = np.zeros(W.shape, dtype=W.dtype)
    for n in range(x.shape[0]):
        dW += np.multiply.outer(dy[n], x[n])
    db = dy.sum(axis=0)
    dx = dy @ W if need_dx else None
    return dx, dW, db


# ---------------------------------------------------------------------------
# sliding-window helpers
# ---------------------------------------------------------------------------

def _pad(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _windows(x, kernel, stride, pad):
    """View of shape [N, C, H', W', k, k] over the zero-padded input."""
    _, _, H, W = x.shape
    Ho = output_size(H, kernel, stride, pad)
    Wo = output_size(W, kernel, stride, pad)
    xp = _pad(x, pad)
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    return win[:, :, ::stride, ::stride][:, :, :Ho, :Wo]


def _fold(dwin, in_shape, stride, pad):
    """Adjoint of ``_windows``: scatter-add window gradients back to the input."""
    N, C, H, W = in_shape
    _, _, Ho, Wo, k, _ = dwin.shape
    dxp = np.zeros((N, C, H + 2 * pad, W + 2 * pad), dtype=dwin.dtype)
    for u in range(k):
        for v in range(k):
            dxp[:, :, u:u + stride * (Ho - 1) + 1:stride,
                v:v + stride * (Wo - 1) + 1:stride] += dwin[:, :, :, :, u, v]
    if pad:
        dxp = dxp[:, :, pad:pad + H, pad:pad + W]
    return dxp


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _check_conv(x, K, b):
    if x.ndim != 4 or K.ndim != 4:
        raise ValueError(f"conv expects 4-d input and kernel, got x{x.shape} K{K.shape}")
    if K.shape[1] != x.shape[1]:
        raise ValueError(f"kernel expects {K.shape[1]} input channels, got {x.shape[1]}")
    if K.shape[2] != K.shape[3]:
        raise ValueError("only square kernels are supported")
    if b.shape != (K.shape[0],):
        raise ValueError(f"bias shape {b.shape} does not match {K.shape[0]} channels")


def conv2d_forward(x, K, b, stride=1, pad=0, return_cols=False):
    _check_conv(x, K, b)
    N, C = x.shape[:2]
    Cout, _, k, _ = K.shape
    win = _windows(x, k, stride, pad)
    Ho, Wo = win.shape[2:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * Ho * Wo, C * k * k)
    y = cols @ K.reshape(Cout, -1).T + b
    y = y.reshape(N, Ho, Wo, Cout).transpose(0, 3, 1, 2)
    y = np.ascontiguousarray(y)
    return (y, cols) if return_cols else y


def conv2d_backward(dy, x, K, stride=1, pad=0, cols=None, need_dx=True):
    N, C = x.shape[:2]
    Cout, _, k, _ = K.shape
    Ho, Wo = dy.shape[2:]
    if cols is None:
        cols = _windows(x, k, stride, pad).transpose(0, 2, 3, 1, 4, 5).reshape(
            N * Ho * Wo, C * k * k)
    dy_mat = dy.transpose(0, 2, 3, 1).reshape(-1, Cout)
    dK = (dy_mat.T @ cols).reshape(K.shape)
    db = dy.sum(axis=(0, 2, 3))
    dx = None
    if need_dx:
        dcols = (dy_mat @ K.reshape(Cout, -1)).reshape(N, Ho, Wo, C, k, k)
        dx = _fold(dcols.transpose(0, 3, 1, 2, 4, 5), x.shape, stride, pad)
    return dx, dK, db


# ---------------------------------------------------------------------------
# locally connected
# ---------------------------------------------------------------------------

def _check_local(x, K, b):
    if x.ndim != 4 or K.ndim != 6:
        raise ValueError(f"local2d expects x[N,C,H,W] and K[Cout,H',W',Cin,k,k], "
                         f"got x{x.shape} K{K.shape}")
    if K.shape[3] != x.shape[1]:
        raise ValueError(f"kernel expects {K.shape[3]} input channels, got {x.shape[1]}")
    if K.shape[4] != K.shape[5]:
        raise ValueError("only square kernels are supported")
    if b.shape != K.shape[:3]:
        raise ValueError(f"bias shape {b.shape} does not match {K.shape[:3]}")


def local2d_forward(x, K, b, stride=1, pad=0, return_cols=False):
    _check_local(x, K, b)
    N, C = x.shape[:2]
    Cout, Ho, Wo, _, k, _ = K.shape
    win = _windows(x, k, stride, pad)
    if win.shape[2:4] != (Ho, Wo):
        raise ValueError(f"kernel grid {(Ho, Wo)} does not match output grid {win.shape[2:4]}")
    P, F = Ho * Wo, C * k * k
    cols = win.transpose(2, 3, 0, 1, 4, 5).reshape(P, N, F)
    Kp = K.transpose(1, 2, 3, 4, 5, 0).reshape(P, F, Cout)
    y = np.matmul(cols, Kp).reshape(Ho, Wo, N, Cout).transpose(2, 3, 0, 1) + b
    y = np.ascontiguousarray(y)
    return (y, cols) if return_cols else y


def local2d_backward(dy, x, K, stride=1, pad=0, cols=None, need_dx=True):
    N, C = x.shape[:2]
    Cout, Ho, Wo, _, k, _ = K.shape
    P, F = Ho * Wo, C * k * k
    if cols is None:
        cols = _windows(x, k, stride, pad).transpose(2, 3, 0, 1, 4, 5).reshape(P, N, F)
    dyp = dy.transpose(2, 3, 0, 1).reshape(P, N, Cout)
    dKp = np.matmul(cols.transpose(0, 2, 1), dyp)
    dK = dKp.reshape(Ho, Wo, C, k, k, Cout).transpose(5, 0, 1, 2, 3, 4)
    db = dy.sum(axis=0)
    dx = None
    if need_dx:
        Kp = K.transpose(1, 2, 3, 4, 5, 0).reshape(P, F, Cout)
        dcols = np.matmul(dyp, Kp.transpose(0, 2, 1)).reshape(Ho, Wo, N, C, k, k)
        dx = _fold(dcols.transpose(2, 3, 0, 1, 4, 5), x.shape, stride, pad)
    return dx, np.ascontiguousarray(dK), db


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

def _bn_axes(x):
    if x.ndim == 2:
        return (0,), (1, -1)
    if x.ndim == 4:
        return (0, 2, 3), (1, -1, 1, 1)
    raise ValueError(f"batchnorm expects 2-d or 4-d input, got {x.ndim}-d")


def batchnorm_forward(x, scale, shift, running_mean, running_var,
                      eps=1e-5, momentum=0.1, train=True):
    """Normalize over every axis but the channel axis (axis 1).

    In train mode the running statistics are updated in place:
    ``running = (1 - momentum) * running + momentum * batch``; the variance
    is the biased batch variance. Returns ``(y, cache)``.
    """
    if x.shape[0] == 0:
        raise ValueError("batchnorm needs a non-empty batch")
    axes, bshape = _bn_axes(x)
    if train:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
    y = xhat * scale.reshape(bshape) + shift.reshape(bshape)
    return y.astype(x.dtype, copy=False), (xhat, inv_std, train)


def batchnorm_backward(dy, scale, cache):
    xhat, inv_std, train = cache
    axes, bshape = _bn_axes(dy)
    dshift = dy.sum(axis=axes)
    dscale = (dy * xhat).sum(axis=axes)
    dxhat = dy * scale.reshape(bshape)
    if train:
        dx = (dxhat - dxhat.mean(axis=axes).reshape(bshape)
              - xhat * (dxhat * xhat).mean(axis=axes).reshape(bshape))
        dx = dx * inv_std.reshape(bshape)
    else:
        dx = dxhat * inv_std.reshape(bshape)
    return dx.astype(dy.dtype, copy=False), dscale, dshift


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def softmax_xent(logits, labels):
    """Mean softmax cross-entropy and its gradient with respect to ``logits``."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ValueError(f"logits must be [N, c], got {logits.shape}")
    N, c = logits.shape
    if labels.shape != (N,):
        raise ValueError(f"expected {N} labels, got shape {labels.shape}")
    if N == 0:
        raise ValueError("empty batch")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    sumexp = exp.sum(axis=1, keepdims=True)
    rows = np.arange(N)
    nll = np.log(sumexp[:, 0]) - shifted[rows, labels]
    loss = float(nll.mean())
    grad = exp / sumexp
    grad[rows, labels] -= 1
    grad /= N
    return loss, grad.astype(logits.dtype, copy=False)
