"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array (float32 by default) and records the ops
that produced it as `_backward` closures over its parents.  Calling
``backward`` on a scalar walks the graph once in reverse topological
order and accumulates gradients into every tensor that requires them.
The graph is dropped afterwards, so a tensor cannot be backpropagated
through twice.

All ops are pure given their inputs; accumulation order is fixed
(sequential, row-major numpy kernels), so same-seed runs are bit-exact
on one platform.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .errors import NumericalError, ShapeError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

# When True, every op asserts its output is finite (debug aid; off by
# default because the check touches every element).
_debug_checks = False

# Depth counter for no_grad contexts.
_grad_disabled = 0


def set_debug_checks(enabled):
    """Toggle NaN/Inf checking after every forward op."""
    global _debug_checks
    _debug_checks = bool(enabled)


class no_grad:
    """Context manager that disables graph recording inside its block."""

    def __enter__(self):
        global _grad_disabled
        _grad_disabled += 1
        return self

    def __exit__(self, *exc):
        global _grad_disabled
        _grad_disabled -= 1
        return False


def _check_finite(data, op_name):
    if _debug_checks and not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite values in output of {op_name}")


class Tensor:
    """N-dimensional float array participating in a gradient graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, np.ndarray):
            if dtype is not None and data.dtype != dtype:
                data = data.astype(dtype)
            elif data.dtype not in (np.float32, np.float64):
                data = data.astype(np.float32)
        else:
            data = np.asarray(data, dtype=dtype or np.float32)
        self.data = data
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    # operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    __radd__ = __add__
    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self):
        return sum_all(self)

    def backward(self):
        backward(self)


def _as_tensor(x, dtype=np.float32):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward_fn, op_name):
    """Wrap an op result, recording the graph only when gradients flow."""
    _check_finite(data, op_name)
    requires = _grad_disabled == 0 and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires, dtype=data.dtype)
    if requires:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, inverting numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _require_broadcastable(a, b, op_name):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(
            f"{op_name}: incompatible shapes {a.shape} and {b.shape}"
        ) from None


# element-wise -----------------------------------------------------------


def add(a, b):
    _require_broadcastable(a, b, "add")
    out_data = a.data + b.data

    def backward_fn(grad, out):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(grad, a.shape).astype(a.dtype))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(grad, b.shape).astype(b.dtype))

    return _make(out_data, (a, b), backward_fn, "add")


def sub(a, b):
    _require_broadcastable(a, b, "sub")
    out_data = a.data - b.data

    def backward_fn(grad, out):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(grad, a.shape).astype(a.dtype))
        if b.requires_grad:
            b.accumulate_grad(-_unbroadcast(grad, b.shape).astype(b.dtype))

    return _make(out_data, (a, b), backward_fn, "sub")


def mul(a, b):
    _require_broadcastable(a, b, "mul")
    out_data = a.data * b.data

    def backward_fn(grad, out):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(grad * b.data, a.shape).astype(a.dtype))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(grad * a.data, b.shape).astype(b.dtype))

    return _make(out_data, (a, b), backward_fn, "mul")


def ew_binary(a, b, kind):
    """Element-wise add/sub/mul with broadcasting of the smaller map."""
    if kind == "add":
        return add(a, b)
    if kind == "sub":
        return sub(a, b)
    if kind == "mul":
        return mul(a, b)
    raise ValueError(f"unknown element-wise op {kind!r}")


# matmul ------------------------------------------------------------------


def matmul(a, b):
    """Matrix product; leading axes broadcast (batched matmul)."""
    if a.shape[-1] != b.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeError(
            f"matmul: inner dimensions disagree for {a.shape} and {b.shape}"
        )
    out_data = a.data @ b.data

    def backward_fn(grad, out):
        if a.requires_grad:
            ga = grad @ np.swapaxes(b.data, -1, -2)
            a.accumulate_grad(_unbroadcast(ga, a.shape).astype(a.dtype))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ grad
            b.accumulate_grad(_unbroadcast(gb, b.shape).astype(b.dtype))

    return _make(out_data, (a, b), backward_fn, "matmul")


# activations -------------------------------------------------------------


def relu(x):
    out_data = np.maximum(x.data, 0)

    def backward_fn(grad, out):
        if x.requires_grad:
            x.accumulate_grad(grad * (x.data > 0))

    return _make(out_data, (x,), backward_fn, "relu")


def sigmoid(x):
    # Split by sign to stay overflow-free at float32.
    d = x.data
    out_data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                        np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out_data = out_data.astype(d.dtype)

    def backward_fn(grad, out):
        if x.requires_grad:
            x.accumulate_grad(grad * out.data * (1.0 - out.data))

    return _make(out_data, (x,), backward_fn, "sigmoid")


def gelu(x):
    d = x.data
    cdf = 0.5 * (1.0 + erf(d * _INV_SQRT2))
    out_data = (d * cdf).astype(d.dtype)

    def backward_fn(grad, out):
        if x.requires_grad:
            pdf = _INV_SQRT2PI * np.exp(-0.5 * d * d)
            x.accumulate_grad((grad * (cdf + d * pdf)).astype(d.dtype))

    return _make(out_data, (x,), backward_fn, "gelu")


def softmax_lastdim(x):
    if x.data.ndim < 1:
        raise ShapeError("softmax requires rank >= 1")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)
    out_data = exps / exps.sum(axis=-1, keepdims=True)

    def backward_fn(grad, out):
        if x.requires_grad:
            y = out.data
            inner = (grad * y).sum(axis=-1, keepdims=True)
            x.accumulate_grad(y * (grad - inner))

    return _make(out_data, (x,), backward_fn, "softmax")


def activations(x, kind):
    """Dispatch for the activation set used by the network."""
    table = {"sigmoid": sigmoid, "gelu": gelu, "relu": relu,
             "softmax_lastdim": softmax_lastdim}
    if kind not in table:
        raise ValueError(f"unknown activation {kind!r}")
    return table[kind](x)


# normalization -----------------------------------------------------------


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last dimension, then scale and shift."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    d = x.data
    mean = d.mean(axis=-1, keepdims=True)
    centered = d - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    norm = centered * inv_std
    out_data = (norm * gamma.data + beta.data).astype(d.dtype)

    def backward_fn(grad, out):
        if gamma.requires_grad:
            gg = grad * norm
            gamma.accumulate_grad(
                _unbroadcast(gg, gamma.shape).astype(gamma.dtype))
        if beta.requires_grad:
            beta.accumulate_grad(
                _unbroadcast(grad, beta.shape).astype(beta.dtype))
        if x.requires_grad:
            gy = grad * gamma.data
            gmean = gy.mean(axis=-1, keepdims=True)
            gdot = (gy * norm).mean(axis=-1, keepdims=True)
            x.accumulate_grad(
                (inv_std * (gy - gmean - norm * gdot)).astype(d.dtype))

    return _make(out_data, (x, gamma, beta), backward_fn, "layer_norm")


# convolution -------------------------------------------------------------


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation with zero padding.

    x: (B, Cin, H, W) or (Cin, H, W); weight: (Cout, Cin, kh, kw).
    Output spatial size is floor((H + 2p - kh) / stride) + 1.
    """
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    batch, cin, h, w = xd.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d: input channels {cin} != kernel channels {cin_w}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(
            f"conv2d: kernel ({kh}x{kw}) larger than padded input "
            f"({h + 2 * padding}x{w + 2 * padding})")
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) \
        if padding else xd
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    out_h, out_w = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(batch * out_h * out_w, cin * kh * kw)
    wmat = weight.data.reshape(cout, -1)
    out_flat = cols @ wmat.T
    if bias is not None:
        out_flat = out_flat + bias.data
    out_data = out_flat.reshape(batch, out_h, out_w, cout).transpose(0, 3, 1, 2)
    if squeeze:
        out_data = out_data[0]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward_fn(grad, out):
        g = grad[None] if squeeze else grad
        gflat = g.transpose(0, 2, 3, 1).reshape(batch * out_h * out_w, cout)
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(gflat.sum(axis=0).astype(bias.dtype))
        if weight.requires_grad:
            weight.accumulate_grad(
                (gflat.T @ cols).reshape(weight.shape).astype(weight.dtype))
        if x.requires_grad:
            dcols = gflat @ wmat
            dwin = dcols.reshape(batch, out_h, out_w, cin, kh, kw)
            dwin = dwin.transpose(0, 3, 1, 2, 4, 5)
            dxp = np.zeros_like(xp)
            for di in range(kh):
                for dj in range(kw):
                    dxp[:, :, di:di + stride * out_h:stride,
                        dj:dj + stride * out_w:stride] += dwin[:, :, :, :, di, dj]
            dx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
            x.accumulate_grad(dx[0] if squeeze else dx)

    return _make(out_data, parents, backward_fn, "conv2d")


# pooling -----------------------------------------------------------------


def _pool_windows(in_size, out_size):
    """Window [start, end) per output index: floor/ceil partition."""
    return [(math.floor(i * in_size / out_size),
             math.ceil((i + 1) * in_size / out_size)) for i in range(out_size)]


def adaptive_avg_pool2d(x, out_h, out_w):
    """Mean over floor/ceil-partitioned windows; (1, 1) output is GAP."""
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    h, w = xd.shape[2], xd.shape[3]
    if not (1 <= out_h <= h and 1 <= out_w <= w):
        raise ShapeError(
            f"adaptive_avg_pool2d: output ({out_h}x{out_w}) exceeds input ({h}x{w})")
    if out_h == 1 and out_w == 1:
        out_data = xd.mean(axis=(2, 3), keepdims=True)
        rows = cols = None
    else:
        rows = _pool_windows(h, out_h)
        cols = _pool_windows(w, out_w)
        out_data = np.empty(xd.shape[:2] + (out_h, out_w), dtype=xd.dtype)
        for i, (r0, r1) in enumerate(rows):
            for j, (c0, c1) in enumerate(cols):
                out_data[:, :, i, j] = xd[:, :, r0:r1, c0:c1].mean(axis=(2, 3))
    if squeeze:
        out_data = out_data[0]

    def backward_fn(grad, out):
        if not x.requires_grad:
            return
        g = grad[None] if squeeze else grad
        dx = np.zeros_like(xd)
        rws = rows if rows is not None else [(0, h)]
        cls = cols if cols is not None else [(0, w)]
        for i, (r0, r1) in enumerate(rws):
            for j, (c0, c1) in enumerate(cls):
                scale = 1.0 / ((r1 - r0) * (c1 - c0))
                dx[:, :, r0:r1, c0:c1] += g[:, :, i:i + 1, j:j + 1] * scale
        x.accumulate_grad((dx[0] if squeeze else dx).astype(xd.dtype))

    return _make(out_data, (x,), backward_fn, "adaptive_avg_pool2d")


def global_avg_pool(x):
    """Mean over the two trailing spatial dims, keeping (B, C) only."""
    out_data = x.data.mean(axis=(-2, -1))
    h, w = x.shape[-2], x.shape[-1]

    def backward_fn(grad, out):
        if x.requires_grad:
            g = grad[..., None, None] / (h * w)
            x.accumulate_grad(np.broadcast_to(g, x.shape).astype(x.dtype))

    return _make(out_data, (x,), backward_fn, "global_avg_pool")


# shape ops ---------------------------------------------------------------


def reshape(x, shape):
    out_data = x.data.reshape(shape)

    def backward_fn(grad, out):
        if x.requires_grad:
            x.accumulate_grad(grad.reshape(x.shape))

    return _make(out_data, (x,), backward_fn, "reshape")


def transpose(x, axes):
    axes = tuple(axes)
    out_data = x.data.transpose(axes)
    inverse = np.argsort(axes)

    def backward_fn(grad, out):
        if x.requires_grad:
            x.accumulate_grad(grad.transpose(inverse))

    return _make(out_data, (x,), backward_fn, "transpose")


def concat(tensors, axis):
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(grad, out):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * grad.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate_grad(grad[tuple(idx)])

    return _make(out_data, tuple(tensors), backward_fn, "concat")


def pad2d(x, top, bottom, left, right):
    """Zero-pad the two trailing spatial dims."""
    widths = [(0, 0)] * (x.data.ndim - 2) + [(top, bottom), (left, right)]
    out_data = np.pad(x.data, widths)

    def backward_fn(grad, out):
        if x.requires_grad:
            idx = [slice(None)] * (grad.ndim - 2)
            idx += [slice(top, top + x.shape[-2]),
                    slice(left, left + x.shape[-1])]
            x.accumulate_grad(grad[tuple(idx)])

    return _make(out_data, (x,), backward_fn, "pad2d")


def sum_all(x):
    out_data = np.asarray(x.data.sum(), dtype=x.dtype).reshape(())

    def backward_fn(grad, out):
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(grad, x.shape).astype(x.dtype))

    return _make(out_data, (x,), backward_fn, "sum")


def mean_all(x):
    out_data = np.asarray(x.data.mean(), dtype=x.dtype).reshape(())
    n = x.size

    def backward_fn(grad, out):
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(grad / n, x.shape).astype(x.dtype))

    return _make(out_data, (x,), backward_fn, "mean")


# loss --------------------------------------------------------------------


def cross_entropy_label_smooth(logits, labels, eps=0.0):
    """Mean batch cross-entropy against smoothed one-hot targets.

    Targets are (1 - eps) * onehot + eps / K.  Uses a fused log-softmax
    so the gradient is the numerically stable (softmax - target) / B.
    """
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"label smoothing eps must be in [0, 1), got {eps}")
    d = logits.data
    if d.ndim != 2:
        raise ShapeError(f"cross_entropy expects (B, K) logits, got {d.shape}")
    batch, k = d.shape
    labels = np.asarray(labels)
    if labels.shape != (batch,):
        raise ShapeError(f"labels shape {labels.shape} != ({batch},)")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range [0, {k})")
    shifted = d - d.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    targets = np.full((batch, k), eps / k, dtype=d.dtype)
    targets[np.arange(batch), labels] += 1.0 - eps
    out_data = np.asarray(-(targets * log_p).sum(axis=1).mean(),
                          dtype=d.dtype).reshape(())

    def backward_fn(grad, out):
        if logits.requires_grad:
            p = np.exp(log_p)
            logits.accumulate_grad((grad * (p - targets) / batch).astype(d.dtype))

    return _make(out_data, (logits,), backward_fn, "cross_entropy")


# graph -------------------------------------------------------------------


def backward(loss):
    """Populate grads of every requires_grad ancestor of a scalar loss.

    The recorded graph is cleared afterwards; re-running backward on the
    same tensors requires a fresh forward pass.
    """
    if loss.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    loss.accumulate_grad(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad, node)
        node._parents = ()
        node._backward = None
