"""Layer building blocks on top of the tensor engine.

Modules register parameters and child modules by attribute assignment;
``named_tensors`` walks them in a stable order for checkpointing, and
``parameters`` yields only the trainable subset for the optimizer.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


def he_uniform(rng, shape, fan_in, dtype=np.float32):
    """U(-sqrt(6/fan_in), +sqrt(6/fan_in)) init for ReLU-family stacks."""
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype),
                  requires_grad=True)


class Module:
    """Minimal container tracking parameters and submodules in order."""

    def __setattr__(self, name, value):
        if isinstance(value, (Tensor, Module)) or (
                isinstance(value, (list, tuple))
                and value and all(isinstance(v, (Tensor, Module)) for v in value)):
            children = self.__dict__.setdefault("_children", [])
            if name not in children:
                children.append(name)
        object.__setattr__(self, name, value)

    def named_tensors(self, prefix=""):
        """All parameter tensors (frozen included), insertion-ordered."""
        for name in self.__dict__.get("_children", []):
            value = self.__dict__[name]
            key = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield key, value
            elif isinstance(value, Module):
                yield from value.named_tensors(f"{key}.")
            else:
                for i, item in enumerate(value):
                    if isinstance(item, Tensor):
                        yield f"{key}.{i}", item
                    else:
                        yield from item.named_tensors(f"{key}.{i}.")

    def parameters(self):
        return [t for _, t in self.named_tensors() if t.requires_grad]

    def all_tensors(self):
        return [t for _, t in self.named_tensors()]

    def freeze(self):
        for t in self.all_tensors():
            t.requires_grad = False
        return self


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng, dtype=np.float32):
        self.weight = he_uniform(rng, (in_dim, out_dim), in_dim, dtype)
        self.bias = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return T.add(T.matmul(x, self.weight), self.bias)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, stride, padding, rng,
                 dtype=np.float32):
        fan_in = in_ch * kernel * kernel
        self.weight = he_uniform(rng, (out_ch, in_ch, kernel, kernel),
                                 fan_in, dtype)
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias,
                        stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5, dtype=np.float32):
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class MultiHeadSelfAttention(Module):
    """Standard scaled dot-product self-attention over (B, n, d) tokens."""

    def __init__(self, dim, heads, rng, dtype=np.float32):
        if dim % heads != 0:
            raise ValueError(f"model dim {dim} not divisible by heads {heads}")
        self.query = Linear(dim, dim, rng, dtype)
        self.key = Linear(dim, dim, rng, dtype)
        self.value = Linear(dim, dim, rng, dtype)
        self.out = Linear(dim, dim, rng, dtype)
        self.heads = heads
        self.head_dim = dim // heads

    def __call__(self, x):
        batch, n, dim = x.shape
        heads, hd = self.heads, self.head_dim

        def split(t):
            # (B, n, d) -> (B, heads, n, hd)
            return T.transpose(T.reshape(t, (batch, n, heads, hd)), (0, 2, 1, 3))

        q = split(self.query(x))
        k = split(self.key(x))
        v = split(self.value(x))
        scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2)))
        scores = T.mul(scores, Tensor(np.asarray(1.0 / math.sqrt(hd),
                                                 dtype=x.dtype)))
        attn = T.softmax_lastdim(scores)
        mixed = T.matmul(attn, v)  # (B, heads, n, hd)
        merged = T.reshape(T.transpose(mixed, (0, 2, 1, 3)), (batch, n, dim))
        return self.out(merged)


class TransformerBlock(Module):
    """Pre-norm block: x + Attn(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, dim, heads, mlp_ratio, rng, dtype=np.float32):
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.attn = MultiHeadSelfAttention(dim, heads, rng, dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        hidden = dim * mlp_ratio
        self.fc1 = Linear(dim, hidden, rng, dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype)

    def __call__(self, x):
        x = T.add(x, self.attn(self.norm1(x)))
        x = T.add(x, self.fc2(T.gelu(self.fc1(self.norm2(x)))))
        return x
