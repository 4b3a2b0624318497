"""Stochastic gradient descent with classical momentum."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


class SgdMomentum:
    """v <- mu * v + g;  w <- w - lr * v.

    One velocity buffer per registered parameter, zero-initialized.
    """

    def __init__(self, params, lr, momentum=0.9):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            if p.grad.shape != p.data.shape:
                raise ShapeError(
                    f"grad shape {p.grad.shape} != param shape {p.data.shape}")
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def sgd_momentum_step(params, grads, velocity, lr, momentum):
    """Functional single step over parallel lists; updates in place."""
    if not (len(params) == len(grads) == len(velocity)):
        raise ShapeError("params, grads, velocity must have equal lengths")
    for p, g, v in zip(params, grads, velocity):
        if g.shape != p.data.shape or v.shape != p.data.shape:
            raise ShapeError(
                f"mismatched shapes: param {p.data.shape}, grad {g.shape}, "
                f"velocity {v.shape}")
        v *= momentum
        v += g
        p.data -= lr * v
