"""Momentum SGD."""

from __future__ import annotations

import numpy as np

from ..errors import MissingGrad


class SGD:
    """``v <- momentum * v + grad``; ``p <- p - lr * v``. Velocities start at zero."""

    def __init__(self, params, lr: float, momentum: float = 0.0):
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise MissingGrad(f"parameter {p.name or p!r} has no gradient")
        for p, v in zip(self.params, self.velocity):
            v *= self.momentum
            v += p.grad
            if self.lr != 0:
                p.data -= self.lr * v


def sgd_step(params, lr: float, momentum: float = 0.0, velocity=None):
    """Functional form of one :class:`SGD` step; returns the updated velocities."""
    opt = SGD(params, lr, momentum)
    if velocity is not None:
        opt.velocity = [np.array(v, dtype=np.float64) for v in velocity]
    opt.step()
    return opt.velocity
