"""Plain-numpy optimisers on flat parameter vectors (PyTorch update rules)."""

from __future__ import annotations

import math

import numpy as np


class SGD:
    """SGD with L2 weight decay and (Nesterov) momentum.

    velocity = momentum * velocity + (grad + weight_decay * p)
    step     = grad' + momentum * velocity   if nesterov else velocity
    """

    def __init__(self, momentum: float = 0.9, weight_decay: float = 0.0, nesterov: bool = True):
        if momentum < 0 or weight_decay < 0:
            raise ValueError("momentum and weight decay must be non-negative")
        if nesterov and momentum == 0:
            nesterov = False
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.nesterov = nesterov
        self.velocity = None

    def step(self, p: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        g = grad + self.weight_decay * p if self.weight_decay else grad
        if self.momentum:
            self.velocity = g.copy() if self.velocity is None else self.momentum * self.velocity + g
            g = g + self.momentum * self.velocity if self.nesterov else self.velocity
        return p - lr * g


class Adam:
    def __init__(self, lr: float = 0.01, betas=(0.9, 0.99), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = self.v = None
        self.t = 0

    def step(self, p: np.ndarray, grad: np.ndarray) -> np.ndarray:
        g = grad + self.weight_decay * p if self.weight_decay else grad
        if self.m is None:
            self.m = np.zeros_like(p)
            self.v = np.zeros_like(p)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        if self.lr == 0:
            return p.copy()
        return p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def cosine_lr(t: int, iters: int, lr_max: float, lr_min: float = 0.0,
              warmup_iters: int = 0, warmup_start: float = 0.0) -> float:
    """Linear warm-up from ``warmup_start`` to ``lr_max`` over ``warmup_iters``
    steps, then cosine decay to ``lr_min`` at ``t = iters``."""
    if t < warmup_iters:
        return warmup_start + (lr_max - warmup_start) * t / warmup_iters
    span = iters - warmup_iters
    if span <= 0:
        return lr_max
    progress = min(max((t - warmup_iters) / span, 0.0), 1.0)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * progress))
