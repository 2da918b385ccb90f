"""Optimizer, gradient clipping, and exponential moving average of weights.

All three operate in place on the parameter arrays returned by
``Module.parameters()`` so references held elsewhere stay valid.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError

__all__ = ["AdamW", "EMA", "clip_global_norm"]


def clip_global_norm(grads, max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is <= max_norm.

    Returns the pre-clip norm.
    """
    if max_norm <= 0:
        raise InvalidInputError("max_norm must be positive")
    total = 0.0
    for g in grads:
        total += float(np.sum(np.square(g, dtype=np.float64)))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


class AdamW(object):
    """Adaptive moments with decoupled weight decay."""

    def __init__(self, params, lr, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        if lr <= 0:
            raise InvalidInputError("learning rate must be positive")
        if weight_decay < 0:
            raise InvalidInputError("weight decay must be >= 0")
        self.params = list(params)
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads) -> None:
        if len(grads) != len(self.params):
            raise InvalidInputError("gradient list does not match parameter list")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p
            p -= self.lr * update


class EMA(object):
    """Exponential moving average: shadow <- d*shadow + (1-d)*current."""

    def __init__(self, params, decay: float):
        if not 0.0 <= decay <= 1.0:
            raise InvalidInputError("EMA decay must be in [0, 1]")
        self.decay = float(decay)
        self.params = list(params)
        self.shadow = [p.copy() for p in self.params]

    def update(self) -> None:
        d = self.decay
        for s, p in zip(self.shadow, self.params):
            s *= d
            s += (1.0 - d) * p

    def copy_to(self, params=None) -> None:
        """Overwrite the live parameters with the averaged ones."""
        targets = self.params if params is None else list(params)
        for t, s in zip(targets, self.shadow):
            t[...] = s

    def state(self) -> list:
        return [s.copy() for s in self.shadow]
