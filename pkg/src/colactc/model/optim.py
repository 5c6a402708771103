from __future__ import annotations

import math

import numpy as np


def inverse_sqrt_lr(step: int, peak: float, warmup: int) -> float:
    """Linear warmup to ``peak`` over ``warmup`` steps, then ``peak * sqrt(warmup / step)``."""
    step = max(step, 1)
    return peak * min(step / warmup, math.sqrt(warmup / step))


def global_norm(grads) -> float:
    flat = grads.flat
    return math.sqrt(float(np.dot(flat, flat)))


class Adam:
    """Adam with bias correction on a packed parameter buffer (updated in place)."""

    def __init__(self, params, b1=0.9, b2=0.98, eps=1e-9):
        self.b1, self.b2, self.eps = b1, b2, eps
        self.t = 0
        self.m = np.zeros_like(params.flat)
        self.v = np.zeros_like(params.flat)

    def step(self, params, grads, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        g = grads.flat
        self.m *= self.b1
        self.m += (1.0 - self.b1) * g
        self.v *= self.b2
        self.v += (1.0 - self.b2) * (g * g)
        denom = np.sqrt(self.v / c2)
        denom += self.eps
        params.flat -= (lr / c1) * self.m / denom
