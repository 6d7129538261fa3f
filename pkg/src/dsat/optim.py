"""Adam optimizer and the halving learning-rate schedule."""
from __future__ import annotations

import numpy as np

from .tensor import Parameter


class Adam:
    def __init__(self, params: list[tuple[str, Parameter]],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.params}
        self._v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def lr_at(iteration: int, base_lr: float, halve_every: int) -> float:
    """Step schedule: the rate halves at every ``halve_every`` boundary."""
    if halve_every <= 0:
        return base_lr
    return base_lr * 0.5 ** (iteration // halve_every)
