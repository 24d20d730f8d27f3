"""Plain SGD with optional classical momentum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    momentum: float = 0.0

    def __post_init__(self):
        if not (self.learning_rate > 0 and np.isfinite(self.learning_rate)):
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")


class Sgd:
    """Updates v = m*v + g; w -= lr*v. Gradients are cleared after each step."""

    def __init__(self, params, config: SgdConfig = SgdConfig()):
        self.params: list[Tensor] = list(params)
        self.config = config
        self._velocity: dict[int, np.ndarray] = {}

    def step(self):
        lr = np.float32(self.config.learning_rate)
        m = np.float32(self.config.momentum)
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            if self.config.momentum > 0.0:
                v = self._velocity.get(i)
                if v is None:
                    v = np.zeros_like(p.data)
                v = m * v + g
                self._velocity[i] = v
                update = v
            else:
                update = g
            p.data -= lr * update
            p.grad = None

    def zero_grad(self):
        for p in self.params:
            p.grad = None
