"""SGD-with-momentum and RMSprop, the two update rules the models need."""
from __future__ import annotations

import numpy as np

from ..errors import MissingGradient
from .autograd import Tensor


class Optimizer:
    def __init__(self, params: list[Tensor], lr: float, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.step_count = 0

    def _gradients(self) -> list[np.ndarray]:
        grads = []
        for p in self.params:
            if p.grad is None:
                raise MissingGradient("optimizer_step before gradients were populated")
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            grads.append(g)
        return grads

    def step(self) -> None:
        grads = self._gradients()
        self.step_count += 1
        self._update(grads)
        for p in self.params:
            p.grad = None

    def _update(self, grads):
        raise NotImplementedError


class SGDMomentum(Optimizer):
    def __init__(self, params, lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        super().__init__(params, lr, weight_decay)
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in params]

    def _update(self, grads):
        for p, v, g in zip(self.params, self.velocity, grads):
            v *= self.momentum
            v += g
            p.data -= self.lr * v


class RMSprop(Optimizer):
    def __init__(
        self,
        params,
        lr: float,
        alpha: float = 0.98,
        eps: float = 1e-5,
        weight_decay: float = 0.0,
        warmup_steps: int = 0,
    ):
        super().__init__(params, lr, weight_decay)
        self.alpha = alpha
        self.eps = eps
        self.warmup_steps = warmup_steps
        self.accum = [np.zeros_like(p.data) for p in params]

    def current_lr(self) -> float:
        # linear ramp from 0 over the warmup phase
        if self.warmup_steps and self.step_count <= self.warmup_steps:
            return self.lr * self.step_count / self.warmup_steps
        return self.lr

    def _update(self, grads):
        lr = self.current_lr()
        for p, acc, g in zip(self.params, self.accum, grads):
            acc *= self.alpha
            acc += (1.0 - self.alpha) * g * g
            p.data -= lr * g / np.sqrt(acc + self.eps)
