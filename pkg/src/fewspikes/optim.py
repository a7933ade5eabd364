"""AdamW with decoupled weight decay, plus a step learning-rate schedule."""

from __future__ import annotations

import numpy as np

__all__ = ["AdamW", "StepLR", "NonFiniteGradient"]


class NonFiniteGradient(FloatingPointError):
    """A gradient tensor contained NaN or infinity; the message names it."""


class AdamW:
    """Decoupled-weight-decay Adam over a list of named parameter tensors.

    Parameters are updated in place.  Weight decay multiplies each tensor by
    (1 - lr * wd) before the moment-based update.
    """

    def __init__(self, named_params: list[tuple[str, np.ndarray]], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0) -> None:
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        self.names = [n for n, _ in named_params]
        self.params = [p for _, p in named_params]
        self.lr = lr
        self.base_lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError(f"expected {len(self.params)} gradients, got {len(grads)}")
        for name, g in zip(self.names, grads):
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient in {name}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if self.weight_decay:
                p *= 1.0 - self.lr * self.weight_decay
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class StepLR:
    """Multiply the learning rate by ``gamma`` every ``step_size`` epochs."""

    def __init__(self, optimizer: AdamW, step_size: int, gamma: float = 0.5) -> None:
        if step_size < 1:
            raise ValueError("step_size must be >= 1")
        self.opt = optimizer
        self.step_size = step_size
        self.gamma = gamma

    def set_epoch(self, epoch: int) -> None:
        self.opt.lr = self.opt.base_lr * self.gamma ** (epoch // self.step_size)
