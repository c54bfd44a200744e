"""Adam with a continuously decaying learning rate.

The schedule is lr(t) = base * rate^(t / steps) with a fractional exponent
(no staircase), so the rate shrinks a little every step and hits base*rate
exactly at t = steps. Moments live beside their parameters, keyed by name.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class DecaySchedule:
    base_lr: float = 0.001
    decay_steps: int = 10000
    decay_rate: float = 0.96
    staircase: bool = False

    def lr(self, step: int) -> float:
        e = step / self.decay_steps
        if self.staircase:
            e = np.floor(e)
        return self.base_lr * self.decay_rate**e


class Adam:
    """Bias-corrected Adam over named parameters; epsilon sits outside the root."""

    def __init__(
        self,
        params: list[tuple[str, Tensor]],
        schedule: DecaySchedule | None = None,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        self.params = list(params)
        self.schedule = schedule or DecaySchedule()
        self.beta1, self.beta2, self.epsilon = beta1, beta2, epsilon
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    @property
    def lr(self) -> float:
        """Learning rate the next step will use."""
        return self.schedule.lr(self.t)

    @property
    def last_lr(self) -> float:
        """Learning rate the previous step used (next one's before any step)."""
        return self.schedule.lr(max(self.t - 1, 0))

    def step(self) -> None:
        """Apply one update from the gradients currently stored on the parameters."""
        lr = self.schedule.lr(self.t)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter {p.data.shape} for {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.epsilon)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()
