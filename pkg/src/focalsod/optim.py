"""Adam optimizer and the step learning-rate schedule."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Tensor


def lr_at_epoch(epoch: int, base_lr: float, decay_epoch: int, decay_factor: float = 0.9) -> float:
    """Learning rate for 0-based ``epoch``: ``base_lr`` until ``decay_epoch``, then one multiplicative step."""
    return base_lr * decay_factor if epoch >= decay_epoch else base_lr


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-5, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1 - b1 ** self.t
        corr2 = 1 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            update = (self.lr / corr1) * m / (np.sqrt(v / corr2) + self.eps)
            p.data -= update.astype(p.dtype, copy=False)

    def state(self) -> dict:
        out = {"t": np.array([self.t], dtype=np.int64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m.{i}"] = m
            out[f"v.{i}"] = v
        return out

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"][0])
        for i in range(len(self.params)):
            self.m[i] = np.array(state[f"m.{i}"], dtype=self.params[i].dtype)
            self.v[i] = np.array(state[f"v.{i}"], dtype=self.params[i].dtype)
