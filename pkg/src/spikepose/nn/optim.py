"""Adam optimizer and the two learning-rate schedules the trainer uses."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


class NonFiniteGradient(RuntimeError):
    """A parameter received a NaN/inf gradient."""


class Adam:
    """Bias-corrected Adam over named parameters (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, named_params: list[tuple[str, Tensor]],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.named_params = list(named_params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def step(self, lr: float):
        if lr <= 0:
            raise ValueError("lr must be > 0")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.named_params:
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient for parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data -= (lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for _, p in self.named_params:
            p.grad = None


@dataclass(frozen=True)
class LrSchedule:
    """kind "step": base*gamma^floor(epoch/step_size).
    kind "cosine": eta_min + (base-eta_min)*(1+cos(pi*epoch/t_max))/2."""

    kind: str  # "step" | "cosine"
    base_lr: float = 1e-3
    step_size: int = 10
    gamma: float = 0.5
    t_max: int = 100
    eta_min: float = 1e-6

    def __post_init__(self):
        if self.kind not in ("step", "cosine"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.base_lr <= 0 or self.eta_min < 0:
            raise ValueError("base_lr must be > 0 and eta_min >= 0")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if schedule.kind == "step":
        return schedule.base_lr * schedule.gamma ** (epoch // schedule.step_size)
    return schedule.eta_min + (schedule.base_lr - schedule.eta_min) \
        * (1.0 + math.cos(math.pi * epoch / schedule.t_max)) / 2.0
