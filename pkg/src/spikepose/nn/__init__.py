"""Minimal reverse-mode tensor engine: just the layers, neuron, optimizer
and schedules that event-frame pose regression needs.

Hot convolution kernels live in the compiled extension when present
(`backend.backend_name()` says which backend is active).
"""

from . import backend, functional, gradcheck
from .checkpoint import read_checkpoint, write_checkpoint
from .optim import Adam, LrSchedule, NonFiniteGradient, lr_at
from .tensor import Tensor, no_grad

__all__ = [
    "Adam",
    "LrSchedule",
    "NonFiniteGradient",
    "Tensor",
    "backend",
    "functional",
    "gradcheck",
    "lr_at",
    "no_grad",
    "read_checkpoint",
    "write_checkpoint",
]
