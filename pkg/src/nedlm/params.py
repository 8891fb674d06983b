"""Named, trainable model parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class Parameter:
    """A leaf tensor with a stable id, a freeze flag, and optimizer state.

    ``state`` holds per-algorithm accumulator arrays keyed by name
    (``accum`` for AdaGrad; ``m``, ``v``, ``t`` for Adam), created on
    first use and always matching the tensor extent.
    """

    id: str
    tensor: Tensor
    trainable: bool = True
    state: dict = field(default_factory=dict)

    @property
    def values(self) -> np.ndarray:
        return self.tensor.values

    @property
    def grad(self):
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.grad = None


def make_parameter(pid: str, values: np.ndarray, trainable: bool = True) -> Parameter:
    return Parameter(pid, Tensor(np.array(values, dtype=np.float64)), trainable)
