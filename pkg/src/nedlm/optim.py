"""Parameter update rules and the unit-sphere projection.

AdaGrad drives language-model training (learning rate 0.1 by default);
Adam drives the ranker (learning rate 0.001).  Frozen parameters are
exact no-ops regardless of gradient content.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .errors import NormalizationError, StateError
from .params import Parameter

EPS = 1e-8


def adagrad_step(p: Parameter, lr: float) -> None:
    """accum += g^2;  p -= lr * g / (sqrt(accum) + eps)."""
    if not p.trainable:
        return
    g = p.tensor.grad
    if g is None:
        raise StateError(f"parameter {p.id} has no gradient to step with")
    if "accum" not in p.state:
        p.state["accum"] = np.zeros_like(p.values)
    accum = p.state["accum"]
    accum += g * g
    values = p.tensor.values
    values -= lr * g / (np.sqrt(accum) + EPS)


def adam_step(
    p: Parameter,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = EPS,
) -> None:
    """Bias-corrected first/second moment update."""
    if not p.trainable:
        return
    g = p.tensor.grad
    if g is None:
        raise StateError(f"parameter {p.id} has no gradient to step with")
    if "m" not in p.state:
        p.state["m"] = np.zeros_like(p.values)
        p.state["v"] = np.zeros_like(p.values)
        p.state["t"] = 0
    p.state["t"] += 1
    t = p.state["t"]
    m = p.state["m"]
    v = p.state["v"]
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    values = p.tensor.values
    values -= lr * m_hat / (np.sqrt(v_hat) + eps)


def renormalize_unit_sphere(row_ids: Iterable[int], table: Parameter) -> None:
    """Divide each named row of a 2-d table by its L2 norm; other rows untouched."""
    values = table.values
    for rid in sorted(set(int(r) for r in row_ids)):
        norm = float(np.linalg.norm(values[rid]))
        if norm == 0.0:
            raise NormalizationError(
                f"row {rid} of {table.id} has zero norm and cannot be normalized"
            )
        values[rid] /= norm
