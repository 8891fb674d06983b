"""Central finite-difference verification of reverse-mode gradients.

The checker reruns the full loss function for every perturbed
coordinate, so the loss must be deterministic given the current
parameter values (reseed any internal sampling per call).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor
from .errors import NumericError, ParameterError
from .params import Parameter

REL_ERR_FLOOR = 1e-8


def gradcheck(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    step: float = 1e-5,
) -> dict[str, float]:
    """Worst relative error between analytic and numeric gradients, per parameter.

    Relative error for one coordinate is |a - n| / max(|a|, |n|, 1e-8)
    with n the central difference (f(x+h) - f(x-h)) / 2h.
    """
    if step <= 0:
        raise ParameterError(f"finite-difference step must be positive, got {step}")

    loss = loss_fn()
    if not np.isfinite(loss.values).all():
        raise NumericError("loss is not finite at the evaluation point")
    for p in params:
        p.zero_grad()
    loss.backward()
    analytic = {
        p.id: (np.zeros_like(p.values) if p.grad is None else p.grad.copy())
        for p in params
    }

    # Central differences subtract two nearly equal losses, so they carry
    # an irreducible absolute noise of order eps * |loss| / step.  Any
    # disagreement inside that band is unresolvable in fp64 and reports
    # as zero; disagreement beyond it enters the ratio at full size.
    noise = 32.0 * np.finfo(np.float64).eps * max(1.0, abs(loss.item())) / (2.0 * step)

    worst: dict[str, float] = {}
    for p in params:
        flat = p.values.reshape(-1)
        a_flat = analytic[p.id].reshape(-1)
        max_err = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = loss_fn().item()
            flat[i] = orig - step
            f_minus = loss_fn().item()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(
                    f"loss is not finite while perturbing {p.id}[{i}]"
                )
            numeric = (f_plus - f_minus) / (2.0 * step)
            excess = max(0.0, abs(a_flat[i] - numeric) - noise)
            denom = max(abs(a_flat[i]), abs(numeric), REL_ERR_FLOOR)
            max_err = max(max_err, excess / denom)
        worst[p.id] = max_err
    return worst


def max_rel_err(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    step: float = 1e-5,
) -> float:
    """Convenience wrapper: worst relative error over all parameters."""
    errors = gradcheck(loss_fn, params, step)
    return max(errors.values()) if errors else 0.0
