""" Central-difference verification of analytic gradients. """
from __future__ import annotations

import logging
from typing import Callable

import numpy as np

from errors import UsageError
from tensor_engine.tensor import GradientTape, Tensor, default_dtype

logger = logging.getLogger(__name__)


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-3,
                      samples: int | None = 32, seed: int = 0) -> float:
    """
    Compare the tape gradient of a scalar function with central differences.

    f is called with a float64 copy of x while the default dtype is float64,
    so any tensors f creates internally are float64 as well. Returns the
    largest |a - n| / max(|a|, |n|, 1e-8) over the checked coordinates
    (all of them when samples is None or >= x.size).

    :pre: f returns a scalar tensor; eps > 0.
    :raises UsageError: if eps is not positive.
    :complexity: O(samples) extra forward evaluations of f.
    """
    if eps <= 0:
        raise UsageError(f"eps must be positive, got {eps}")
    with default_dtype(np.float64):
        base = np.array(x.data, dtype=np.float64)
        probe = Tensor(base)
        with GradientTape() as tape:
            tape.watch("x", probe)
            loss = f(probe)
        analytic = tape.backward(loss)["x"].reshape(-1)

        flat = base.reshape(-1)
        if samples is None or samples >= flat.size:
            coords = np.arange(flat.size)
        else:
            rng = np.random.Generator(np.random.PCG64(seed))
            coords = rng.choice(flat.size, size=samples, replace=False)

        worst = 0.0
        for i in coords:
            plus = flat.copy()
            plus[i] += eps
            minus = flat.copy()
            minus[i] -= eps
            f_plus = f(Tensor(plus.reshape(base.shape))).item()
            f_minus = f(Tensor(minus.reshape(base.shape))).item()
            numeric = (f_plus - f_minus) / (2 * eps)
            a = float(analytic[i])
            error = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, error)
    logger.debug("finite_diff_check over %d coordinates: max rel error %.3e",
                 len(coords), worst)
    return worst
