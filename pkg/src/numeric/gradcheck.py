"""Central finite differences, the reference every backward pass is checked against."""

from __future__ import annotations

from typing import Callable

import numpy as np

from src.errors import ContractError
from src.numeric.tensor import Tensor, no_grad


def finite_difference_gradient(
    f: Callable[[Tensor], Tensor | float],
    x: Tensor,
    eps: float = 1e-5,
) -> np.ndarray:
    """
    Estimate df/dx coordinate by coordinate as (f(x+eps) - f(x-eps)) / 2eps.

    ``x.data`` is perturbed in place and restored after each coordinate, so
    *f* may close over ``x`` (as a model parameter) instead of taking it as
    an argument.
    """
    if eps <= 0:
        raise ContractError(f"finite difference step must be positive, got {eps}")

    def evaluate() -> float:
        with no_grad():
            out = f(x)
        return out.item() if isinstance(out, Tensor) else float(out)

    flat = x.data.reshape(-1)
    estimate = np.zeros(flat.size, dtype=np.float64)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        upper = evaluate()
        flat[i] = original - eps
        lower = evaluate()
        flat[i] = original
        estimate[i] = (upper - lower) / (2.0 * eps)
    return estimate.reshape(x.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Norm of the difference relative to the larger of the two norms."""
    diff = np.linalg.norm(np.asarray(analytic) - np.asarray(numeric))
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(diff / scale)
