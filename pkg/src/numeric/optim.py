"""
Adam optimizer.

``adam_step`` is the pure update on named arrays; ``Adam`` wraps it for a
list of parameter tensors and keeps the moment state between steps. The
moments are plain dictionaries so checkpoints can store them alongside the
weights.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from src.errors import ContractError, DimensionError
from src.numeric.tensor import Tensor

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    """First and second moment estimates per parameter name, plus the step count."""

    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "AdamState":
        return AdamState(
            step=self.step,
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
        )


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """
    Apply one bias-corrected Adam update.

    Args:
        params: Parameter arrays by name.
        grads: Gradient arrays, one per parameter name.
        state: Moments from the previous step (empty on the first step).
        lr: Learning rate.

    Returns:
        A tuple of (new parameter arrays, new state). Inputs are not modified.

    Raises:
        DimensionError: If a gradient or moment shape differs from its parameter.
        ContractError: If a parameter has no gradient.
    """
    step = state.step + 1
    new_params: dict[str, np.ndarray] = {}
    new_state = AdamState(step=step)
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step

    for name, value in params.items():
        if name not in grads:
            raise ContractError(f"no gradient for parameter {name!r}")
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != value.shape:
            raise DimensionError(f"gradient for {name!r} has shape {g.shape}, parameter {value.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(value)
            v = np.zeros_like(value)
        elif m.shape != value.shape or v.shape != value.shape:
            raise DimensionError(f"optimizer state for {name!r} does not match shape {value.shape}")

        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        new_params[name] = value - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_state.m[name] = m
        new_state.v[name] = v

    return new_params, new_state


class Adam:
    """
    Adam over a fixed list of named parameter tensors.

    Parameters whose ``grad`` is None take a zero gradient, so every
    parameter advances its moments on every step.
    """

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float,
        beta1: float = ADAM_BETA1,
        beta2: float = ADAM_BETA2,
        eps: float = ADAM_EPS,
    ):
        names = [p.name for p in params]
        if any(n is None for n in names) or len(set(names)) != len(names):
            raise ContractError("Adam needs uniquely named parameters")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        values = {p.name: p.data for p in self.params}
        grads = {
            p.name: p.grad if p.grad is not None else np.zeros_like(p.data)
            for p in self.params
        }
        updated, self.state = adam_step(
            values, grads, self.state, self.lr, self.beta1, self.beta2, self.eps
        )
        for p in self.params:
            p.data[...] = updated[p.name]
        logger.debug("Adam step %d applied to %d parameters", self.state.step, len(self.params))
