"""
Differentiable operations used by the transformer and the losses.

The heavier operations (softmax, layer norm, cross entropy, GELU, L2
normalisation) are single ``Function`` nodes with hand-written backward
passes rather than compositions of primitives: fewer graph nodes, and the
stabilised forward formulas carry over to the gradients.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from src.errors import ContractError, DegenerateRowError, DimensionError, TargetIndexError
from src.numeric.tensor import Function, Tensor, as_tensor, unbroadcast

_GELU_C = math.sqrt(2.0 / math.pi)


# ---------------------------------------------------------------------------
# Matrix product
# ---------------------------------------------------------------------------

class MatMul(Function):
    op_name = "matmul"

    def forward(self, a, b):
        self.save_for_backward(a, b)
        return np.matmul(a, b)

    def backward(self, grad):
        a, b = self.saved
        ga = np.matmul(grad, np.swapaxes(b, -1, -2))
        gb = np.matmul(np.swapaxes(a, -1, -2), grad)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)


def matmul(a, b) -> Tensor:
    """
    Matrix product over the last two axes, batched over any leading axes.

    Raises:
        DimensionError: If either operand has fewer than two axes or the inner
            dimensions differ.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    return MatMul.apply(a, b)


# ---------------------------------------------------------------------------
# Softmax over the last axis with an additive mask
# ---------------------------------------------------------------------------

class SoftmaxLastDim(Function):
    op_name = "softmax"

    def forward(self, x, mask=None):
        if mask is None:
            z = x
        else:
            blocked = np.broadcast_to(np.isneginf(mask), x.shape)
            if blocked.all(axis=-1).any():
                raise DegenerateRowError("softmax row has every entry masked")
            z = np.where(blocked, -np.inf, x + np.where(np.isneginf(mask), 0.0, mask))
        shifted = z - z.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        p = e / e.sum(axis=-1, keepdims=True)
        self.save_for_backward(p)
        return p

    def backward(self, grad):
        (p,) = self.saved
        return (p * (grad - (grad * p).sum(axis=-1, keepdims=True)),)


def softmax_lastdim(x, additive_mask=None) -> Tensor:
    """
    Softmax over the last axis.

    *additive_mask* holds 0 for allowed and ``-inf`` for blocked entries and
    must broadcast to ``x``. Blocked entries come out exactly 0.

    Raises:
        DimensionError: If the mask does not broadcast to ``x``.
        DegenerateRowError: If some row has no allowed entry.
    """
    x = as_tensor(x)
    mask = None
    if additive_mask is not None:
        mask = additive_mask.data if isinstance(additive_mask, Tensor) else np.asarray(additive_mask, dtype=np.float64)
        try:
            np.broadcast_shapes(mask.shape, x.shape)
        except ValueError as exc:
            raise DimensionError(f"mask shape {mask.shape} does not broadcast to {x.shape}") from exc
    return SoftmaxLastDim.apply(x, mask=mask)


# ---------------------------------------------------------------------------
# Layer normalisation
# ---------------------------------------------------------------------------

class LayerNorm(Function):
    op_name = "layer_norm"

    def forward(self, x, gain, bias, eps: float):
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv
        self.save_for_backward(xhat, inv, gain)
        return xhat * gain + bias

    def backward(self, grad):
        xhat, inv, gain = self.saved
        lead = tuple(range(grad.ndim - 1))
        g_gain = (grad * xhat).sum(axis=lead)
        g_bias = grad.sum(axis=lead)
        gx_hat = grad * gain
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, g_gain, g_bias


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean and unit variance, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    width = x.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise DimensionError(
            f"layer_norm gain/bias must have shape ({width},), got {gain.shape} and {bias.shape}"
        )
    return LayerNorm.apply(x, gain, bias, eps=eps)


# ---------------------------------------------------------------------------
# Cross entropy
# ---------------------------------------------------------------------------

def _logsumexp_rows(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True)))[..., 0]


class CrossEntropy(Function):
    op_name = "cross_entropy"

    def forward(self, logits, targets: np.ndarray):
        n = logits.shape[0]
        lse = _logsumexp_rows(logits)
        picked = logits[np.arange(n), targets]
        self.save_for_backward(logits, targets, lse)
        return np.asarray((lse - picked).mean())

    def backward(self, grad):
        logits, targets, lse = self.saved
        n = logits.shape[0]
        probs = np.exp(logits - lse[:, None])
        probs[np.arange(n), targets] -= 1.0
        return (grad * probs / n,)


def cross_entropy_with_logits(logits, targets: Sequence[int]) -> Tensor:
    """
    Mean negative log-softmax probability of ``targets`` under ``logits``.

    Args:
        logits: ``(n, V)`` unnormalised scores.
        targets: ``n`` class ids in ``[0, V)``.

    Raises:
        DimensionError: If logits are not 2-D or ``n`` does not match.
        TargetIndexError: If a target is outside the vocabulary.
        ContractError: If a logit is infinite. NaN logits give a NaN loss.
    """
    logits = as_tensor(logits)
    targets = np.asarray(list(targets), dtype=np.int64)
    if logits.ndim != 2:
        raise DimensionError(f"cross entropy expects (n, V) logits, got {logits.shape}")
    if targets.shape != (logits.shape[0],):
        raise DimensionError(f"{targets.shape[0]} targets for {logits.shape[0]} rows")
    if targets.size == 0:
        raise ContractError("cross entropy over zero rows")
    vocab = logits.shape[1]
    bad = targets[(targets < 0) | (targets >= vocab)]
    if bad.size:
        raise TargetIndexError(f"target {int(bad[0])} outside [0, {vocab})")
    if np.isinf(logits.data).any():
        raise ContractError("cross entropy over infinite logits")
    return CrossEntropy.apply(logits, targets=targets)


def logsumexp(x, axis: int = -1) -> Tensor:
    """Stable ``log(sum(exp(x)))`` along *axis*, built from primitives."""
    x = as_tensor(x)
    shift = np.max(x.data, axis=axis, keepdims=True)
    out = (x - shift).exp().sum(axis=axis, keepdims=True).log() + shift
    return out.reshape(np.squeeze(out.data, axis=axis).shape)


# ---------------------------------------------------------------------------
# Activations and normalisation
# ---------------------------------------------------------------------------

class Gelu(Function):
    op_name = "gelu"

    def forward(self, x):
        inner = _GELU_C * (x + 0.044715 * x ** 3)
        t = np.tanh(inner)
        self.save_for_backward(x, t)
        return 0.5 * x * (1.0 + t)

    def backward(self, grad):
        x, t = self.saved
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (grad * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner),)


def gelu(x) -> Tensor:
    """GELU activation, tanh approximation."""
    return Gelu.apply(x)


class Relu(Function):
    op_name = "relu"

    def forward(self, x):
        self.save_for_backward(x > 0)
        return np.maximum(x, 0.0)

    def backward(self, grad):
        (positive,) = self.saved
        return (grad * positive,)


def relu(x) -> Tensor:
    return Relu.apply(x)


class L2Normalize(Function):
    op_name = "l2_normalize"

    def forward(self, x):
        norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
        if np.any(norm == 0.0):
            raise ContractError("cannot normalise a zero vector")
        y = x / norm
        self.save_for_backward(y, norm)
        return y

    def backward(self, grad):
        y, norm = self.saved
        return ((grad - y * (grad * y).sum(axis=-1, keepdims=True)) / norm,)


def l2_normalize(x) -> Tensor:
    """Scale the last axis to unit Euclidean length."""
    return L2Normalize.apply(x)


# ---------------------------------------------------------------------------
# Joining and selection
# ---------------------------------------------------------------------------

class Concat(Function):
    op_name = "concat"

    def forward(self, *arrays, axis: int = 0):
        self.save_for_backward(axis, [a.shape[axis] for a in arrays])
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        axis, sizes = self.saved
        cuts = np.cumsum(sizes)[:-1]
        return tuple(np.split(grad, cuts, axis=axis))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractError("concat of an empty sequence")
    return Concat.apply(*tensors, axis=axis)


class Stack(Function):
    op_name = "stack"

    def forward(self, *arrays, axis: int = 0):
        self.save_for_backward(axis, len(arrays))
        return np.stack(arrays, axis=axis)

    def backward(self, grad):
        axis, count = self.saved
        return tuple(np.take(grad, i, axis=axis) for i in range(count))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractError("stack of an empty sequence")
    return Stack.apply(*tensors, axis=axis)


def embedding(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Rows of *table* selected by token id; repeated ids accumulate gradient."""
    index = np.asarray(list(ids), dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise TargetIndexError(f"token id outside [0, {table.shape[0]})")
    return table[index]


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; the identity when *rate* is 0 or no generator is given."""
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep
