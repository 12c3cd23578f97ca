# Differentiable numeric core
from src.numeric.tensor import (
    ComputationGraph,
    GraphNode,
    Tensor,
    as_tensor,
    backward,
    build_graph,
    is_grad_enabled,
    no_grad,
)
from src.numeric.ops import (
    concat,
    cross_entropy_with_logits,
    dropout,
    embedding,
    gelu,
    l2_normalize,
    layer_norm,
    logsumexp,
    matmul,
    relu,
    softmax_lastdim,
    stack,
)
from src.numeric.optim import Adam, AdamState, adam_step
from src.numeric.gradcheck import finite_difference_gradient, relative_error

__all__ = [
    "Adam",
    "AdamState",
    "ComputationGraph",
    "GraphNode",
    "Tensor",
    "adam_step",
    "as_tensor",
    "backward",
    "build_graph",
    "concat",
    "cross_entropy_with_logits",
    "dropout",
    "embedding",
    "finite_difference_gradient",
    "gelu",
    "is_grad_enabled",
    "l2_normalize",
    "layer_norm",
    "logsumexp",
    "matmul",
    "no_grad",
    "relative_error",
    "relu",
    "softmax_lastdim",
    "stack",
]
