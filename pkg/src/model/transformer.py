"""
Pre-LN decoder transformer over the numeric core.

One weight set encodes sessions and passages alike. ``forward`` takes the
attention mask as an argument, so the same code runs under the causal
mask (embeddings), the session mask (session-masked LM loss) and, with a
key/value prefix, the second pass of the two-pass oracle.

Parameter names:

    embedding                          (V, d)
    layers.{i}.ln1.gain / .bias        (d,)
    layers.{i}.attn.wq / wk / wv / wo  (d, d)
    layers.{i}.ln2.gain / .bias        (d,)
    layers.{i}.ffn.w1 (d, d_ff)  .b1 (d_ff,)  .w2 (d_ff, d)  .b2 (d,)
    final_ln.gain / .bias              (d,)
    output                             (d, V)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from src.errors import ContractError, DimensionError
from src.model.config import ModelConfig
from src.numeric import Tensor, concat, dropout, embedding, gelu, layer_norm, softmax_lastdim
from src.utils.hashing import arrays_fingerprint

logger = logging.getLogger(__name__)


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Names and shapes of every parameter, in canonical order."""
    d, f, v = config.d_model, config.d_ff, config.vocab_size
    shapes: dict[str, tuple[int, ...]] = {"embedding": (v, d)}
    for i in range(config.n_layers):
        p = f"layers.{i}"
        shapes[f"{p}.ln1.gain"] = (d,)
        shapes[f"{p}.ln1.bias"] = (d,)
        for w in ("wq", "wk", "wv", "wo"):
            shapes[f"{p}.attn.{w}"] = (d, d)
        shapes[f"{p}.ln2.gain"] = (d,)
        shapes[f"{p}.ln2.bias"] = (d,)
        shapes[f"{p}.ffn.w1"] = (d, f)
        shapes[f"{p}.ffn.b1"] = (f,)
        shapes[f"{p}.ffn.w2"] = (f, d)
        shapes[f"{p}.ffn.b2"] = (d,)
    shapes["final_ln.gain"] = (d,)
    shapes["final_ln.bias"] = (d,)
    shapes["output"] = (d, v)
    return shapes


class ModelWeights:
    """
    Named parameter tensors for one ModelConfig.

    Raises:
        DimensionError: If an array is missing or has the wrong shape.
    """

    def __init__(self, config: ModelConfig, arrays: dict[str, np.ndarray]):
        config.check()
        expected = parameter_shapes(config)
        problems = [n for n in expected if n not in arrays]
        problems += [
            f"{n}: {np.shape(arrays[n])} != {s}"
            for n, s in expected.items()
            if n in arrays and tuple(np.shape(arrays[n])) != s
        ]
        if problems:
            raise DimensionError("weights do not match config: " + "; ".join(problems))
        if not all(np.all(np.isfinite(arrays[n])) for n in expected):
            raise ContractError("weights contain non-finite values")
        self.config = config
        self.params: dict[str, Tensor] = {
            n: Tensor(arrays[n], requires_grad=True, name=n) for n in expected
        }

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.params.values())

    def __len__(self) -> int:
        return len(self.params)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}

    def fingerprint(self) -> str:
        return arrays_fingerprint({n: p.data for n, p in self.params.items()})

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.config, self.to_arrays())


def init_weights(config: ModelConfig, seed: int, zero_output: bool = False) -> ModelWeights:
    """
    Scaled-normal initialisation; norm gains 1, biases 0.

    With *zero_output* the output projection starts at zero, so every
    position predicts the uniform distribution over the vocabulary.
    """
    config.check()
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".gain"):
            arrays[name] = np.ones(shape)
        elif name.endswith((".bias", ".b1", ".b2")):
            arrays[name] = np.zeros(shape)
        elif name == "output" and zero_output:
            arrays[name] = np.zeros(shape)
        else:
            arrays[name] = rng.normal(0.0, config.init_std, size=shape)
    return ModelWeights(config, arrays)


def sinusoidal_positions(positions: Sequence[int], d_model: int) -> np.ndarray:
    """Fixed sinusoidal encodings for absolute *positions*."""
    pos = np.asarray(positions, dtype=np.float64)[:, None]
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


@dataclass
class AttentionTrace:
    """
    Per-layer internals recorded during a forward pass.

    Attributes:
        probs: Post-softmax attention, ``(H, L, P + L)`` per layer.
        keys: Projected keys of this pass's positions, ``(H, L, d_head)`` per layer.
        values: Projected values, same layout as ``keys``.
    """

    probs: list[np.ndarray] = field(default_factory=list)
    keys: list[Tensor] = field(default_factory=list)
    values: list[Tensor] = field(default_factory=list)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    length, width = x.shape
    return x.reshape(length, n_heads, width // n_heads).transpose(1, 0, 2)


def _attention(
    h: Tensor,
    weights: ModelWeights,
    layer: int,
    mask: np.ndarray,
    prefix: tuple[Tensor, Tensor] | None,
    trace: AttentionTrace | None,
) -> Tensor:
    cfg = weights.config
    p = f"layers.{layer}.attn"
    q = _split_heads(h @ weights[f"{p}.wq"], cfg.n_heads)
    k = _split_heads(h @ weights[f"{p}.wk"], cfg.n_heads)
    v = _split_heads(h @ weights[f"{p}.wv"], cfg.n_heads)
    if trace is not None:
        trace.keys.append(k)
        trace.values.append(v)
    if prefix is not None:
        k = concat([prefix[0], k], axis=1)
        v = concat([prefix[1], v], axis=1)

    scores = (q @ k.transpose(0, 2, 1)) * (1.0 / math.sqrt(cfg.d_head))
    probs = softmax_lastdim(scores, mask)
    if trace is not None:
        trace.probs.append(probs.data)
    context = (probs @ v).transpose(1, 0, 2).reshape(h.shape[0], cfg.d_model)
    return context @ weights[f"{p}.wo"]


def forward(
    token_ids: Sequence[int],
    mask: np.ndarray,
    weights: ModelWeights,
    *,
    positions: Sequence[int] | None = None,
    prefix_kv: Sequence[tuple[Tensor, Tensor]] | None = None,
    trace: AttentionTrace | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """
    Run the encoder over *token_ids*.

    Args:
        token_ids: ``L`` token ids.
        mask: Additive mask of shape ``(L, P + L)`` where ``P`` is the prefix
            length (0 without *prefix_kv*).
        weights: Parameters.
        positions: Absolute positions of the tokens; defaults to ``0..L-1``.
        prefix_kv: Per-layer ``(keys, values)`` of ``P`` earlier positions
            that every row may attend to as allowed by *mask*.
        trace: When given, receives attention probabilities and keys/values.
        rng: Dropout randomness; dropout is skipped without it.

    Returns:
        ``(hidden_states (L, d_model), logits (L, vocab_size))``.

    Raises:
        ContractError: If the sequence is empty or runs past ``max_seq_len``.
        DimensionError: If the mask shape does not match.
    """
    cfg = weights.config
    length = len(token_ids)
    if length == 0:
        raise ContractError("forward() on an empty sequence")
    positions = np.arange(length) if positions is None else np.asarray(positions)
    if positions.shape != (length,):
        raise DimensionError(f"{positions.shape[0]} positions for {length} tokens")
    if positions.max() >= cfg.max_seq_len:
        raise ContractError(f"sequence reaches position {int(positions.max())}, max_seq_len is {cfg.max_seq_len}")
    prefix_len = 0 if prefix_kv is None else prefix_kv[0][0].shape[1]
    if prefix_kv is not None and len(prefix_kv) != cfg.n_layers:
        raise DimensionError(f"prefix has {len(prefix_kv)} layers, model has {cfg.n_layers}")
    if mask.shape != (length, prefix_len + length):
        raise DimensionError(f"mask shape {mask.shape} != {(length, prefix_len + length)}")

    x = embedding(weights["embedding"], token_ids) + sinusoidal_positions(positions, cfg.d_model)
    for i in range(cfg.n_layers):
        p = f"layers.{i}"
        h = layer_norm(x, weights[f"{p}.ln1.gain"], weights[f"{p}.ln1.bias"], cfg.layer_norm_eps)
        prefix = prefix_kv[i] if prefix_kv is not None else None
        x = x + dropout(_attention(h, weights, i, mask, prefix, trace), cfg.dropout, rng)
        h = layer_norm(x, weights[f"{p}.ln2.gain"], weights[f"{p}.ln2.bias"], cfg.layer_norm_eps)
        ff = gelu(h @ weights[f"{p}.ffn.w1"] + weights[f"{p}.ffn.b1"]) @ weights[f"{p}.ffn.w2"]
        x = x + dropout(ff + weights[f"{p}.ffn.b2"], cfg.dropout, rng)

    hidden = layer_norm(x, weights["final_ln.gain"], weights["final_ln.bias"], cfg.layer_norm_eps)
    logits = hidden @ weights["output"]
    return hidden, logits
