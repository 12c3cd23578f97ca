"""
Tests for the training objectives
==================================

Tests cover:
- score_phi and contrastive loss closed forms and properties
- Session-masked LM loss against the two-pass reference
- Combined loss bookkeeping and gradient linearity
- Gradient check of the full combined loss on a toy model
"""

import math

import numpy as np
import pytest

from src.errors import ContractError
from src.model import ModelConfig, build_session_mask, init_weights, Encoder
from src.numeric import Tensor, cross_entropy_with_logits
from src.numeric.gradcheck import finite_difference_gradient, relative_error
from src.objectives import (
    ContrastiveConfig,
    LossWeights,
    causal_mask_for,
    combined_loss,
    contrastive_loss,
    score_phi,
    session_masked_lm_loss,
    two_pass_lm_loss_oracle,
)
from src.model.transformer import forward
from src.text import PackedSequence, Passage, Session, TrainingSample, Turn, Role, build_vocabulary
from src.text.formatting import pack_training_sequence


# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------

@pytest.fixture
def vocab():
    return build_vocabulary([
        "what is the cost of karo", "the cost of karo is low", "what about its climate",
        "the climate of karo is mild", "rain falls in spring", "the size of lomi is small",
    ])


def toy_config(vocab, n_layers: int = 2, t: int = 2, d_model: int = 8) -> ModelConfig:
    """Helper: small config over *vocab*."""
    return ModelConfig(vocab_size=len(vocab), d_model=d_model, n_layers=n_layers, n_heads=2,
                       d_ff=16, max_seq_len=64, t_special=t, init_std=0.3)


def random_packed(rng, vocab_size: int, n: int, m: int, t: int) -> PackedSequence:
    """Helper: packed sequence with random ordinary tokens."""
    specials = list(range(5, 5 + t))
    session = [int(i) for i in rng.integers(13, vocab_size, size=n)] + specials
    response = [int(i) for i in rng.integers(13, vocab_size, size=m)] + specials
    return PackedSequence.from_parts(session, response, t)


def unit(*values) -> Tensor:
    v = np.asarray(values, dtype=np.float64)
    return Tensor(v / np.linalg.norm(v))


# ---------------------------------------------------------------------------
# score_phi / contrastive loss
# ---------------------------------------------------------------------------

class TestScorePhi:
    """Tests for score_phi()."""

    def test_identical(self):
        assert score_phi([1.0, 0.0], [1.0, 0.0], 1.0) == pytest.approx(math.e)

    def test_orthogonal(self):
        assert score_phi([1.0, 0.0], [0.0, 1.0], 1.0) == pytest.approx(1.0)

    def test_half_cosine(self):
        """cos 0.5 at tau 0.1 is e^5."""
        y = [0.5, math.sqrt(3) / 2]
        assert score_phi([1.0, 0.0], y, 0.1) == pytest.approx(math.exp(5.0), rel=1e-12)

    def test_zero_vector(self):
        with pytest.raises(ContractError):
            score_phi([0.0, 0.0], [1.0, 0.0], 1.0)


class TestContrastiveLoss:
    """Tests for contrastive_loss()."""

    def test_uniform_scores(self):
        """Four negatives scoring like the positive give ln 5."""
        e = unit(1.0, 2.0, 3.0)
        loss = contrastive_loss(e, e, [e, e, e, e], ContrastiveConfig(temperature=0.05))
        assert loss.item() == pytest.approx(math.log(5.0), abs=1e-12)

    def test_closed_form(self):
        """cos (1; 0, 0) at tau 1 gives ln(1 + 2/e)."""
        loss = contrastive_loss(unit(1, 0, 0), unit(1, 0, 0), [unit(0, 1, 0), unit(0, 0, 1)],
                                ContrastiveConfig(temperature=1.0))
        assert abs(loss.item() - math.log(1.0 + 2.0 / math.e)) < 1e-9

    def test_small_temperature_limit(self):
        """A strictly best positive drives the loss to zero as tau shrinks."""
        loss = contrastive_loss(unit(1, 0, 0), unit(1, 0, 0), [unit(0, 1, 0), unit(0, 0, 1)],
                                ContrastiveConfig(temperature=1e-3))
        assert loss.item() < 1e-12

    def test_permutation_invariant(self):
        rng = np.random.default_rng(2)
        vecs = [unit(*rng.normal(size=4)) for _ in range(5)]
        cfg = ContrastiveConfig(temperature=0.5)
        a = contrastive_loss(vecs[0], vecs[1], vecs[2:], cfg).item()
        b = contrastive_loss(vecs[0], vecs[1], vecs[:1:-1], cfg).item()
        assert a == pytest.approx(b, abs=1e-12)

    def test_decreases_with_positive_cosine(self):
        """Raising the positive's cosine lowers the loss."""
        cfg = ContrastiveConfig(temperature=0.5)
        negs = [unit(0, 1, 0), unit(0, 0, 1)]
        losses = [
            contrastive_loss(unit(1, 0, 0), unit(c, math.sqrt(1 - c * c), 0), negs, cfg).item()
            for c in (0.0, 0.3, 0.6, 0.9, 1.0)
        ]
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_empty_negatives(self):
        with pytest.raises(ContractError):
            contrastive_loss(unit(1, 0), unit(1, 0), [], ContrastiveConfig())


# ---------------------------------------------------------------------------
# Session-masked LM loss
# ---------------------------------------------------------------------------

class TestSessionMaskedLoss:
    """Tests for session_masked_lm_loss() and its two-pass reference."""

    def test_zero_output_projection(self, vocab):
        """Uniform logits cost exactly ln V."""
        weights = init_weights(toy_config(vocab), seed=0, zero_output=True)
        seq = random_packed(np.random.default_rng(0), len(vocab), 4, 3, 2)
        loss = session_masked_lm_loss(seq, weights)
        assert loss.item() == pytest.approx(math.log(len(vocab)), abs=1e-12)

    def test_single_response_token(self, vocab):
        """M=1 reduces to one cross entropy at the last session special."""
        weights = init_weights(toy_config(vocab), seed=1)
        seq = random_packed(np.random.default_rng(1), len(vocab), 3, 1, 2)
        _, logits = forward(list(seq.token_ids), build_session_mask(seq), weights)
        expected = cross_entropy_with_logits(logits[seq.response_start - 1:seq.response_start],
                                             [seq.token_ids[seq.response_start]])
        assert session_masked_lm_loss(seq, weights).item() == pytest.approx(expected.item(), abs=1e-14)

    def test_no_response_tokens(self, vocab):
        weights = init_weights(toy_config(vocab), seed=1)
        seq = PackedSequence.from_parts([13, 14, 5, 6], [5, 6], t=2)
        with pytest.raises(ContractError):
            session_masked_lm_loss(seq, weights)

    def test_matches_two_pass_reference(self, vocab):
        """Single-pass masked loss equals the two-pass construction on random configurations."""
        rng = np.random.default_rng(5)
        for trial in range(20):
            t = int(rng.integers(1, 4))
            layers = int(rng.integers(1, 4))
            weights = init_weights(toy_config(vocab, n_layers=layers, t=t), seed=trial)
            seq = random_packed(rng, len(vocab), int(rng.integers(1, 17)), int(rng.integers(1, 17)), t)
            joint = session_masked_lm_loss(seq, weights).item()
            assert abs(joint - two_pass_lm_loss_oracle(seq, weights)) < 1e-5

    def test_causal_mask_breaks_equivalence(self, vocab):
        """Under a plain causal mask the loss no longer matches the reference."""
        weights = init_weights(toy_config(vocab), seed=7)
        seq = random_packed(np.random.default_rng(7), len(vocab), 6, 5, 2)
        vanilla = session_masked_lm_loss(seq, weights, mask_builder=causal_mask_for).item()
        assert abs(vanilla - two_pass_lm_loss_oracle(seq, weights)) > 1e-6

    def test_special_count_changes_loss(self, vocab):
        """The same text packed with t=1 and t=3 gives different losses."""
        sample = TrainingSample(
            Session("s", (Turn(Role.USER, "what is the cost of karo"),)),
            Passage("p", "the cost of karo is low"),
        )
        losses = []
        for t in (1, 3):
            weights = init_weights(toy_config(vocab, t=t), seed=11)
            seq = pack_training_sequence(sample, vocab, t, 64)
            losses.append(session_masked_lm_loss(seq, weights).item())
        assert losses[0] != pytest.approx(losses[1], abs=1e-9)


# ---------------------------------------------------------------------------
# Combined loss
# ---------------------------------------------------------------------------

class TestCombinedLoss:
    """Tests for combined_loss()."""

    def test_alpha_zero_is_contrastive(self):
        """With alpha 0 the result is the contrastive loss itself."""
        l_c, l_s = Tensor(1.25), Tensor(7.0)
        assert combined_loss(l_c, l_s, LossWeights(alpha=0.0)) is l_c

    def test_sum(self):
        assert combined_loss(Tensor(1.0), Tensor(2.0), LossWeights(alpha=1.0)).item() == 3.0

    def test_gradient_linearity(self):
        """grad(L_C + a L_S) = grad(L_C) + a grad(L_S)."""
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=4), requires_grad=True)
        w1, w2 = rng.normal(size=4), rng.normal(size=4)
        alpha = 0.7
        (x * w1).sum().backward()
        g_c = x.grad.copy()
        x.grad = None
        (x * x * w2).sum().backward()
        g_s = x.grad.copy()
        x.grad = None
        combined_loss((x * w1).sum(), (x * x * w2).sum(), LossWeights(alpha)).backward()
        np.testing.assert_allclose(x.grad, g_c + alpha * g_s, atol=1e-12)


# ---------------------------------------------------------------------------
# Gradient check of the full objective
# ---------------------------------------------------------------------------

class TestFullObjectiveGradient:
    """Finite-difference check of L_C + alpha * L_S on a 2-layer toy model."""

    def test_every_parameter(self, vocab):
        """Each parameter's gradient matches central differences within 1e-4."""
        config = toy_config(vocab, n_layers=2, t=2)
        weights = init_weights(config, seed=21)
        encoder = Encoder(vocab, weights)
        sample = TrainingSample(
            Session("s", (Turn(Role.USER, "what is the cost of karo"),
                          Turn(Role.ASSISTANT, "the cost of karo is low"),
                          Turn(Role.USER, "what about its climate"))),
            Passage("p", "the climate of karo is mild"),
            (Passage("n1", "rain falls in spring"), Passage("n2", "the size of lomi is small")),
        )
        session_ids = encoder.session_ids(sample.session)
        pos_ids = encoder.passage_ids(sample.positive)
        neg_ids = [encoder.passage_ids(n) for n in sample.hard_negatives]
        seq = pack_training_sequence(sample, vocab, config.t_special, config.max_seq_len)
        cfg, w = ContrastiveConfig(temperature=0.5), LossWeights(alpha=1.0)

        def objective(_=None):
            l_c = contrastive_loss(encoder.embed_ids(session_ids), encoder.embed_ids(pos_ids),
                                   [encoder.embed_ids(ids) for ids in neg_ids], cfg)
            return combined_loss(l_c, session_masked_lm_loss(seq, weights), w)

        weights.zero_grad()
        objective().backward()
        for param in weights:
            numeric = finite_difference_gradient(objective, param, eps=1e-5)
            assert relative_error(param.grad, numeric) < 1e-4, param.name
