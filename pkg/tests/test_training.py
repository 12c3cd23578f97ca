"""
Tests for training
==================

Tests cover:
- Presets, TOML files, overrides and collected config problems
- Resumed runs keeping the checkpoint's settings
- Batching, negative pools and the resumable micro-batch stream
- Hard-negative mining windows
- Trainer bookkeeping, ablations, accumulation, resume and failure modes
"""

from itertools import islice

import numpy as np
import pytest

from src.errors import ConfigurationError, NonFiniteLossError
from src.index import build_index, search_topk
from src.index.store import SearchHit
from src.model import Encoder, ModelConfig, init_weights
from src.model.checkpoint import decode_checkpoint, encode_checkpoint
from src.numeric import Tensor
from src.objectives import ContrastiveConfig, LossWeights
from src.text import Passage, Session, TrainingSample, Turn, Role, build_vocabulary
from src.text.synthetic import SyntheticTaskConfig, generate_task
from src.training import (
    Batch,
    RunConfig,
    TrainConfig,
    Trainer,
    iter_micro_batches,
    make_batches,
    mine_hard_negatives,
    mining_window,
    negative_pool,
    read_loss_trace,
    resolve_run_config,
    resume_run_config,
    write_loss_trace,
)
from src.training.mining import sample_from_window


# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def task():
    return generate_task(SyntheticTaskConfig(n_entities=30, aspects_per_entity=3, n_conversations=10,
                                             turns_per_conversation=2, n_hard_negatives=3, seed=1))


@pytest.fixture(scope="module")
def vocab(task):
    texts = [p.text for p in task.corpus]
    for conv in task.train_conversations + task.heldout_conversations:
        texts.extend(t.query for t in conv.turns)
        texts.extend(t.rewrite for t in conv.turns)
    return build_vocabulary(texts)


def tiny_run(vocab, **train) -> RunConfig:
    """Helper: one-layer model and a few steps."""
    defaults = dict(steps=3, batch_size=4, grad_accum_steps=1, n_hard_negatives=3, learning_rate=1e-2, seed=5,
                    log_every=1)
    defaults.update(train)
    return RunConfig(
        preset="desk",
        model=ModelConfig(vocab_size=len(vocab), d_model=8, n_layers=1, n_heads=2, d_ff=16,
                          max_seq_len=128, t_special=2),
        train=TrainConfig(**defaults),
        contrastive=ContrastiveConfig(temperature=0.1),
        loss=LossWeights(alpha=0.5),
    )


def fresh_encoder(vocab, run: RunConfig, seed: int = 0) -> Encoder:
    """Helper: encoder with freshly initialised weights."""
    return Encoder(vocab, init_weights(run.effective_model_config(len(vocab)), seed=seed))


def passage(pid: str) -> Passage:
    return Passage(pid, f"text of {pid}")


def sample(sid: str, pos: str, *negs: str) -> TrainingSample:
    return TrainingSample(Session(sid, (Turn(Role.USER, "query"),)), passage(pos), tuple(passage(n) for n in negs))


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

class TestRunConfig:
    """Tests for resolve_run_config() and resume_run_config()."""

    def test_paper_preset(self):
        run = resolve_run_config("paper")
        t = run.train
        assert (t.steps, t.learning_rate, t.grad_accum_steps, t.batch_size, t.n_hard_negatives) == (2500, 1e-4, 4, 64, 4)
        assert run.model.t_special == 3 and run.model.max_seq_len == 1024

    def test_desk_preset(self):
        run = resolve_run_config("desk")
        assert (run.train.batch_size, run.train.steps, run.model.d_model, run.model.n_layers) == (16, 2000, 64, 2)

    def test_file_then_overrides(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("[train]\nsteps = 10\nseed = 3\n[loss]\nalpha = 0.25\n")
        run = resolve_run_config("desk", path, {"train": {"seed": 9, "steps": None}})
        assert run.train.steps == 10
        assert run.train.seed == 9
        assert run.loss.alpha == 0.25

    def test_problems_collected(self, tmp_path):
        """Unknown keys, bad types and unknown sections are reported together."""
        path = tmp_path / "bad.toml"
        path.write_text('[train]\nsteps = "many"\nbogus = 1\n[model]\nd_model = 7\nn_heads = 2\n[extra]\nx = 1\n')
        with pytest.raises(ConfigurationError) as info:
            resolve_run_config("desk", path)
        assert len(info.value.problems) >= 4

    def test_unknown_preset(self):
        with pytest.raises(ConfigurationError):
            resolve_run_config("huge")

    def test_ablation_views(self):
        run = resolve_run_config("desk", overrides={"train": {"no_rcot": True, "no_sit": True}})
        assert run.t_special == 1
        assert run.effective_model_config(100).t_special == 1
        assert run.effective_loss.alpha == 0.0

    def test_round_trips_through_toml(self, tmp_path):
        run = resolve_run_config("paper")
        path = tmp_path / "snapshot.toml"
        path.write_text(run.to_toml())
        assert resolve_run_config("desk", path).to_dict() == {**run.to_dict(), "preset": "desk"}

    def test_resume_keeps_stored_values(self):
        stored = resolve_run_config("paper", overrides={"train": {"seed": 4}}).to_dict()
        run = resume_run_config(stored, overrides={"train": {"steps": 3000, "seed": 4, "learning_rate": None}})
        assert run.preset == "paper"
        assert run.to_dict() == {**stored, "train": {**stored["train"], "steps": 3000}}

    def test_resume_lists_every_changed_value(self, tmp_path):
        stored = resolve_run_config("desk").to_dict()
        path = tmp_path / "run.toml"
        path.write_text("[model]\nt_special = 5\n[train]\neval_every = 100\n")
        overrides = {"train": {"batch_size": 3}, "contrastive": {"temperature": 0.5}}
        with pytest.raises(ConfigurationError) as info:
            resume_run_config(stored, "paper", path, overrides)
        problems = info.value.problems
        assert len(problems) == 5
        assert any(p.startswith("preset:") for p in problems)
        assert any("[model] t_special" in p for p in problems)
        assert any("[train] batch_size" in p for p in problems)
        assert any("[contrastive] temperature" in p for p in problems)
        assert not any("eval_every" in p for p in problems)


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------

class TestBatching:
    """Tests for make_batches(), iter_micro_batches() and negative pools."""

    def test_last_batch_kept(self):
        samples = [sample(f"s{i}", f"p{i}") for i in range(10)]
        assert [len(b) for b in make_batches(samples, 4, seed=0)] == [4, 4, 2]

    def test_seeded_order(self):
        samples = [sample(f"s{i}", f"p{i}") for i in range(10)]
        a = [b.indices for b in make_batches(samples, 4, seed=7)]
        b = [b.indices for b in make_batches(samples, 4, seed=7)]
        assert a == b
        assert sorted(i for idx in a for i in idx) == list(range(10))

    def test_epochs_reshuffle(self):
        samples = [sample(f"s{i}", f"p{i}") for i in range(20)]
        first = [b.indices for b in make_batches(samples, 5, seed=1, epoch=0)]
        second = [b.indices for b in make_batches(samples, 5, seed=1, epoch=1)]
        assert first != second

    def test_stream_resumes(self):
        """Starting at micro-batch 3 matches skipping 3 from the start."""
        samples = [sample(f"s{i}", f"p{i}") for i in range(7)]
        full = [b.indices for b in islice(iter_micro_batches(samples, 3, seed=2), 8)]
        resumed = [b.indices for b in islice(iter_micro_batches(samples, 3, seed=2, start=3), 5)]
        assert resumed == full[3:]

    def test_pool_excludes_own_positive(self):
        """s1's positive is s2's negative: excluded from s1's pool only."""
        s1 = sample("s1", "p1", "p2")
        s2 = sample("s2", "p2", "p1", "p3")
        batch = [s1, s2]
        assert [p.pid for p in negative_pool(s1, batch, True)] == ["p2"]
        assert [p.pid for p in negative_pool(s2, batch, True)] == ["p1", "p3"]

    def test_pool_without_in_batch(self):
        s1 = sample("s1", "p1", "n1")
        s2 = sample("s2", "p2", "n2")
        assert [p.pid for p in negative_pool(s1, [s1, s2], False)] == ["n1"]
        assert [p.pid for p in negative_pool(s1, [s1, s2], True)] == ["n1", "p2"]

    def test_unique_passages(self):
        s1 = sample("s1", "p1", "n1")
        s2 = sample("s2", "p2", "n1")
        batch = Batch((s1, s2), (0, 1))
        assert set(batch.unique_passages(True)) == {"p1", "p2", "n1"}


# ---------------------------------------------------------------------------
# Mining
# ---------------------------------------------------------------------------

class TestMining:
    """Tests for the mining window and mine_hard_negatives()."""

    def test_window_unchanged_for_large_corpus(self):
        assert mining_window(100, 15, 30) == (15, 30)

    def test_window_shrinks(self):
        assert mining_window(20, 15, 30) == (5, 20)
        assert mining_window(10, 15, 30) == (1, 10)

    def test_sample_from_window(self):
        """Positive at rank 20 is never drawn; draws are distinct and in range."""
        hits = [SearchHit(f"p{r}", 1.0 - r / 100, r) for r in range(1, 31)]
        for seed in range(20):
            picked = sample_from_window(hits, "p20", 4, 15, 30, np.random.default_rng(seed))
            pids = [h.pid for h in picked]
            assert len(set(pids)) == 4
            assert "p20" not in pids
            assert all(15 <= h.rank <= 30 for h in picked)

    def test_mined_ranks_in_window(self, task, vocab):
        run = tiny_run(vocab)
        encoder = fresh_encoder(vocab, run)
        index = build_index(task.corpus, encoder)
        corpus = {p.pid: p for p in task.corpus}
        samples = task.train_samples[:6]
        mined = mine_hard_negatives(samples, index, encoder, corpus, 4, seed=3)
        for original, new in zip(samples, mined):
            assert len(new.hard_negatives) == 4
            ranks = {h.pid: h.rank for h in search_topk(encoder.encode_session(original.session), index, 30)}
            for neg in new.hard_negatives:
                assert neg.pid != original.positive.pid
                assert 15 <= ranks[neg.pid] <= 30

    def test_mining_deterministic(self, task, vocab):
        run = tiny_run(vocab)
        encoder = fresh_encoder(vocab, run)
        index = build_index(task.corpus, encoder)
        corpus = {p.pid: p for p in task.corpus}
        a = mine_hard_negatives(task.train_samples[:5], index, encoder, corpus, 3, seed=11)
        b = mine_hard_negatives(task.train_samples[:5], index, encoder, corpus, 3, seed=11)
        assert [s.hard_negatives for s in a] == [s.hard_negatives for s in b]


# ---------------------------------------------------------------------------
# Trainer
# ---------------------------------------------------------------------------

def gradients(encoder: Encoder) -> dict[str, np.ndarray]:
    """Helper: copy of every parameter gradient."""
    return {p.name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for p in encoder.weights}


class TestTrainer:
    """Tests for Trainer."""

    def test_trace_bookkeeping(self, task, vocab):
        """L equals L_C + alpha * L_S at every step."""
        run = tiny_run(vocab)
        result = Trainer(fresh_encoder(vocab, run), run).train(task.train_samples)
        assert [r.step for r in result.loss_trace] == [1, 2, 3]
        for r in result.loss_trace:
            assert abs(r.total - (r.l_c + 0.5 * r.l_s)) < 1e-12
            assert r.l_s > 0.0

    def test_deterministic(self, task, vocab):
        run = tiny_run(vocab)
        a, b = fresh_encoder(vocab, run), fresh_encoder(vocab, run)
        Trainer(a, run).train(task.train_samples)
        Trainer(b, run).train(task.train_samples)
        assert a.weights.fingerprint() == b.weights.fingerprint()

    def test_alpha_zero_matches_no_sit(self, task, vocab):
        """A zero LM weight and the no_sit ablation train identical weights."""
        run_zero = tiny_run(vocab)
        run_zero.loss = LossWeights(alpha=0.0)
        run_ablate = tiny_run(vocab, no_sit=True)
        a, b = fresh_encoder(vocab, run_zero), fresh_encoder(vocab, run_ablate)
        Trainer(a, run_zero).train(task.train_samples)
        Trainer(b, run_ablate).train(task.train_samples)
        assert a.weights.fingerprint() == b.weights.fingerprint()

    def test_lm_term_changes_training(self, task, vocab):
        run = tiny_run(vocab)
        ablate = tiny_run(vocab, no_sit=True)
        a, b = fresh_encoder(vocab, run), fresh_encoder(vocab, ablate)
        Trainer(a, run).train(task.train_samples)
        Trainer(b, ablate).train(task.train_samples)
        assert a.weights.fingerprint() != b.weights.fingerprint()

    def test_accumulation_equivalence(self, task, vocab):
        """Two micro-batches of 2 give the gradient of one batch of 4 (no in-batch negatives)."""
        run = tiny_run(vocab)
        run.contrastive = ContrastiveConfig(temperature=0.1, use_in_batch_negatives=False)
        trainer = Trainer(fresh_encoder(vocab, run), run)
        trainer.load(task.train_samples)
        s = trainer.samples
        trainer.accumulate([Batch((s[0], s[1]), (0, 1)), Batch((s[2], s[3]), (2, 3))])
        split = gradients(trainer.encoder)
        trainer.accumulate([Batch(tuple(s[:4]), (0, 1, 2, 3))])
        whole = gradients(trainer.encoder)
        for name in whole:
            np.testing.assert_allclose(split[name], whole[name], rtol=1e-9, atol=1e-12)

    def test_resume_matches_uninterrupted(self, task, vocab):
        """Stopping at step 2 and resuming from the checkpoint reproduces a 4-step run."""
        full_run = tiny_run(vocab, steps=4, grad_accum_steps=2)
        half_run = tiny_run(vocab, steps=2, grad_accum_steps=2)

        full = fresh_encoder(vocab, full_run)
        full_result = Trainer(full, full_run).train(task.train_samples)

        first = Trainer(fresh_encoder(vocab, half_run), half_run)
        ckpt = decode_checkpoint(encode_checkpoint(first.to_checkpoint(first.train(task.train_samples))))
        resumed = ckpt.encoder()
        resumed_result = Trainer(resumed, full_run).train(task.train_samples, resume=ckpt)

        assert resumed_result.loss_trace == full_result.loss_trace
        assert resumed.weights.fingerprint() == full.weights.fingerprint()

    def test_non_finite_loss_names_sample(self, task, vocab, monkeypatch):
        import src.training.trainer as trainer_module

        monkeypatch.setattr(trainer_module, "contrastive_loss", lambda *a, **k: Tensor(float("nan")))
        run = tiny_run(vocab)
        with pytest.raises(NonFiniteLossError, match="sample"):
            Trainer(fresh_encoder(vocab, run), run).train(task.train_samples)

    def test_eval_callback(self, task, vocab):
        run = tiny_run(vocab, steps=4, eval_every=2)
        calls = []

        def callback(step, encoder):
            calls.append(step)
            return 0.5

        result = Trainer(fresh_encoder(vocab, run), run, eval_callback=callback).train(task.train_samples)
        assert calls == [2, 4]
        assert result.eval_trace == [(2, 0.5), (4, 0.5)]

    def test_remining(self, task, vocab):
        run = tiny_run(vocab, steps=2, remine_every=1)
        trainer = Trainer(fresh_encoder(vocab, run), run, corpus=task.corpus)
        before = [s.hard_negatives for s in task.train_samples]
        trainer.train(task.train_samples)
        after = [s.hard_negatives for s in trainer.samples]
        assert after != before
        for s in trainer.samples:
            assert s.positive.pid not in {n.pid for n in s.hard_negatives}

    def test_no_rcot_needs_single_special(self, task, vocab):
        run = tiny_run(vocab, no_rcot=True)
        encoder = fresh_encoder(vocab, run)
        assert encoder.config.t_special == 1
        Trainer(encoder, run).train(task.train_samples[:4])

    def test_loss_trace_csv(self, task, vocab, tmp_path):
        run = tiny_run(vocab, steps=2)
        result = Trainer(fresh_encoder(vocab, run), run).train(task.train_samples)
        path = write_loss_trace(result.loss_trace, tmp_path / "loss.csv")
        assert path.read_text().splitlines()[0] == "step,L_C,L_S,L"
        assert read_loss_trace(path) == result.loss_trace
