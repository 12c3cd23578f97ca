"""
Tests for the robustness protocols
==================================

Tests cover:
- Evaluation dataset JSONL loading and writing
- The heuristic and provider-backed judges
- Response synthesis and provider fallback
- The five context variants per turn
- Partial response and full context protocols against normal evaluation
- Mean/SD reporting and the report CSV
- The chat provider client (with a fake HTTP session)
"""

import csv
import logging
import math

import pytest
import requests

from src.errors import ConfigurationError, ContractError, MissingRewriteError, ProviderError, SchemaError
from src.evaluation import evaluate_conversations, evaluate_run_files, write_run
from src.index import build_index
from src.model import Encoder, ModelConfig, init_weights
from src.robustness import (
    ChatProvider,
    GoldResponder,
    HeuristicJudge,
    JudgeVerdict,
    LlmContextGenerator,
    LlmJudge,
    LlmProviderConfig,
    LlmResponder,
    RobustReport,
    full_context_eval,
    full_context_variants,
    load_eval_dataset,
    mean_sd,
    partial_response_eval,
    robust_report,
    synthesize_response,
    write_eval_dataset,
)
from src.robustness.judge import has_anaphora, word_overlap
from src.robustness.responder import lead_sentence
from src.text import Passage, Role, build_vocabulary
from src.text.conversation import EvalConversation, EvalTurn
from src.text.synthetic import SyntheticTaskConfig, generate_task


# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def task():
    return generate_task(SyntheticTaskConfig(n_entities=20, aspects_per_entity=3, n_conversations=8,
                                             turns_per_conversation=3, n_hard_negatives=2, seed=3))


@pytest.fixture(scope="module")
def conversations(task):
    return task.train_conversations + task.heldout_conversations


@pytest.fixture(scope="module")
def encoder(task, conversations):
    texts = [p.text for p in task.corpus]
    for conv in conversations:
        texts.extend(t.query for t in conv.turns)
        texts.extend(t.rewrite for t in conv.turns)
    vocab = build_vocabulary(texts)
    config = ModelConfig(vocab_size=len(vocab), d_model=8, n_layers=1, n_heads=2, d_ff=16,
                         max_seq_len=128, t_special=2)
    return Encoder(vocab, init_weights(config, seed=0))


@pytest.fixture(scope="module")
def index(task, encoder):
    return build_index(task.corpus, encoder)


@pytest.fixture(scope="module")
def corpus(task):
    return {p.pid: p for p in task.corpus}


def conversation_3() -> EvalConversation:
    """Helper: a hand-written three-turn conversation."""
    return EvalConversation("k1", (
        EvalTurn("k1_1", "what is the cost of kalora ?", "the cost of living in kalora is low . prices vary .",
                 "what is the cost of kalora ?"),
        EvalTurn("k1_2", "what about its climate ?", "the climate of kalora is mild .",
                 "what is the climate of kalora ?"),
        EvalTurn("k1_3", "and the size of it ?", "the size of kalora is small .",
                 "what is the size of kalora ?"),
    ))


class FakeResponse:
    def __init__(self, payload=None, status=200):
        self.payload = payload
        self.status = status

    def raise_for_status(self):
        if self.status >= 400:
            raise requests.HTTPError(f"status {self.status}")

    def json(self):
        return self.payload


class FakeSession:
    """Replays queued replies; an Exception in the queue is raised instead."""

    def __init__(self, *replies):
        self.replies = list(replies)
        self.calls = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append({"url": url, "json": json, "headers": headers, "timeout": timeout})
        reply = self.replies.pop(0) if self.replies else requests.ConnectionError("no reply queued")
        if isinstance(reply, Exception):
            raise reply
        return reply


def chat_reply(text: str) -> FakeResponse:
    return FakeResponse({"choices": [{"message": {"content": text}}]})


def provider(*replies, max_retries=0) -> ChatProvider:
    config = LlmProviderConfig(endpoint="http://llm.test/v1/chat/completions", max_retries=max_retries)
    return ChatProvider(config, session=FakeSession(*replies))


class BlankResponder:
    """Answers every turn with whitespace only."""

    def respond(self, passages, history, gold):
        return " \n\t "


class AlwaysUnreasonable(HeuristicJudge):
    def is_reasonable(self, query, new_response, original_response):
        return False


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

class TestEvalDataset:
    """Tests for load_eval_dataset() and write_eval_dataset()."""

    def test_round_trip(self, tmp_path, conversations):
        path = write_eval_dataset(conversations, tmp_path / "eval.jsonl")
        assert load_eval_dataset(path) == conversations

    def test_missing_qid(self, tmp_path):
        path = tmp_path / "eval.jsonl"
        path.write_text('{"conversation_id": "c", "turns": [{"query": "hi"}]}\n')
        with pytest.raises(SchemaError) as info:
            load_eval_dataset(path)
        assert info.value.field == "qid"
        assert info.value.line == 1

    def test_duplicate_qid(self, tmp_path):
        path = tmp_path / "eval.jsonl"
        path.write_text('{"turns": [{"qid": "q", "query": "a"}]}\n{"turns": [{"qid": "q", "query": "b"}]}\n')
        with pytest.raises(SchemaError) as info:
            load_eval_dataset(path)
        assert info.value.line == 2

    def test_blank_rewrite_is_none(self, tmp_path):
        path = tmp_path / "eval.jsonl"
        path.write_text('{"turns": [{"qid": "q", "query": "a", "rewrite": "  "}]}\n')
        assert load_eval_dataset(path)[0].turns[0].rewrite is None


# ---------------------------------------------------------------------------
# Judge and responder
# ---------------------------------------------------------------------------

class TestJudge:
    """Tests for the heuristic and provider-backed judges."""

    def test_no_anaphora_always_reasonable(self):
        verdict = HeuristicJudge().judge("what is the cost of kalora ?", "unrelated words", "other text", None)
        assert verdict.reasonable
        assert verdict.substituted_query is None

    def test_anaphora_without_overlap_substitutes(self):
        verdict = HeuristicJudge().judge("what about its cost", "rain falls in spring .",
                                         "kalora is a town .", "what is the cost of kalora ?")
        assert not verdict.reasonable
        assert verdict.substituted_query == "what is the cost of kalora ?"

    def test_identical_responses_reasonable(self):
        text = "kalora is a town near the river ."
        assert HeuristicJudge().judge("what about its cost", text, text, "rewrite").reasonable

    def test_overlap_and_anaphora(self):
        assert word_overlap("kalora is a town", "kalora town") == 1.0
        assert word_overlap("kalora is a town", "rain in spring") == 0.0
        assert has_anaphora("and the size of it ?")
        assert not has_anaphora("what is the size of kalora ?")

    def test_missing_rewrite_names_turn(self):
        with pytest.raises(MissingRewriteError) as info:
            HeuristicJudge().judge("what about it", "a", "b", None, qid="c9_2")
        assert "c9_2" in str(info.value)

    def test_llm_judge_reply(self):
        judge = LlmJudge(provider(chat_reply("No.")))
        verdict = judge.judge("what is the cost of kalora ?", "a", "a", "rewrite")
        assert verdict == JudgeVerdict(False, "rewrite")
        assert judge.fallbacks == 0

    def test_llm_judge_falls_back(self):
        judge = LlmJudge(provider(requests.ConnectionError("down")))
        assert judge.judge("what is the cost of kalora ?", "a", "b", "rewrite").reasonable
        assert judge.fallbacks == 1


class TestResponder:
    """Tests for response synthesis."""

    def test_lead_sentence(self):
        assert lead_sentence("the cost is low . rent changes .") == "the cost is low ."
        assert lead_sentence("no sentence end here") == "no sentence end here"
        assert len(lead_sentence(" ".join(["word"] * 100)).split()) == 64

    def test_single_sentence_passage(self):
        assert synthesize_response([Passage("p", "kalora is a town .")]) == "kalora is a town ."

    def test_deterministic(self):
        top3 = [Passage("a", "one . two ."), Passage("b", "three ."), Passage("c", "four .")]
        assert synthesize_response(top3) == synthesize_response(top3)

    def test_empty_retrieval(self, caplog):
        with caplog.at_level(logging.WARNING):
            assert synthesize_response([]) == ""
        assert "No passages retrieved" in caplog.text

    def test_gold_responder(self):
        assert GoldResponder().respond([Passage("a", "x .")], (), "gold .") == "gold ."

    def test_llm_responder_fallback(self):
        responder = LlmResponder(provider(requests.Timeout("slow")))
        assert responder.respond([Passage("a", "x is y . z .")], (), "gold") == "x is y ."
        assert responder.fell_back

    def test_llm_responder_reply(self):
        responder = LlmResponder(provider(chat_reply("  kalora is small .  ")))
        assert responder.respond([Passage("a", "x .")], (), "gold") == "kalora is small ."
        assert not responder.fell_back


# ---------------------------------------------------------------------------
# Context variants
# ---------------------------------------------------------------------------

class TestContextVariants:
    """Tests for full_context_variants()."""

    def test_five_variants_same_query(self):
        conv = conversation_3()
        variants = full_context_variants(conv, 2)
        assert [v.variant_id for v in variants] == [0, 1, 2, 3, 4]
        sessions = [v.session("k1_3", conv.turns[2].query) for v in variants]
        assert {s.current_query for s in sessions} == {"and the size of it ?"}
        assert not any(v.collapsed for v in variants)

    def test_original_and_dropped(self):
        conv = conversation_3()
        variants = full_context_variants(conv, 2)
        assert list(variants[0].turns) == conv.history_before(2)
        assert list(variants[1].turns) == conv.history_before(2)[2:]

    def test_lead_sentences(self):
        variants = full_context_variants(conversation_3(), 2)
        assert variants[2].turns[1].text == "the cost of living in kalora is low ."

    def test_synthetic_names_missing_entity(self):
        variants = full_context_variants(conversation_3(), 2)
        assert [t.role for t in variants[3].turns] == [Role.USER, Role.ASSISTANT]
        assert "kalora" in variants[3].turns[0].text

    def test_distractor_before_last_user_turn(self):
        conv = conversation_3()
        history = conv.history_before(2)
        turns = list(full_context_variants(conv, 2)[4].turns)
        assert len(turns) == len(history) + 2
        assert turns[:2] == history[:2]
        assert turns[4:] == history[2:]

    def test_first_turn_collapses(self):
        variants = full_context_variants(conversation_3(), 0)
        assert [v.collapsed for v in variants] == [False, True, True, True, True]
        assert all(v.turns == () for v in variants)

    def test_deterministic(self):
        conv = conversation_3()
        assert full_context_variants(conv, 2, seed=4) == full_context_variants(conv, 2, seed=4)

    def test_missing_rewrite(self):
        conv = EvalConversation("x", (EvalTurn("x_1", "what is it ?", "a .", None),))
        with pytest.raises(MissingRewriteError):
            full_context_variants(conv, 0)

    def test_llm_generator_fallback(self):
        generator = LlmContextGenerator(provider(chat_reply("user: tell me about kalora\nassistant: it is a town")))
        variants = generator.variants(conversation_3(), 2)
        assert variants[1].provenance == "llm"
        assert variants[2] == full_context_variants(conversation_3(), 2)[2]
        assert generator.fell_back


# ---------------------------------------------------------------------------
# Protocols
# ---------------------------------------------------------------------------

class TestPartialResponse:
    """Tests for partial_response_eval()."""

    def test_gold_responder_reproduces_normal(self, conversations, encoder, index, corpus, task):
        _, normal = evaluate_conversations(conversations, encoder, index, task.qrels)
        result = partial_response_eval(conversations, encoder, index, corpus, task.qrels, responder=GoldResponder())
        assert result.report.per_query == normal.per_query
        assert result.diff == 0.0
        assert result.n_substituted == 0

    def test_single_turn_conversations(self, conversations, encoder, index, corpus, task):
        single = [EvalConversation(c.conversation_id, c.turns[:1]) for c in conversations]
        result = partial_response_eval(single, encoder, index, corpus, task.qrels)
        assert result.diff == 0.0

    def test_deterministic(self, conversations, encoder, index, corpus, task):
        a = partial_response_eval(conversations, encoder, index, corpus, task.qrels)
        b = partial_response_eval(conversations, encoder, index, corpus, task.qrels)
        assert a.report.per_query == b.report.per_query
        assert a.n_substituted == b.n_substituted

    def test_substitution_uses_rewrite(self, conversations, encoder, index, corpus, task):
        result = partial_response_eval(conversations, encoder, index, corpus, task.qrels, judge=AlwaysUnreasonable())
        later_turns = sum(len(c.turns) - 1 for c in conversations)
        assert result.n_substituted == later_turns

    def test_missing_rewrite_names_turn(self, encoder, index, corpus, task):
        conv = EvalConversation("m", (
            EvalTurn("m_1", "what is the cost of it ?", "a ."),
            EvalTurn("m_2", "and its size ?", "b .", None),
        ))
        with pytest.raises(MissingRewriteError) as info:
            partial_response_eval([conv], encoder, index, corpus, task.qrels, judge=AlwaysUnreasonable())
        assert "m_2" in str(info.value)

    def test_blank_responses_leave_history_unchanged(self, conversations, encoder, index, corpus, task):
        _, normal = evaluate_conversations(conversations, encoder, index, task.qrels)
        result = partial_response_eval(conversations, encoder, index, corpus, task.qrels, responder=BlankResponder())
        assert result.report.per_query.keys() == normal.per_query.keys()
        assert math.isfinite(result.diff)


class TestFullContext:
    """Tests for full_context_eval()."""

    def test_five_runs_variant0_normal(self, conversations, encoder, index, task):
        _, normal = evaluate_conversations(conversations, encoder, index, task.qrels)
        result = full_context_eval(conversations, encoder, index, task.qrels)
        assert sorted(result.runs) == [0, 1, 2, 3, 4]
        assert result.reports[0].per_query == normal.per_query
        n_turns = sum(len(c.turns) for c in conversations)
        assert all(len(run) == n_turns for run in result.runs.values())

    def test_threads_match_sequential(self, conversations, encoder, index, task):
        a = full_context_eval(conversations, encoder, index, task.qrels)
        b = full_context_eval(conversations, encoder, index, task.qrels, workers=3)
        assert a.variant_means == b.variant_means

    def test_summary_from_persisted_runs(self, tmp_path, conversations, encoder, index, task):
        from src.evaluation import write_qrels

        result = full_context_eval(conversations, encoder, index, task.qrels)
        qrels_path = write_qrels(task.qrels, tmp_path / "qrels.txt")
        means = []
        for vid, run in result.runs.items():
            path = write_run(run, tmp_path / f"variant{vid}.run")
            means.append(evaluate_run_files(path, qrels_path, [3]).mean("ndcg@3"))
        mean, sd = result.summary
        rmean, rsd = robust_report(means)
        assert abs(mean - rmean) < 1e-6
        assert abs(sd - rsd) < 1e-6


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

class TestReport:
    """Tests for mean_sd(), robust_report() and RobustReport."""

    def test_hand_computed(self):
        mean, sd = mean_sd([40, 42, 44, 46, 48])
        assert mean == 44.0
        assert sd == pytest.approx(math.sqrt(8), abs=1e-12)

    def test_identical_scores(self):
        assert robust_report({0: 0.5, 1: 0.5, 2: 0.5}) == (0.5, 0.0)

    def test_translation_invariant(self):
        values = [0.31, 0.42, 0.28, 0.5, 0.39]
        assert mean_sd([v + 10 for v in values])[1] == pytest.approx(mean_sd(values)[1], abs=1e-12)

    def test_needs_two_values(self):
        with pytest.raises(ContractError):
            mean_sd([1.0])

    def test_csv(self, tmp_path, conversations, encoder, index, corpus, task):
        report = RobustReport()
        report.add_partial("synthetic", partial_response_eval(conversations, encoder, index, corpus, task.qrels))
        report.add_full("synthetic", full_context_eval(conversations, encoder, index, task.qrels))
        path = report.write_csv(tmp_path / "robust.csv")
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["dataset", "protocol", "variant", "metric", "value"]
        variants = {(r[1], r[2]) for r in rows[1:]}
        assert {("partial", "diff"), ("full", "0"), ("full", "4"), ("full", "sd")} <= variants
        assert report.value("synthetic", "full", "mean", "ndcg@3") == pytest.approx(
            sum(report.value("synthetic", "full", v, "ndcg@3") for v in range(5)) / 5
        )


# ---------------------------------------------------------------------------
# Provider
# ---------------------------------------------------------------------------

class TestChatProvider:
    """Tests for ChatProvider with a fake HTTP session."""

    def test_request_and_token(self, monkeypatch):
        monkeypatch.setenv("CSIT_LLM_TOKEN", "secret")
        client = provider(chat_reply("hello"))
        assert client.complete("hi") == "hello"
        call = client.session.calls[0]
        assert call["json"]["messages"] == [{"role": "user", "content": "hi"}]
        assert call["headers"]["Authorization"] == "Bearer secret"

    def test_retries_then_error(self, monkeypatch):
        monkeypatch.setattr("src.robustness.provider.time.sleep", lambda s: None)
        client = provider(requests.ConnectionError("a"), FakeResponse(status=503), max_retries=1)
        with pytest.raises(ProviderError):
            client.complete("hi")
        assert len(client.session.calls) == 2

    def test_retry_succeeds(self, monkeypatch):
        monkeypatch.setattr("src.robustness.provider.time.sleep", lambda s: None)
        client = provider(requests.ConnectionError("a"), chat_reply("ok"), max_retries=2)
        assert client.complete("hi") == "ok"

    def test_malformed_reply(self):
        with pytest.raises(ProviderError):
            provider(FakeResponse({"choices": []})).complete("hi")

    def test_disabled(self):
        with pytest.raises(ConfigurationError):
            ChatProvider(LlmProviderConfig())

    def test_config_problems(self):
        problems = LlmProviderConfig(endpoint="ftp://x", timeout=0, max_retries=-1).validate()
        assert len(problems) == 3
