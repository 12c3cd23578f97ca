"""
Tests for the conversation data model, tokenizer and templates
===============================================================

Tests cover:
- Tokenizer determinism, UNK handling and reserved ids
- Session template and truncation policy
- Packed sequence layout
- Training JSONL and corpus loaders
- The synthetic coreference task generator
"""

import json

import pytest

from src.errors import (
    ConfigurationError,
    ContractError,
    InvariantError,
    SampleRejectedError,
    SchemaError,
)
from src.text import (
    Passage,
    Role,
    Segment,
    Session,
    TrainingSample,
    Turn,
    build_vocabulary,
    detokenize,
    format_passage,
    format_session,
    load_corpus,
    load_training_jsonl,
    load_training_mix,
    pack_training_sequence,
    tokenize,
)
from src.text.synthetic import SyntheticTaskConfig, generate_task


# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------

@pytest.fixture
def vocab():
    """Vocabulary over a handful of words."""
    return build_vocabulary(["hello world q", "what about its cost", "a b c d e f g h"])


def make_session(*texts: str) -> Session:
    """Helper: alternate user/assistant turns, ending with a user turn."""
    roles = [Role.USER if (len(texts) - 1 - i) % 2 == 0 else Role.ASSISTANT for i in range(len(texts))]
    return Session("s", tuple(Turn(r, t) for r, t in zip(roles, texts)))


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

class TestTokenizer:
    """Tests for tokenize() and the vocabulary."""

    def test_empty_text(self, vocab):
        """The empty string has no tokens."""
        assert tokenize("", vocab) == []

    def test_repeated_word(self, vocab):
        """The same word maps to the same id."""
        ids = tokenize("hello hello", vocab)
        assert len(ids) == 2 and ids[0] == ids[1]

    def test_unknown_word(self, vocab):
        """Out-of-vocabulary words map to UNK."""
        assert tokenize("zebra", vocab) == [vocab.unk_id]

    def test_round_trip_known_words(self, vocab):
        """Detokenising recovers the lowercased known-word sequence."""
        assert detokenize(tokenize("Hello World", vocab), vocab) == "hello world"

    def test_reserved_ids_never_produced(self, vocab):
        """Bracketed text is split and never hits a reserved id."""
        ids = tokenize("[EMB_1] [USER] [UNK]", vocab)
        assert not (set(ids) - {vocab.unk_id}) & vocab.reserved_ids

    def test_order_independent(self):
        """Vocabulary does not depend on text order."""
        a = build_vocabulary(["x y", "y z"])
        b = build_vocabulary(["y z", "x y"])
        assert a.tokens == b.tokens

    def test_dict_round_trip(self, vocab):
        """A vocabulary survives to_dict/from_dict."""
        assert type(vocab).from_dict(vocab.to_dict()).tokens == vocab.tokens


# ---------------------------------------------------------------------------
# Templates
# ---------------------------------------------------------------------------

class TestFormatSession:
    """Tests for format_session()."""

    def test_single_turn_template(self, vocab):
        """A one-turn session is USER, words, SEP, then the specials."""
        ids = format_session(make_session("q"), vocab, t=3, max_seq_len=64)
        q = tokenize("q", vocab)[0]
        assert ids == [vocab.user_id, q, vocab.sep_id] + vocab.emb_ids(3)

    def test_history_order_matters(self, vocab):
        """Swapping two history turns changes the sequence."""
        a = format_session(make_session("a", "b", "c"), vocab, 3, 64)
        b = format_session(make_session("c", "b", "a"), vocab, 3, 64)
        assert a != b

    def test_truncation_keeps_query(self, vocab):
        """Oldest turns go first; the query and specials stay."""
        session = make_session(*(["a b c d e f g h"] * 6 + ["what about its cost"]))
        ids = format_session(session, vocab, t=3, max_seq_len=16)
        assert len(ids) <= 16
        assert ids[-3:] == vocab.emb_ids(3)
        query = [vocab.user_id] + tokenize("what about its cost", vocab) + [vocab.sep_id]
        assert ids[-3 - len(query):-3] == query

    def test_query_cut_from_left_when_alone_too_long(self, vocab):
        """A query longer than the budget keeps its rightmost tokens."""
        ids = format_session(make_session("a b c d e f g h"), vocab, t=2, max_seq_len=5)
        assert len(ids) == 5
        assert ids[:3] == tokenize("g h", vocab) + [vocab.sep_id]

    def test_empty_session_rejected(self):
        """A session needs at least one turn."""
        with pytest.raises(ContractError):
            Session("s", ())

    def test_session_must_end_with_user(self):
        """An assistant turn cannot be the current query."""
        with pytest.raises(ContractError):
            Session("s", (Turn(Role.USER, "a"), Turn(Role.ASSISTANT, "b")))

    def test_passage_template(self, vocab):
        """Passages are words followed by the specials."""
        ids = format_passage(Passage("p", "hello world"), vocab, t=2, max_seq_len=64)
        assert ids == tokenize("hello world", vocab) + vocab.emb_ids(2)


class TestPackTrainingSequence:
    """Tests for pack_training_sequence()."""

    def test_layout(self, vocab):
        """A one-word query and one-word response pack as N=3, t=2, M=1, t=2."""
        sample = TrainingSample(make_session("q"), Passage("p", "hello"))
        seq = pack_training_sequence(sample, vocab, t=2, max_seq_len=64)
        # "[USER] q [SEP]" is three session tokens
        assert seq.n_session == 3 and seq.n_response == 1
        assert len(seq) == 3 + 2 + 1 + 2
        assert seq.response_ids == tokenize("hello", vocab) + vocab.emb_ids(2)
        assert list(seq.segment_map) == (
            [Segment.SESSION] * 3
            + [Segment.SESSION_SPECIAL] * 2
            + [Segment.RESPONSE]
            + [Segment.RESPONSE_SPECIAL] * 2
        )

    def test_segment_counts(self, vocab):
        """Region counts equal (N, t, M, t)."""
        sample = TrainingSample(make_session("a b", "c", "what about its cost"), Passage("p", "d e f"))
        seq = pack_training_sequence(sample, vocab, t=3, max_seq_len=64)
        counts = [list(seq.segment_map).count(s) for s in Segment]
        assert counts == [seq.n_session, 3, seq.n_response, 3]
        assert seq.n_response == 3

    def test_t_zero_rejected(self, vocab):
        """At least one special token is required."""
        sample = TrainingSample(make_session("q"), Passage("p", "hello"))
        with pytest.raises(ConfigurationError):
            pack_training_sequence(sample, vocab, t=0, max_seq_len=64)

    def test_session_side_truncated(self, vocab):
        """Only the session is shortened to fit."""
        sample = TrainingSample(make_session(*(["a b c d"] * 5 + ["q"])), Passage("p", "e f g h"))
        seq = pack_training_sequence(sample, vocab, t=2, max_seq_len=16)
        assert len(seq) <= 16
        assert seq.n_response == 4

    def test_oversized_response_rejected(self, vocab):
        """A response that alone fills the limit is rejected."""
        sample = TrainingSample(make_session("q"), Passage("p", "a b c d e f g h"))
        with pytest.raises(SampleRejectedError):
            pack_training_sequence(sample, vocab, t=2, max_seq_len=11)


# ---------------------------------------------------------------------------
# Loaders
# ---------------------------------------------------------------------------

class TestLoaders:
    """Tests for load_training_jsonl() and load_corpus()."""

    def test_empty_file(self, tmp_path):
        """An empty file holds no samples."""
        path = tmp_path / "train.jsonl"
        path.write_text("")
        assert load_training_jsonl(path) == []

    def test_single_turn_record(self, tmp_path):
        """A one-turn record with four negatives loads as is."""
        record = {
            "conversation_id": "c1",
            "turns": [{"role": "user", "text": "what is it"}],
            "positive": {"pid": "p0", "text": "pos"},
            "hard_negatives": [{"pid": f"n{i}", "text": "neg"} for i in range(4)],
        }
        path = tmp_path / "train.jsonl"
        path.write_text(json.dumps(record) + "\n")
        (sample,) = load_training_jsonl(path)
        assert len(sample.hard_negatives) == 4
        assert sample.session.current_query == "what is it"

    def test_query_shorthand(self, tmp_path):
        """Ad-hoc records may give a bare query."""
        path = tmp_path / "adhoc.jsonl"
        path.write_text(json.dumps({"query": "capital of france", "positive": {"pid": "p", "text": "paris"}}) + "\n")
        (sample,) = load_training_jsonl(path)
        assert len(sample.session.turns) == 1

    def test_positive_among_negatives(self, tmp_path):
        """Listing the positive as a negative is an invariant error."""
        record = {
            "turns": [{"role": "user", "text": "q"}],
            "positive": {"pid": "p0", "text": "pos"},
            "hard_negatives": [{"pid": "p0", "text": "pos"}],
        }
        path = tmp_path / "train.jsonl"
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(InvariantError):
            load_training_jsonl(path)

    def test_missing_field_names_line(self, tmp_path):
        """A missing field is reported with its name and line number."""
        good = {"turns": [{"role": "user", "text": "q"}], "positive": {"pid": "p", "text": "t"}}
        path = tmp_path / "train.jsonl"
        path.write_text(json.dumps(good) + "\n" + json.dumps({"turns": good["turns"]}) + "\n")
        with pytest.raises(SchemaError) as info:
            load_training_jsonl(path)
        assert info.value.line == 2
        assert info.value.field == "positive"

    def test_mix_is_seeded(self, tmp_path):
        """Mixing two files is a seeded permutation of their union."""
        paths = []
        for name in ("a", "b"):
            path = tmp_path / f"{name}.jsonl"
            lines = [
                json.dumps({"conversation_id": f"{name}{i}", "query": "q", "positive": {"pid": "p", "text": "t"}})
                for i in range(5)
            ]
            path.write_text("\n".join(lines) + "\n")
            paths.append(path)
        first = [s.sample_id for s in load_training_mix(paths, seed=1)]
        again = [s.sample_id for s in load_training_mix(paths, seed=1)]
        assert first == again
        assert sorted(first) == sorted([f"a{i}" for i in range(5)] + [f"b{i}" for i in range(5)])

    def test_tsv_corpus(self, tmp_path):
        """Two TSV lines give two passages in order."""
        path = tmp_path / "corpus.tsv"
        path.write_text("p1\tfirst passage\np2\tsecond passage\n")
        assert [p.pid for p in load_corpus(path)] == ["p1", "p2"]

    def test_duplicate_pid(self, tmp_path):
        """A repeated pid is named in the error."""
        path = tmp_path / "corpus.tsv"
        path.write_text("p1\ta\np1\tb\n")
        with pytest.raises(InvariantError, match="p1"):
            load_corpus(path)

    def test_jsonl_equals_tsv(self, tmp_path):
        """The two encodings of one corpus load identically."""
        tsv = tmp_path / "corpus.tsv"
        tsv.write_text("p1\tfirst passage\np2\tsecond passage\n")
        jsonl = tmp_path / "corpus.jsonl"
        jsonl.write_text(
            json.dumps({"pid": "p1", "text": "first passage"}) + "\n"
            + json.dumps({"pid": "p2", "text": "second passage"}) + "\n"
        )
        assert load_corpus(tsv) == load_corpus(jsonl)


# ---------------------------------------------------------------------------
# Synthetic task
# ---------------------------------------------------------------------------

class TestSyntheticTask:
    """Tests for generate_task()."""

    @pytest.fixture
    def config(self):
        return SyntheticTaskConfig(n_entities=30, n_conversations=10, seed=5)

    def test_sizes(self, config):
        """Corpus and sample counts follow the configuration."""
        task = generate_task(config)
        assert len(task.corpus) == 30 * 5
        assert len(task.train_conversations) + len(task.heldout_conversations) == 10
        assert len(task.train_samples) == len(task.train_conversations) * 3

    def test_deterministic(self, config):
        """The same seed yields the same corpus and samples."""
        a, b = generate_task(config), generate_task(config)
        assert a.corpus == b.corpus
        assert [s.to_dict() for s in a.train_samples] == [s.to_dict() for s in b.train_samples]

    def test_follow_up_queries_are_anaphoric(self, config):
        """Later turns never name the place; their rewrites do."""
        task = generate_task(config)
        for conversation in task.heldout_conversations:
            name = conversation.turns[0].rewrite.split(" of ")[-1].rstrip(" ?")
            assert name in conversation.turns[0].query
            for turn in conversation.turns[1:]:
                assert name not in turn.query
                assert name in turn.rewrite

    def test_qrels_grade_target(self, config):
        """The target passage carries grade 2."""
        task = generate_task(config)
        for qid, pid in task.targets.items():
            assert task.qrels[qid][pid] == 2

    def test_invalid_config(self):
        """Inconsistent settings are reported together."""
        with pytest.raises(ConfigurationError) as info:
            generate_task(SyntheticTaskConfig(n_entities=5, n_conversations=10, heldout_fraction=2.0))
        assert len(info.value.problems) >= 2
