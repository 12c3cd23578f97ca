"""
Robustness protocols.

Partial response modification
    Conversations are replayed turn by turn. The retriever's top-3
    passages for the current session feed a responder whose output
    replaces the gold assistant response in the history; the judge then
    decides whether the next query still makes sense and, if not, the
    next query is replaced by its human rewrite. The result is compared
    with normal evaluation through ``diff = |mean - reference mean|``.

Full context modification
    Every turn is retrieved under the five histories of a context
    generator with the current query fixed. Each variant yields one run;
    the variant means are summarised by mean and population SD.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Sequence

from src.errors import ContractError
from src.evaluation.retrieval import DEFAULT_DEPTH, evaluate_conversations, retrieve_sessions
from src.evaluation.trec import EvaluationReport, Run, evaluate_run, run_from_hits
from src.index.store import search_topk
from src.robustness.generators import N_VARIANTS, ContextGenerator, RuleContextGenerator
from src.robustness.judge import HeuristicJudge, Judge
from src.robustness.report import mean_sd
from src.robustness.responder import LeadSentenceResponder, Responder
from src.text.conversation import EvalConversation, Passage, Role, Session, Turn, normalize_whitespace

if TYPE_CHECKING:
    from src.index.store import EmbeddingIndex
    from src.model.encoder import Encoder

logger = logging.getLogger(__name__)

RESPONSE_PASSAGES = 3


@dataclass
class PartialResponseResult:
    run: Run
    report: EvaluationReport
    reference: EvaluationReport
    metric: str
    n_substituted: int = 0
    fallback: bool = False

    @property
    def mean(self) -> float:
        return self.report.mean(self.metric)

    @property
    def diff(self) -> float:
        return abs(self.mean - self.reference.mean(self.metric))


@dataclass
class FullContextResult:
    runs: dict[int, Run]
    reports: dict[int, EvaluationReport]
    metric: str
    n_collapsed: int = 0
    fallback: bool = False
    provenance: dict[int, str] = field(default_factory=dict)

    @property
    def variant_means(self) -> dict[int, float]:
        return {vid: report.mean(self.metric) for vid, report in sorted(self.reports.items())}

    @property
    def summary(self) -> tuple[float, float]:
        """(mean, population SD) over the variant means."""
        return mean_sd(list(self.variant_means.values()))


def _passages(hits, corpus: Mapping[str, Passage]) -> list[Passage]:
    try:
        return [corpus[h.pid] for h in hits[:RESPONSE_PASSAGES]]
    except KeyError as exc:
        raise ContractError(f"retrieved pid {exc.args[0]!r} is not in the corpus") from None


def replay_conversation(
    conversation: EvalConversation,
    encoder: "Encoder",
    index: "EmbeddingIndex",
    corpus: Mapping[str, Passage],
    judge: Judge,
    responder: Responder,
    depth: int,
) -> tuple[Run, int]:
    """
    Replay one conversation with synthesized responses.

    Returns the run of its turns and how many queries were substituted.

    Raises:
        MissingRewriteError: A query must be substituted but its turn has
            no rewrite.
    """
    run: Run = {}
    history: list[Turn] = []
    query = conversation.turns[0].query
    n_substituted = 0
    for i, turn in enumerate(conversation.turns):
        session = Session(turn.qid, tuple(history) + (Turn(Role.USER, query),))
        hits = search_topk(encoder.encode_session(session), index, depth)
        run[turn.qid] = run_from_hits(turn.qid, hits)

        response = responder.respond(_passages(hits, corpus), session.turns, turn.response)
        history.append(Turn(Role.USER, query))
        if normalize_whitespace(response):
            history.append(Turn(Role.ASSISTANT, response))

        if i + 1 < len(conversation.turns):
            nxt = conversation.turns[i + 1]
            verdict = judge.judge(nxt.query, response, turn.response, nxt.rewrite, qid=nxt.qid)
            if verdict.reasonable:
                query = nxt.query
            else:
                query = verdict.substituted_query
                n_substituted += 1
                logger.debug("Turn %s: query replaced by its rewrite", nxt.qid)
    return run, n_substituted


def partial_response_eval(
    conversations: Sequence[EvalConversation],
    encoder: "Encoder",
    index: "EmbeddingIndex",
    corpus: Mapping[str, Passage],
    qrels: Mapping[str, Mapping[str, int]],
    judge: Judge | None = None,
    responder: Responder | None = None,
    k: int = 3,
    depth: int = DEFAULT_DEPTH,
    reference: EvaluationReport | None = None,
) -> PartialResponseResult:
    """
    Run the partial-response protocol over *conversations*.

    Conversations are independent, but turns inside one conversation are
    strictly sequential. *reference* defaults to normal evaluation of the
    same conversations.
    """
    judge = judge or HeuristicJudge()
    responder = responder or LeadSentenceResponder()
    depth = max(depth, k)
    if reference is None:
        _, reference = evaluate_conversations(conversations, encoder, index, qrels, (k,), depth=depth)

    run: Run = {}
    n_substituted = 0
    for conversation in conversations:
        conv_run, n = replay_conversation(conversation, encoder, index, corpus, judge, responder, depth)
        run.update(conv_run)
        n_substituted += n

    result = PartialResponseResult(
        run=run,
        report=evaluate_run(run, qrels, (k,)),
        reference=reference,
        metric=f"ndcg@{k}",
        n_substituted=n_substituted,
        fallback=bool(getattr(responder, "fell_back", False) or getattr(judge, "fallbacks", 0)),
    )
    logger.info(
        "Partial response: %s %.4f (reference %.4f, diff %.4f), %d queries substituted",
        result.metric, result.mean, reference.mean(result.metric), result.diff, n_substituted,
    )
    return result


def full_context_eval(
    conversations: Sequence[EvalConversation],
    encoder: "Encoder",
    index: "EmbeddingIndex",
    qrels: Mapping[str, Mapping[str, int]],
    generator: ContextGenerator | None = None,
    k: int = 3,
    depth: int = DEFAULT_DEPTH,
    workers: int = 1,
) -> FullContextResult:
    """Retrieve every turn under each of the generator's five histories."""
    generator = generator or RuleContextGenerator()
    depth = max(depth, k)
    sessions: dict[int, list[Session]] = {vid: [] for vid in range(N_VARIANTS)}
    provenance: dict[int, str] = {}
    n_collapsed = 0
    for conversation in conversations:
        for i, turn in enumerate(conversation.turns):
            variants = generator.variants(conversation, i)
            if len(variants) != N_VARIANTS:
                raise ContractError(f"generator returned {len(variants)} variants for {turn.qid!r}")
            for variant in variants:
                sessions[variant.variant_id].append(variant.session(turn.qid, turn.query))
                provenance.setdefault(variant.variant_id, variant.provenance)
                n_collapsed += variant.collapsed

    runs = {vid: retrieve_sessions(s, encoder, index, depth, tag=f"variant{vid}", workers=workers)
            for vid, s in sessions.items()}
    result = FullContextResult(
        runs=runs,
        reports={vid: evaluate_run(run, qrels, (k,)) for vid, run in runs.items()},
        metric=f"ndcg@{k}",
        n_collapsed=n_collapsed,
        fallback=bool(getattr(generator, "fell_back", False)),
        provenance=provenance,
    )
    mean, sd = result.summary
    logger.info("Full context: %s mean %.4f, SD %.4f over %d variants", result.metric, mean, sd, N_VARIANTS)
    return result
