"""
Seeded synthetic coreference retrieval task.

The corpus describes invented places, one passage per (place, aspect).
Each conversation asks about one place: the first question names it, every
later question refers to it only through a pronoun ("what about the cost of
it ?"). A retriever that sees only the current query can find the right
aspect but not the right place; one that reads the session can find both.

Generated artifacts:

- corpus: ``n_entities * aspects_per_entity`` passages
- conversations: each turn carries a qid, query, gold response (lead
  sentence of the target passage) and a standalone human rewrite
- training samples: one per conversation turn, hard negatives taken from
  the same aspect of other places
- ad-hoc samples: single-turn samples built from the rewrites
- qrels: grade 2 for the target passage, 1 for the place's other passages
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from src.errors import ConfigurationError
from src.text.conversation import (
    EvalConversation,
    EvalTurn,
    Passage,
    Role,
    Session,
    TrainingSample,
    Turn,
)

logger = logging.getLogger(__name__)

SYLLABLES = (
    "ka", "lo", "mi", "ra", "ven", "tor", "sel", "dra", "nu", "pe",
    "zor", "qua", "bri", "ox", "lin", "mar", "tes", "vol", "ush", "gre",
)

KINDS = ("town", "island", "valley", "harbor", "village", "province")

# aspect -> (lead sentence template, follow-up sentence template, value words)
ASPECTS: dict[str, tuple[str, str, tuple[str, ...]]] = {
    "location": (
        "{name} is a {kind} located {value} .",
        "travellers reach the location of {name} by road .",
        ("north of the river", "beside the eastern lake", "in the high hills", "on the southern coast"),
    ),
    "history": (
        "the history of {name} began {value} .",
        "old records about {name} describe its early settlers .",
        ("with a fishing camp", "as a trading post", "after a great flood", "around a stone temple"),
    ),
    "cost": (
        "the cost of living in {name} is {value} .",
        "rent and food prices in {name} change with the seasons .",
        ("very low", "rather high", "about average", "rising quickly"),
    ),
    "size": (
        "the size of {name} is {value} .",
        "the area of {name} grew during the last century .",
        ("twelve square miles", "barely two square miles", "forty square miles", "seven square miles"),
    ),
    "climate": (
        "the climate of {name} is {value} .",
        "rain in {name} usually falls in spring .",
        ("mild and wet", "hot and dry", "cold with long winters", "windy all year"),
    ),
    "cuisine": (
        "the cuisine of {name} is famous for {value} .",
        "visitors to {name} often try the local bread .",
        ("smoked fish", "sweet plum cakes", "spiced lamb stew", "goat cheese"),
    ),
    "economy": (
        "the economy of {name} depends on {value} .",
        "most workers in {name} are employed in small firms .",
        ("wool weaving", "copper mining", "olive farming", "river shipping"),
    ),
    "festival": (
        "the main festival of {name} celebrates {value} .",
        "the festival in {name} lasts for three days .",
        ("the first harvest", "the winter solstice", "the founding sailors", "spring flowers"),
    ),
}

FIRST_QUERY = "what is the {aspect} of {name} ?"
FOLLOW_UP_QUERIES = (
    "what about the {aspect} of it ?",
    "and what is the {aspect} of that place ?",
    "how about the {aspect} there , is this known ?",
    "can you tell me the {aspect} of it ?",
)
REWRITE = "what is the {aspect} of {name} ?"


@dataclass
class SyntheticTaskConfig:
    n_entities: int = 400
    aspects_per_entity: int = 5
    n_conversations: int = 200
    turns_per_conversation: int = 3
    heldout_fraction: float = 0.2
    n_hard_negatives: int = 4
    seed: int = 0

    def validate(self) -> list[str]:
        problems = []
        if not 1 <= self.aspects_per_entity <= len(ASPECTS):
            problems.append(f"aspects_per_entity must be in [1, {len(ASPECTS)}]")
        if not 1 <= self.turns_per_conversation <= self.aspects_per_entity:
            problems.append("turns_per_conversation must be in [1, aspects_per_entity]")
        if not 1 <= self.n_conversations <= self.n_entities:
            problems.append("n_conversations must be in [1, n_entities]")
        if not 0.0 < self.heldout_fraction < 1.0:
            problems.append("heldout_fraction must be in (0, 1)")
        if self.n_hard_negatives < 1 or self.n_hard_negatives >= self.n_entities:
            problems.append("n_hard_negatives must be in [1, n_entities)")
        return problems


@dataclass
class SyntheticTask:
    corpus: list[Passage] = field(default_factory=list)
    train_conversations: list[EvalConversation] = field(default_factory=list)
    heldout_conversations: list[EvalConversation] = field(default_factory=list)
    train_samples: list[TrainingSample] = field(default_factory=list)
    adhoc_samples: list[TrainingSample] = field(default_factory=list)
    qrels: dict[str, dict[str, int]] = field(default_factory=dict)
    targets: dict[str, str] = field(default_factory=dict)


def _entity_names(n: int, rng: np.random.Generator) -> list[str]:
    names: list[str] = []
    seen: set[str] = set()
    while len(names) < n:
        k = 2 if rng.random() < 0.6 else 3
        name = "".join(SYLLABLES[i] for i in rng.integers(0, len(SYLLABLES), size=k))
        if name not in seen:
            seen.add(name)
            names.append(name)
    return names


def _pid(entity: int, aspect: str) -> str:
    return f"e{entity:04d}-{aspect}"


def generate_task(config: SyntheticTaskConfig | None = None) -> SyntheticTask:
    """
    Generate the corpus, conversations, samples and judgments for one seed.

    Raises:
        ConfigurationError: If the configuration is inconsistent.
    """
    config = config or SyntheticTaskConfig()
    problems = config.validate()
    if problems:
        raise ConfigurationError(problems)

    rng = np.random.default_rng(config.seed)
    names = _entity_names(config.n_entities, rng)
    aspect_names = list(ASPECTS)

    task = SyntheticTask()
    entity_aspects: list[list[str]] = []
    by_pid: dict[str, Passage] = {}
    by_aspect: dict[str, list[str]] = {a: [] for a in aspect_names}

    for e, name in enumerate(names):
        kind = KINDS[int(rng.integers(len(KINDS)))]
        chosen = sorted(rng.choice(len(aspect_names), size=config.aspects_per_entity, replace=False))
        aspects = [aspect_names[i] for i in chosen]
        entity_aspects.append(aspects)
        for aspect in aspects:
            lead, follow, values = ASPECTS[aspect]
            value = values[int(rng.integers(len(values)))]
            text = lead.format(name=name, kind=kind, value=value) + " " + follow.format(name=name)
            passage = Passage(_pid(e, aspect), text)
            task.corpus.append(passage)
            by_pid[passage.pid] = passage
            by_aspect[aspect].append(passage.pid)

    conv_entities = rng.choice(config.n_entities, size=config.n_conversations, replace=False)
    n_heldout = max(1, int(round(config.n_conversations * config.heldout_fraction)))

    for c, e in enumerate(int(x) for x in conv_entities):
        name = names[e]
        order = rng.permutation(len(entity_aspects[e]))[: config.turns_per_conversation]
        turns: list[EvalTurn] = []
        for i, a in enumerate(order):
            aspect = entity_aspects[e][int(a)]
            target = by_pid[_pid(e, aspect)]
            if i == 0:
                query = FIRST_QUERY.format(aspect=aspect, name=name)
            else:
                template = FOLLOW_UP_QUERIES[int(rng.integers(len(FOLLOW_UP_QUERIES)))]
                query = template.format(aspect=aspect)
            qid = f"c{c:04d}_{i + 1}"
            response = target.text.split(" . ")[0] + " ."
            turns.append(EvalTurn(qid, query, response, REWRITE.format(aspect=aspect, name=name)))
            task.targets[qid] = target.pid
            task.qrels[qid] = {
                _pid(e, other): (2 if other == aspect else 1) for other in entity_aspects[e]
            }
        conversation = EvalConversation(f"c{c:04d}", tuple(turns))
        if c < config.n_conversations - n_heldout:
            task.train_conversations.append(conversation)
        else:
            task.heldout_conversations.append(conversation)

    for conversation in task.train_conversations:
        for i, turn in enumerate(conversation.turns):
            positive = by_pid[task.targets[turn.qid]]
            aspect = positive.pid.split("-", 1)[1]
            pool = [p for p in by_aspect[aspect] if p != positive.pid]
            picks = rng.choice(len(pool), size=min(config.n_hard_negatives, len(pool)), replace=False)
            negatives = tuple(by_pid[pool[int(j)]] for j in picks)
            session = conversation.session_at(i)
            session = Session(turn.qid, session.turns)
            task.train_samples.append(TrainingSample(session, positive, negatives))
            task.adhoc_samples.append(
                TrainingSample(Session(f"{turn.qid}-adhoc", (Turn(Role.USER, turn.rewrite),)), positive, negatives)
            )

    logger.info(
        "Synthetic task: %d passages, %d train / %d held-out conversations, %d samples",
        len(task.corpus),
        len(task.train_conversations),
        len(task.heldout_conversations),
        len(task.train_samples),
    )
    return task


def write_task(task: SyntheticTask, out_dir: str | Path) -> dict[str, Path]:
    """Write every artifact of *task* under *out_dir* and return the paths."""
    from src.evaluation.trec import write_qrels
    from src.robustness.dataset import write_eval_dataset
    from src.text.loaders import write_corpus, write_training_jsonl

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "corpus": out / "corpus.tsv",
        "train": out / "train.jsonl",
        "adhoc": out / "adhoc.jsonl",
        "train_eval": out / "train_conversations.jsonl",
        "heldout": out / "heldout.jsonl",
        "qrels": out / "qrels.txt",
    }
    write_corpus(task.corpus, paths["corpus"])
    write_training_jsonl(task.train_samples, paths["train"])
    write_training_jsonl(task.adhoc_samples, paths["adhoc"])
    write_eval_dataset(task.train_conversations, paths["train_eval"])
    write_eval_dataset(task.heldout_conversations, paths["heldout"])
    write_qrels(task.qrels, paths["qrels"])
    logger.info("Synthetic task written to %s", out)
    return paths
