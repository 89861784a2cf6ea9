"""Second-stage rescoring and its fine-tuning dataset.

The rescorer never introduces passages: it reorders first-stage candidates by
an external relevance probability. Training examples pair every gold passage
with hard negatives (highly ranked non-gold candidates from the first stage)
and easy negatives (random non-gold corpus passages).
"""

from __future__ import annotations

import json
import random
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .corpus import Corpus, Question
from .errors import EmptyInput, ScorerFailure, UnlabeledQuestion
from .rankings import RankedList, ranked

ScorerFn = Callable[[Sequence[tuple[str, str]]], "list[float]"]


@dataclass(frozen=True)
class RerankExample:
    question_id: str
    question_text: str
    passage_ref: tuple[str, str]
    passage_text: str
    label: str  # relevant | not_relevant
    negative_kind: str  # hard | easy | none

    def __post_init__(self) -> None:
        if (self.label == "relevant") != (self.negative_kind == "none"):
            raise ValueError("label 'relevant' must pair with negative_kind 'none'")


def build_rerank_trainset(
    questions: Sequence[Question],
    l1_lists: dict[str, list[RankedList]],
    corpus: Corpus,
    top_k: int = 10,
    easy_per_q: int = 4,
    hard_per_q: int = 4,
    seed: int = 0,
) -> list[RerankExample]:
    """Per question: gold positives, then hard negatives sampled from the union
    of the first-stage top-k entries minus gold, then easy negatives sampled
    uniformly from the rest of the corpus. Deterministic under seed."""
    rng = random.Random(seed)
    all_refs = [p.ref for p in corpus.passages]
    examples: list[RerankExample] = []
    for question in questions:
        if not question.labeled:
            raise UnlabeledQuestion(f"question {question.question_id!r} has no gold refs")
        gold = set(question.gold_refs)
        hard_pool: list[tuple[str, str]] = []
        pool_seen: set[tuple[str, str]] = set()
        for rl in l1_lists[question.question_id]:
            for entry in rl.entries[:top_k]:
                if entry.ref not in gold and entry.ref not in pool_seen:
                    pool_seen.add(entry.ref)
                    hard_pool.append(entry.ref)
        hard_pool.sort()
        hard_refs = rng.sample(hard_pool, min(hard_per_q, len(hard_pool)))
        chosen = gold | set(hard_refs)
        easy_pool = sorted(ref for ref in all_refs if ref not in chosen)
        easy_refs = rng.sample(easy_pool, min(easy_per_q, len(easy_pool)))
        if not hard_refs and not easy_refs:
            warnings.warn(f"question {question.question_id!r}: no negatives available")
        for ref in question.gold_refs:
            examples.append(RerankExample(
                question.question_id, question.text, ref, corpus.get(ref).text, "relevant", "none",
            ))
        for ref in hard_refs:
            examples.append(RerankExample(
                question.question_id, question.text, ref, corpus.get(ref).text, "not_relevant", "hard",
            ))
        for ref in easy_refs:
            examples.append(RerankExample(
                question.question_id, question.text, ref, corpus.get(ref).text, "not_relevant", "easy",
            ))
    return examples


def write_rerank_trainset(examples: Iterable[RerankExample], path: str | Path) -> None:
    """JSON Lines contract consumed by the sidecar trainer."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(
                {
                    "question_id": ex.question_id,
                    "question_text": ex.question_text,
                    "passage_ref": list(ex.passage_ref),
                    "passage_text": ex.passage_text,
                    "label": ex.label,
                    "negative_kind": ex.negative_kind,
                },
                sort_keys=True,
            ) + "\n")


def rerank(
    question: Question,
    candidates: RankedList,
    corpus: Corpus,
    scorer: ScorerFn,
    k: int,
) -> RankedList:
    """Rescore candidates with an external relevance probability, keep top-k."""
    if not candidates.entries:
        raise EmptyInput(f"no candidates to rescore for question {question.question_id!r}")
    pairs = [(question.text, corpus.get(entry.ref).text) for entry in candidates.entries]
    try:
        probabilities = scorer(pairs)
    except Exception as exc:
        raise ScorerFailure(f"scorer failed on query {question.question_id!r}: {exc}") from exc
    if len(probabilities) != len(pairs):
        raise ScorerFailure(
            f"scorer returned {len(probabilities)} scores for {len(pairs)} pairs "
            f"(query {question.question_id!r})"
        )
    for p in probabilities:
        if not 0.0 <= p <= 1.0:
            raise ScorerFailure(f"probability {p} outside [0, 1] (query {question.question_id!r})")
    return ranked(
        candidates.query_id,
        f"l2({candidates.retriever_id})",
        zip(candidates.refs(), probabilities),
        k=k,
    )
