"""Iterative hard-negative triplet mining for dense-encoder fine-tuning.

Each iteration retrieves top-k per question, pairs gold passages with the
non-gold retrievals that neighbor them in rank, hands the triplets to an
external trainer for a fixed number of batches, and repeats with the
retrained encoder. The default schedule (k=10, 400 batches, 200 iterations)
plans 80000 training steps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .corpus import Question
from .errors import TrainerUnavailable, UnlabeledQuestion
from .rankings import RankedList

RetrieveFn = Callable[[], "dict[str, RankedList]"]
TrainerFn = Callable[["list[TripletSample]", int], None]


@dataclass(frozen=True)
class TripletSample:
    question_id: str
    positive_ref: tuple[str, str]
    negative_ref: tuple[str, str]
    iteration: int


@dataclass(frozen=True)
class MiningSchedule:
    top_k: int = 10
    batches_per_iter: int = 400
    iterations: int = 200
    batch_size: int = 8

    def __post_init__(self) -> None:
        for name in ("top_k", "batches_per_iter", "iterations", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def planned_steps(self) -> int:
        return self.batches_per_iter * self.iterations


def _distractor_order(entries, gold: set[tuple[str, str]]) -> list[tuple[str, str]]:
    """Non-gold entries ordered by adjacency to the best-ranked gold entry.

    Entries ranked above the gold come first (closest first), then entries
    below (closest first). When no gold entry is ranked, the order is simply
    by rank: the hardest distractors are the top-ranked ones.
    """
    ranks = {entry.ref: position for position, entry in enumerate(entries, 1)}
    gold_ranks = [ranks[ref] for ref in ranks if ref in gold]
    non_gold = [entry.ref for entry in entries if entry.ref not in gold]
    if not gold_ranks:
        return non_gold
    anchor = min(gold_ranks)
    above = [ref for ref in non_gold if ranks[ref] < anchor]
    below = [ref for ref in non_gold if ranks[ref] > anchor]
    above.sort(key=lambda ref: anchor - ranks[ref])
    below.sort(key=lambda ref: ranks[ref] - anchor)
    return above + below


def mine_triplets(
    questions: Sequence[Question],
    retrieved: dict[str, RankedList],
    iteration: int,
    top_k: int = 10,
    max_per_question: int = 8,
) -> list[TripletSample]:
    """Emit (question, gold, distractor) triplets for one iteration.

    Anchors are the gold passages present in the top-k; when none appear
    there, every gold passage anchors against the top-ranked non-gold
    entries instead (skipping those questions would starve the hardest
    cases). Deterministic given the retrieval results.
    """
    triplets: list[TripletSample] = []
    for question in questions:
        if not question.labeled:
            raise UnlabeledQuestion(f"question {question.question_id!r} has no gold refs")
        entries = retrieved[question.question_id].entries[:top_k]
        gold = set(question.gold_refs)
        distractors = _distractor_order(entries, gold)
        if not distractors:
            continue
        anchors = [entry.ref for entry in entries if entry.ref in gold]
        if not anchors:
            anchors = list(question.gold_refs)
        emitted = 0
        for positive in anchors:
            for negative in distractors:
                if emitted >= max_per_question:
                    break
                triplets.append(TripletSample(
                    question_id=question.question_id,
                    positive_ref=positive,
                    negative_ref=negative,
                    iteration=iteration,
                ))
                emitted += 1
            if emitted >= max_per_question:
                break
    return triplets


def write_triplets(triplets: Iterable[TripletSample], path: str | Path, append: bool = False) -> None:
    mode = "a" if append else "w"
    with open(path, mode, encoding="utf-8") as fh:
        for t in triplets:
            fh.write(json.dumps(
                {
                    "question_id": t.question_id,
                    "positive_ref": list(t.positive_ref),
                    "negative_ref": list(t.negative_ref),
                    "iteration": t.iteration,
                },
                sort_keys=True,
            ) + "\n")


def gateway_trainer(
    gateway,
    profile: str,
    corpus_path: str | Path,
    questions_path: str | Path,
    work_dir: str | Path,
    batch_size: int = 8,
) -> TrainerFn:
    """Adapter invoking an external trainer through the scorer protocol.

    Each call spools the iteration's triplets to a file under work_dir, sends
    one "train" command, and expects the worker to refresh its served
    embeddings from the new checkpoint.
    """
    work_dir = Path(work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)
    counter = {"iteration": 0}

    def trainer(triplets: list[TripletSample], batches: int) -> None:
        iteration = counter["iteration"]
        counter["iteration"] += 1
        spool = work_dir / f"triplets_{iteration:04d}.jsonl"
        write_triplets(triplets, spool)
        result = gateway.train({
            "task": "triplets",
            "profile": profile,
            "triplets_path": str(spool),
            "corpus_path": str(corpus_path),
            "questions_path": str(questions_path),
            "batches": batches,
            "batch_size": batch_size,
            "checkpoint_out": str(work_dir / f"encoder_{profile}.pt"),
            "export_path": str(work_dir / f"embeddings_{profile}.jsonl"),
        })
        if result.get("status") != "ok":
            raise TrainerUnavailable(f"trainer answered {result!r}")

    return trainer


@dataclass
class MiningReport:
    planned_steps: int
    iterations_run: int = 0
    triplet_counts: list[int] = field(default_factory=list)
    trainer_invocations: int = 0
    dry_run: bool = True


def run_mining_loop(
    schedule: MiningSchedule,
    retrieve: RetrieveFn,
    trainer: TrainerFn | None,
    questions: Sequence[Question],
    dry_run: bool = False,
    iterations: int | None = None,
    triplets_path: str | Path | None = None,
) -> MiningReport:
    """Run the retrieve/mine/train loop.

    In dry-run mode triplets are emitted and counted but no trainer is
    invoked; otherwise a missing trainer raises TrainerUnavailable before any
    work starts. ``iterations`` overrides the schedule's count (the planned
    step arithmetic still reports the schedule).
    """
    if not dry_run and trainer is None:
        raise TrainerUnavailable("no trainer configured and dry_run not set")
    rounds = schedule.iterations if iterations is None else iterations
    report = MiningReport(planned_steps=schedule.planned_steps, dry_run=dry_run)
    for iteration in range(rounds):
        retrieved = retrieve()
        triplets = mine_triplets(
            questions,
            retrieved,
            iteration,
            top_k=schedule.top_k,
            max_per_question=schedule.batch_size,
        )
        if triplets_path is not None:
            write_triplets(triplets, triplets_path, append=iteration > 0)
        report.triplet_counts.append(len(triplets))
        report.iterations_run += 1
        if not dry_run:
            trainer(triplets, schedule.batches_per_iter)
            report.trainer_invocations += 1
    return report
