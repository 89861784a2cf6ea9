"""Diagnostics: entailment histograms for non-gold retrievals, and judge scoring.

The histogram asks how strongly each highly ranked non-gold passage entails
the gold content when its contradiction against that content is low; a mass
near 1.0 flags near-duplicate passages the retriever is wrongly penalized
for finding.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .answers import Answer, load_template
from .corpus import Corpus, Question
from .errors import GeneratorFailure, UnlabeledQuestion
from .rankings import RankedList
from .repass import NliFn, contradiction_score, entailment_score

BUCKET_COUNT = 10


@dataclass
class HistogramReport:
    bucket_edges: list[float]  # 11 edges, 0.0 .. 1.0 step 0.1
    counts: list[int]
    top_k: int
    c_s_max: float

    @property
    def total(self) -> int:
        return sum(self.counts)


def _bucket_index(value: float) -> int:
    # values of exactly 1.0 land in the top bucket
    return min(int(value * BUCKET_COUNT), BUCKET_COUNT - 1)


def entailment_histogram(
    questions: Sequence[Question],
    retrievals: dict[str, RankedList],
    corpus: Corpus,
    nli: NliFn,
    top_k: int = 10,
    c_s_max: float = 0.2,
    gold_as_hypothesis: bool = True,
) -> HistogramReport:
    """Bucket entailment for low-contradiction non-gold retrievals.

    For each question, every non-gold passage in its top-k is scored against
    the gold passages' sentences with the same mean-of-max machinery as the
    answer metric (non-gold as premise set by default; flip with
    gold_as_hypothesis=False). Pairs with contradiction below c_s_max
    contribute their entailment to one of ten uniform buckets.
    """
    counts = [0] * BUCKET_COUNT
    for question in questions:
        if not question.labeled:
            raise UnlabeledQuestion(f"question {question.question_id!r} has no gold refs")
        gold = set(question.gold_refs)
        gold_sentences = [s for ref in question.gold_refs for s in corpus.get(ref).sentences]
        for entry in retrievals[question.question_id].entries[:top_k]:
            if entry.ref in gold:
                continue
            retrieved_sentences = list(corpus.get(entry.ref).sentences)
            if gold_as_hypothesis:
                premises, hypotheses = retrieved_sentences, gold_sentences
            else:
                premises, hypotheses = gold_sentences, retrieved_sentences
            c_s, _ = contradiction_score(premises, hypotheses, nli)
            if c_s >= c_s_max:
                continue
            e_s, _ = entailment_score(premises, hypotheses, nli)
            counts[_bucket_index(e_s)] += 1
    return HistogramReport(
        bucket_edges=[i / BUCKET_COUNT for i in range(BUCKET_COUNT + 1)],
        counts=counts,
        top_k=top_k,
        c_s_max=c_s_max,
    )


def write_histogram(report: HistogramReport, json_path: str | Path, chart_path: str | Path | None = None) -> None:
    Path(json_path).write_text(json.dumps(
        {
            "bucket_edges": report.bucket_edges,
            "counts": report.counts,
            "filter": {"top_k": report.top_k, "c_s_max": report.c_s_max},
        },
        sort_keys=True,
    ) + "\n", encoding="utf-8")
    if chart_path is not None:
        lines = ["bucket\tcount"]
        for i, count in enumerate(report.counts):
            lines.append(f"[{report.bucket_edges[i]:.1f},{report.bucket_edges[i + 1]:.1f})\t{count}")
        Path(chart_path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Judge scoring
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JudgeVerdict:
    question_id: str
    rating: int  # 1..4
    rationale: str

    def __post_init__(self) -> None:
        if self.rating not in (1, 2, 3, 4):
            raise ValueError(f"rating {self.rating} outside 1..4")


@dataclass
class JudgeReport:
    verdicts: list[JudgeVerdict]
    mean_rating: float | None
    parse_failures: int


_RATING_LINE = "Total rating:"
_INT_RE = re.compile(r"-?\d+")


def build_judge_prompt(question_text: str, answer_text: str) -> str:
    template = load_template("llm_judge.txt")
    return template.replace("{question}", question_text).replace("{answer}", answer_text)


def parse_judge_response(response: str) -> tuple[int, str] | None:
    """(rating, rationale) from the final rating line, or None when unparseable."""
    rating_line_idx = None
    lines = response.splitlines()
    for i, line in enumerate(lines):
        if _RATING_LINE in line:
            rating_line_idx = i
    if rating_line_idx is None:
        return None
    _, _, after = lines[rating_line_idx].partition(_RATING_LINE)
    match = _INT_RE.search(after)
    if match is None:
        return None
    rating = int(match.group())
    if rating not in (1, 2, 3, 4):
        return None
    rationale = "\n".join(lines[:rating_line_idx]).strip()
    marker = "Evaluation:"
    if marker in rationale:
        rationale = rationale.split(marker, 1)[1].strip()
    return rating, rationale


def judge_answers(
    answers: Sequence[Answer],
    questions: Sequence[Question],
    generator,
) -> JudgeReport:
    """Rate each (question, answer) pair on the 1-4 scale.

    Unparseable responses are retried once, then recorded as parse failures
    and excluded from the mean.
    """
    by_id = {q.question_id: q for q in questions}
    prompts = [build_judge_prompt(by_id[a.question_id].text, a.text) for a in answers]
    try:
        responses = generator(prompts)
    except Exception as exc:
        raise GeneratorFailure(str(exc)) from exc
    verdicts: list[JudgeVerdict] = []
    failures = 0
    for answer, prompt, response in zip(answers, prompts, responses):
        parsed = parse_judge_response(response)
        if parsed is None:
            retry = generator([prompt])[0]
            parsed = parse_judge_response(retry)
        if parsed is None:
            failures += 1
            continue
        rating, rationale = parsed
        verdicts.append(JudgeVerdict(answer.question_id, rating, rationale))
    mean = sum(v.rating for v in verdicts) / len(verdicts) if verdicts else None
    return JudgeReport(verdicts=verdicts, mean_rating=mean, parse_failures=failures)


def write_verdicts(report: JudgeReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in report.verdicts:
            fh.write(json.dumps(
                {"question_id": v.question_id, "rating": v.rating, "rationale": v.rationale},
                sort_keys=True,
            ) + "\n")
