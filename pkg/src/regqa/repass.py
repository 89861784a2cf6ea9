"""Reference-free answer scoring against retrieved passages.

The composite score combines three sentence-level reductions over an
(answer, passages) pair:

* entailment: mean over answer units of the max entailment probability any
  passage unit assigns to them;
* contradiction: the same reduction on the contradiction channel;
* obligation coverage: the fraction of detected obligation sentences that
  some answer unit entails with probability strictly above a threshold
  (default 0.7).

composite = (entailment - contradiction + coverage + 1) / 3, in [0, 1].

A window size N > 0 replaces passage and answer sentences with all runs of
N+1 consecutive sentences (windows never cross passage boundaries; a shorter
text yields its single full window). N=0 is exactly the plain metric.

The NLI capability is a callable taking ordered (premise, hypothesis) pairs
and returning one score triple per pair; the per-pair matrix for one
evaluation is assembled in a single batch, so reductions are deterministic
regardless of how the backend schedules calls.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .answers import Answer
from .corpus import Passage, split_sentences
from .errors import EmptyAnswer, NliFailure

NliFn = Callable[[Sequence[tuple[str, str]]], "list[NliScores]"]
DetectorFn = Callable[[Sequence[str]], "list[bool]"]

_SUM_TOLERANCE = 1e-3


@dataclass(frozen=True)
class NliScores:
    entailment: float
    contradiction: float
    neutral: float

    def __post_init__(self) -> None:
        for name, p in (("entailment", self.entailment),
                        ("contradiction", self.contradiction),
                        ("neutral", self.neutral)):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} probability {p} outside [0, 1]")
        total = self.entailment + self.contradiction + self.neutral
        if abs(total - 1.0) > _SUM_TOLERANCE:
            raise ValueError(f"probabilities sum to {total}, expected 1 +/- {_SUM_TOLERANCE}")


@dataclass(frozen=True)
class WindowConfig:
    """context_n = 0 scores plain sentences; N > 0 scores N+1-sentence windows."""

    context_n: int = 0

    def __post_init__(self) -> None:
        if self.context_n < 0:
            raise ValueError("context_n must be >= 0")


@dataclass
class RePassReport:
    e_s: float
    c_s: float
    oc_s: float
    repass: float
    per_answer_sentence: list[tuple[int, float, float]]  # (best premise idx, entailment, contradiction)
    obligations: list[tuple[int, bool, float]]  # (sentence idx, covered, best entailment)
    warnings: list[str] = field(default_factory=list)


_OBLIGATION_RE = re.compile(
    r"\bmust\b|\bshall\b|\bshould\b|\bis required to\b|\bare required to\b",
    re.IGNORECASE,
)


def detect_obligations(sentences: Sequence[str]) -> list[bool]:
    """Rule-based obligation detector; swappable for a learned classifier."""
    return [_OBLIGATION_RE.search(sentence) is not None for sentence in sentences]


def _score_matrix(premises: Sequence[str], hypotheses: Sequence[str], nli: NliFn) -> list[list[NliScores]]:
    """[hypothesis][premise] score grid from one batched NLI call."""
    pairs = [(p, h) for h in hypotheses for p in premises]
    try:
        flat = nli(pairs)
    except Exception as exc:
        raise NliFailure(str(exc)) from exc
    if len(flat) != len(pairs):
        raise NliFailure(f"NLI returned {len(flat)} scores for {len(pairs)} pairs")
    n = len(premises)
    return [list(flat[i * n:(i + 1) * n]) for i in range(len(hypotheses))]


def _mean_of_max(
    premises: Sequence[str],
    hypotheses: Sequence[str],
    nli: NliFn,
    channel: str,
) -> tuple[float, list[tuple[int, float]]]:
    if not hypotheses:
        raise EmptyAnswer("no answer sentences to score")
    if not premises:
        # vacuous max: score floor, not an error
        return 0.0, []
    grid = _score_matrix(premises, hypotheses, nli)
    diagnostics: list[tuple[int, float]] = []
    total = 0.0
    for row in grid:
        values = [getattr(s, channel) for s in row]
        best_idx = max(range(len(values)), key=lambda j: (values[j], -j))
        diagnostics.append((best_idx, values[best_idx]))
        total += values[best_idx]
    return total / len(hypotheses), diagnostics


def entailment_score(
    passage_sentences: Sequence[str],
    answer_sentences: Sequence[str],
    nli: NliFn,
) -> tuple[float, list[tuple[int, float]]]:
    """Mean over answer units of the best entailment any passage unit provides.

    Diagnostics carry the argmax premise index per answer unit. An empty
    premise list scores 0 (the caller is warned through the report).
    """
    return _mean_of_max(passage_sentences, answer_sentences, nli, "entailment")


def contradiction_score(
    passage_sentences: Sequence[str],
    answer_sentences: Sequence[str],
    nli: NliFn,
) -> tuple[float, list[tuple[int, float]]]:
    """Same reduction as entailment_score on the contradiction channel."""
    return _mean_of_max(passage_sentences, answer_sentences, nli, "contradiction")


def obligation_coverage(
    passage_sentences: Sequence[str],
    answer_sentences: Sequence[str],
    detector: DetectorFn,
    nli: NliFn,
    threshold: float = 0.7,
) -> tuple[float, list[tuple[int, bool, float]]]:
    """Fraction of obligation sentences some answer unit entails above threshold.

    An obligation counts as covered only on strict inequality. With zero
    detected obligations coverage is vacuously 1.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    flags = detector(passage_sentences)
    obligation_idx = [i for i, flagged in enumerate(flags) if flagged]
    if not obligation_idx:
        return 1.0, []
    obligations = [passage_sentences[i] for i in obligation_idx]
    # the answer must express the obligation: answer units are the premises
    grid = _score_matrix(answer_sentences, obligations, nli) if answer_sentences else []
    diagnostics: list[tuple[int, bool, float]] = []
    covered = 0
    for row_num, sentence_idx in enumerate(obligation_idx):
        best = max((s.entailment for s in grid[row_num]), default=0.0) if grid else 0.0
        is_covered = best > threshold
        covered += is_covered
        diagnostics.append((sentence_idx, is_covered, best))
    return covered / len(obligation_idx), diagnostics


def sentence_windows(sentences: Sequence[str], context_n: int) -> list[str]:
    """All runs of context_n+1 consecutive sentences, joined by single spaces.

    A text with fewer sentences yields its single full window; context_n=0
    returns the sentences unchanged.
    """
    sentences = list(sentences)
    if context_n == 0 or not sentences:
        return sentences
    size = context_n + 1
    if len(sentences) <= size:
        return [" ".join(sentences)]
    return [" ".join(sentences[i:i + size]) for i in range(len(sentences) - size + 1)]


def repass(
    passages: Sequence[Passage],
    answer: Answer,
    nli: NliFn,
    detector: DetectorFn = detect_obligations,
    window: WindowConfig = WindowConfig(),
    threshold: float = 0.7,
) -> RePassReport:
    """Score one answer against its retrieved passages.

    Passage units are the concatenation of every passage's sentences (windowed
    per passage when window.context_n > 0, never crossing passage boundaries);
    answer units come from segmenting the answer text the same way. Obligation
    detection always runs on plain passage sentences.
    """
    answer_sentences = split_sentences(answer.text)
    if not answer_sentences:
        raise EmptyAnswer(f"answer for question {answer.question_id!r} has no sentences")

    warnings: list[str] = []
    flat_passage_sentences = [s for p in passages for s in p.sentences]
    if window.context_n == 0:
        premise_units = flat_passage_sentences
        answer_units = answer_sentences
    else:
        premise_units = [w for p in passages for w in sentence_windows(p.sentences, window.context_n)]
        answer_units = sentence_windows(answer_sentences, window.context_n)

    if not premise_units:
        warnings.append("no passage sentences: entailment and contradiction floor to 0")

    e_s, e_diag = entailment_score(premise_units, answer_units, nli)
    c_s, c_diag = contradiction_score(premise_units, answer_units, nli)
    per_answer = [
        (e_best, e_val, c_val)
        for (e_best, e_val), (_, c_val) in zip(e_diag, c_diag)
    ]

    oc_s, obligation_diag = obligation_coverage(
        flat_passage_sentences, answer_units, detector, nli, threshold=threshold
    )
    if not obligation_diag:
        warnings.append("no obligation sentences detected: coverage is vacuously 1")

    composite = (e_s - c_s + oc_s + 1.0) / 3.0
    return RePassReport(
        e_s=e_s,
        c_s=c_s,
        oc_s=oc_s,
        repass=composite,
        per_answer_sentence=per_answer,
        obligations=obligation_diag,
        warnings=warnings,
    )


def score_matrix_dump(
    premises: Sequence[str],
    hypotheses: Sequence[str],
    nli: NliFn,
) -> list[dict]:
    """Debug dump of the full per-pair score grid for metric audits.

    One record per (premise, hypothesis) pair with both indices and the three
    probabilities; serialize as JSON Lines.
    """
    grid = _score_matrix(premises, hypotheses, nli)
    records: list[dict] = []
    for h_idx, row in enumerate(grid):
        for p_idx, scores in enumerate(row):
            records.append({
                "premise_index": p_idx,
                "hypothesis_index": h_idx,
                "entailment": scores.entailment,
                "contradiction": scores.contradiction,
                "neutral": scores.neutral,
            })
    return records


def report_to_dict(report: RePassReport) -> dict:
    """JSON-ready form of a report, diagnostics included."""
    return {
        "e_s": report.e_s,
        "c_s": report.c_s,
        "oc_s": report.oc_s,
        "repass": report.repass,
        "per_answer_sentence": [
            {"best_premise": i, "entailment": e, "contradiction": c}
            for i, e, c in report.per_answer_sentence
        ],
        "obligations": [
            {"sentence": i, "covered": covered, "best_entailment": best}
            for i, covered, best in report.obligations
        ],
        "warnings": list(report.warnings),
    }
