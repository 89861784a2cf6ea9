"""Answer strategies: prompted generation, passage concatenation, single line."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .corpus import Passage, split_sentences
from .errors import EmptyInput, GeneratorFailure
from .rankings import ref_key

GeneratorFn = Callable[[Sequence[str]], "list[str]"]

_TERMINATORS = ".!?"


@dataclass(frozen=True)
class Answer:
    question_id: str
    strategy: str  # llm_prompt | passage_concat | single_line
    text: str
    source_refs: tuple[tuple[str, str], ...]


def _refs(passages: Sequence[Passage]) -> tuple[tuple[str, str], ...]:
    return tuple(p.ref for p in passages)


def passage_concat(passages: Sequence[Passage], question_id: str = "") -> Answer:
    """Retrieved passage texts joined by single spaces, in retrieval order."""
    if not passages:
        raise EmptyInput("passage_concat needs at least one passage")
    return Answer(
        question_id=question_id,
        strategy="passage_concat",
        text=" ".join(p.text for p in passages),
        source_refs=_refs(passages),
    )


def single_line(passages: Sequence[Passage], question_id: str = "") -> Answer:
    """Concatenation with sentence-final terminators removed.

    Terminators are located with the shared sentence splitter, so dotted
    section numbers and protected abbreviations survive; whitespace collapses
    to single spaces and a trailing terminator is dropped.
    """
    if not passages:
        raise EmptyInput("single_line needs at least one passage")
    concatenated = " ".join(p.text for p in passages)
    stripped = [s.rstrip(_TERMINATORS).strip() for s in split_sentences(concatenated)]
    text = " ".join(" ".join(stripped).split())
    return Answer(
        question_id=question_id,
        strategy="single_line",
        text=text,
        source_refs=_refs(passages),
    )


def load_template(name: str) -> str:
    return resources.files("regqa.prompts").joinpath(name).read_text(encoding="utf-8")


def build_answer_prompt(question_text: str, passages: Sequence[Passage]) -> str:
    """Fill the generation template; context is one ref-prefixed passage per line."""
    context = "\n".join(f"[{ref_key(p.doc_id, p.passage_id)}] {p.text}" for p in passages)
    template = load_template("answer_generation.txt")
    return template.replace("{question}", question_text).replace("{context}", context)


def llm_answer(question, passages: Sequence[Passage], generator: GeneratorFn) -> Answer:
    """Prompted generation; the generator output is stored verbatim."""
    if not passages:
        warnings.warn(f"question {question.question_id!r}: generating with an empty passages section")
    prompt = build_answer_prompt(question.text, passages)
    try:
        texts = generator([prompt])
    except Exception as exc:
        raise GeneratorFailure(str(exc)) from exc
    if len(texts) != 1:
        raise GeneratorFailure(f"generator returned {len(texts)} texts for 1 prompt")
    return Answer(
        question_id=question.question_id,
        strategy="llm_prompt",
        text=texts[0],
        source_refs=_refs(passages),
    )


def write_answers(answers: Iterable[Answer], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for answer in answers:
            fh.write(json.dumps(
                {
                    "question_id": answer.question_id,
                    "strategy": answer.strategy,
                    "text": answer.text,
                    "source_refs": [list(ref) for ref in answer.source_refs],
                },
                sort_keys=True,
            ) + "\n")


def read_answers(path: str | Path) -> list[Answer]:
    out: list[Answer] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            out.append(Answer(
                question_id=obj["question_id"],
                strategy=obj["strategy"],
                text=obj["text"],
                source_refs=tuple((r[0], r[1]) for r in obj["source_refs"]),
            ))
    return out
