"""Corpus loading, preprocessing, tokenization, and sentence segmentation.

All text normalization used elsewhere lives here so the token-count filter,
the lexical index, and the stub scorers agree on what a token is.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DuplicateRefConflict, ParseError

# Lowercased Unicode word runs; internal dots between word characters are kept
# so section numbers like "9.2.7" stay one token.
_TOKEN_RE = re.compile(r"[^\W_]+(?:\.[^\W_]+)*")

# Sentence terminators split only when followed by whitespace or end-of-text,
# which already protects decimals and dotted section numbers.
_TERMINATOR_RE = re.compile(r"[.!?]+(?=\s|$)")
_TRAILING_WORD_RE = re.compile(r"[^\W_]+(?:\.[^\W_]+)*$")

# Dotless form of the token preceding a "." that must not end a sentence.
_ABBREVIATIONS = frozenset({
    "e.g", "i.e", "etc", "cf", "vs", "viz", "no", "nos", "approx",
    "art", "arts", "para", "paras", "sec", "secs", "ch", "pt", "fig",
    "mr", "mrs", "ms", "dr", "st",
})


def tokenize(text: str) -> list[str]:
    """Deterministic lowercase word tokens, punctuation dropped, no stemming."""
    return _TOKEN_RE.findall(text.lower())


def split_sentences(text: str) -> list[str]:
    """Rule-based sentence segmentation.

    Splits on ``. ! ?`` followed by whitespace or end-of-text; a fixed
    abbreviation list is protected. Every returned sentence is non-empty after
    trimming, and concatenating the sentences preserves every non-whitespace
    character of the input.
    """
    sentences: list[str] = []
    start = 0
    for match in _TERMINATOR_RE.finditer(text):
        if match.group().startswith("."):
            lead = _TRAILING_WORD_RE.search(text, start, match.start())
            if lead is not None and lead.end() == match.start() and lead.group().lower() in _ABBREVIATIONS:
                continue
        piece = text[start:match.end()].strip()
        if piece:
            sentences.append(piece)
        start = match.end()
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


@dataclass(frozen=True)
class Passage:
    """One corpus chunk. (doc_id, passage_id) is unique within a corpus."""

    doc_id: str
    passage_id: str
    text: str
    sentences: tuple[str, ...]
    token_count: int

    @property
    def ref(self) -> tuple[str, str]:
        return (self.doc_id, self.passage_id)


def make_passage(doc_id: str, passage_id: str, text: str) -> Passage:
    """Build a Passage, deriving sentences and token_count from text."""
    return Passage(
        doc_id=doc_id,
        passage_id=passage_id,
        text=text,
        sentences=tuple(split_sentences(text)),
        token_count=len(tokenize(text)),
    )


@dataclass(frozen=True)
class Question:
    question_id: str
    text: str
    gold_refs: tuple[tuple[str, str], ...] = ()

    @property
    def labeled(self) -> bool:
        return len(self.gold_refs) > 0


@dataclass
class Corpus:
    """Immutable after load; index_by_ref maps (doc_id, passage_id) to position."""

    passages: list[Passage]
    index_by_ref: dict[tuple[str, str], int] = field(init=False)

    def __post_init__(self) -> None:
        index: dict[tuple[str, str], int] = {}
        for pos, passage in enumerate(self.passages):
            if passage.ref in index:
                raise DuplicateRefConflict(f"duplicate passage ref {passage.ref}")
            index[passage.ref] = pos
        self.index_by_ref = index

    def __len__(self) -> int:
        return len(self.passages)

    def get(self, ref: tuple[str, str]) -> Passage:
        return self.passages[self.index_by_ref[ref]]

    def __contains__(self, ref: tuple[str, str]) -> bool:
        return ref in self.index_by_ref


@dataclass(frozen=True)
class FormatProfile:
    """Maps record field names for one corpus/question file layout."""

    name: str
    question_id_field: str
    question_text_field: str
    passages_field: str
    doc_id_field: str
    passage_id_field: str
    text_field: str


OBLIQA_PROFILE = FormatProfile(
    name="obliqa",
    question_id_field="QuestionID",
    question_text_field="Question",
    passages_field="Passages",
    doc_id_field="DocumentID",
    passage_id_field="PassageID",
    text_field="Passage",
)

PROFILES: dict[str, FormatProfile] = {"obliqa": OBLIQA_PROFILE}


def _resolve_profile(format_profile: str | FormatProfile) -> FormatProfile:
    if isinstance(format_profile, FormatProfile):
        return format_profile
    try:
        return PROFILES[format_profile]
    except KeyError:
        raise ParseError(f"unknown format profile {format_profile!r}") from None


def _read_records(path: str | Path) -> list[dict]:
    """Read a JSON array or JSON Lines file of question records."""
    raw = Path(path).read_text(encoding="utf-8")
    stripped = raw.lstrip()
    try:
        if stripped.startswith("["):
            records = json.loads(raw)
        else:
            records = [json.loads(line) for line in raw.splitlines() if line.strip()]
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(records, list) or not all(isinstance(r, dict) for r in records):
        raise ParseError(f"{path}: expected a list of question records")
    return records


def _record_field(record: dict, name: str, path: str | Path):
    try:
        return record[name]
    except KeyError:
        raise ParseError(f"{path}: record missing field {name!r}") from None


def load_corpus(path: str | Path, format_profile: str | FormatProfile = "obliqa") -> Corpus:
    """Collect the passages referenced by a question file.

    Duplicate refs with identical text merge silently; duplicate refs with
    differing text raise DuplicateRefConflict.
    """
    profile = _resolve_profile(format_profile)
    passages: list[Passage] = []
    seen: dict[tuple[str, str], str] = {}
    for record in _read_records(path):
        for entry in _record_field(record, profile.passages_field, path):
            doc_id = str(_record_field(entry, profile.doc_id_field, path))
            passage_id = str(_record_field(entry, profile.passage_id_field, path))
            text = str(_record_field(entry, profile.text_field, path))
            ref = (doc_id, passage_id)
            if ref in seen:
                if seen[ref] != text:
                    raise DuplicateRefConflict(
                        f"{path}: ref {ref} appears with two different texts"
                    )
                continue
            seen[ref] = text
            passages.append(make_passage(doc_id, passage_id, text))
    return Corpus(passages)


def load_questions(path: str | Path, format_profile: str | FormatProfile = "obliqa") -> list[Question]:
    """Load the question side of a split; gold refs may be empty when unlabeled."""
    profile = _resolve_profile(format_profile)
    questions: list[Question] = []
    seen_ids: set[str] = set()
    for record in _read_records(path):
        qid = str(_record_field(record, profile.question_id_field, path))
        if qid in seen_ids:
            raise ParseError(f"{path}: duplicate question id {qid!r}")
        seen_ids.add(qid)
        text = str(_record_field(record, profile.question_text_field, path))
        refs = tuple(
            (str(entry[profile.doc_id_field]), str(entry[profile.passage_id_field]))
            for entry in record.get(profile.passages_field, [])
        )
        questions.append(Question(question_id=qid, text=text, gold_refs=refs))
    return questions


def preprocess(corpus: Corpus, min_tokens: int) -> Corpus:
    """Keep passages with token_count >= min_tokens, preserving order.

    Idempotent; an empty result is legal (downstream indexing rejects it).
    """
    if min_tokens < 0:
        raise ValueError("min_tokens must be >= 0")
    return Corpus([p for p in corpus.passages if p.token_count >= min_tokens])
