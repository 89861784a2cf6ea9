from __future__ import annotations

import json
from pathlib import Path

import pytest

from regqa.corpus import Corpus, Question, make_passage
from regqa.gateway import stub_nli

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture(scope="session")
def fixture_corpus_dir() -> Path:
    return DATA_DIR / "fixture_corpus"


@pytest.fixture(scope="session")
def contradiction_pairs() -> list[dict]:
    return json.loads((DATA_DIR / "contradiction_pairs.json").read_text())["pairs"]


def build_corpus(texts: list[str], doc_id: str = "d") -> Corpus:
    """Corpus of one passage per text, refs (doc_id, p0), (doc_id, p1), ..."""
    return Corpus([make_passage(doc_id, f"p{i}", text) for i, text in enumerate(texts)])


def build_question(qid: str, text: str, gold: list[tuple[str, str]]) -> Question:
    return Question(question_id=qid, text=text, gold_refs=tuple(gold))


def stub_nli_batch(pairs):
    """The deterministic stub as the batched NLI capability."""
    return [stub_nli(premise, hypothesis) for premise, hypothesis in pairs]
