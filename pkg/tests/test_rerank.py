from __future__ import annotations

import json
import random

import pytest

from regqa.corpus import Corpus, Question, make_passage
from regqa.errors import EmptyInput, ScorerFailure, UnlabeledQuestion
from regqa.gateway import stub_rerank
from regqa.rankings import RankedEntry, RankedList
from regqa.rerank import RerankExample, build_rerank_trainset, rerank, write_rerank_trainset


def _corpus(n=8, doc="d"):
    return Corpus([
        make_passage(doc, f"p{i}", f"passage number {i} talks about topic {i} in detail")
        for i in range(n)
    ])


def _ranked(refs, query_id="q1", retriever_id="r1"):
    entries = [RankedEntry(d, p, 10.0 - i) for i, (d, p) in enumerate(refs)]
    return RankedList(query_id, retriever_id, entries)


# ---------------------------------------------------------------------------
# trainset construction
# ---------------------------------------------------------------------------

def test_hard_negatives_from_top_k_minus_gold():
    corpus = _corpus(4)
    question = Question("q1", "about topic zero", gold_refs=(("d", "p0"),))
    l1 = {"q1": [_ranked([("d", "p0"), ("d", "p1"), ("d", "p2")])]}
    examples = build_rerank_trainset([question], l1, corpus, top_k=3, easy_per_q=0, hard_per_q=2, seed=0)
    hard = {ex.passage_ref for ex in examples if ex.negative_kind == "hard"}
    assert hard == {("d", "p1"), ("d", "p2")}
    positives = [ex for ex in examples if ex.label == "relevant"]
    assert [ex.passage_ref for ex in positives] == [("d", "p0")]


def test_corpus_equals_gold_yields_no_negatives():
    corpus = _corpus(1)
    question = Question("q1", "topic", gold_refs=(("d", "p0"),))
    l1 = {"q1": [_ranked([("d", "p0")])]}
    with pytest.warns(UserWarning):
        examples = build_rerank_trainset([question], l1, corpus, top_k=3, easy_per_q=2, hard_per_q=2, seed=0)
    assert all(ex.label == "relevant" for ex in examples)


def test_trainset_deterministic_under_seed(tmp_path):
    rng = random.Random(5)
    corpus = _corpus(30)
    questions = []
    l1 = {}
    for i in range(5):
        gold = tuple({("d", f"p{rng.randint(0, 29)}") for _ in range(2)})
        questions.append(Question(f"q{i}", f"question {i}", gold_refs=gold))
        refs = [("d", f"p{j}") for j in rng.sample(range(30), 10)]
        l1[f"q{i}"] = [_ranked(refs, query_id=f"q{i}")]
    a = build_rerank_trainset(questions, l1, corpus, top_k=10, easy_per_q=3, hard_per_q=3, seed=11)
    b = build_rerank_trainset(questions, l1, corpus, top_k=10, easy_per_q=3, hard_per_q=3, seed=11)
    path_a, path_b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_rerank_trainset(a, path_a)
    write_rerank_trainset(b, path_b)
    assert path_a.read_bytes() == path_b.read_bytes()


def test_unlabeled_question_rejected():
    corpus = _corpus(2)
    question = Question("q1", "no labels here")
    with pytest.raises(UnlabeledQuestion):
        build_rerank_trainset([question], {"q1": [_ranked([("d", "p0")])]}, corpus)


def test_trainset_invariants_on_random_fixtures():
    rng = random.Random(99)
    corpus = _corpus(20)
    for trial in range(25):
        gold = tuple({("d", f"p{rng.randint(0, 19)}") for _ in range(rng.randint(1, 3))})
        question = Question("q", "text", gold_refs=gold)
        refs = [("d", f"p{j}") for j in rng.sample(range(20), rng.randint(1, 12))]
        l1 = {"q": [_ranked(refs)]}
        top_k = rng.randint(1, 10)
        examples = build_rerank_trainset(
            [question], l1, corpus,
            top_k=top_k, easy_per_q=rng.randint(0, 4), hard_per_q=rng.randint(0, 4),
            seed=trial,
        )
        gold_set = set(gold)
        top_union = set(refs[:top_k])
        for ex in examples:
            assert (ex.label == "relevant") == (ex.negative_kind == "none")
            if ex.negative_kind == "hard":
                assert ex.passage_ref in top_union and ex.passage_ref not in gold_set
            if ex.negative_kind == "easy":
                assert ex.passage_ref not in gold_set


def test_example_invariant_enforced():
    with pytest.raises(ValueError):
        RerankExample("q", "t", ("d", "p"), "text", "relevant", "hard")


# ---------------------------------------------------------------------------
# rescoring
# ---------------------------------------------------------------------------

def test_oracle_scorer_puts_its_candidate_first():
    corpus = _corpus(3)
    question = Question("q1", "which passage", gold_refs=(("d", "p2"),))
    candidates = _ranked([("d", "p0"), ("d", "p1"), ("d", "p2")])
    def scorer(pairs):
        return [1.0 if "number 2" in passage else 0.0 for _, passage in pairs]
    result = rerank(question, candidates, corpus, scorer, k=3)
    assert result.entries[0].ref == ("d", "p2")
    assert result.retriever_id == "l2(r1)"


def test_stub_scorer_matches_hand_ordering():
    texts = {
        "p0": "client money must be held in a segregated account",
        "p1": "the annual return is due in the fourth month",
        "p2": "client money reconciliations are performed monthly",
        "p3": "fees are described in the fee schedule",
        "p4": "client money accounts are opened with eligible banks",
    }
    corpus = Corpus([make_passage("d", pid, text) for pid, text in texts.items()])
    question = Question("q1", "where must client money be held")
    candidates = _ranked([("d", f"p{i}") for i in range(5)])
    pairs = [(question.text, texts[f"p{i}"]) for i in range(5)]
    hand_scores = [stub_rerank(q, p) for q, p in pairs]
    expected_order = [
        ("d", f"p{i}") for i in
        sorted(range(5), key=lambda i: (-hand_scores[i], f"p{i}"))
    ]
    def scorer(ps):
        return [stub_rerank(q, p) for q, p in ps]
    result = rerank(question, candidates, corpus, scorer, k=5)
    assert result.refs() == expected_order


def test_k_larger_than_candidates_returns_all():
    corpus = _corpus(2)
    question = Question("q1", "text")
    candidates = _ranked([("d", "p0"), ("d", "p1")])
    result = rerank(question, candidates, corpus, lambda ps: [0.5, 0.9], k=10)
    assert len(result.entries) == 2
    assert result.entries[0].ref == ("d", "p1")


def test_output_subset_of_input():
    corpus = _corpus(6)
    question = Question("q1", "text")
    candidates = _ranked([("d", f"p{i}") for i in range(6)])
    result = rerank(question, candidates, corpus, lambda ps: [0.1 * (i + 1) for i in range(6)], k=3)
    assert set(result.refs()) <= set(candidates.refs())


def test_fused_score_scorer_is_identity_on_ordering():
    corpus = _corpus(5)
    question = Question("q1", "text")
    candidates = _ranked([("d", f"p{i}") for i in range(5)])
    scores = {corpus.get(e.ref).text: e.score / 100.0 for e in candidates.entries}
    def scorer(pairs):
        return [scores[passage] for _, passage in pairs]
    result = rerank(question, candidates, corpus, scorer, k=5)
    assert result.refs() == candidates.refs()


def test_empty_candidates_rejected():
    corpus = _corpus(1)
    question = Question("q1", "text")
    with pytest.raises(EmptyInput):
        rerank(question, RankedList("q1", "r1", []), corpus, lambda ps: [], k=5)


def test_scorer_failure_identifies_query():
    corpus = _corpus(2)
    question = Question("q-broken", "text")
    candidates = _ranked([("d", "p0")], query_id="q-broken")
    def broken(pairs):
        raise RuntimeError("no backend")
    with pytest.raises(ScorerFailure, match="q-broken"):
        rerank(question, candidates, corpus, broken, k=1)
    with pytest.raises(ScorerFailure):
        rerank(question, candidates, corpus, lambda ps: [1.5], k=1)


def test_trainset_jsonl_contract(tmp_path):
    corpus = _corpus(4)
    question = Question("q1", "about topics", gold_refs=(("d", "p0"),))
    l1 = {"q1": [_ranked([("d", "p0"), ("d", "p1")])]}
    examples = build_rerank_trainset([question], l1, corpus, top_k=2, easy_per_q=1, hard_per_q=1, seed=3)
    path = tmp_path / "trainset.jsonl"
    write_rerank_trainset(examples, path)
    lines = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(lines) == len(examples)
    assert set(lines[0]) == {"question_id", "question_text", "passage_ref", "passage_text", "label", "negative_kind"}
