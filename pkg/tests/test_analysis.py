from __future__ import annotations

import random

import pytest

from regqa.analysis import (
    build_judge_prompt,
    entailment_histogram,
    judge_answers,
    parse_judge_response,
)
from regqa.answers import Answer
from regqa.corpus import Corpus, Question, make_passage
from regqa.errors import UnlabeledQuestion
from regqa.rankings import RankedEntry, RankedList
from regqa.repass import NliScores

from conftest import stub_nli_batch


def _ranked(refs, query_id="q1"):
    entries = [RankedEntry(d, p, 50.0 - i) for i, (d, p) in enumerate(refs)]
    return RankedList(query_id, "rrf", entries)


# ---------------------------------------------------------------------------
# histogram
# ---------------------------------------------------------------------------

def test_duplicate_of_gold_lands_in_top_bucket():
    text = "The Regulator may require an Applicant to provide information in such form as the Regulator may direct."
    corpus = Corpus([
        make_passage("d1", "gold", text),
        make_passage("d2", "dup", text),  # verbatim duplicate under another ref
        make_passage("d3", "other", "Fees are payable under the fee schedule annually."),
    ])
    question = Question("q1", "what may the regulator require", gold_refs=(("d1", "gold"),))
    retrievals = {"q1": _ranked([("d1", "gold"), ("d2", "dup"), ("d3", "other")])}
    report = entailment_histogram([question], retrievals, corpus, stub_nli_batch)
    assert report.counts[9] >= 1  # the duplicate's entailment is 1.0
    assert report.total == 2  # both non-gold retrievals have zero stub contradiction


def test_unrelated_passage_lands_in_bottom_bucket():
    corpus = Corpus([
        make_passage("d1", "gold", "Client money must be held in segregated accounts."),
        make_passage("d2", "junk", "Zebras gallop across windy plateaus quickly."),
    ])
    question = Question("q1", "client money", gold_refs=(("d1", "gold"),))
    retrievals = {"q1": _ranked([("d1", "gold"), ("d2", "junk")])}
    report = entailment_histogram([question], retrievals, corpus, stub_nli_batch)
    assert report.counts[0] == 1
    assert report.total == 1


def test_hand_bucketing_of_synthetic_scores():
    rng = random.Random(8)
    pairs = []
    for i in range(20):
        e = round(rng.random(), 4)
        pairs.append((f"junk{i}", e))
    # table stub: each non-gold passage sentence entails the gold sentence
    # with its assigned score and never contradicts
    gold_sentence = "The firm must pay the annual fee."
    table = {}
    passages = [make_passage("d1", "gold", gold_sentence)]
    refs = [("d1", "gold")]
    for name, e in pairs:
        sentence = f"Synthetic passage {name} text."
        passages.append(make_passage("d2", name, sentence))
        refs.append(("d2", name))
        table[(sentence, gold_sentence)] = NliScores(e, 0.0, round(1.0 - e, 4))

    def nli(batch):
        return [table.get(pair, NliScores(0.0, 0.0, 1.0)) for pair in batch]

    corpus = Corpus(passages)
    question = Question("q1", "fees", gold_refs=(("d1", "gold"),))
    retrievals = {"q1": _ranked(refs)}
    report = entailment_histogram([question], retrievals, corpus, nli, top_k=len(refs))
    expected = [0] * 10
    for _, e in pairs:
        expected[min(int(e * 10), 9)] += 1
    assert report.counts == expected


def test_histogram_filters_high_contradiction():
    gold_sentence = "The fee is due in January."
    bad_sentence = "The fee is never due at all."
    table = {(bad_sentence, gold_sentence): NliScores(0.1, 0.6, 0.3)}

    def nli(batch):
        return [table.get(pair, NliScores(0.0, 0.0, 1.0)) for pair in batch]

    corpus = Corpus([
        make_passage("d1", "gold", gold_sentence),
        make_passage("d2", "contra", bad_sentence),
    ])
    question = Question("q1", "fees", gold_refs=(("d1", "gold"),))
    retrievals = {"q1": _ranked([("d1", "gold"), ("d2", "contra")])}
    report = entailment_histogram([question], retrievals, corpus, nli, c_s_max=0.2)
    assert report.total == 0


def test_histogram_permutation_invariant():
    corpus = Corpus([
        make_passage("d1", "gold", "Alpha must file the beta return."),
        make_passage("d2", "n1", "Alpha files beta documents yearly."),
        make_passage("d2", "n2", "Unrelated gardening advice entirely."),
    ])
    question = Question("q1", "alpha", gold_refs=(("d1", "gold"),))
    forward = {"q1": _ranked([("d1", "gold"), ("d2", "n1"), ("d2", "n2")])}
    backward = {"q1": _ranked([("d2", "n2"), ("d2", "n1"), ("d1", "gold")])}
    a = entailment_histogram([question], forward, corpus, stub_nli_batch)
    b = entailment_histogram([question], backward, corpus, stub_nli_batch)
    assert a.counts == b.counts


def test_histogram_requires_labels():
    corpus = Corpus([make_passage("d", "p", "Text here.")])
    question = Question("q1", "unlabeled")
    with pytest.raises(UnlabeledQuestion):
        entailment_histogram([question], {"q1": _ranked([("d", "p")])}, corpus, stub_nli_batch)


# ---------------------------------------------------------------------------
# judge
# ---------------------------------------------------------------------------

def test_parse_simple_rating():
    assert parse_judge_response("Total rating: 4") == (4, "")


def test_parse_rating_with_rationale():
    response = "Feedback:::\nEvaluation: solid answer, could be shorter\nTotal rating: 2"
    rating, rationale = parse_judge_response(response)
    assert rating == 2
    assert rationale == "solid answer, could be shorter"


def test_parse_takes_final_rating_line():
    response = "Total rating: 1\nrevised opinion below\nTotal rating: 3"
    assert parse_judge_response(response)[0] == 3


def test_parse_rejects_missing_marker_and_range():
    assert parse_judge_response("no marker here") is None
    assert parse_judge_response("Total rating: 9") is None


def test_judge_end_to_end_with_fixed_generator():
    questions = [Question("q1", "What must the firm do?")]
    answers = [Answer("q1", "passage_concat", "The firm must act.", (("d", "p"),))]
    report = judge_answers(answers, questions, lambda prompts: ["Total rating: 4"] * len(prompts))
    assert [v.rating for v in report.verdicts] == [4]
    assert report.mean_rating == 4.0
    assert report.parse_failures == 0


def test_judge_retries_then_records_failure():
    questions = [Question("q1", "Anything?")]
    answers = [Answer("q1", "passage_concat", "text", ())]
    calls = []

    def flaky(prompts):
        calls.append(len(prompts))
        return ["no rating here"] * len(prompts)

    report = judge_answers(answers, questions, flaky)
    assert report.parse_failures == 1
    assert report.verdicts == []
    assert report.mean_rating is None
    assert len(calls) == 2  # initial + one retry


def test_judge_prompt_contains_question_and_answer():
    prompt = build_judge_prompt("Is the fee due?", "Yes, in January.")
    assert "Question: Is the fee due?" in prompt
    assert "Answer: Yes, in January." in prompt
    assert prompt.endswith("Evaluation: ")


def test_ratings_always_in_range():
    questions = [Question(f"q{i}", f"question {i}") for i in range(4)]
    answers = [Answer(f"q{i}", "passage_concat", f"answer {i}", ()) for i in range(4)]
    responses = ["Total rating: 1", "Total rating: 2", "Total rating: 3", "Total rating: 4"]

    def generator(prompts):
        return responses[:len(prompts)]

    report = judge_answers(answers, questions, generator)
    assert all(v.rating in (1, 2, 3, 4) for v in report.verdicts)
    assert 1.0 <= report.mean_rating <= 4.0
