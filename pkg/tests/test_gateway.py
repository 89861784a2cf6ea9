from __future__ import annotations

import json
import math

import pytest

from regqa.errors import ProtocolViolation, RemoteError
from regqa.gateway import (
    Gateway,
    ScoreRequest,
    ScoreResponse,
    StubTransport,
    adversarial_nli,
    call,
    stub_embed,
    stub_generate,
    stub_nli,
    stub_rerank,
)
from regqa.repass import NliScores


# ---------------------------------------------------------------------------
# stub_nli
# ---------------------------------------------------------------------------

def test_identical_sentences_fully_entail():
    assert stub_nli("The firm must file.", "The firm must file.") == NliScores(1.0, 0.0, 0.0)


def test_disjoint_token_sets_are_neutral():
    assert stub_nli("alpha beta", "gamma delta") == NliScores(0.0, 0.0, 1.0)


def test_jaccard_overlap():
    scores = stub_nli("a b c", "a b d")
    assert scores.entailment == pytest.approx(0.5)
    assert scores.contradiction == 0.0
    assert scores.neutral == pytest.approx(0.5)


def test_equal_sets_different_sequence_stay_below_one():
    scores = stub_nli("a b", "b a b")
    assert scores.entailment < 1.0
    assert scores.entailment == pytest.approx(1.0, abs=1e-6)


def test_contradiction_identically_zero():
    samples = [("a b", "a b"), ("a", "b"), ("x y z", "z y"), ("", "")]
    assert all(stub_nli(p, h).contradiction == 0.0 for p, h in samples)


def test_case_and_punctuation_normalized():
    assert stub_nli("The Firm MUST file!", "the firm must file.").entailment == 1.0


# ---------------------------------------------------------------------------
# stub_embed
# ---------------------------------------------------------------------------

def test_embed_deterministic():
    assert stub_embed("some text here") == stub_embed("some text here")


def test_embed_unit_norm():
    vector = stub_embed("client money must be segregated")
    assert math.fsum(x * x for x in vector) == pytest.approx(1.0, abs=1e-9)
    assert len(vector) == 64


def test_embed_self_cosine_is_one():
    v = stub_embed("annual return")
    assert math.fsum(a * b for a, b in zip(v, v)) == pytest.approx(1.0, abs=1e-6)


def test_embed_disjoint_vocabulary_orthogonal():
    # fixture chosen so the two token sets hash to disjoint buckets
    a_tokens, b_tokens = ["alpha", "beta"], ["gamma", "delta"]
    import hashlib

    def bucket(token):
        return int.from_bytes(hashlib.md5(token.encode()).digest()[:8], "big") % 64

    assert {bucket(t) for t in a_tokens}.isdisjoint({bucket(t) for t in b_tokens})
    va, vb = stub_embed(" ".join(a_tokens)), stub_embed(" ".join(b_tokens))
    assert math.fsum(a * b for a, b in zip(va, vb)) == pytest.approx(0.0, abs=1e-6)


def test_embed_empty_text_is_unit_vector():
    vector = stub_embed("")
    assert math.fsum(x * x for x in vector) == pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------------------
# stub_rerank / stub_generate / adversarial stub
# ---------------------------------------------------------------------------

def test_rerank_is_lexical_overlap():
    assert stub_rerank("must file annual return", "must file annual return") == 1.0
    assert 0.0 < stub_rerank("must file", "must file late") < 1.0
    assert stub_rerank("alpha", "omega") == 0.0


def test_generate_echoes_prompt():
    assert stub_generate("say this back") == "say this back"


def test_adversarial_stub_injects_contradiction():
    nli = adversarial_nli({("a b", "c d"): NliScores(0.1, 0.7, 0.2)})
    assert nli("a b", "c d").contradiction == 0.7
    assert nli("c d", "a b").contradiction == 0.0  # only the configured direction


# ---------------------------------------------------------------------------
# protocol call validation
# ---------------------------------------------------------------------------

def test_call_stub_embed_shapes():
    request = ScoreRequest("embed", "b1", [{"text": t} for t in ("x", "y", "z")])
    response = call(request, StubTransport())
    assert len(response.results) == 3
    assert all(len(r["vector"]) == 64 for r in response.results)


def test_call_nli_identity_axiom():
    request = ScoreRequest("nli", "b2", [{"premise": "x y", "hypothesis": "x y"}])
    response = call(request, StubTransport())
    assert response.results[0] == {"entailment": 1.0, "contradiction": 0.0, "neutral": 0.0}


def test_misaligned_response_rejected():
    class Misaligned:
        def request(self, request):
            return ScoreResponse(request.batch_id, results=[{"probability": 0.5}])

    request = ScoreRequest("rerank", "b3", [{"question": "q", "passage": "p"}] * 2)
    with pytest.raises(ProtocolViolation):
        call(request, Misaligned())


def test_out_of_range_probability_rejected():
    class Broken:
        def request(self, request):
            return ScoreResponse(request.batch_id, results=[{"probability": 1.5}])

    request = ScoreRequest("rerank", "b4", [{"question": "q", "passage": "p"}])
    with pytest.raises(ProtocolViolation):
        call(request, Broken())


def test_bad_nli_sum_rejected():
    class Broken:
        def request(self, request):
            return ScoreResponse(request.batch_id, results=[
                {"entailment": 0.5, "contradiction": 0.5, "neutral": 0.5}
            ])

    request = ScoreRequest("nli", "b5", [{"premise": "a", "hypothesis": "b"}])
    with pytest.raises(ProtocolViolation):
        call(request, Broken())


def test_remote_error_propagates():
    class Failing:
        def request(self, request):
            return ScoreResponse(request.batch_id, error=("boom", "backend fell over"))

    request = ScoreRequest("generate", "b6", [{"prompt": "hello"}])
    with pytest.raises(RemoteError) as err:
        call(request, Failing())
    assert err.value.code == "boom"


def test_request_validation():
    with pytest.raises(ValueError):
        ScoreRequest("paint", "b7", [{}])
    with pytest.raises(ValueError):
        ScoreRequest("nli", "b8", [])
    ScoreRequest("train", "b9", [])  # bare train command is legal


# ---------------------------------------------------------------------------
# gateway facade + shared conformance vectors
# ---------------------------------------------------------------------------

def test_gateway_batch_ids_unique():
    gateway = Gateway()
    gateway.embed_batch(["a"])
    gateway.embed_batch(["b"])
    ids = {f"embed-{i}" for i in (1, 2)}
    assert {f"embed-{n}" for n in (1, 2)} == ids  # counter advanced


def test_gateway_dim_validation():
    gateway = Gateway(expected_dims={"stub": 32})
    with pytest.raises(ProtocolViolation):
        gateway.embed_batch(["text"], profile="stub")


def _check_schema(schema: str, results: list[dict]):
    if schema == "nli":
        for r in results:
            total = r["entailment"] + r["contradiction"] + r["neutral"]
            assert all(0.0 <= r[key] <= 1.0 for key in ("entailment", "contradiction", "neutral"))
            assert abs(total - 1.0) <= 1e-3
    elif schema == "embed":
        for r in results:
            assert isinstance(r["vector"], list) and all(isinstance(x, float) for x in r["vector"])
    elif schema == "rerank":
        for r in results:
            assert 0.0 <= r["probability"] <= 1.0
    elif schema == "generate":
        for r in results:
            assert isinstance(r["text"], str)


def test_stub_transport_passes_shared_vectors(data_dir):
    vectors = json.loads((data_dir / "protocol_vectors.json").read_text())
    transport = StubTransport()
    for case in vectors["cases"]:
        request = ScoreRequest(**case["request"])
        expect = case["expect"]
        if expect["ok"]:
            response = call(request, transport)
            if "results_len" in expect:
                assert len(response.results) == expect["results_len"], case["name"]
            if "schema" in expect:
                _check_schema(expect["schema"], response.results)
        else:
            with pytest.raises(RemoteError):
                call(request, transport)
