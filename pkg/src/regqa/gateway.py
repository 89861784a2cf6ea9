"""Single boundary for learned-model capabilities.

Every embedding, NLI triple, rerank probability, generated text, and training
command flows through one request/response protocol, so the model stack can
be swapped without touching the pipeline. Two transports:

* ``StubTransport`` answers in process with deterministic pure functions;
* ``LineProtocolClient`` talks newline-delimited JSON (UTF-8, one object per
  line, no length prefix) to a worker over a stdio pipe, after a
  ``{"type": "hello", "protocol_version": 1, ...}`` handshake.

The stub's NLI axioms: a sentence entails itself with probability 1, and the
contradiction channel is identically 0, which is what makes the
concat-answer maximum-score check exact. A separate adversarial stub can
inject contradictions for negative-path tests.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import select
import subprocess
from dataclasses import dataclass, field
from typing import Sequence

from .corpus import tokenize
from .errors import ProtocolViolation, RemoteError, Timeout
from .repass import NliScores

PROTOCOL_VERSION = 1
VERBS = ("embed", "nli", "rerank", "generate", "train")

STUB_DIM = 64
_JACCARD_CAP = 1.0 - 1e-9


# ---------------------------------------------------------------------------
# Deterministic stub capabilities
# ---------------------------------------------------------------------------

def _bucket(token: str) -> int:
    digest = hashlib.md5(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % STUB_DIM


def stub_embed(text: str) -> list[float]:
    """Hashed bag-of-tokens vector, L2-normalized; pure function of text."""
    counts = [0.0] * STUB_DIM
    tokens = tokenize(text)
    if not tokens:
        counts[_bucket("")] = 1.0
    for token in tokens:
        counts[_bucket(token)] += 1.0
    norm = math.sqrt(math.fsum(c * c for c in counts))
    return [c / norm for c in counts]


def stub_nli(premise: str, hypothesis: str) -> NliScores:
    """Identical normalized token sequences entail with probability 1;
    otherwise entailment is the token-set Jaccard overlap (capped below 1),
    contradiction is identically 0, and neutral takes the remainder."""
    p_tokens = tokenize(premise)
    h_tokens = tokenize(hypothesis)
    if p_tokens == h_tokens:
        return NliScores(1.0, 0.0, 0.0)
    p_set, h_set = set(p_tokens), set(h_tokens)
    union = p_set | h_set
    overlap = len(p_set & h_set) / len(union) if union else 0.0
    entail = min(overlap, _JACCARD_CAP)
    return NliScores(entail, 0.0, 1.0 - entail)


def stub_rerank(question: str, passage: str) -> float:
    """Lexical-overlap relevance probability (the stub NLI entailment channel)."""
    return stub_nli(question, passage).entailment


_JUDGE_MARKER = "Provide your feedback."


def stub_generate(prompt: str) -> str:
    """Echo generator; judge-shaped prompts get a parseable fixed verdict."""
    if _JUDGE_MARKER in prompt and "Total rating:" in prompt:
        return "Feedback:::\nEvaluation: lexical stub verdict\nTotal rating: 3"
    return prompt


def adversarial_nli(overrides: dict[tuple[str, str], NliScores]):
    """Stub variant that injects configured scores for chosen ordered pairs."""
    def scorer(premise: str, hypothesis: str) -> NliScores:
        key = (premise, hypothesis)
        if key in overrides:
            return overrides[key]
        return stub_nli(premise, hypothesis)
    return scorer


# ---------------------------------------------------------------------------
# Request/response protocol
# ---------------------------------------------------------------------------

@dataclass
class ScoreRequest:
    verb: str
    batch_id: str
    payload: list[dict]

    def __post_init__(self) -> None:
        if self.verb not in VERBS:
            raise ValueError(f"unknown verb {self.verb!r}")
        if not self.payload and self.verb != "train":
            raise ValueError(f"{self.verb} request needs a non-empty payload")


@dataclass
class ScoreResponse:
    batch_id: str
    results: list[dict] = field(default_factory=list)
    error: tuple[str, str] | None = None  # (code, message)


class StubTransport:
    """In-process deterministic backend fulfilling every capability."""

    capabilities = list(VERBS)

    def request(self, request: ScoreRequest) -> ScoreResponse:
        handler = getattr(self, f"_{request.verb}")
        try:
            results = handler(request.payload)
        except (KeyError, TypeError) as exc:
            return ScoreResponse(request.batch_id, error=("bad_payload", repr(exc)))
        return ScoreResponse(request.batch_id, results=results)

    @staticmethod
    def _embed(payload: list[dict]) -> list[dict]:
        return [{"vector": stub_embed(record["text"])} for record in payload]

    @staticmethod
    def _nli(payload: list[dict]) -> list[dict]:
        out = []
        for record in payload:
            s = stub_nli(record["premise"], record["hypothesis"])
            out.append({"entailment": s.entailment, "contradiction": s.contradiction, "neutral": s.neutral})
        return out

    @staticmethod
    def _rerank(payload: list[dict]) -> list[dict]:
        return [{"probability": stub_rerank(r["question"], r["passage"])} for r in payload]

    @staticmethod
    def _generate(payload: list[dict]) -> list[dict]:
        return [{"text": stub_generate(r["prompt"])} for r in payload]

    @staticmethod
    def _train(payload: list[dict]) -> list[dict]:
        # the stub accepts training commands but has nothing to update
        return [{"status": "ok", "steps": 0} for _ in payload]


class LineProtocolClient:
    """Talks the line protocol to a worker subprocess over stdio."""

    def __init__(self, command: Sequence[str], timeout: float = 60.0):
        self.command = list(command)
        self.timeout = timeout
        self.process: subprocess.Popen | None = None
        self.capabilities: list[str] = []

    def _ensure_started(self) -> None:
        if self.process is not None and self.process.poll() is None:
            return
        self.process = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            encoding="utf-8",
        )
        self._send({"type": "hello", "protocol_version": PROTOCOL_VERSION})
        hello = self._recv()
        if hello.get("type") != "hello" or hello.get("protocol_version") != PROTOCOL_VERSION:
            raise ProtocolViolation(f"bad handshake: {hello}")
        self.capabilities = list(hello.get("capabilities", []))

    def _send(self, obj: dict) -> None:
        assert self.process is not None and self.process.stdin is not None
        self.process.stdin.write(json.dumps(obj) + "\n")
        self.process.stdin.flush()

    def _recv(self) -> dict:
        assert self.process is not None and self.process.stdout is not None
        readable, _, _ = select.select([self.process.stdout], [], [], self.timeout)
        if not readable:
            raise Timeout(f"no response within {self.timeout}s")
        line = self.process.stdout.readline()
        if not line:
            raise ProtocolViolation("worker closed the pipe")
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolViolation(f"response is not JSON: {line!r}") from exc
        if not isinstance(obj, dict):
            raise ProtocolViolation(f"response is not an object: {obj!r}")
        return obj

    def request(self, request: ScoreRequest) -> ScoreResponse:
        self._ensure_started()
        self._send({
            "type": "request",
            "verb": request.verb,
            "batch_id": request.batch_id,
            "payload": request.payload,
        })
        obj = self._recv()
        if obj.get("type") != "response":
            raise ProtocolViolation(f"expected a response object, got {obj!r}")
        if obj.get("batch_id") != request.batch_id:
            raise ProtocolViolation(
                f"response for batch {obj.get('batch_id')!r}, expected {request.batch_id!r}"
            )
        if obj.get("error") is not None:
            err = obj["error"]
            return ScoreResponse(request.batch_id, error=(str(err.get("code")), str(err.get("message"))))
        results = obj.get("results")
        if not isinstance(results, list):
            raise ProtocolViolation("response carries neither results nor error")
        return ScoreResponse(request.batch_id, results=results)

    def close(self) -> None:
        if self.process is not None and self.process.poll() is None:
            if self.process.stdin is not None:
                self.process.stdin.close()
            self.process.wait(timeout=10)


# ---------------------------------------------------------------------------
# Validated call + capability adapters
# ---------------------------------------------------------------------------

def _validate_probability(value, what: str) -> float:
    p = float(value)
    if not 0.0 <= p <= 1.0:
        raise ProtocolViolation(f"{what} {p} outside [0, 1]")
    return p


def call(request: ScoreRequest, transport) -> ScoreResponse:
    """Send a request and validate alignment and verb-specific schemas."""
    response = transport.request(request)
    if response.error is not None:
        raise RemoteError(*response.error)
    if len(response.results) != len(request.payload):
        # a bare train command (empty payload) may answer with a single status
        if not (request.verb == "train" and not request.payload):
            raise ProtocolViolation(
                f"{request.verb}: {len(response.results)} results for {len(request.payload)} records"
            )
    if request.verb == "nli":
        for record in response.results:
            triple = (
                _validate_probability(record["entailment"], "entailment"),
                _validate_probability(record["contradiction"], "contradiction"),
                _validate_probability(record["neutral"], "neutral"),
            )
            if abs(sum(triple) - 1.0) > 1e-3:
                raise ProtocolViolation(f"NLI triple sums to {sum(triple)}")
    elif request.verb == "rerank":
        for record in response.results:
            _validate_probability(record["probability"], "rerank probability")
    return response


class Gateway:
    """Shareable facade binding the verbs to one transport.

    Batch ids are unique per session; adapters return results aligned with
    their inputs regardless of how the backend completed them.
    """

    def __init__(self, transport=None, expected_dims: dict[str, int] | None = None):
        self.transport = transport if transport is not None else StubTransport()
        self.expected_dims = expected_dims if expected_dims is not None else {"stub": STUB_DIM}
        self._counter = itertools.count(1)

    def _next_batch_id(self, verb: str) -> str:
        return f"{verb}-{next(self._counter)}"

    def _call(self, verb: str, payload: list[dict]) -> list[dict]:
        request = ScoreRequest(verb=verb, batch_id=self._next_batch_id(verb), payload=payload)
        return call(request, self.transport).results

    def embed_batch(self, texts: Sequence[str], profile: str = "stub") -> list[list[float]]:
        results = self._call("embed", [{"text": t, "profile": profile} for t in texts])
        vectors = [[float(x) for x in record["vector"]] for record in results]
        expected = self.expected_dims.get(profile)
        if expected is not None:
            for vector in vectors:
                if len(vector) != expected:
                    raise ProtocolViolation(
                        f"profile {profile!r} declared dim {expected}, got {len(vector)}"
                    )
        return vectors

    def nli_batch(self, pairs: Sequence[tuple[str, str]]) -> list[NliScores]:
        results = self._call("nli", [{"premise": p, "hypothesis": h} for p, h in pairs])
        return [
            NliScores(float(r["entailment"]), float(r["contradiction"]), float(r["neutral"]))
            for r in results
        ]

    def rerank_batch(self, pairs: Sequence[tuple[str, str]]) -> list[float]:
        results = self._call("rerank", [{"question": q, "passage": p} for q, p in pairs])
        return [float(r["probability"]) for r in results]

    def generate_batch(self, prompts: Sequence[str]) -> list[str]:
        results = self._call("generate", [{"prompt": p} for p in prompts])
        return [str(r["text"]) for r in results]

    def train(self, spec: dict) -> dict:
        results = self._call("train", [spec])
        return results[0] if results else {}
