"""Line-protocol worker: newline-delimited JSON over stdio.

Handshake first (both sides send a ``hello`` carrying protocol_version 1;
ours lists capabilities), then one request object per line answered by one
response object per line. Any bad input produces an error *response*, never
process death; requests are handled strictly in order with at most one
training job in flight.
"""

from __future__ import annotations

import json
import sys
from typing import IO

from .models import HashedBagEncoder, PairRelevanceHead, generate, nli_scores
from .profiles import ModelProfile, ProfileSet, default_profiles
from .training import load_encoder, load_reranker, train_reranker, train_triplets

PROTOCOL_VERSION = 1


class Worker:
    def __init__(self, profiles: ProfileSet | None = None):
        self.profiles = profiles if profiles is not None else default_profiles()
        self._encoders: dict[str, HashedBagEncoder] = {}
        self._rerankers: dict[str, PairRelevanceHead] = {}

    # -- model cache --------------------------------------------------------

    def _encoder(self, profile: ModelProfile) -> HashedBagEncoder:
        if profile.name not in self._encoders:
            self._encoders[profile.name] = HashedBagEncoder(profile)
        return self._encoders[profile.name]

    def _reranker(self, profile: ModelProfile) -> PairRelevanceHead:
        if profile.name not in self._rerankers:
            self._rerankers[profile.name] = PairRelevanceHead(profile)
        return self._rerankers[profile.name]

    # -- verb handlers ------------------------------------------------------

    def _handle_embed(self, payload: list[dict]) -> list[dict]:
        results: list[dict] = []
        # group by profile to keep one forward pass per profile
        order: dict[str, list[int]] = {}
        for i, record in enumerate(payload):
            profile = self.profiles.resolve("embed", record.get("profile"))
            order.setdefault(profile.name, []).append(i)
        results = [None] * len(payload)  # type: ignore[list-item]
        for name, indices in order.items():
            encoder = self._encoder(self.profiles.profiles[name])
            vectors = encoder.encode([str(payload[i]["text"]) for i in indices])
            for i, vector in zip(indices, vectors):
                results[i] = {"vector": vector}
        return results

    def _handle_nli(self, payload: list[dict]) -> list[dict]:
        out = []
        for record in payload:
            e, c, n = nli_scores(str(record["premise"]), str(record["hypothesis"]))
            out.append({"entailment": e, "contradiction": c, "neutral": n})
        return out

    def _handle_rerank(self, payload: list[dict]) -> list[dict]:
        profile = self.profiles.resolve("rerank", payload[0].get("profile") if payload else None)
        head = self._reranker(profile)
        pairs = [(str(r["question"]), str(r["passage"])) for r in payload]
        return [{"probability": p} for p in head.probabilities(pairs)]

    def _handle_generate(self, payload: list[dict]) -> list[dict]:
        return [{"text": generate(str(r["prompt"]))} for r in payload]

    def _handle_train(self, payload: list[dict]) -> list[dict]:
        results = []
        for record in payload:
            task = record.get("task")
            profile = self.profiles.resolve("embed" if task == "triplets" else "rerank",
                                            record.get("profile"))
            if task == "triplets":
                report = train_triplets(
                    record["triplets_path"],
                    profile,
                    corpus_path=record["corpus_path"],
                    questions_path=record["questions_path"],
                    batches=int(record.get("batches", 400)),
                    batch_size=int(record.get("batch_size", 8)),
                    checkpoint_in=record.get("checkpoint_in"),
                    checkpoint_out=record.get("checkpoint_out", "encoder.pt"),
                    export_path=record.get("export_path"),
                )
                # serve subsequent embed requests from the new checkpoint
                self._encoders[profile.name] = load_encoder(profile, report.checkpoint_path)
            elif task == "reranker":
                report = train_reranker(
                    record["trainset_path"],
                    profile,
                    batches=int(record.get("batches", 100)),
                    batch_size=int(record.get("batch_size", 8)),
                    checkpoint_in=record.get("checkpoint_in"),
                    checkpoint_out=record.get("checkpoint_out", "reranker.pt"),
                )
                self._rerankers[profile.name] = load_reranker(profile, report.checkpoint_path)
            else:
                raise ValueError(f"unknown train task {task!r}")
            results.append({
                "status": "ok",
                "steps": report.steps,
                "final_loss": report.final_loss,
                "checkpoint_path": report.checkpoint_path,
                "export_path": report.export_path,
                "label_balance": report.label_balance,
            })
        return results

    # -- protocol loop ------------------------------------------------------

    def handle_request(self, obj: dict) -> dict:
        batch_id = obj.get("batch_id")
        if not isinstance(batch_id, str) or not batch_id:
            return _error(None, "bad_request", "request lacks a batch_id")
        verb = obj.get("verb")
        handler = {
            "embed": self._handle_embed,
            "nli": self._handle_nli,
            "rerank": self._handle_rerank,
            "generate": self._handle_generate,
            "train": self._handle_train,
        }.get(verb)
        if handler is None:
            return _error(batch_id, "unknown_verb", f"verb {verb!r} not served")
        payload = obj.get("payload")
        if not isinstance(payload, list) or (not payload and verb != "train"):
            return _error(batch_id, "bad_payload", "payload must be a non-empty list")
        try:
            results = handler(payload)
        except Exception as exc:  # per-batch failure, keep serving
            return _error(batch_id, "batch_failed", f"{type(exc).__name__}: {exc}")
        return {"type": "response", "batch_id": batch_id, "results": results}

    def handle_line(self, line: str) -> dict | None:
        line = line.strip()
        if not line:
            return None
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            return _error(None, "malformed", f"line is not JSON: {exc}")
        if not isinstance(obj, dict):
            return _error(None, "malformed", "message must be a JSON object")
        kind = obj.get("type")
        if kind == "hello":
            return {
                "type": "hello",
                "protocol_version": PROTOCOL_VERSION,
                "capabilities": self.profiles.capabilities(),
            }
        if kind == "request":
            return self.handle_request(obj)
        return _error(None, "unknown_type", f"message type {kind!r} not understood")

    def serve(self, stdin: IO[str] | None = None, stdout: IO[str] | None = None) -> None:
        stdin = stdin if stdin is not None else sys.stdin
        stdout = stdout if stdout is not None else sys.stdout
        for line in stdin:
            response = self.handle_line(line)
            if response is not None:
                stdout.write(json.dumps(response) + "\n")
                stdout.flush()


def _error(batch_id: str | None, code: str, message: str) -> dict:
    return {"type": "response", "batch_id": batch_id,
            "error": {"code": code, "message": message}}
