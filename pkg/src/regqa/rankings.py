"""Ranked retrieval results and their serialization.

Every retriever emits a RankedList; rank of an entry is its 1-based position.
All producers share one tie-break: score descending, then (doc_id, passage_id)
ascending, so downstream fusion and rescoring are reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

REF_KEY_SEP = "::"


def ref_key(doc_id: str, passage_id: str) -> str:
    """String key for a passage ref, used as embedding id."""
    return f"{doc_id}{REF_KEY_SEP}{passage_id}"


def split_ref_key(key: str) -> tuple[str, str]:
    doc_id, _, passage_id = key.partition(REF_KEY_SEP)
    return (doc_id, passage_id)


@dataclass(frozen=True)
class RankedEntry:
    doc_id: str
    passage_id: str
    score: float

    @property
    def ref(self) -> tuple[str, str]:
        return (self.doc_id, self.passage_id)


@dataclass
class RankedList:
    query_id: str
    retriever_id: str
    entries: list[RankedEntry]

    def refs(self) -> list[tuple[str, str]]:
        return [e.ref for e in self.entries]

    def rank_of(self, ref: tuple[str, str]) -> int | None:
        """1-based rank of ref, or None when absent."""
        for position, entry in enumerate(self.entries, 1):
            if entry.ref == ref:
                return position
        return None


def ranked(
    query_id: str,
    retriever_id: str,
    scored: Iterable[tuple[tuple[str, str], float]],
    k: int | None = None,
) -> RankedList:
    """Build a RankedList from (ref, score) pairs.

    Applies the shared ordering and truncates to k. Duplicate refs are a
    caller bug and raise ValueError.
    """
    items = list(scored)
    refs = [ref for ref, _ in items]
    if len(refs) != len(set(refs)):
        raise ValueError("duplicate refs in scored candidates")
    items.sort(key=lambda item: (-item[1], item[0]))
    if k is not None:
        items = items[:k]
    entries = [RankedEntry(doc_id, passage_id, float(score)) for (doc_id, passage_id), score in items]
    return RankedList(query_id=query_id, retriever_id=retriever_id, entries=entries)


def write_ranked_lists(lists: Iterable[RankedList], path: str | Path) -> None:
    """One JSON object per line: query_id, retriever_id, entries."""
    with open(path, "w", encoding="utf-8") as fh:
        for rl in lists:
            fh.write(json.dumps(
                {
                    "query_id": rl.query_id,
                    "retriever_id": rl.retriever_id,
                    "entries": [
                        {"doc_id": e.doc_id, "passage_id": e.passage_id, "score": e.score}
                        for e in rl.entries
                    ],
                },
                sort_keys=True,
            ) + "\n")


def read_ranked_lists(path: str | Path) -> list[RankedList]:
    lists: list[RankedList] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            entries = [
                RankedEntry(e["doc_id"], e["passage_id"], float(e["score"]))
                for e in obj["entries"]
            ]
            lists.append(RankedList(obj["query_id"], obj["retriever_id"], entries))
    return lists
