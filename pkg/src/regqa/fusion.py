"""Reciprocal rank fusion of first-stage ranked lists.

Only ranks enter the fused score, so per-retriever score scales never need
calibration: a passage at 1-based rank r in a list contributes 1/(r + beta),
and lists that miss the passage contribute nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import QueryMismatch, UnknownRetriever
from .rankings import RankedList, ranked


@dataclass(frozen=True)
class FusionConfig:
    retriever_ids: tuple[str, ...]
    beta: float = 4.0

    def __post_init__(self) -> None:
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not self.retriever_ids:
            raise ValueError("retriever_ids must be non-empty")
        if len(set(self.retriever_ids)) != len(self.retriever_ids):
            raise ValueError("retriever_ids must be unique")

    @property
    def fused_id(self) -> str:
        return "rrf(" + ",".join(self.retriever_ids) + ")"


def rrf_fuse(lists: list[RankedList], config: FusionConfig, k: int) -> RankedList:
    """Fuse lists for one query; emits scores (not just order) for auditability."""
    if not lists:
        raise QueryMismatch("no input lists")
    query_id = lists[0].query_id
    for rl in lists:
        if rl.query_id != query_id:
            raise QueryMismatch(f"{rl.retriever_id} is for query {rl.query_id!r}, expected {query_id!r}")
        if rl.retriever_id not in config.retriever_ids:
            raise UnknownRetriever(f"{rl.retriever_id!r} not in fusion config")
    fused: dict[tuple[str, str], float] = {}
    for rl in lists:
        for rank, entry in enumerate(rl.entries, 1):
            fused[entry.ref] = fused.get(entry.ref, 0.0) + 1.0 / (rank + config.beta)
    return ranked(query_id, config.fused_id, fused.items(), k=k)
