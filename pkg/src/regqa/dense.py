"""Exact vector search over externally supplied embeddings.

Serves the dense retrieval profiles and the question-to-question retriever.
Search is a full scan with exact scoring: at this corpus scale approximate
structures buy nothing and exactness keeps fusion and rescoring reproducible.

Embedding exchange format (one file per profile): a JSON header line with
``dim``, ``count``, ``space`` ("cosine" or "dot") and ``profile``, then one
JSON record per line with ``id`` and ``vector``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, DuplicateId, ParseError, ZeroVector
from .rankings import RankedList, ranked, split_ref_key

_NORM_TOLERANCE = 1e-6


@dataclass
class EmbeddingMatrix:
    ids: list[str]
    dim: int
    vectors: np.ndarray  # row-major, one row per id, float64
    normalized: bool

    def __post_init__(self) -> None:
        if len(self.ids) != len(set(self.ids)):
            raise DuplicateId("embedding ids must be unique")
        if self.vectors.shape != (len(self.ids), self.dim):
            raise DimensionMismatch(
                f"expected shape {(len(self.ids), self.dim)}, got {self.vectors.shape}"
            )
        if self.normalized:
            norms = np.linalg.norm(self.vectors, axis=1)
            if len(norms) and not np.all(np.abs(norms - 1.0) <= _NORM_TOLERANCE):
                raise ZeroVector("normalized matrix contains non-unit rows")

    def row(self, key: str) -> np.ndarray:
        return self.vectors[self.ids.index(key)]


def matrix_from_rows(ids: list[str], rows: list[list[float]], normalize: bool) -> EmbeddingMatrix:
    """Validate and assemble a matrix; optionally L2-normalize into cosine space."""
    if not ids:
        return EmbeddingMatrix(ids=[], dim=0, vectors=np.zeros((0, 0)), normalized=normalize)
    dim = len(rows[0])
    for key, row in zip(ids, rows):
        if len(row) != dim:
            raise DimensionMismatch(f"row {key!r} has length {len(row)}, expected {dim}")
    vectors = np.asarray(rows, dtype=np.float64)
    if normalize:
        norms = np.linalg.norm(vectors, axis=1)
        zero = np.where(norms == 0.0)[0]
        if len(zero):
            raise ZeroVector(f"row {ids[zero[0]]!r} has zero norm")
        vectors = vectors / norms[:, None]
    return EmbeddingMatrix(ids=list(ids), dim=dim, vectors=vectors, normalized=normalize)


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    """Read the exchange format; normalizes in place when the header says cosine."""
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
            dim = int(header["dim"])
            count = int(header["count"])
            space = header["space"]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: bad embedding header: {exc}") from exc
        if space not in ("cosine", "dot"):
            raise ParseError(f"{path}: unknown space {space!r}")
        ids: list[str] = []
        rows: list[list[float]] = []
        seen: set[str] = set()
        for line in fh:
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                key = str(record["id"])
                vector = [float(x) for x in record["vector"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}: bad embedding record: {exc}") from exc
            if len(vector) != dim:
                raise DimensionMismatch(
                    f"{path}: id {key!r} has dim {len(vector)}, header says {dim}"
                )
            if key in seen:
                raise DuplicateId(f"{path}: duplicate id {key!r}")
            seen.add(key)
            ids.append(key)
            rows.append(vector)
    if len(ids) != count:
        raise ParseError(f"{path}: header count {count} != {len(ids)} records")
    matrix = matrix_from_rows(ids, rows, normalize=(space == "cosine"))
    return matrix


def save_embeddings(matrix: EmbeddingMatrix, path: str | Path, profile: str, space: str = "cosine") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(
            {"dim": matrix.dim, "count": len(matrix.ids), "space": space, "profile": profile},
            sort_keys=True,
        ) + "\n")
        for key, row in zip(matrix.ids, matrix.vectors):
            fh.write(json.dumps({"id": key, "vector": [float(x) for x in row]}) + "\n")


def _dot(a, b) -> float:
    # fsum is correctly rounded, so scores do not depend on summation order
    # or BLAS build; this is what makes pipeline outputs byte-stable.
    return math.fsum(x * y for x, y in zip(a, b))


def _score_row(query_row: np.ndarray, docs: EmbeddingMatrix, exact_sums: bool) -> list[float]:
    if exact_sums:
        return [_dot(query_row, doc_row) for doc_row in docs.vectors]
    return [float(s) for s in docs.vectors @ query_row]


def dense_search(
    queries: EmbeddingMatrix,
    docs: EmbeddingMatrix,
    k: int,
    retriever_id: str,
    exact_sums: bool = True,
) -> list[RankedList]:
    """Exact top-k by dot product (cosine under normalization), one list per query.

    Doc ids must be passage ref keys ("doc::passage"); ties break by ref
    ascending, so results for k are always a prefix of results for k' > k.
    """
    if queries.dim != docs.dim:
        raise DimensionMismatch(f"query dim {queries.dim} != doc dim {docs.dim}")
    results: list[RankedList] = []
    for query_key, query_row in zip(queries.ids, queries.vectors):
        scores = _score_row(query_row, docs, exact_sums)
        results.append(ranked(
            query_key,
            retriever_id,
            ((split_ref_key(doc_key), score) for doc_key, score in zip(docs.ids, scores)),
            k=k,
        ))
    return results


@dataclass
class Q2QIndex:
    """Previously seen questions with their gold passages.

    A new query is answered with the gold passages of its nearest training
    questions; every indexed question must have a non-empty gold set.
    """

    question_embeddings: EmbeddingMatrix
    gold_map: dict[str, list[tuple[str, str]]]

    def __post_init__(self) -> None:
        for key in self.question_embeddings.ids:
            if not self.gold_map.get(key):
                raise ValueError(f"question {key!r} has no gold passages")


def q2q_search(
    index: Q2QIndex,
    query_embedding: np.ndarray,
    m_neighbors: int,
    k: int,
    query_id: str = "",
    retriever_id: str = "q2q",
    exact_sums: bool = True,
) -> RankedList:
    """Gold passages of the m nearest training questions, scored by max similarity."""
    if m_neighbors < 1:
        raise ValueError("m_neighbors must be >= 1")
    matrix = index.question_embeddings
    query = np.asarray(query_embedding, dtype=np.float64)
    if query.shape != (matrix.dim,):
        raise DimensionMismatch(f"query dim {query.shape} != index dim {matrix.dim}")
    similarities = _score_row(query, matrix, exact_sums)
    neighbor_order = sorted(range(len(matrix.ids)), key=lambda i: (-similarities[i], matrix.ids[i]))
    best: dict[tuple[str, str], float] = {}
    for i in neighbor_order[:m_neighbors]:
        sim = similarities[i]
        for ref in index.gold_map[matrix.ids[i]]:
            if ref not in best or sim > best[ref]:
                best[ref] = sim
    return ranked(query_id, retriever_id, best.items(), k=k)
