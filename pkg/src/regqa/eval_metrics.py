"""Recall@k, AP@k, and the retriever-combination ablation runner.

AP@k is normalized by min(|gold|, k) so a perfect truncated ranking scores
1.0; the divide-by-|gold| variant is available behind a flag since both
conventions circulate. Aggregates are macro-averages (each query weighted
equally).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Sequence

from .errors import EmptyGold
from .fusion import FusionConfig, rrf_fuse
from .rankings import RankedList


def recall_at_k(ranked_list: RankedList, gold: set[tuple[str, str]], k: int) -> float:
    if not gold:
        raise EmptyGold("recall needs a non-empty gold set")
    if k < 1:
        raise ValueError("k must be >= 1")
    top = set(ranked_list.refs()[:k])
    return len(top & gold) / len(gold)


def average_precision_at_k(
    ranked_list: RankedList,
    gold: set[tuple[str, str]],
    k: int,
    normalize_by_gold: bool = False,
) -> float:
    if not gold:
        raise EmptyGold("average precision needs a non-empty gold set")
    if k < 1:
        raise ValueError("k must be >= 1")
    hits = 0
    precision_sum = 0.0
    for position, ref in enumerate(ranked_list.refs()[:k], 1):
        if ref in gold:
            hits += 1
            precision_sum += hits / position
    denominator = len(gold) if normalize_by_gold else min(len(gold), k)
    return precision_sum / denominator


@dataclass
class RetrievalReport:
    ks: list[int]
    per_query: dict[str, dict[str, dict[int, float]]]  # qid -> {"recall": {k: v}, "ap": {k: v}}
    aggregate: dict[str, dict[int, float]]  # {"recall": {k: mean}, "ap": {k: mean}}


def evaluate_retrieval(
    lists: dict[str, RankedList],
    gold_by_query: dict[str, set[tuple[str, str]]],
    ks: Sequence[int],
    normalize_by_gold: bool = False,
) -> RetrievalReport:
    """Score one ranked list per query at every cutoff in ks."""
    ks = list(ks)
    per_query: dict[str, dict[str, dict[int, float]]] = {}
    for qid, ranked_list in lists.items():
        gold = gold_by_query[qid]
        per_query[qid] = {
            "recall": {k: recall_at_k(ranked_list, gold, k) for k in ks},
            "ap": {k: average_precision_at_k(ranked_list, gold, k, normalize_by_gold) for k in ks},
        }
    count = len(per_query)
    aggregate = {
        metric: {
            k: (sum(per_query[qid][metric][k] for qid in per_query) / count if count else 0.0)
            for k in ks
        }
        for metric in ("recall", "ap")
    }
    return RetrievalReport(ks=ks, per_query=per_query, aggregate=aggregate)


@dataclass
class AblationRow:
    retriever_ids: tuple[str, ...]
    fused: bool
    report: RetrievalReport


def run_ablation(
    retriever_lists: dict[str, dict[str, RankedList]],
    gold_by_query: dict[str, set[tuple[str, str]]],
    ks: Sequence[int],
    beta: float = 4.0,
    fuse_k: int | None = None,
) -> list[AblationRow]:
    """Evaluate every non-empty subset of the retrievers.

    Singletons are scored raw; larger subsets are rank-fused per query first.
    Rows come back sorted by aggregate Recall@min(ks) descending (subset ids
    break ties), one row per subset: 2^n - 1 rows for n retrievers.
    """
    ids = list(retriever_lists)
    if not ids:
        raise ValueError("need at least one retriever")
    ks = list(ks)
    depth = fuse_k if fuse_k is not None else max(ks)
    rows: list[AblationRow] = []
    for size in range(1, len(ids) + 1):
        for subset in combinations(ids, size):
            if size == 1:
                lists = dict(retriever_lists[subset[0]])
                fused = False
            else:
                config = FusionConfig(retriever_ids=subset, beta=beta)
                lists = {
                    qid: rrf_fuse([retriever_lists[rid][qid] for rid in subset], config, k=depth)
                    for qid in retriever_lists[subset[0]]
                }
                fused = True
            rows.append(AblationRow(
                retriever_ids=subset,
                fused=fused,
                report=evaluate_retrieval(lists, gold_by_query, ks),
            ))
    key_k = min(ks)
    rows.sort(key=lambda row: (-row.report.aggregate["recall"][key_k], row.retriever_ids))
    return rows


def report_to_dict(report: RetrievalReport) -> dict:
    return {
        "ks": report.ks,
        "aggregate": {
            metric: {str(k): v for k, v in values.items()}
            for metric, values in report.aggregate.items()
        },
        "per_query": {
            qid: {
                metric: {str(k): v for k, v in values.items()}
                for metric, values in metrics.items()
            }
            for qid, metrics in report.per_query.items()
        },
    }


def write_ablation_table(rows: Sequence[AblationRow], path: str | Path) -> None:
    """Aligned-text table of the ablation, one row per retriever subset."""
    ks = rows[0].report.ks if rows else []
    headers = ["combination"] + [f"Recall@{k}" for k in ks] + [f"MAP@{k}" for k in ks]
    body: list[list[str]] = []
    for row in rows:
        agg = row.report.aggregate
        body.append(
            [",".join(row.retriever_ids)]
            + [f"{agg['recall'][k]:.4f}" for k in ks]
            + [f"{agg['ap'][k]:.4f}" for k in ks]
        )
    widths = [max(len(headers[i]), *(len(r[i]) for r in body)) if body else len(headers[i])
              for i in range(len(headers))]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
    for r in body:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_ablation_json(rows: Sequence[AblationRow], path: str | Path) -> None:
    payload = [
        {
            "retriever_ids": list(row.retriever_ids),
            "fused": row.fused,
            "aggregate": {
                metric: {str(k): v for k, v in values.items()}
                for metric, values in row.report.aggregate.items()
            },
        }
        for row in rows
    ]
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
