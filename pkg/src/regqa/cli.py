"""Operator surface: index, retrieve, evaluate.

Configuration comes from an optional JSON file overridden by flags (flags
win). Every command writes under --out and is rerunnable: identical config
and seeds give byte-identical outputs, with timestamps confined to the
manifest sidecar file.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 remote-scorer
error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import shlex
import sys
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

from . import analysis, answers, corpus as corpus_mod, eval_metrics, repass as repass_mod
from .dense import EmbeddingMatrix, Q2QIndex, dense_search, load_embeddings, matrix_from_rows, q2q_search, save_embeddings
from .errors import (
    ProtocolViolation,
    RegqaError,
    RemoteError,
    ScorerFailure,
    Timeout,
    UnknownRetriever,
)
from .fusion import FusionConfig, rrf_fuse
from .gateway import Gateway, LineProtocolClient, StubTransport
from .rankings import RankedList, ranked, read_ranked_lists, ref_key, write_ranked_lists
from .rerank import rerank
from .sparse import SparseIndex, build_sparse_index, sparse_search

KNOWN_RETRIEVERS = ("bm25", "e5", "bge", "q2q")
DENSE_PROFILES = ("e5", "bge")
ARTIFACT_VERSIONS = {"sparse_index": 1, "embeddings": 1, "rankings": 1}

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_REMOTE = 4


@dataclass
class PipelineConfig:
    corpus: str = ""
    train: str = ""
    test: str = ""
    out: str = "out"
    format_profile: str = "obliqa"
    retrievers: tuple[str, ...] = KNOWN_RETRIEVERS
    beta: float = 4.0
    l1_depth: int = 40
    l2_depth: int = 40
    k: int = 10
    min_tokens: int = 10
    m_neighbors: int = 10
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    strategy: str = "passage_concat"
    transport: str = "stub"
    seed: int = 0
    metric_ks: tuple[int, ...] = (10, 20, 40)
    no_l2: bool = False
    histogram: bool = False
    judge: bool = False
    ablation: bool = False
    force: bool = False

    def validate(self) -> None:
        if self.k < 1:
            raise ValueError("final k must be >= 1")
        unknown = [r for r in self.retrievers if r not in KNOWN_RETRIEVERS]
        if unknown:
            raise UnknownRetriever(f"unknown retriever id(s): {', '.join(unknown)}")
        if self.strategy not in ("passage_concat", "single_line", "llm_prompt"):
            raise ValueError(f"unknown strategy {self.strategy!r}")


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    config = PipelineConfig()
    if args.config:
        loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        for key, value in loaded.items():
            if not hasattr(config, key):
                raise ValueError(f"unknown config key {key!r}")
            current = getattr(config, key)
            if isinstance(current, tuple):
                value = tuple(value)
            config = replace(config, **{key: value})
    overrides = {}
    for key in (
        "corpus", "train", "test", "out", "beta", "l1_depth", "l2_depth", "k",
        "min_tokens", "strategy", "transport", "seed", "bm25_k1", "bm25_b", "no_l2", "force",
        "histogram", "judge", "ablation",
    ):
        value = getattr(args, key, None)
        if value is not None and value is not False:
            overrides[key] = value
    if getattr(args, "retrievers", None):
        overrides["retrievers"] = tuple(r.strip() for r in args.retrievers.split(",") if r.strip())
    if getattr(args, "metric_ks", None):
        overrides["metric_ks"] = tuple(int(x) for x in args.metric_ks.split(","))
    config = replace(config, **overrides)
    config.validate()
    return config


def _gateway(config: PipelineConfig) -> Gateway:
    if config.transport == "stub":
        return Gateway(StubTransport())
    if config.transport.startswith("line:"):
        command = shlex.split(config.transport[len("line:"):])
        return Gateway(LineProtocolClient(command), expected_dims={})
    raise ValueError(f"unknown transport {config.transport!r}")


def _config_hash(config: PipelineConfig) -> str:
    canonical = json.dumps(asdict(config), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _write_manifest(directory: Path, command: str, config: PipelineConfig) -> None:
    manifest = {
        "command": command,
        "config": asdict(config),
        "config_hash": _config_hash(config),
        "inputs": {"corpus": config.corpus, "train": config.train, "test": config.test},
        "artifact_versions": ARTIFACT_VERSIONS,
        "created_at": datetime.now(timezone.utc).isoformat(),
    }
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _prepare_dir(base: Path, name: str, force: bool) -> Path:
    directory = base / name
    if directory.exists() and any(directory.iterdir()):
        if not force:
            raise FileExistsError(f"{directory} already exists; pass --force to rebuild")
        for item in sorted(directory.rglob("*"), reverse=True):
            item.unlink() if item.is_file() else item.rmdir()
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def _load_inputs(config: PipelineConfig, need_test: bool):
    if not config.corpus:
        raise FileNotFoundError("--corpus is required")
    if not Path(config.corpus).exists():
        raise FileNotFoundError(f"corpus file not found: {config.corpus}")
    loaded = corpus_mod.load_corpus(config.corpus, config.format_profile)
    filtered = corpus_mod.preprocess(loaded, config.min_tokens)
    train_questions = []
    if config.train:
        if not Path(config.train).exists():
            raise FileNotFoundError(f"train file not found: {config.train}")
        train_questions = corpus_mod.load_questions(config.train, config.format_profile)
    test_questions = []
    if need_test:
        if not config.test:
            raise FileNotFoundError("--test is required")
        if not Path(config.test).exists():
            raise FileNotFoundError(f"test file not found: {config.test}")
        test_questions = corpus_mod.load_questions(config.test, config.format_profile)
    return filtered, train_questions, test_questions


# ---------------------------------------------------------------------------
# index
# ---------------------------------------------------------------------------

def _sparse_index_to_dict(index: SparseIndex) -> dict:
    return {
        "format_version": ARTIFACT_VERSIONS["sparse_index"],
        "k1": index.k1,
        "b": index.b,
        "doc_count": index.doc_count,
        "avg_doc_length": index.avg_doc_length,
        "doc_lengths": index.doc_lengths,
        "refs": [list(ref) for ref in index.refs],
        "stopwords": sorted(index.stopwords),
        "stem": index.stem,
        "postings": {token: [list(p) for p in plist] for token, plist in index.postings.items()},
    }


def _sparse_index_from_dict(data: dict) -> SparseIndex:
    return SparseIndex(
        postings={t: [tuple(p) for p in plist] for t, plist in data["postings"].items()},
        doc_lengths=list(data["doc_lengths"]),
        avg_doc_length=float(data["avg_doc_length"]),
        doc_count=int(data["doc_count"]),
        k1=float(data["k1"]),
        b=float(data["b"]),
        refs=[(r[0], r[1]) for r in data["refs"]],
        stopwords=frozenset(data.get("stopwords", ())),
        stem=bool(data.get("stem", False)),
    )


def cmd_index(config: PipelineConfig) -> int:
    filtered, train_questions, _ = _load_inputs(config, need_test=False)
    if len(filtered) == 0:
        raise RegqaError("no passages survive preprocessing; nothing to index")
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    index_dir = _prepare_dir(out, "index", config.force)
    gateway = _gateway(config)

    if "bm25" in config.retrievers:
        index = build_sparse_index(filtered, k1=config.bm25_k1, b=config.bm25_b)
        (index_dir / "sparse_index.json").write_text(
            json.dumps(_sparse_index_to_dict(index), sort_keys=True) + "\n", encoding="utf-8"
        )

    passage_keys = [ref_key(p.doc_id, p.passage_id) for p in filtered.passages]
    passage_texts = [p.text for p in filtered.passages]
    for profile in DENSE_PROFILES:
        if profile not in config.retrievers:
            continue
        vectors = gateway.embed_batch(passage_texts, profile=profile)
        matrix = matrix_from_rows(passage_keys, vectors, normalize=True)
        save_embeddings(matrix, index_dir / f"embeddings_{profile}.jsonl", profile=profile)

    if "q2q" in config.retrievers:
        labeled = [q for q in train_questions if q.labeled]
        if not labeled:
            raise RegqaError("q2q retriever needs a labeled --train split")
        vectors = gateway.embed_batch([q.text for q in labeled], profile="q2q")
        matrix = matrix_from_rows([q.question_id for q in labeled], vectors, normalize=True)
        save_embeddings(matrix, index_dir / "embeddings_q2q.jsonl", profile="q2q")
        gold_map = {q.question_id: [list(ref) for ref in q.gold_refs] for q in labeled}
        (index_dir / "q2q_index.json").write_text(
            json.dumps({"gold_map": gold_map}, sort_keys=True) + "\n", encoding="utf-8"
        )

    _write_manifest(index_dir, "index", config)
    print(f"indexed {len(filtered)} passages into {index_dir}")
    return 0


# ---------------------------------------------------------------------------
# retrieve
# ---------------------------------------------------------------------------

def _l1_lists_for_question(
    question,
    config: PipelineConfig,
    sparse_index: SparseIndex | None,
    dense_matrices: dict[str, EmbeddingMatrix],
    query_vectors: dict[str, list[float]],
    q2q_index: Q2QIndex | None,
) -> list[RankedList]:
    lists: list[RankedList] = []
    for retriever in config.retrievers:
        if retriever == "bm25":
            lists.append(sparse_search(
                sparse_index, question.text, config.l1_depth,
                query_id=question.question_id, retriever_id="bm25",
            ))
        elif retriever in DENSE_PROFILES:
            queries = matrix_from_rows(
                [question.question_id], [query_vectors[retriever]], normalize=True
            )
            lists.append(dense_search(queries, dense_matrices[retriever], config.l1_depth, retriever)[0])
        elif retriever == "q2q":
            query = matrix_from_rows(["q"], [query_vectors["q2q"]], normalize=True).vectors[0]
            lists.append(q2q_search(
                q2q_index, query, config.m_neighbors, config.l1_depth,
                query_id=question.question_id, retriever_id="q2q",
            ))
    return lists


def cmd_retrieve(config: PipelineConfig) -> int:
    filtered, _, test_questions = _load_inputs(config, need_test=True)
    out = Path(config.out)
    index_dir = out / "index"
    if not index_dir.exists():
        raise FileNotFoundError(f"index artifacts not staged under {index_dir}; run index first")
    retrieve_dir = _prepare_dir(out, "retrieve", config.force)
    gateway = _gateway(config)

    sparse_index = None
    if "bm25" in config.retrievers:
        sparse_index = _sparse_index_from_dict(
            json.loads((index_dir / "sparse_index.json").read_text(encoding="utf-8"))
        )
    dense_matrices = {
        profile: load_embeddings(index_dir / f"embeddings_{profile}.jsonl")
        for profile in DENSE_PROFILES if profile in config.retrievers
    }
    q2q_index = None
    if "q2q" in config.retrievers:
        q2q_matrix = load_embeddings(index_dir / "embeddings_q2q.jsonl")
        gold_raw = json.loads((index_dir / "q2q_index.json").read_text(encoding="utf-8"))["gold_map"]
        q2q_index = Q2QIndex(
            question_embeddings=q2q_matrix,
            gold_map={qid: [(r[0], r[1]) for r in refs] for qid, refs in gold_raw.items()},
        )

    needed_profiles = [r for r in config.retrievers if r in DENSE_PROFILES]
    if "q2q" in config.retrievers:
        needed_profiles.append("q2q")

    fusion_config = FusionConfig(retriever_ids=config.retrievers, beta=config.beta)
    scorer = gateway.rerank_batch

    l1_all: list[RankedList] = []
    finals: list[RankedList] = []
    for question in test_questions:
        query_vectors = {
            profile: gateway.embed_batch([question.text], profile=profile)[0]
            for profile in needed_profiles
        }
        lists = _l1_lists_for_question(
            question, config, sparse_index, dense_matrices, query_vectors, q2q_index
        )
        l1_all.extend(lists)
        if len(lists) == 1:
            fused = lists[0]
        else:
            fused = rrf_fuse(lists, fusion_config, k=config.l1_depth)
        if config.no_l2:
            final = ranked(fused.query_id, fused.retriever_id,
                           ((e.ref, e.score) for e in fused.entries), k=config.k)
        else:
            rescan = RankedList(fused.query_id, fused.retriever_id, fused.entries[:config.l2_depth])
            final = rerank(question, rescan, filtered, scorer, k=config.k)
        finals.append(final)

    write_ranked_lists(l1_all, retrieve_dir / "l1.jsonl")
    write_ranked_lists(finals, retrieve_dir / "ranked.jsonl")
    _write_manifest(retrieve_dir, "retrieve", config)
    print(f"retrieved {len(finals)} queries into {retrieve_dir}")
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _answer_for(question, passages, strategy: str, gateway: Gateway):
    if strategy == "passage_concat":
        return answers.passage_concat(passages, question_id=question.question_id)
    if strategy == "single_line":
        return answers.single_line(passages, question_id=question.question_id)
    return answers.llm_answer(question, passages, gateway.generate_batch)


def cmd_evaluate(config: PipelineConfig) -> int:
    filtered, _, test_questions = _load_inputs(config, need_test=True)
    out = Path(config.out)
    retrieve_dir = out / "retrieve"
    ranked_path = retrieve_dir / "ranked.jsonl"
    if not ranked_path.exists():
        raise FileNotFoundError(f"ranked lists not staged at {ranked_path}; run retrieve first")
    eval_dir = _prepare_dir(out, "evaluate", config.force)
    gateway = _gateway(config)

    finals = {rl.query_id: rl for rl in read_ranked_lists(ranked_path)}
    by_id = {q.question_id: q for q in test_questions}

    labeled = [q for q in test_questions if q.labeled and q.question_id in finals]
    summary: dict = {}
    if labeled:
        gold_by_query = {q.question_id: set(q.gold_refs) for q in labeled}
        report = eval_metrics.evaluate_retrieval(
            {q.question_id: finals[q.question_id] for q in labeled},
            gold_by_query,
            list(config.metric_ks),
        )
        (eval_dir / "retrieval_report.json").write_text(
            json.dumps(eval_metrics.report_to_dict(report), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        summary["retrieval"] = eval_metrics.report_to_dict(report)["aggregate"]

    generated = []
    reports = []
    nli = gateway.nli_batch
    for qid, final in finals.items():
        question = by_id[qid]
        passages = [filtered.get(entry.ref) for entry in final.entries if entry.ref in filtered]
        if not passages:
            continue
        answer = _answer_for(question, passages, config.strategy, gateway)
        generated.append(answer)
        reports.append((qid, repass_mod.repass(passages, answer, nli)))
    answers.write_answers(generated, eval_dir / "answers.jsonl")
    with open(eval_dir / "repass.jsonl", "w", encoding="utf-8") as fh:
        for qid, rep in reports:
            record = {"question_id": qid}
            record.update(repass_mod.report_to_dict(rep))
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    if reports:
        n = len(reports)
        summary["answers"] = {
            "strategy": config.strategy,
            "count": n,
            "e_s": sum(r.e_s for _, r in reports) / n,
            "c_s": sum(r.c_s for _, r in reports) / n,
            "oc_s": sum(r.oc_s for _, r in reports) / n,
            "repass": sum(r.repass for _, r in reports) / n,
        }

    if config.ablation and labeled:
        l1_lists = read_ranked_lists(retrieve_dir / "l1.jsonl")
        per_retriever: dict[str, dict[str, RankedList]] = {}
        for rl in l1_lists:
            per_retriever.setdefault(rl.retriever_id, {})[rl.query_id] = rl
        rows = eval_metrics.run_ablation(
            {rid: per_retriever[rid] for rid in config.retrievers if rid in per_retriever},
            {q.question_id: set(q.gold_refs) for q in labeled},
            ks=[k for k in config.metric_ks],
            beta=config.beta,
        )
        eval_metrics.write_ablation_json(rows, eval_dir / "ablation.json")
        eval_metrics.write_ablation_table(rows, eval_dir / "ablation.txt")
        summary["ablation_rows"] = len(rows)

    if config.histogram and labeled:
        report = analysis.entailment_histogram(
            labeled,
            {q.question_id: finals[q.question_id] for q in labeled},
            filtered,
            nli,
        )
        analysis.write_histogram(report, eval_dir / "histogram.json", eval_dir / "histogram.tsv")
        summary["histogram_total"] = report.total

    if config.judge and generated:
        judge_report = analysis.judge_answers(generated, test_questions, gateway.generate_batch)
        analysis.write_verdicts(judge_report, eval_dir / "verdicts.jsonl")
        summary["judge"] = {
            "mean_rating": judge_report.mean_rating,
            "parse_failures": judge_report.parse_failures,
        }

    (eval_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _write_manifest(eval_dir, "evaluate", config)
    print(f"evaluated {len(generated)} answers into {eval_dir}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override it")
    parser.add_argument("--corpus", help="corpus file (question records with passages)")
    parser.add_argument("--train", help="labeled training question file")
    parser.add_argument("--test", help="question file to retrieve/evaluate")
    parser.add_argument("--retrievers", help="comma-separated subset of: " + ",".join(KNOWN_RETRIEVERS))
    parser.add_argument("--beta", type=float, help="rank-fusion regularizer (default 4)")
    parser.add_argument("--l1-depth", dest="l1_depth", type=int, help="first-stage list depth (default 40)")
    parser.add_argument("--l2-depth", dest="l2_depth", type=int, help="rescoring depth (default 40)")
    parser.add_argument("--k", type=int, help="final list depth (default 10)")
    parser.add_argument("--min-tokens", dest="min_tokens", type=int, help="passage token filter (default 10)")
    parser.add_argument("--strategy", help="answer strategy: passage_concat | single_line | llm_prompt")
    parser.add_argument("--transport", help='scorer transport: "stub" or "line:<command>"')
    parser.add_argument("--seed", type=int, help="sampling seed")
    parser.add_argument("--bm25-k1", dest="bm25_k1", type=float, help="BM25 k1 (default 1.2)")
    parser.add_argument("--bm25-b", dest="bm25_b", type=float, help="BM25 b (default 0.75)")
    parser.add_argument("--metric-ks", dest="metric_ks", help="comma-separated metric cutoffs")
    parser.add_argument("--out", help="output directory (default ./out)")
    parser.add_argument("--force", action="store_true", help="overwrite existing stage outputs")
    parser.add_argument("--no-l2", dest="no_l2", action="store_true", help="skip second-stage rescoring")
    parser.add_argument("--histogram", action="store_true", help="emit the non-gold entailment histogram")
    parser.add_argument("--judge", action="store_true", help="run judge scoring over generated answers")
    parser.add_argument("--ablation", action="store_true", help="run the retriever-combination ablation")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regqa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("index", "build sparse/dense index artifacts"),
        ("retrieve", "run retrieval and write ranked lists"),
        ("evaluate", "score retrieval and generated answers"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _config_from_args(args)
        command = {"index": cmd_index, "retrieve": cmd_retrieve, "evaluate": cmd_evaluate}[args.command]
        return command(config)
    except (Timeout, ProtocolViolation, RemoteError, ScorerFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REMOTE
    except (FileNotFoundError, FileExistsError, ValueError, UnknownRetriever) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RegqaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
