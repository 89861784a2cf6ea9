from __future__ import annotations

import json
from pathlib import Path

import pytest

from regqa.cli import main

pytestmark = pytest.mark.filterwarnings("ignore::UserWarning")


def _args(command, fixture_corpus_dir, out, extra=()):
    return [
        command,
        "--corpus", str(fixture_corpus_dir / "corpus.json"),
        "--train", str(fixture_corpus_dir / "train.json"),
        "--test", str(fixture_corpus_dir / "test.json"),
        "--out", str(out),
        *extra,
    ]


def _run_pipeline(fixture_corpus_dir, out, extra=()):
    assert main(_args("index", fixture_corpus_dir, out)) == 0
    assert main(_args("retrieve", fixture_corpus_dir, out, extra)) == 0
    assert main(_args("evaluate", fixture_corpus_dir, out, extra)) == 0


def _stage_bytes(out: Path) -> dict[str, bytes]:
    # manifests are the only files allowed to carry timestamps
    return {
        str(path.relative_to(out)): path.read_bytes()
        for path in sorted(out.rglob("*"))
        if path.is_file() and path.name != "manifest.json"
    }


def test_index_artifacts_reload_identically(fixture_corpus_dir, tmp_path):
    out = tmp_path / "out"
    assert main(_args("index", fixture_corpus_dir, out)) == 0
    first = _stage_bytes(out / "index")
    assert main(_args("index", fixture_corpus_dir, out, ["--force"])) == 0
    assert _stage_bytes(out / "index") == first
    assert (out / "index" / "sparse_index.json").exists()


def test_missing_corpus_is_usage_error(tmp_path):
    code = main(["index", "--corpus", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")])
    assert code == 2


def test_rebuild_without_force_refused(fixture_corpus_dir, tmp_path):
    out = tmp_path / "out"
    assert main(_args("index", fixture_corpus_dir, out)) == 0
    assert main(_args("index", fixture_corpus_dir, out)) == 2


def test_unknown_retriever_is_usage_error(fixture_corpus_dir, tmp_path):
    code = main(_args("retrieve", fixture_corpus_dir, tmp_path / "o", ["--retrievers", "bm25,psychic"]))
    assert code == 2


def test_no_l2_drops_prefix(fixture_corpus_dir, tmp_path):
    out = tmp_path / "out"
    assert main(_args("index", fixture_corpus_dir, out)) == 0
    assert main(_args("retrieve", fixture_corpus_dir, out, ["--no-l2"])) == 0
    lines = (out / "retrieve" / "ranked.jsonl").read_text().splitlines()
    for line in lines:
        assert not json.loads(line)["retriever_id"].startswith("l2(")
    assert main(_args("retrieve", fixture_corpus_dir, out, ["--force"])) == 0
    lines = (out / "retrieve" / "ranked.jsonl").read_text().splitlines()
    for line in lines:
        assert json.loads(line)["retriever_id"].startswith("l2(")


def test_retrieve_requires_staged_index(fixture_corpus_dir, tmp_path):
    assert main(_args("retrieve", fixture_corpus_dir, tmp_path / "fresh")) == 2


def test_perfect_synthetic_retrieval_scores_one(fixture_corpus_dir, tmp_path):
    out = tmp_path / "out"
    _run_pipeline(fixture_corpus_dir, out)
    summary = json.loads((out / "evaluate" / "summary.json").read_text())
    assert summary["retrieval"]["recall"]["10"] == 1.0
    # identity-NLI + concatenated-passages answers score a perfect composite
    assert summary["answers"]["repass"] == 1.0


def test_ablation_row_count(fixture_corpus_dir, tmp_path):
    out = tmp_path / "out"
    assert main(_args("index", fixture_corpus_dir, out)) == 0
    assert main(_args("retrieve", fixture_corpus_dir, out)) == 0
    assert main(_args("evaluate", fixture_corpus_dir, out, ["--ablation"])) == 0
    rows = json.loads((out / "evaluate" / "ablation.json").read_text())
    assert len(rows) == 15


def test_pipeline_byte_identical_across_runs(fixture_corpus_dir, tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    extra = ["--histogram", "--ablation", "--judge"]
    _run_pipeline(fixture_corpus_dir, out_a, extra)
    _run_pipeline(fixture_corpus_dir, out_b, extra)
    assert _stage_bytes(out_a) == _stage_bytes(out_b)


def test_config_file_with_flag_override(fixture_corpus_dir, tmp_path):
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps({
        "corpus": str(fixture_corpus_dir / "corpus.json"),
        "train": str(fixture_corpus_dir / "train.json"),
        "test": str(fixture_corpus_dir / "test.json"),
        "out": str(tmp_path / "from_config"),
        "k": 3,
    }))
    override_out = tmp_path / "overridden"
    assert main(["index", "--config", str(config_path), "--out", str(override_out)]) == 0
    assert main(["retrieve", "--config", str(config_path), "--out", str(override_out)]) == 0
    assert not (tmp_path / "from_config").exists()  # flag beat the file
    lines = (override_out / "retrieve" / "ranked.jsonl").read_text().splitlines()
    assert all(len(json.loads(line)["entries"]) <= 3 for line in lines)


def test_manifest_names_inputs_and_config_hash(fixture_corpus_dir, tmp_path):
    out = tmp_path / "out"
    assert main(_args("index", fixture_corpus_dir, out)) == 0
    manifest = json.loads((out / "index" / "manifest.json").read_text())
    assert manifest["inputs"]["corpus"].endswith("corpus.json")
    assert len(manifest["config_hash"]) == 64
    assert "artifact_versions" in manifest and "created_at" in manifest


def test_strategy_single_line(fixture_corpus_dir, tmp_path):
    out = tmp_path / "out"
    assert main(_args("index", fixture_corpus_dir, out)) == 0
    assert main(_args("retrieve", fixture_corpus_dir, out)) == 0
    assert main(_args("evaluate", fixture_corpus_dir, out, ["--strategy", "single_line"])) == 0
    answers = [json.loads(l) for l in (out / "evaluate" / "answers.jsonl").read_text().splitlines()]
    assert all(a["strategy"] == "single_line" for a in answers)
    assert all("." not in a["text"][-1:] for a in answers)
