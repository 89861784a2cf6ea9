"""Fine-tuning: triplet loss for the encoder, binary cross-entropy for the
rerank head, plus checkpoint and embedding-export plumbing.

Checkpoint layout: a single ``.pt`` file per model holding the state dict and
the profile knobs it was trained with. Embedding exports use the exchange
format the retrieval pipeline reads: one JSON header line (dim, count, space,
profile), then one ``{"id", "vector"}`` record per line, ids being
``doc::passage`` keys.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

from .models import HashedBagEncoder, PairRelevanceHead
from .profiles import ModelProfile


# ---------------------------------------------------------------------------
# data files
# ---------------------------------------------------------------------------

def read_question_records(path: str | Path) -> list[dict]:
    raw = Path(path).read_text(encoding="utf-8")
    stripped = raw.lstrip()
    if stripped.startswith("["):
        return json.loads(raw)
    return [json.loads(line) for line in raw.splitlines() if line.strip()]


def passage_texts(corpus_path: str | Path) -> dict[tuple[str, str], str]:
    texts: dict[tuple[str, str], str] = {}
    for record in read_question_records(corpus_path):
        for entry in record.get("Passages", []):
            ref = (str(entry["DocumentID"]), str(entry["PassageID"]))
            texts.setdefault(ref, str(entry["Passage"]))
    return texts


def question_texts(questions_path: str | Path) -> dict[str, str]:
    return {
        str(r["QuestionID"]): str(r["Question"])
        for r in read_question_records(questions_path)
    }


def read_triplets(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def read_rerank_examples(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


# ---------------------------------------------------------------------------
# checkpoints and exports
# ---------------------------------------------------------------------------

def save_encoder(encoder: HashedBagEncoder, profile: ModelProfile, path: str | Path) -> None:
    torch.save({"kind": "encoder", "profile_name": profile.name, "dim": profile.dim,
                "state": encoder.state_dict()}, path)


def load_encoder(profile: ModelProfile, path: str | Path | None) -> HashedBagEncoder:
    encoder = HashedBagEncoder(profile)
    if path is not None:
        payload = torch.load(path, weights_only=True)
        encoder.load_state_dict(payload["state"])
    encoder.eval()
    return encoder


def save_reranker(head: PairRelevanceHead, profile: ModelProfile, path: str | Path) -> None:
    torch.save({"kind": "reranker", "profile_name": profile.name,
                "state": head.state_dict()}, path)


def load_reranker(profile: ModelProfile, path: str | Path | None) -> PairRelevanceHead:
    head = PairRelevanceHead(profile)
    if path is not None:
        payload = torch.load(path, weights_only=True)
        head.load_state_dict(payload["state"])
    head.eval()
    return head


def export_embeddings(
    encoder: HashedBagEncoder,
    texts_by_ref: dict[tuple[str, str], str],
    path: str | Path,
    profile_name: str,
) -> None:
    refs = list(texts_by_ref)
    vectors = encoder.encode([texts_by_ref[ref] for ref in refs])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(
            {"dim": encoder.dim, "count": len(refs), "space": "cosine", "profile": profile_name},
            sort_keys=True,
        ) + "\n")
        for (doc_id, passage_id), vector in zip(refs, vectors):
            fh.write(json.dumps({"id": f"{doc_id}::{passage_id}", "vector": vector}) + "\n")


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

@dataclass
class TrainReport:
    steps: int
    final_loss: float | None
    checkpoint_path: str
    export_path: str | None = None
    label_balance: dict[str, int] | None = None


def train_triplets(
    triplets_path: str | Path,
    profile: ModelProfile,
    corpus_path: str | Path,
    questions_path: str | Path,
    batches: int = 400,
    batch_size: int = 8,
    checkpoint_in: str | Path | None = None,
    checkpoint_out: str | Path = "encoder.pt",
    export_path: str | Path | None = None,
) -> TrainReport:
    """Run ``batches`` triplet-loss batches and export fresh embeddings.

    Distance is cosine (1 - similarity) with the profile's margin; with
    batches=0 the export equals the input checkpoint's embeddings.
    """
    texts = passage_texts(corpus_path)
    questions = question_texts(questions_path)
    samples = []
    for t in read_triplets(triplets_path):
        q = questions.get(str(t["question_id"]))
        pos = texts.get((str(t["positive_ref"][0]), str(t["positive_ref"][1])))
        neg = texts.get((str(t["negative_ref"][0]), str(t["negative_ref"][1])))
        if q is not None and pos is not None and neg is not None:
            samples.append((q, pos, neg))
    if not samples and batches > 0:
        raise ValueError("no usable triplets: refs did not resolve against the corpus")

    encoder = load_encoder(profile, checkpoint_in)
    final_loss = None
    if batches > 0:
        encoder.train()
        optimizer = torch.optim.SGD(encoder.parameters(), lr=profile.learning_rate)
        rng = random.Random(profile.seed)
        for _ in range(batches):
            batch = [samples[rng.randrange(len(samples))] for _ in range(batch_size)]
            anchors = encoder([q for q, _, _ in batch])
            positives = encoder([p for _, p, _ in batch])
            negatives = encoder([n for _, _, n in batch])
            d_pos = 1.0 - (anchors * positives).sum(dim=1)
            d_neg = 1.0 - (anchors * negatives).sum(dim=1)
            loss = torch.relu(profile.margin + d_pos - d_neg).mean()
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            final_loss = float(loss.detach())
        encoder.eval()

    save_encoder(encoder, profile, checkpoint_out)
    if export_path is not None:
        export_embeddings(encoder, texts, export_path, profile.name)
    return TrainReport(
        steps=batches,
        final_loss=final_loss,
        checkpoint_path=str(checkpoint_out),
        export_path=None if export_path is None else str(export_path),
    )


def train_reranker(
    trainset_path: str | Path,
    profile: ModelProfile,
    batches: int = 100,
    batch_size: int = 8,
    checkpoint_in: str | Path | None = None,
    checkpoint_out: str | Path = "reranker.pt",
) -> TrainReport:
    """Binary cross-entropy fine-tune of the relevance head."""
    examples = read_rerank_examples(trainset_path)
    if not examples:
        raise ValueError("empty rerank trainset")
    pairs = [(str(e["question_text"]), str(e["passage_text"])) for e in examples]
    labels = torch.tensor(
        [1.0 if e["label"] == "relevant" else 0.0 for e in examples], dtype=torch.float32
    )
    balance = {"relevant": 0, "hard": 0, "easy": 0}
    for e in examples:
        key = "relevant" if e["label"] == "relevant" else e["negative_kind"]
        balance[key] = balance.get(key, 0) + 1

    head = load_reranker(profile, checkpoint_in)
    final_loss = None
    if batches > 0:
        head.train()
        optimizer = torch.optim.SGD(head.parameters(), lr=profile.learning_rate)
        criterion = nn.BCELoss()
        rng = random.Random(profile.seed)
        for _ in range(batches):
            idx = [rng.randrange(len(pairs)) for _ in range(batch_size)]
            predictions = head([pairs[i] for i in idx])
            loss = criterion(predictions, labels[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            final_loss = float(loss.detach())
        head.eval()

    save_reranker(head, profile, checkpoint_out)
    return TrainReport(
        steps=batches,
        final_loss=final_loss,
        checkpoint_path=str(checkpoint_out),
        label_balance=balance,
    )
