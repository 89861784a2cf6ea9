"""CPU-sized models behind the protocol verbs.

The embedding encoder and the rerank head are genuine torch modules trained
by gradient descent (triplet loss and binary cross-entropy respectively);
they are deliberately small enough to fine-tune on a laptop CPU in seconds.
The NLI head is a deterministic feature scorer and the generator is
template-based; both sit behind the same verb surface so heavier models can
replace them profile-by-profile.
"""

from __future__ import annotations

import hashlib
import math
import re

import torch
from torch import nn

from .profiles import ModelProfile

_TOKEN_RE = re.compile(r"[^\W_]+(?:\.[^\W_]+)*")
_NEGATORS = frozenset({"not", "no", "never", "neither", "nor", "cannot"})

N_BUCKETS = 4096


def tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def bucket(token: str) -> int:
    digest = hashlib.md5(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % N_BUCKETS


class HashedBagEncoder(nn.Module):
    """Trainable text encoder: hashed bag of tokens -> EmbeddingBag -> unit sphere.

    Optional conditioning mixes a fixed exemplar bag into every encoding
    (the exemplars are frozen into the profile at load time).
    """

    def __init__(self, profile: ModelProfile):
        super().__init__()
        torch.manual_seed(profile.seed)
        self.dim = profile.dim
        self.bag = nn.EmbeddingBag(N_BUCKETS, profile.dim, mode="sum")
        self.conditioning_weight = profile.conditioning_weight
        exemplar_tokens = [t for text in profile.exemplars for t in tokens(text)]
        self._exemplar_buckets = [bucket(t) for t in exemplar_tokens]
        self.eval()

    def _raw(self, texts: list[str]) -> torch.Tensor:
        flat: list[int] = []
        offsets: list[int] = []
        for text in texts:
            offsets.append(len(flat))
            buckets = [bucket(t) for t in tokens(text)] or [bucket("")]
            flat.extend(buckets)
        return self.bag(
            torch.tensor(flat, dtype=torch.long),
            torch.tensor(offsets, dtype=torch.long),
        )

    def forward(self, texts: list[str]) -> torch.Tensor:
        vectors = self._raw(texts)
        if self._exemplar_buckets:
            context = self.bag(
                torch.tensor(self._exemplar_buckets, dtype=torch.long),
                torch.tensor([0], dtype=torch.long),
            )
            vectors = vectors + self.conditioning_weight * context
        return nn.functional.normalize(vectors, dim=1, eps=1e-12)

    @torch.no_grad()
    def encode(self, texts: list[str]) -> list[list[float]]:
        self.eval()
        return [[float(x) for x in row] for row in self(texts)]


class PairRelevanceHead(nn.Module):
    """Binary relevance head over lexical pair features; probability output."""

    FEATURES = 4

    def __init__(self, profile: ModelProfile):
        super().__init__()
        torch.manual_seed(profile.seed)
        self.linear = nn.Linear(self.FEATURES, 1)
        # start from a sensible prior: overlap features count positively
        with torch.no_grad():
            self.linear.weight.copy_(torch.tensor([[2.0, 1.0, 2.0, -0.1]]))
            self.linear.bias.fill_(-1.0)
        self.eval()

    @staticmethod
    def features(question: str, passage: str) -> list[float]:
        q, p = set(tokens(question)), set(tokens(passage))
        if not q or not p:
            return [0.0, 0.0, 0.0, 0.0]
        overlap = len(q & p)
        return [
            overlap / len(q),
            overlap / len(p),
            overlap / len(q | p),
            math.log(len(p) / len(q)),
        ]

    def forward(self, pairs: list[tuple[str, str]]) -> torch.Tensor:
        matrix = torch.tensor([self.features(q, p) for q, p in pairs], dtype=torch.float32)
        return torch.sigmoid(self.linear(matrix)).squeeze(1)

    @torch.no_grad()
    def probabilities(self, pairs: list[tuple[str, str]]) -> list[float]:
        self.eval()
        return [float(x) for x in self(pairs)]


def nli_scores(premise: str, hypothesis: str) -> tuple[float, float, float]:
    """(entailment, contradiction, neutral) from lexical features.

    Identical token sequences entail near-certainly; a negation-polarity
    mismatch on overlapping content reads as contradiction; everything else
    scales with hypothesis coverage.
    """
    p_tokens, h_tokens = tokens(premise), tokens(hypothesis)
    if p_tokens == h_tokens and p_tokens:
        return (0.97, 0.01, 0.02)
    p_set, h_set = set(p_tokens), set(h_tokens)
    if not p_set or not h_set:
        return (0.02, 0.02, 0.96)
    coverage = len(p_set & h_set) / len(h_set)
    polarity_mismatch = (len(p_set & _NEGATORS) % 2) != (len(h_set & _NEGATORS) % 2)
    if polarity_mismatch:
        contradiction = 0.2 + 0.75 * coverage
        entailment = 0.05 * coverage
    else:
        entailment = 0.9 * coverage
        contradiction = 0.02
    neutral = max(0.0, 1.0 - entailment - contradiction)
    total = entailment + contradiction + neutral
    return (entailment / total, contradiction / total, neutral / total)


_ANSWER_MARKER = "passages: "
_ANSWER_END = " \nanswer:"
_JUDGE_QUESTION = "Question: "
_JUDGE_ANSWER = "Answer: "


def generate(prompt: str) -> str:
    """Template generator: extractive answers, lexical-overlap judge ratings."""
    if "Total rating:" in prompt and _JUDGE_QUESTION in prompt:
        question = prompt.split(_JUDGE_QUESTION, 1)[1].split("\n", 1)[0]
        answer = prompt.split(_JUDGE_ANSWER, 1)[1].split("\n", 1)[0]
        q, a = set(tokens(question)), set(tokens(answer))
        coverage = len(q & a) / len(q) if q else 0.0
        rating = 1 + min(3, int(coverage * 4))
        return (
            "Feedback:::\n"
            f"Evaluation: lexical coverage {coverage:.2f} of the question terms\n"
            f"Total rating: {rating}"
        )
    if _ANSWER_MARKER in prompt:
        block = prompt.split(_ANSWER_MARKER, 1)[1]
        if block.endswith(_ANSWER_END):
            block = block[: -len(_ANSWER_END)]
        return block
    return prompt
