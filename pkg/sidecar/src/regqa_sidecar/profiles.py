"""Model profiles: which model answers which verb, and with what knobs.

A profile set is loaded once at startup; few-shot exemplars for embedding
profiles are sampled then (seeded) and stay fixed for the life of the
process, so repeated runs are reproducible.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

VERBS = ("embed", "nli", "rerank", "generate", "train")


@dataclass
class ModelProfile:
    name: str
    verb: str
    model: str = "hashed-bag"
    device: str = "cpu"
    batch_size: int = 32
    dim: int = 64
    seed: int = 1
    # embed only: exemplar texts mixed into every encoding
    exemplars: list[str] = field(default_factory=list)
    conditioning_weight: float = 0.1
    # train only
    loss: str = "triplet"  # triplet | binary_cross_entropy
    margin: float = 0.5
    distance: str = "cosine"
    learning_rate: float = 0.05


@dataclass
class ProfileSet:
    profiles: dict[str, ModelProfile]
    default_by_verb: dict[str, str]

    def __post_init__(self) -> None:
        by_verb: dict[str, list[str]] = {}
        for name, profile in self.profiles.items():
            if profile.name != name:
                raise ValueError(f"profile key {name!r} != name {profile.name!r}")
            by_verb.setdefault(profile.verb, []).append(name)
        for verb in VERBS:
            if verb not in by_verb:
                raise ValueError(f"no profile serves verb {verb!r}")
            if self.default_by_verb.get(verb) not in by_verb[verb]:
                raise ValueError(f"default profile for {verb!r} missing")

    def resolve(self, verb: str, name: str | None) -> ModelProfile:
        if name is None or name == "":
            return self.profiles[self.default_by_verb[verb]]
        profile = self.profiles.get(name)
        if profile is None or profile.verb != verb:
            raise KeyError(f"no {verb} profile named {name!r}")
        return profile

    def capabilities(self) -> list[str]:
        return sorted({p.verb for p in self.profiles.values()})


def default_profiles() -> ProfileSet:
    """Three embedding spaces (distinct seeds), one per remaining verb."""
    profiles = [
        ModelProfile(name="default", verb="embed", seed=1),
        ModelProfile(name="e5", verb="embed", seed=101),
        ModelProfile(name="bge", verb="embed", seed=202),
        ModelProfile(name="q2q", verb="embed", seed=303),
        ModelProfile(name="nli-default", verb="nli"),
        ModelProfile(name="rerank-default", verb="rerank", seed=7),
        ModelProfile(name="generate-default", verb="generate", model="template"),
        ModelProfile(name="train-default", verb="train"),
    ]
    return ProfileSet(
        profiles={p.name: p for p in profiles},
        default_by_verb={
            "embed": "default",
            "nli": "nli-default",
            "rerank": "rerank-default",
            "generate": "generate-default",
            "train": "train-default",
        },
    )


def _fix_few_shot(spec: dict, rng: random.Random) -> list[str]:
    """Sample exemplar question texts from a question file, once."""
    path = Path(spec["path"])
    records = json.loads(path.read_text(encoding="utf-8"))
    texts = [str(r[spec.get("text_field", "Question")]) for r in records]
    count = int(spec.get("count", 5))
    if count >= len(texts):
        return texts
    return rng.sample(texts, count)


def load_profiles(path: str | Path) -> ProfileSet:
    """Profile config file: {"profiles": [...], "defaults": {verb: name}}.

    An embed profile may carry either "exemplars": [texts] or
    "few_shot": {"path": ..., "count": 5} resolved (seeded) at load time.
    """
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    profiles: dict[str, ModelProfile] = {}
    for raw in data["profiles"]:
        raw = dict(raw)
        few_shot = raw.pop("few_shot", None)
        profile = ModelProfile(**raw)
        if few_shot is not None:
            profile.exemplars = _fix_few_shot(few_shot, random.Random(profile.seed))
        profiles[profile.name] = profile
    merged = default_profiles()
    merged.profiles.update(profiles)
    merged.default_by_verb.update(data.get("defaults", {}))
    return ProfileSet(profiles=merged.profiles, default_by_verb=merged.default_by_verb)
