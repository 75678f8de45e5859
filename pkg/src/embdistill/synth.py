"""Synthetic topic worlds: deterministic stand-ins for live embedding teachers.

A world holds unit topic vectors in an ambient space; each teacher observes
topics through its own full-rank random linear map plus per-record noise, so
different teachers produce structurally related but independent embeddings.
Generated corpora carry the topic signal in their words, which is what lets
a student learn text -> embedding from harvested pairs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .corpus import Collection, TextRecord
from .errors import ConfigError, DataError
from .evaluation import Qrels
from .teachers import TeacherSpec, normalize


def _keyed_rng(*parts) -> np.random.Generator:
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


@dataclass
class SyntheticWorld:
    seed: int
    noise: float
    topics: np.ndarray  # (T, ambient_dim) unit rows
    assignments: dict[str, int]  # record id -> topic index
    observers: dict[str, np.ndarray] = field(default_factory=dict)  # teacher -> (dim, ambient_dim)

    def __post_init__(self) -> None:
        t = self.topics.shape[0]
        for i in range(t):
            for j in range(i + 1, t):
                if np.array_equal(self.topics[i], self.topics[j]):
                    raise DataError(f"topics {i} and {j} are identical")

    @property
    def ambient_dim(self) -> int:
        return self.topics.shape[1]

    def observer_for(self, teacher_name: str, dim: int) -> np.ndarray:
        """Deterministic full-rank observer for a teacher; drawn lazily and memoized."""
        observer = self.observers.get(teacher_name)
        if observer is not None:
            if observer.shape != (dim, self.ambient_dim):
                raise DataError(
                    f"observer for {teacher_name!r} has shape {observer.shape}, "
                    f"expected {(dim, self.ambient_dim)}"
                )
            return observer
        attempt = 0
        while True:
            rng = _keyed_rng(self.seed, "observer", teacher_name, dim, attempt)
            observer = rng.normal(0.0, 1.0 / np.sqrt(self.ambient_dim), size=(dim, self.ambient_dim))
            if np.linalg.matrix_rank(observer) == min(dim, self.ambient_dim):
                break
            attempt += 1
        self.observers[teacher_name] = observer
        return observer


def simulate_teacher(world: SyntheticWorld, spec: TeacherSpec, record: TextRecord) -> np.ndarray:
    """Unit embedding normalize(observer @ (topic + noise)), deterministic in
    (world.seed, teacher name, record id)."""
    try:
        topic_idx = world.assignments[record.id]
    except KeyError:
        raise DataError(f"record {record.id!r} has no topic assignment in this world") from None
    observer = world.observer_for(spec.name, spec.dim)
    ambient = world.topics[topic_idx].copy()
    if world.noise > 0.0:
        rng = _keyed_rng(world.seed, "noise", spec.name, record.id)
        ambient = ambient + world.noise * rng.standard_normal(world.ambient_dim)
    return normalize(observer @ ambient)


@dataclass(frozen=True)
class WorldConfig:
    seed: int = 0
    topics: int = 8
    ambient_dim: int = 48
    noise: float = 0.05
    passages: int = 200
    queries: int = 40
    words_per_topic: int = 40
    shared_words: int = 12
    passage_words: tuple[int, int] = (8, 18)
    query_words: tuple[int, int] = (3, 6)

    def __post_init__(self) -> None:
        if self.topics < 2:
            raise ConfigError("a world needs at least 2 topics")
        if self.topics > self.ambient_dim:
            raise ConfigError("orthogonal topics require topics <= ambient_dim")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")


@dataclass
class SyntheticDataset:
    world: SyntheticWorld
    passages: Collection
    queries: Collection
    qrels: Qrels


_CONSONANTS = "bcdfglmnprstvz"
_VOWELS = "aeiou"


def _pseudo_word(rng: np.random.Generator, syllables: int) -> str:
    return "".join(
        _CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
        for _ in range(syllables)
    )


def _word_pools(rng: np.random.Generator, config: WorldConfig) -> tuple[list[list[str]], list[str]]:
    taken: set[str] = set()

    def fresh(syllables: int) -> str:
        while True:
            word = _pseudo_word(rng, syllables)
            if word not in taken:
                taken.add(word)
                return word

    pools = [[fresh(3) for _ in range(config.words_per_topic)] for _ in range(config.topics)]
    shared = ["the", "of", "and", "to", "in"] + [fresh(2) for _ in range(config.shared_words)]
    taken.update(shared)
    return pools, shared


def build_synthetic_dataset(config: WorldConfig) -> SyntheticDataset:
    """Topic-balanced passages and queries with same-topic relevance judgments."""
    rng = np.random.default_rng(config.seed)

    gaussian = rng.normal(size=(config.ambient_dim, config.topics))
    q, _ = np.linalg.qr(gaussian)
    topics = q.T[: config.topics]  # orthonormal unit rows

    pools, shared = _word_pools(rng, config)

    def make_text(topic_idx: int, lo: int, hi: int, shared_max: int) -> str:
        n_topic = int(rng.integers(lo, hi + 1))
        words = [pools[topic_idx][rng.integers(len(pools[topic_idx]))] for _ in range(n_topic)]
        for _ in range(int(rng.integers(0, shared_max + 1))):
            words.append(shared[rng.integers(len(shared))])
        rng.shuffle(words)
        return " ".join(words)

    assignments: dict[str, int] = {}
    passage_records: list[TextRecord] = []
    for i in range(config.passages):
        topic_idx = i % config.topics
        rec_id = f"p{i + 1}"
        assignments[rec_id] = topic_idx
        lo, hi = config.passage_words
        passage_records.append(TextRecord(rec_id, "passage", make_text(topic_idx, lo, hi, 3)))

    query_records: list[TextRecord] = []
    qrels = Qrels()
    for j in range(config.queries):
        topic_idx = j % config.topics
        rec_id = f"q{j + 1}"
        assignments[rec_id] = topic_idx
        lo, hi = config.query_words
        query_records.append(TextRecord(rec_id, "query", make_text(topic_idx, lo, hi, 1)))
        for rec in passage_records:
            if assignments[rec.id] == topic_idx:
                qrels.add(rec_id, rec.id, 1)

    world = SyntheticWorld(seed=config.seed, noise=config.noise, topics=topics, assignments=assignments)
    manifest = {"source": "synthetic", "world_seed": config.seed, "topics": config.topics}
    return SyntheticDataset(
        world=world,
        passages=Collection(passage_records, dict(manifest, kind="passage")),
        queries=Collection(query_records, dict(manifest, kind="query")),
        qrels=qrels,
    )


def world_presets() -> dict[str, WorldConfig]:
    """Named world recipes addressable from a simulated teacher source's mode."""
    return {"default": WorldConfig()}
