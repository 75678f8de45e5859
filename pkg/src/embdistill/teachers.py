"""Teacher embedding sources: specs, persistent cache, harvesting, live API clients.

Every vector leaving this module is unit Euclidean norm (within 1e-4).
"""

from __future__ import annotations

import json
import struct
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Callable, Iterable, Literal, Sequence

import numpy as np

from .corpus import PASSAGE, QUERY, TextRecord
from .errors import ConfigError, DataError
from .tokenizer import count_tokens, truncate_to_tokens

CACHE_MAGIC = b"EMBC1"
_CACHE_HEADER = struct.Struct("<IQ")  # dim, committed entry count

Transport = Callable[[str, dict, bytes], tuple[int, bytes]]


class TransportError(RuntimeError):
    """A live API call failed in a way that may succeed on retry."""


@dataclass(frozen=True)
class SimulatedSource:
    """Deterministic synthetic teacher; the world is reconstructed from the seed."""

    seed: int
    mode: str = "default"


@dataclass(frozen=True)
class CacheSource:
    path: str


@dataclass(frozen=True)
class LiveSource:
    endpoint: str
    model: str
    api_style: Literal["openai", "cohere"]
    credentials_env: str
    batch_limit: int = 96

    @property
    def supports_input_type(self) -> bool:
        return self.api_style == "cohere"


@dataclass(frozen=True)
class TeacherSpec:
    name: str
    dim: int
    max_tokens: int
    price_per_million: Decimal
    source: SimulatedSource | CacheSource | LiveSource

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ConfigError(f"teacher {self.name!r}: dim must be >= 1")
        object.__setattr__(self, "price_per_million", Decimal(str(self.price_per_million)))
        if self.price_per_million < 0:
            raise ConfigError(f"teacher {self.name!r}: price must be >= 0")


def sim_openai_spec(seed: int = 0, mode: str = "default") -> TeacherSpec:
    """Desk-scale stand-in keeping the 3:1 dimensional asymmetry of the larger API."""
    return TeacherSpec("sim-openai", dim=96, max_tokens=8192,
                       price_per_million=Decimal("0.13"), source=SimulatedSource(seed, mode))


def sim_cohere_spec(seed: int = 0, mode: str = "default") -> TeacherSpec:
    return TeacherSpec("sim-cohere", dim=32, max_tokens=512,
                       price_per_million=Decimal("0.10"), source=SimulatedSource(seed, mode))


def ensure_unit(vec: np.ndarray, tol: float = 1e-4, context: str = "embedding") -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    norm = float(np.linalg.norm(vec))
    if abs(norm - 1.0) > tol:
        raise DataError(f"{context}: expected unit norm, got {norm:.6f}")
    return vec


def normalize(vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise DataError("cannot normalize a zero vector")
    return vec / norm


def concat_teachers(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Concatenate two unit vectors and renormalize (scale 1/sqrt(2))."""
    a = ensure_unit(a, context="concat first input")
    b = ensure_unit(b, context="concat second input")
    return normalize(np.concatenate([a, b]))


def concat_cache(a: "EmbeddingCache", b: "EmbeddingCache") -> "EmbeddingCache":
    """In-memory cache of concatenated-and-renormalized vectors for shared ids."""
    ids = [rid for rid in a.ids() if rid in b]
    vectors = {rid: concat_teachers(a.vector(rid), b.vector(rid)) for rid in ids}
    return EmbeddingCache(a.dim + b.dim, vectors)


def estimate_cost(spec: TeacherSpec, token_count: int) -> Decimal:
    """Linear pricing, rounded to cents half-up."""
    if token_count < 0:
        raise DataError(f"token count must be >= 0, got {token_count}")
    raw = Decimal(token_count) * spec.price_per_million / Decimal(1_000_000)
    return raw.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)


# ---------------------------------------------------------------------------
# Embedding cache (append-only, crash-safe)
# ---------------------------------------------------------------------------


class EmbeddingCache:
    """Read-only view of a cache file: id -> unit vector."""

    def __init__(self, dim: int, vectors: dict[str, np.ndarray]):
        self.dim = dim
        self._vectors = vectors

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def ids(self) -> list[str]:
        return list(self._vectors)

    def vector(self, record_id: str) -> np.ndarray:
        try:
            return self._vectors[record_id].copy()
        except KeyError:
            raise DataError(f"no cached embedding for id {record_id!r}") from None

    def matrix(self, record_ids: Sequence[str]) -> np.ndarray:
        missing = [rid for rid in record_ids if rid not in self._vectors]
        if missing:
            raise DataError(f"missing cache entries for ids: {missing}")
        return np.stack([self._vectors[rid] for rid in record_ids])

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingCache":
        path = Path(path)
        blob = path.read_bytes()
        if blob[: len(CACHE_MAGIC)] != CACHE_MAGIC:
            raise DataError(f"{path} is not an embedding cache (bad magic)")
        dim, count = _CACHE_HEADER.unpack_from(blob, len(CACHE_MAGIC))
        offset = len(CACHE_MAGIC) + _CACHE_HEADER.size
        vectors: dict[str, np.ndarray] = {}
        for _ in range(count):
            if offset + 4 > len(blob):
                raise DataError(f"cache {path} is truncated inside a committed entry")
            (id_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            if offset + id_len + 4 * dim > len(blob):
                raise DataError(f"cache {path} is truncated inside a committed entry")
            rec_id = blob[offset : offset + id_len].decode("utf-8")
            offset += id_len
            vec = np.frombuffer(blob, dtype="<f4", count=dim, offset=offset).astype(np.float64)
            offset += 4 * dim
            vectors[rec_id] = ensure_unit(vec, context=f"cache entry {rec_id!r}")
        return cls(dim, vectors)

    def export_jsonl(self, path: str | Path) -> None:
        """Human-inspectable dump, one {"id", "vector"} object per line."""
        with Path(path).open("w", encoding="utf-8") as fh:
            for rec_id, vec in self._vectors.items():
                fh.write(json.dumps({"id": rec_id, "vector": [round(float(v), 8) for v in vec]}) + "\n")


class EmbeddingCacheWriter:
    """Serialized appender: an entry is committed once the header count is updated.

    Truncation of an in-flight entry therefore never corrupts earlier entries;
    readers only consume the committed count.
    """

    def __init__(self, path: str | Path, dim: int):
        self.path = Path(path)
        self.dim = dim
        if self.path.exists():
            existing = EmbeddingCache.load(self.path)
            if existing.dim != dim:
                raise DataError(f"cache {self.path} has dim {existing.dim}, expected {dim}")
            self._ids = set(existing.ids())
            self._count = len(existing)
            self._fh = open(self.path, "r+b")
            self._fh.seek(0, 2)
        else:
            self._ids = set()
            self._count = 0
            self._fh = open(self.path, "w+b")
            self._fh.write(CACHE_MAGIC + _CACHE_HEADER.pack(dim, 0))
            self._fh.flush()

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._ids

    def append(self, record_id: str, vec: np.ndarray) -> None:
        if record_id in self._ids:
            raise DataError(f"cache already holds id {record_id!r}")
        vec = ensure_unit(vec, context=f"cache append {record_id!r}")
        if vec.shape != (self.dim,):
            raise DataError(f"cache append {record_id!r}: expected dim {self.dim}, got {vec.shape}")
        id_bytes = record_id.encode("utf-8")
        self._fh.seek(0, 2)
        self._fh.write(struct.pack("<I", len(id_bytes)) + id_bytes)
        self._fh.write(np.ascontiguousarray(vec, dtype="<f4").tobytes())
        self._fh.flush()
        self._count += 1
        self._fh.seek(len(CACHE_MAGIC))
        self._fh.write(_CACHE_HEADER.pack(self.dim, self._count))
        self._fh.flush()
        self._fh.seek(0, 2)
        self._ids.add(record_id)

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "EmbeddingCacheWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# ---------------------------------------------------------------------------
# Providers and harvesting
# ---------------------------------------------------------------------------


class SimulatedProvider:
    """Embeds records through a synthetic world; fully deterministic."""

    def __init__(self, world, spec: TeacherSpec):
        self.world = world
        self.spec = spec

    def embed_records(self, records: Sequence[TextRecord]) -> list[np.ndarray]:
        from .synth import simulate_teacher

        return [simulate_teacher(self.world, self.spec, rec) for rec in records]


class CachedProvider:
    """Serves embeddings from an existing cache file."""

    def __init__(self, path: str | Path):
        self.cache = EmbeddingCache.load(path)

    def embed_records(self, records: Sequence[TextRecord]) -> list[np.ndarray]:
        return [self.cache.vector(rec.id) for rec in records]


class LiveProvider:
    """Wire client for OpenAI-style and Cohere-style embedding endpoints."""

    def __init__(self, spec: TeacherSpec, transport: Transport | None = None, api_key: str | None = None):
        if not isinstance(spec.source, LiveSource):
            raise ConfigError(f"teacher {spec.name!r} is not a live teacher")
        self.spec = spec
        self.source = spec.source
        self.transport = transport or _urllib_transport
        if api_key is None:
            import os

            api_key = os.environ.get(self.source.credentials_env)
            if not api_key:
                raise ConfigError(
                    f"credentials for teacher {spec.name!r} not found in "
                    f"environment variable {self.source.credentials_env!r}"
                )
        self.api_key = api_key

    def embed_records(self, records: Sequence[TextRecord]) -> list[np.ndarray]:
        texts = [rec.text for rec in records]
        input_type = None
        if self.source.supports_input_type:
            kinds = {rec.kind for rec in records}
            if len(kinds) > 1:
                raise DataError("live batches must not mix queries and passages")
            input_type = "search_query" if kinds == {QUERY} else "search_document"
        return self.embed_texts(texts, input_type=input_type)

    def embed_texts(self, texts: Sequence[str], input_type: str | None = None) -> list[np.ndarray]:
        if len(texts) > self.source.batch_limit:
            raise DataError(f"batch of {len(texts)} exceeds provider limit {self.source.batch_limit}")
        if self.source.api_style == "openai":
            body: dict = {"model": self.source.model, "input": list(texts)}
        else:
            body = {"model": self.source.model, "texts": list(texts)}
            if input_type is not None:
                body["input_type"] = input_type
        headers = {
            "Authorization": f"Bearer {self.api_key}",
            "Content-Type": "application/json",
        }
        status, payload = self.transport(self.source.endpoint, headers, json.dumps(body).encode("utf-8"))
        if status == 429 or status >= 500:
            raise TransportError(f"teacher {self.spec.name!r}: HTTP {status}")
        if status != 200:
            raise DataError(f"teacher {self.spec.name!r}: HTTP {status}: {payload[:200]!r}")
        return self._parse(payload, len(texts))

    def _parse(self, payload: bytes, expected: int) -> list[np.ndarray]:
        try:
            doc = json.loads(payload)
        except json.JSONDecodeError as exc:
            raise DataError(f"teacher {self.spec.name!r}: malformed JSON response") from exc
        if self.source.api_style == "openai":
            items = doc.get("data")
            if not isinstance(items, list) or len(items) != expected:
                raise DataError(f"teacher {self.spec.name!r}: response data has wrong length")
            ordered = sorted(items, key=lambda item: item["index"])
            raw = [item["embedding"] for item in ordered]
        else:
            raw = doc.get("embeddings")
            if not isinstance(raw, list) or len(raw) != expected:
                raise DataError(f"teacher {self.spec.name!r}: response embeddings have wrong length")
        out = []
        for vec in raw:
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (self.spec.dim,):
                raise DataError(
                    f"teacher {self.spec.name!r}: expected dim {self.spec.dim}, got {arr.shape}"
                )
            out.append(normalize(arr))  # renormalize defensively
        return out


def _urllib_transport(url: str, headers: dict, body: bytes) -> tuple[int, bytes]:
    request = urllib.request.Request(url, data=body, headers=headers, method="POST")
    try:
        with urllib.request.urlopen(request, timeout=60) as response:
            return response.status, response.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read()
    except urllib.error.URLError as exc:
        raise TransportError(f"transport failure for {url}: {exc.reason}") from exc


def provider_for(spec: TeacherSpec, world=None, transport: Transport | None = None, api_key: str | None = None):
    if isinstance(spec.source, SimulatedSource):
        if world is None:
            raise ConfigError(f"simulated teacher {spec.name!r} needs a synthetic world")
        return SimulatedProvider(world, spec)
    if isinstance(spec.source, CacheSource):
        return CachedProvider(spec.source.path)
    return LiveProvider(spec, transport=transport, api_key=api_key)


@dataclass
class HarvestReport:
    teacher: str
    dim: int
    requested: int = 0
    already_cached: int = 0
    embedded: int = 0
    failed_ids: list[str] = field(default_factory=list)
    truncated_ids: list[str] = field(default_factory=list)
    total_tokens: int = 0
    estimated_cost: str = "$0.00"

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def harvest(
    spec: TeacherSpec,
    records: Iterable[TextRecord],
    cache_path: str | Path,
    provider=None,
    world=None,
    batch_size: int = 32,
    max_retries: int = 4,
    backoff_base: float = 0.5,
    backoff_cap: float = 8.0,
    sleep: Callable[[float], None] = time.sleep,
    manifest_path: str | Path | None = None,
    manifest_extra: dict | None = None,
) -> HarvestReport:
    """Embed every record once into the cache; re-runs skip cached ids.

    Records longer than the teacher's token limit are truncated before
    submission and flagged. Transient transport failures are retried with
    capped exponential backoff, then recorded as failed ids; the run continues.
    """
    if provider is None:
        provider = provider_for(spec, world=world)
    report = HarvestReport(teacher=spec.name, dim=spec.dim)

    with EmbeddingCacheWriter(cache_path, spec.dim) as writer:
        pending: list[TextRecord] = []
        for rec in records:
            report.requested += 1
            if rec.id in writer:
                report.already_cached += 1
                continue
            tokens = count_tokens(rec.text)
            if tokens > spec.max_tokens:
                rec = TextRecord(rec.id, rec.kind, truncate_to_tokens(rec.text, spec.max_tokens))
                report.truncated_ids.append(rec.id)
                tokens = spec.max_tokens
            report.total_tokens += tokens
            pending.append(rec)

        # Kind-homogeneous batches: providers that distinguish queries from
        # documents submit one input type per request.
        groups = [
            [rec for rec in pending if rec.kind == kind]
            for kind in (PASSAGE, QUERY)
        ]
        for group in groups:
            for start in range(0, len(group), batch_size):
                batch = group[start : start + batch_size]
                vectors = None
                for attempt in range(max_retries + 1):
                    try:
                        vectors = provider.embed_records(batch)
                        break
                    except TransportError:
                        if attempt == max_retries:
                            break
                        sleep(min(backoff_cap, backoff_base * 2**attempt))
                if vectors is None:
                    report.failed_ids.extend(rec.id for rec in batch)
                    continue
                for rec, vec in zip(batch, vectors):
                    writer.append(rec.id, vec)
                    report.embedded += 1

    report.estimated_cost = f"${estimate_cost(spec, report.total_tokens)}"
    if manifest_path is not None:
        payload = report.as_dict()
        if manifest_extra:
            payload.update(manifest_extra)
        Path(manifest_path).write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return report
