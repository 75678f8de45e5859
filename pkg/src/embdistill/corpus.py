"""Query/passage collections: TSV ingest, containment dedup, splits, sampling."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal

import numpy as np

from .errors import DataError

Kind = Literal["query", "passage"]

QUERY = "query"
PASSAGE = "passage"


@dataclass(frozen=True)
class TextRecord:
    """One query or passage."""

    id: str
    kind: Kind
    text: str

    def __post_init__(self) -> None:
        if self.kind not in (QUERY, PASSAGE):
            raise DataError(f"record {self.id!r}: kind must be 'query' or 'passage', got {self.kind!r}")
        if not self.text.strip():
            raise DataError(f"record {self.id!r}: text is empty after whitespace trim")


@dataclass
class Collection:
    """Ordered records plus a provenance manifest (sources, dedup stats, split seed)."""

    records: list[TextRecord]
    manifest: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for rec in self.records:
            if rec.id in seen:
                raise DataError(f"duplicate record id {rec.id!r} in collection")
            seen.add(rec.id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def kind_counts(self) -> dict[str, int]:
        counts = {QUERY: 0, PASSAGE: 0}
        for r in self.records:
            counts[r.kind] += 1
        return counts

    def of_kind(self, kind: Kind) -> list[TextRecord]:
        return [r for r in self.records if r.kind == kind]


@dataclass(frozen=True)
class SplitSpec:
    """Dev carve-out sizes and the training-sample size ('all' or an int)."""

    dev_passages: int
    dev_queries: int
    train_sample: int | str = "all"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dev_passages < 0 or self.dev_queries < 0:
            raise DataError("dev split sizes must be non-negative")
        if self.train_sample != "all" and (not isinstance(self.train_sample, int) or self.train_sample < 0):
            raise DataError(f"train_sample must be 'all' or a non-negative int, got {self.train_sample!r}")


_ID_CHUNKS = re.compile(r"(\d+)")


def id_sort_key(record_id: str) -> tuple:
    """Numeric-aware id ordering: digit runs compare as integers ('p9' < 'p10')."""
    parts = _ID_CHUNKS.split(record_id)
    return tuple((1, int(p)) if p.isdigit() else (0, p) for p in parts if p != "")


def ingest_tsv(path: str | Path, kind: Kind) -> Collection:
    """Read 'id<TAB>text' lines into a Collection of the given kind.

    Malformed lines are skipped and listed (with line numbers) in the
    manifest's error report; a duplicate id is a hard error naming both lines.
    """
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    records: list[TextRecord] = []
    errors: list[dict] = []
    first_line_of_id: dict[str, int] = {}
    for line_no, line in enumerate(raw.split("\n"), start=1):
        if line == "":
            continue
        if "\t" not in line:
            errors.append({"line": line_no, "reason": "missing tab separator"})
            continue
        rec_id, text = line.split("\t", 1)
        if not rec_id:
            errors.append({"line": line_no, "reason": "empty id"})
            continue
        if not text.strip():
            errors.append({"line": line_no, "reason": "empty text"})
            continue
        if rec_id in first_line_of_id:
            raise DataError(
                f"duplicate id {rec_id!r} in {path} on lines {first_line_of_id[rec_id]} and {line_no}"
            )
        first_line_of_id[rec_id] = line_no
        records.append(TextRecord(id=rec_id, kind=kind, text=text))

    manifest = {
        "source": str(path),
        "kind": kind,
        "ingested": len(records),
        "errors": errors,
    }
    return Collection(records, manifest)


def write_tsv(collection: Collection, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for rec in collection.records:
            fh.write(f"{rec.id}\t{rec.text}\n")


def _contained_texts(texts: Iterable[str]) -> tuple[set[str], set[str]]:
    """Texts that are a strict prefix (resp. suffix) of another distinct text.

    Sorting makes every strict-prefix pair adjacent-detectable: if a is a
    strict prefix of c, every string between them in sorted order also
    starts with a, so checking neighbours suffices.
    """
    unique = sorted(set(texts))
    prefixes = {a for a, b in zip(unique, unique[1:]) if b.startswith(a)}
    reversed_sorted = sorted(t[::-1] for t in unique)
    suffixes = {a[::-1] for a, b in zip(reversed_sorted, reversed_sorted[1:]) if b.startswith(a)}
    return prefixes, suffixes


def dedup_contained(passages: Collection) -> Collection:
    """Drop passages whose text is contained in another passage's text.

    A passage is removed when its text is a strict prefix or strict suffix
    of any other passage's text (the longer text survives; chains collapse
    to the maximal string). Exact duplicates keep the lowest id. Survivors
    retain their original order.
    """
    for rec in passages.records:
        if rec.kind != PASSAGE:
            raise DataError(f"dedup_contained expects passages only, got kind {rec.kind!r} (id {rec.id!r})")

    prefix_contained, suffix_contained = _contained_texts(r.text for r in passages.records)

    keeper_of_text: dict[str, str] = {}
    for rec in passages.records:
        cur = keeper_of_text.get(rec.text)
        if cur is None or id_sort_key(rec.id) < id_sort_key(cur):
            keeper_of_text[rec.text] = rec.id

    survivors: list[TextRecord] = []
    removed = {"prefix": 0, "suffix": 0, "exact": 0}
    for rec in passages.records:
        if rec.text in prefix_contained:
            removed["prefix"] += 1
        elif rec.text in suffix_contained:
            removed["suffix"] += 1
        elif keeper_of_text[rec.text] != rec.id:
            removed["exact"] += 1
        else:
            survivors.append(rec)

    manifest = dict(passages.manifest)
    manifest.update(
        {
            "ingested": len(passages.records),
            "removed_prefix": removed["prefix"],
            "removed_suffix": removed["suffix"],
            "removed_exact": removed["exact"],
            "survivors": len(survivors),
        }
    )
    return Collection(survivors, manifest)


def split_and_sample(collection: Collection, spec: SplitSpec) -> dict[str, Collection]:
    """Carve a dev set from the id-order tail, then sample the training set.

    Dev takes the last `dev_passages` passages and last `dev_queries` queries
    under numeric-aware id order. The train sample is drawn uniformly without
    replacement from the remainder using the split seed; when a kind present
    in the remainder would be missed entirely, one draw is swapped for the
    first record of that kind so both kinds are always represented.
    """
    passages = sorted(collection.of_kind(PASSAGE), key=lambda r: id_sort_key(r.id))
    queries = sorted(collection.of_kind(QUERY), key=lambda r: id_sort_key(r.id))
    if spec.dev_passages > len(passages) or spec.dev_queries > len(queries):
        raise DataError(
            f"dev split ({spec.dev_passages} passages, {spec.dev_queries} queries) exceeds "
            f"collection sizes ({len(passages)} passages, {len(queries)} queries)"
        )

    dev_ids = {r.id for r in passages[len(passages) - spec.dev_passages :]}
    dev_ids |= {r.id for r in queries[len(queries) - spec.dev_queries :]}
    remainder = [r for r in collection.records if r.id not in dev_ids]

    if spec.train_sample == "all":
        sampled = list(remainder)
    else:
        n = spec.train_sample
        if n > len(remainder):
            raise DataError(f"train_sample {n} exceeds remaining train size {len(remainder)}")
        rng = np.random.default_rng(spec.seed)
        chosen = set(rng.choice(len(remainder), size=n, replace=False).tolist())
        if n >= 2:
            for kind in (QUERY, PASSAGE):
                kind_positions = [i for i, r in enumerate(remainder) if r.kind == kind]
                if kind_positions and not any(remainder[i].kind == kind for i in chosen):
                    surplus = max(i for i in chosen if remainder[i].kind != kind)
                    chosen.discard(surplus)
                    chosen.add(kind_positions[0])
        sampled = [remainder[i] for i in sorted(chosen)]

    dev_records = [r for r in collection.records if r.id in dev_ids]
    dev_hash = hashlib.sha256("\n".join(sorted(dev_ids)).encode("utf-8")).hexdigest()

    base = dict(collection.manifest)
    train = Collection(sampled, {**base, "split": "train", "sample_seed": spec.seed, "dev_ids_hash": dev_hash})
    dev = Collection(dev_records, {**base, "split": "dev", "sample_seed": spec.seed, "dev_ids_hash": dev_hash})
    return {"train": train, "dev": dev}
