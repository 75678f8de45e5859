"""Exhaustive dot-product retrieval and trec-style metrics (nDCG@k, Recall@k)."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import TextRecord
from .errors import ConfigError, DataError
from .student import StudentModel
from .teachers import EmbeddingCache


class Qrels:
    """Graded relevance judgments keyed by (query_id, doc_id)."""

    def __init__(self, judgments: dict[tuple[str, str], int] | None = None):
        self._judgments: dict[tuple[str, str], int] = {}
        if judgments:
            for (qid, did), rel in judgments.items():
                self.add(qid, did, rel)

    def add(self, query_id: str, doc_id: str, rel: int) -> None:
        if rel < 0:
            raise DataError(f"relevance must be >= 0, got {rel} for ({query_id}, {doc_id})")
        key = (query_id, doc_id)
        if key in self._judgments:
            raise DataError(f"duplicate qrel for ({query_id}, {doc_id})")
        self._judgments[key] = rel

    def relevance(self, query_id: str, doc_id: str) -> int:
        return self._judgments.get((query_id, doc_id), 0)

    def relevant_docs(self, query_id: str, min_rel: int = 1) -> dict[str, int]:
        return {
            did: rel
            for (qid, did), rel in self._judgments.items()
            if qid == query_id and rel >= min_rel
        }

    def query_ids(self) -> list[str]:
        seen = dict.fromkeys(qid for qid, _ in self._judgments)
        return list(seen)

    def __len__(self) -> int:
        return len(self._judgments)

    def items(self):
        return self._judgments.items()

    @classmethod
    def from_file(cls, path: str | Path) -> "Qrels":
        """TREC format: 'qid 0 docid rel', whitespace separated."""
        qrels = cls()
        for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise DataError(f"{path}:{line_no}: expected 4 fields, got {len(parts)}")
            qid, _, did, rel = parts
            qrels.add(qid, did, int(rel))
        return qrels

    def to_file(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            for (qid, did), rel in self._judgments.items():
                fh.write(f"{qid} 0 {did} {rel}\n")


@dataclass
class RunRanking:
    """Per query: (doc_id, score) pairs, strictly ordered by score desc, doc_id asc."""

    rankings: dict[str, list[tuple[str, float]]] = field(default_factory=dict)

    def add_query(self, query_id: str, ranked: list[tuple[str, float]]) -> None:
        if query_id in self.rankings:
            raise DataError(f"duplicate query {query_id!r} in run")
        seen: set[str] = set()
        for i, (did, score) in enumerate(ranked):
            if did in seen:
                raise DataError(f"duplicate doc {did!r} for query {query_id!r}")
            seen.add(did)
            if i > 0:
                prev_did, prev_score = ranked[i - 1]
                if score > prev_score:
                    raise DataError(f"run for query {query_id!r} is not sorted by score")
                if score == prev_score and did < prev_did:
                    raise DataError(f"tied docs for query {query_id!r} are not in doc_id order")
        self.rankings[query_id] = list(ranked)

    def to_file(self, path: str | Path, tag: str = "embdistill") -> None:
        """TREC run format: 'qid Q0 docid rank score tag'; scores use 6 decimals."""
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            for qid, ranked in self.rankings.items():
                for rank, (did, score) in enumerate(ranked, start=1):
                    fh.write(f"{qid} Q0 {did} {rank} {score:.6f} {tag}\n")

    @classmethod
    def from_file(cls, path: str | Path) -> "RunRanking":
        per_query: dict[str, list[tuple[int, str, float]]] = {}
        for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6:
                raise DataError(f"{path}:{line_no}: expected 6 fields, got {len(parts)}")
            qid, _, did, rank, score, _ = parts
            per_query.setdefault(qid, []).append((int(rank), did, float(score)))
        run = cls()
        for qid, rows in per_query.items():
            rows.sort()
            run.add_query(qid, [(did, score) for _, did, score in rows])
        return run


def exact_search(
    query_vecs: np.ndarray,
    query_ids: Sequence[str],
    passage_vecs: np.ndarray,
    passage_ids: Sequence[str],
    k: int,
) -> RunRanking:
    """Exhaustive top-k by dot product; ties broken by doc_id ascending."""
    query_vecs = np.asarray(query_vecs, dtype=np.float64)
    passage_vecs = np.asarray(passage_vecs, dtype=np.float64)
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if query_vecs.shape[1] != passage_vecs.shape[1]:
        raise DataError(
            f"dimension mismatch: queries are {query_vecs.shape[1]}-d, "
            f"passages are {passage_vecs.shape[1]}-d"
        )
    doc_ids = np.asarray(passage_ids)
    scores = query_vecs @ passage_vecs.T
    run = RunRanking()
    for qi, qid in enumerate(query_ids):
        order = np.lexsort((doc_ids, -scores[qi]))[:k]
        run.add_query(qid, [(str(doc_ids[j]), float(scores[qi, j])) for j in order])
    return run


def _dcg(gains: Sequence[float], exponential: bool) -> float:
    total = 0.0
    for i, rel in enumerate(gains, start=1):
        gain = (2.0**rel - 1.0) if exponential else rel
        total += gain / math.log2(i + 1)
    return total


def ndcg_at_k(
    run: RunRanking,
    qrels: Qrels,
    k: int = 10,
    exponential_gain: bool = False,
) -> tuple[dict[str, float], float]:
    """Per-query and mean nDCG@k with linear gain rel/log2(i+1) by default.

    Unjudged docs count as relevance 0. Queries without any positive
    judgment are excluded from the mean.
    """
    per_query: dict[str, float] = {}
    for qid, ranked in run.rankings.items():
        judged = qrels.relevant_docs(qid, min_rel=1)
        if not judged:
            continue
        gains = [float(qrels.relevance(qid, did)) for did, _ in ranked[:k]]
        ideal = sorted((float(r) for r in judged.values()), reverse=True)[:k]
        ideal_dcg = _dcg(ideal, exponential_gain)
        per_query[qid] = _dcg(gains, exponential_gain) / ideal_dcg if ideal_dcg > 0 else 0.0
    mean = sum(per_query.values()) / len(per_query) if per_query else 0.0
    return per_query, mean


def recall_at_k(
    run: RunRanking,
    qrels: Qrels,
    k: int = 100,
    min_rel: int = 1,
) -> tuple[dict[str, float], float]:
    """Fraction of relevant (rel >= min_rel) docs retrieved in the top k."""
    per_query: dict[str, float] = {}
    for qid, ranked in run.rankings.items():
        relevant = set(qrels.relevant_docs(qid, min_rel=min_rel))
        if not relevant:
            continue
        retrieved = {did for did, _ in ranked[:k]}
        per_query[qid] = len(retrieved & relevant) / len(relevant)
    mean = sum(per_query.values()) / len(per_query) if per_query else 0.0
    return per_query, mean


TEACHER = "teacher"
STUDENT_FINAL = "student-final"
STUDENT_BOTTLENECK = "student-bottleneck"
_SIDES = (TEACHER, STUDENT_FINAL, STUDENT_BOTTLENECK)


@dataclass(frozen=True)
class EncoderPairing:
    """Which encoder produces each side: teacher cache or student (final/bottleneck)."""

    query_side: str
    passage_side: str

    def __post_init__(self) -> None:
        for side in (self.query_side, self.passage_side):
            if side not in _SIDES:
                raise ConfigError(f"unknown pairing side {side!r}; expected one of {_SIDES}")
        bottleneck = {self.query_side, self.passage_side} & {STUDENT_BOTTLENECK}
        if bottleneck and self.query_side != self.passage_side:
            raise ConfigError(
                "bottleneck embeddings live in the student's internal space; they can only "
                "be compared against other bottleneck embeddings, so a bottleneck pairing "
                "must use student-bottleneck on both sides"
            )

    def describe(self) -> str:
        return f"query={self.query_side} / passage={self.passage_side}"


PAIRING_Q_ONLY = EncoderPairing(STUDENT_FINAL, TEACHER)
PAIRING_P_ONLY = EncoderPairing(TEACHER, STUDENT_FINAL)
PAIRING_QP = EncoderPairing(STUDENT_FINAL, STUDENT_FINAL)
PAIRING_QP_BOTTLENECK = EncoderPairing(STUDENT_BOTTLENECK, STUDENT_BOTTLENECK)
PAIRING_TEACHER = EncoderPairing(TEACHER, TEACHER)


@dataclass
class EvalReport:
    pairing: str
    dims: int
    query_count: int
    passage_count: int
    seed: int | None
    wall_time_s: float
    ndcg_k: int
    recall_k: int
    ndcg: float
    recall: float
    recall_min_rel_2: float
    per_query_ndcg: dict[str, float]
    per_query_recall: dict[str, float]
    config_hash: str | None = None

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _side_vectors(
    side: str,
    records: Sequence[TextRecord],
    cache: EmbeddingCache | None,
    student: StudentModel | None,
) -> np.ndarray:
    if side == TEACHER:
        if cache is None:
            raise ConfigError("pairing uses a teacher side but no teacher cache was provided")
        return cache.matrix([r.id for r in records])
    if student is None:
        raise ConfigError("pairing uses a student side but no student model was provided")
    space = "final" if side == STUDENT_FINAL else "bottleneck"
    return student.embed_records(records, space=space)


def evaluate_pairing(
    pairing: EncoderPairing,
    queries: Sequence[TextRecord],
    passages: Sequence[TextRecord],
    qrels: Qrels,
    teacher_cache: EmbeddingCache | None = None,
    student: StudentModel | None = None,
    ndcg_k: int = 10,
    recall_k: int = 100,
    seed: int | None = None,
    config_hash: str | None = None,
    run_path: str | Path | None = None,
    run_tag: str = "embdistill",
) -> EvalReport:
    """Encode each side per the pairing, search exhaustively, compute both metrics.

    When run_path is given, the ranking is also written as a TREC run file.
    """
    started = time.perf_counter()
    query_vecs = _side_vectors(pairing.query_side, queries, teacher_cache, student)
    passage_vecs = _side_vectors(pairing.passage_side, passages, teacher_cache, student)
    if query_vecs.shape[1] != passage_vecs.shape[1]:
        raise ConfigError(
            f"pairing {pairing.describe()} produces incompatible dimensions "
            f"({query_vecs.shape[1]} vs {passage_vecs.shape[1]}); the student's final "
            f"dimension must match the teacher cache dimension"
        )
    run = exact_search(
        query_vecs,
        [r.id for r in queries],
        passage_vecs,
        [r.id for r in passages],
        k=max(ndcg_k, recall_k),
    )
    if run_path is not None:
        run.to_file(run_path, tag=run_tag)
    per_ndcg, mean_ndcg = ndcg_at_k(run, qrels, k=ndcg_k)
    per_recall, mean_recall = recall_at_k(run, qrels, k=recall_k, min_rel=1)
    _, mean_recall_2 = recall_at_k(run, qrels, k=recall_k, min_rel=2)
    return EvalReport(
        pairing=pairing.describe(),
        dims=int(query_vecs.shape[1]),
        query_count=len(queries),
        passage_count=len(passages),
        seed=seed,
        wall_time_s=time.perf_counter() - started,
        ndcg_k=ndcg_k,
        recall_k=recall_k,
        ndcg=mean_ndcg,
        recall=mean_recall,
        recall_min_rel_2=mean_recall_2,
        per_query_ndcg=per_ndcg,
        per_query_recall=per_recall,
        config_hash=config_hash,
    )
