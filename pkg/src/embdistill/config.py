"""Declarative experiment configuration: one JSON file drives every subcommand."""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path

from .corpus import SplitSpec
from .encoder import EncoderConfig
from .errors import ConfigError
from .synth import WorldConfig
from .teachers import CacheSource, LiveSource, SimulatedSource, TeacherSpec
from .trainer import TrainingConfig
from .util import canonical_hash

PAIRING_NAMES = ("qp", "q-only", "p-only", "bottleneck", "teacher")


def _parse_source(name: str, data: dict):
    kind = data.get("type")
    if kind == "simulated":
        return SimulatedSource(seed=int(data.get("seed", 0)), mode=data.get("mode", "default"))
    if kind == "cache":
        return CacheSource(path=data["path"])
    if kind == "live":
        return LiveSource(
            endpoint=data["endpoint"],
            model=data["model"],
            api_style=data["api_style"],
            credentials_env=data["credentials_env"],
            batch_limit=int(data.get("batch_limit", 96)),
        )
    raise ConfigError(f"teacher {name!r}: unknown source type {kind!r}")


def _parse_teacher(data: dict) -> TeacherSpec:
    try:
        return TeacherSpec(
            name=data["name"],
            dim=int(data["dim"]),
            max_tokens=int(data["max_tokens"]),
            price_per_million=Decimal(str(data.get("price_per_million", "0"))),
            source=_parse_source(data.get("name", "?"), data.get("source", {})),
        )
    except KeyError as exc:
        raise ConfigError(f"teacher entry is missing field {exc}") from exc


@dataclass
class ExperimentConfig:
    raw: dict
    seed: int
    out_dir: Path
    world: WorldConfig | None
    passages_tsv: Path | None
    queries_tsv: Path | None
    qrels_path: Path | None
    teachers: dict[str, TeacherSpec]
    distill_from: list[str]
    split: SplitSpec
    training: TrainingConfig
    student: EncoderConfig
    pairings: list[str]
    eval_teacher: str | None
    ablate: dict

    def hash(self) -> str:
        return canonical_hash(self.raw)

    def teacher(self, name: str) -> TeacherSpec:
        try:
            return self.teachers[name]
        except KeyError:
            raise ConfigError(f"no teacher named {name!r} in config (have {sorted(self.teachers)})") from None

    # Artifact path conventions under out_dir.
    def cache_path(self, teacher_name: str) -> Path:
        return self.out_dir / f"{teacher_name}.cache"

    def checkpoint_path(self) -> Path:
        return self.out_dir / "student.ckpt"

    def curve_path(self) -> Path:
        return self.out_dir / "curve.csv"

    def report_path(self, pairing_name: str) -> Path:
        return self.out_dir / f"report-{pairing_name}.json"


def load_config(
    path: str | Path,
    seed_override: int | None = None,
    out_dir_override: str | None = None,
) -> ExperimentConfig:
    """Parse, validate, and normalize a config file; overrides change the hash."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if seed_override is not None:
        raw["seed"] = seed_override
    if out_dir_override is not None:
        raw["out_dir"] = out_dir_override
    return parse_config(raw, base_dir=path.parent)


def parse_config(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    base_dir = base_dir or Path.cwd()
    seed = int(raw.get("seed", 0))
    out_dir = Path(raw.get("out_dir", "runs/default"))
    if not out_dir.is_absolute():
        out_dir = base_dir / out_dir

    world = None
    if "world" in raw:
        w = dict(raw["world"])
        w.setdefault("seed", seed)
        if "passage_words" in w:
            w["passage_words"] = tuple(w["passage_words"])
        if "query_words" in w:
            w["query_words"] = tuple(w["query_words"])
        world = WorldConfig(**w)

    corpus = raw.get("corpus", {})

    def resolve_input(key: str) -> Path | None:
        value = corpus.get(key)
        if value is None:
            return None
        p = Path(value)
        if not p.is_absolute():
            p = base_dir / p
        if not p.exists():
            raise ConfigError(f"corpus.{key} path does not exist: {p}")
        return p

    passages_tsv = resolve_input("passages_tsv")
    queries_tsv = resolve_input("queries_tsv")
    qrels_path = resolve_input("qrels")
    if world is None and (passages_tsv is None or queries_tsv is None):
        raise ConfigError("config needs either a 'world' block or corpus.passages_tsv + corpus.queries_tsv")

    teachers: dict[str, TeacherSpec] = {}
    for entry in raw.get("teachers", []):
        spec = _parse_teacher(entry)
        if spec.name in teachers:
            raise ConfigError(f"duplicate teacher name {spec.name!r}")
        teachers[spec.name] = spec
    if not teachers:
        raise ConfigError("config declares no teachers")

    distill_from = list(raw.get("distill_from", list(teachers)[:1]))
    for name in distill_from:
        if name not in teachers:
            raise ConfigError(f"distill_from references unknown teacher {name!r}")
    if not 1 <= len(distill_from) <= 2:
        raise ConfigError("distill_from must list one teacher or two (for concatenation)")

    split_raw = dict(raw.get("split", {}))
    split_raw.setdefault("seed", seed)
    split = SplitSpec(**split_raw)

    training_raw = dict(raw.get("training", {}))
    training_raw.setdefault("seed", seed)
    training = TrainingConfig(**training_raw)

    student_raw = dict(raw.get("student", {}))
    student_raw.setdefault("dropout", training.dropout)
    student = EncoderConfig(**student_raw)

    pairings = list(raw.get("pairings", ["qp"]))
    for name in pairings:
        if name not in PAIRING_NAMES:
            raise ConfigError(f"unknown pairing {name!r}; expected one of {PAIRING_NAMES}")

    eval_teacher = raw.get("eval_teacher")
    if eval_teacher is not None and eval_teacher not in teachers:
        raise ConfigError(f"eval_teacher references unknown teacher {eval_teacher!r}")
    if eval_teacher is None and len(distill_from) == 1:
        eval_teacher = distill_from[0]

    return ExperimentConfig(
        raw=raw,
        seed=seed,
        out_dir=out_dir,
        world=world,
        passages_tsv=passages_tsv,
        queries_tsv=queries_tsv,
        qrels_path=qrels_path,
        teachers=teachers,
        distill_from=distill_from,
        split=split,
        training=training,
        student=student,
        pairings=pairings,
        eval_teacher=eval_teacher,
        ablate=dict(raw.get("ablate", {})),
    )
