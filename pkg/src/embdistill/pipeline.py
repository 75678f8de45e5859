"""End-to-end experiment driver shared by the CLI and the ablation studies."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Callable, Sequence

from .config import ExperimentConfig
from .corpus import Collection, ingest_tsv, split_and_sample
from .encoder import EncoderParams, ProjectionParams
from .errors import ConfigError, DataError
from .evaluation import (
    PAIRING_P_ONLY,
    PAIRING_Q_ONLY,
    PAIRING_QP,
    PAIRING_QP_BOTTLENECK,
    PAIRING_TEACHER,
    EvalReport,
    Qrels,
    evaluate_pairing,
)
from .student import StudentModel
from .synth import SyntheticWorld, build_synthetic_dataset
from .teachers import EmbeddingCache, HarvestReport, concat_cache, harvest, provider_for
from .tokenizer import build_vocab
from .trainer import TrainResult, make_targets, train

PAIRINGS = {
    "qp": PAIRING_QP,
    "q-only": PAIRING_Q_ONLY,
    "p-only": PAIRING_P_ONLY,
    "bottleneck": PAIRING_QP_BOTTLENECK,
    "teacher": PAIRING_TEACHER,
}


@dataclass
class PreparedData:
    passages: Collection
    queries: Collection
    qrels: Qrels | None
    world: SyntheticWorld | None
    train: Collection
    dev: Collection

    def all_records(self):
        return self.passages.records + self.queries.records

    def eval_queries(self):
        """Held-out queries: the dev carve-out, never part of the training pairs."""
        return self.dev.of_kind("query")


def prepare_data(cfg: ExperimentConfig) -> PreparedData:
    if cfg.world is not None:
        ds = build_synthetic_dataset(cfg.world)
        passages, queries, qrels, world = ds.passages, ds.queries, ds.qrels, ds.world
    else:
        passages = ingest_tsv(cfg.passages_tsv, kind="passage")
        queries = ingest_tsv(cfg.queries_tsv, kind="query")
        qrels = Qrels.from_file(cfg.qrels_path) if cfg.qrels_path else None
        world = None
    combined = Collection(passages.records + queries.records)
    split = split_and_sample(combined, cfg.split)
    return PreparedData(
        passages=passages,
        queries=queries,
        qrels=qrels,
        world=world,
        train=split["train"],
        dev=split["dev"],
    )


def harvest_teacher(
    cfg: ExperimentConfig,
    teacher_name: str,
    data: PreparedData,
    transport=None,
    api_key: str | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> HarvestReport:
    spec = cfg.teacher(teacher_name)
    provider = provider_for(spec, world=data.world, transport=transport, api_key=api_key)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    cache_path = cfg.cache_path(teacher_name)
    return harvest(
        spec,
        data.all_records(),
        cache_path,
        provider=provider,
        sleep=sleep,
        manifest_path=str(cache_path) + ".manifest.json",
        manifest_extra={"config_hash": cfg.hash()},
    )


def load_caches(cfg: ExperimentConfig, names: Sequence[str]) -> list[EmbeddingCache]:
    caches = []
    for name in names:
        path = cfg.cache_path(name)
        if not path.exists():
            raise DataError(f"no cache for teacher {name!r} at {path}; run harvest first")
        caches.append(EmbeddingCache.load(path))
    return caches


def init_student(cfg: ExperimentConfig, data: PreparedData) -> StudentModel:
    """Vocabulary from the training split; teacher dim from the distillation targets."""
    tokenizer = build_vocab(data.train.records, cfg.student.vocab_size, max_len=cfg.student.max_len)
    encoder_cfg = replace(cfg.student, vocab_size=tokenizer.vocab_size)
    encoder = EncoderParams.init(encoder_cfg, seed=cfg.seed)
    d_teacher = sum(cfg.teacher(name).dim for name in cfg.distill_from)
    projection = ProjectionParams.init(d_teacher, cfg.student.d_model, seed=cfg.seed + 1)
    return StudentModel(tokenizer, encoder, projection)


def train_student(
    cfg: ExperimentConfig,
    data: PreparedData,
    caches: Sequence[EmbeddingCache] | None = None,
    student: StudentModel | None = None,
) -> tuple[StudentModel, TrainResult]:
    if caches is None:
        caches = load_caches(cfg, cfg.distill_from)
    if student is None:
        student = init_student(cfg, data)
    train_pairs = make_targets(data.train.records, caches)
    dev_pairs = make_targets(data.dev.records, caches)
    result = train(student, cfg.training, train_pairs, dev_pairs)
    return student, result


def eval_cache(cfg: ExperimentConfig, caches: Sequence[EmbeddingCache]) -> EmbeddingCache:
    if len(caches) == 1:
        return caches[0]
    return concat_cache(caches[0], caches[1])


def run_eval(
    cfg: ExperimentConfig,
    data: PreparedData,
    pairing_name: str,
    student: StudentModel | None = None,
    teacher_cache: EmbeddingCache | None = None,
    run_path=None,
) -> EvalReport:
    """Evaluate one pairing on held-out queries against the full passage corpus."""
    try:
        pairing = PAIRINGS[pairing_name]
    except KeyError:
        raise ConfigError(f"unknown pairing {pairing_name!r}; expected one of {sorted(PAIRINGS)}") from None
    if data.qrels is None:
        raise DataError("evaluation requires qrels (from the world or corpus.qrels)")
    queries = data.eval_queries()
    if not queries:
        raise DataError("no held-out queries to evaluate; increase split.dev_queries")
    return evaluate_pairing(
        pairing,
        queries,
        data.passages.records,
        data.qrels,
        teacher_cache=teacher_cache,
        student=student,
        seed=cfg.seed,
        config_hash=cfg.hash(),
        run_path=run_path,
        run_tag=f"embdistill-{pairing_name}",
    )


# ---------------------------------------------------------------------------
# Ablation studies
# ---------------------------------------------------------------------------


@dataclass
class AblationCell:
    label: str
    config_hash: str
    ndcg: float | None = None
    recall: float | None = None
    error: str | None = None


def _with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    from .config import parse_config

    raw = dict(cfg.raw)
    raw["seed"] = seed
    raw["out_dir"] = str(cfg.out_dir)
    return parse_config(raw)


def _steal_once(cfg: ExperimentConfig, pairing_names: Sequence[str]) -> dict[str, EvalReport]:
    data = prepare_data(cfg)
    caches = []
    records = data.all_records()
    for name in cfg.distill_from:
        spec = cfg.teacher(name)
        provider = provider_for(spec, world=data.world)
        vectors = dict(zip((r.id for r in records), provider.embed_records(records)))
        caches.append(EmbeddingCache(spec.dim, vectors))
    student = None
    if any(name != "teacher" for name in pairing_names):
        student, _ = train_student(cfg, data, caches=caches)
    cache = eval_cache(cfg, caches)
    return {
        name: run_eval(cfg, data, name, student=student, teacher_cache=cache)
        for name in pairing_names
    }


def run_ablation(cfg: ExperimentConfig, study: str, seeds: Sequence[int] | None = None) -> list[AblationCell]:
    """Run a study matrix; failed cells are marked and the rest complete."""
    if seeds is None:
        seeds = [cfg.seed + i for i in range(int(cfg.ablate.get("seeds", 3)))]
    runners = {
        "data-size": _ablate_data_size,
        "loss": _ablate_loss,
        "bottleneck": _ablate_bottleneck,
        "concat": _ablate_concat,
    }
    try:
        runner = runners[study]
    except KeyError:
        raise ConfigError(f"unknown study {study!r}; expected one of {sorted(runners)}") from None
    return runner(cfg, list(seeds))


def _mean_cells(label: str, cfg_hash: str, reports: list[EvalReport], error: str | None) -> AblationCell:
    if error is not None or not reports:
        return AblationCell(label=label, config_hash=cfg_hash, error=error or "no runs")
    return AblationCell(
        label=label,
        config_hash=cfg_hash,
        ndcg=sum(r.ndcg for r in reports) / len(reports),
        recall=sum(r.recall for r in reports) / len(reports),
    )


def _run_variant(base: ExperimentConfig, seeds: Sequence[int], label: str,
                 mutate: Callable[[dict], None], pairing: str = "qp") -> AblationCell:
    from .config import parse_config

    raw = dict(base.raw)
    mutate(raw)
    raw["out_dir"] = str(base.out_dir)
    reports: list[EvalReport] = []
    error = None
    cfg_hash = ""
    for seed in seeds:
        cell_raw = dict(raw)
        cell_raw["seed"] = seed
        try:
            cfg = parse_config(cell_raw)
            cfg_hash = cfg.hash()
            reports.append(_steal_once(cfg, [pairing])[pairing])
        except Exception as exc:  # the study table reports per-cell failures
            error = f"{type(exc).__name__}: {exc}"
            break
    return _mean_cells(label, cfg_hash, reports, error)


def _ablate_data_size(cfg: ExperimentConfig, seeds: list[int]) -> list[AblationCell]:
    sizes = cfg.ablate.get("data_sizes", [1000, 4000, 20000])
    cells = []
    for size in sizes:
        def mutate(raw: dict, size=size) -> None:
            raw.setdefault("split", {})
            raw["split"] = dict(raw["split"], train_sample=int(size))

        cells.append(_run_variant(cfg, seeds, label=f"{size} pairs", mutate=mutate))
    return cells


def _ablate_loss(cfg: ExperimentConfig, seeds: list[int]) -> list[AblationCell]:
    variants = [("cosine", None), ("contrastive", 0.01), ("contrastive", 0.05)]
    cells = []
    for loss, tau in variants:
        label = loss if tau is None else f"{loss} (tau={tau})"

        def mutate(raw: dict, loss=loss, tau=tau) -> None:
            training = dict(raw.get("training", {}), loss=loss)
            if tau is not None:
                training["tau"] = tau
            raw["training"] = training

        cells.append(_run_variant(cfg, seeds, label=label, mutate=mutate))
    return cells


def _ablate_bottleneck(cfg: ExperimentConfig, seeds: list[int]) -> list[AblationCell]:
    reports: dict[str, list[EvalReport]] = {"final": [], "bottleneck": []}
    error = None
    cfg_hash = ""
    for seed in seeds:
        try:
            run_cfg = _with_seed(cfg, seed)
            cfg_hash = run_cfg.hash()
            out = _steal_once(run_cfg, ["qp", "bottleneck"])
            reports["final"].append(out["qp"])
            reports["bottleneck"].append(out["bottleneck"])
        except Exception as exc:
            error = f"{type(exc).__name__}: {exc}"
            break
    cells = [
        _mean_cells("final (q&p)", cfg_hash, reports["final"], error),
        _mean_cells("bottleneck (q&p)", cfg_hash, reports["bottleneck"], error),
    ]
    if cells[0].ndcg is not None and cells[1].ndcg is not None:
        gap = abs(cells[0].ndcg - cells[1].ndcg)
        cells.append(AblationCell(label="|final - bottleneck|", config_hash=cfg_hash, ndcg=gap))
    return cells


def _ablate_concat(cfg: ExperimentConfig, seeds: list[int]) -> list[AblationCell]:
    if len(cfg.teachers) < 2:
        raise ConfigError("the concat study needs two teachers in the config")
    names = list(cfg.teachers)[:2]
    cells = []
    for label, teacher_list in [(names[0], [names[0]]), (names[1], [names[1]]), ("concat", names)]:
        for pairing, suffix in (("teacher", "teacher/teacher"), ("qp", "student q&p")):
            def mutate(raw: dict, teacher_list=teacher_list) -> None:
                raw["distill_from"] = list(teacher_list)

            cells.append(
                _run_variant(cfg, seeds, label=f"{label} [{suffix}]", mutate=mutate, pairing=pairing)
            )
    return cells
