"""Command-line operator surface: dedup, harvest, train, eval, ablate, cost."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .autograd import NumericError
from .checkpoint import load_checkpoint
from .config import ExperimentConfig, load_config
from .corpus import dedup_contained, ingest_tsv, write_tsv
from .errors import ConfigError, DataError
from .pipeline import (
    eval_cache,
    harvest_teacher,
    load_caches,
    prepare_data,
    run_ablation,
    run_eval,
    train_student,
)
from .student import StudentModel
from .teachers import LiveSource, estimate_cost
from .tokenizer import count_tokens
from .trainer import write_curve

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _load_config(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("this command needs --config")
    return load_config(args.config, seed_override=args.seed, out_dir_override=args.out_dir)


def cmd_dedup(args) -> int:
    collection = ingest_tsv(args.input, kind="passage")
    deduped = dedup_contained(collection)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_tsv(deduped, out)
    manifest = {k: deduped.manifest[k] for k in
                ("ingested", "removed_prefix", "removed_suffix", "removed_exact", "survivors")}
    Path(str(out) + ".manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(
        f"dedup: {manifest['ingested']} in, {manifest['survivors']} out "
        f"(prefix {manifest['removed_prefix']}, suffix {manifest['removed_suffix']}, "
        f"exact {manifest['removed_exact']})"
    )
    return EXIT_OK


def cmd_cost(args) -> int:
    cfg = _load_config(args)
    spec = cfg.teacher(args.teacher)
    print(f"{spec.name}: {args.tokens} tokens -> ${estimate_cost(spec, args.tokens)}")
    return EXIT_OK


def cmd_harvest(args) -> int:
    cfg = _load_config(args)
    data = prepare_data(cfg)
    spec = cfg.teacher(args.teacher)
    tokens = sum(min(count_tokens(r.text), spec.max_tokens) for r in data.all_records())
    print(f"{spec.name}: {len(data.all_records())} records, ~{tokens} tokens, "
          f"projected spend ${estimate_cost(spec, tokens)}")
    if isinstance(spec.source, LiveSource) and not args.confirm_spend:
        print("live teacher: dry run only (pass --confirm-spend to call the API)")
        return EXIT_OK
    report = harvest_teacher(cfg, args.teacher, data)
    print(
        f"harvest: {report.embedded} new, {report.already_cached} cached, "
        f"{len(report.failed_ids)} failed, {len(report.truncated_ids)} truncated; "
        f"{report.total_tokens} tokens -> {report.estimated_cost}"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    data = prepare_data(cfg)
    caches = load_caches(cfg, cfg.distill_from)
    student = None
    if args.resume:
        _, _, manifest = load_checkpoint(args.resume)
        previous = manifest.get("config_hash")
        if previous != cfg.hash():
            raise ConfigError(
                f"refusing to resume: checkpoint was trained with config hash {previous}, "
                f"current config hash is {cfg.hash()}"
            )
        student = StudentModel.load(args.resume)
    student, result = train_student(cfg, data, caches=caches, student=student)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    student.save(
        cfg.checkpoint_path(),
        manifest_extra={
            "config_hash": cfg.hash(),
            "best_step": result.best.step,
            "best_dev_loss": result.best.dev_loss,
            "aborted": result.aborted,
        },
    )
    write_curve(cfg.curve_path(), result.curve)
    status = "aborted on non-finite loss; kept" if result.aborted else "selected"
    print(
        f"train: {result.steps} steps, {status} checkpoint from step {result.best.step} "
        f"(dev loss {result.best.dev_loss:.6f}) -> {cfg.checkpoint_path()}"
    )
    if result.aborted:
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    data = prepare_data(cfg)
    pairing_names = [args.pairing] if args.pairing else cfg.pairings
    student = None
    if any(name != "teacher" for name in pairing_names):
        ckpt = cfg.checkpoint_path()
        if not ckpt.exists():
            raise DataError(f"no student checkpoint at {ckpt}; run train first")
        student = StudentModel.load(ckpt)
    cache = eval_cache(cfg, load_caches(cfg, cfg.distill_from))
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    for name in pairing_names:
        run_path = cfg.out_dir / f"run-{name}.trec" if args.run_file else None
        report = run_eval(cfg, data, name, student=student, teacher_cache=cache, run_path=run_path)
        out_path = cfg.report_path(name)
        out_path.write_text(
            json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        print(f"eval [{name}]: nDCG@{report.ndcg_k} {report.ndcg:.4f}, "
              f"R@{report.recall_k} {report.recall:.4f} -> {out_path}")
    return EXIT_OK


def _render_table(cells) -> str:
    rows = [("setting", "nDCG@10", "R@100", "config", "status")]
    for cell in cells:
        rows.append(
            (
                cell.label,
                "" if cell.ndcg is None else f"{cell.ndcg:.4f}",
                "" if cell.recall is None else f"{cell.recall:.4f}",
                cell.config_hash,
                cell.error or "ok",
            )
        )
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(val.ljust(widths[i]) for i, val in enumerate(row)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    cells = run_ablation(cfg, args.study)
    table = _render_table(cells)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    text_path = cfg.out_dir / f"ablate-{args.study}.txt"
    text_path.write_text(table + "\n", encoding="utf-8")
    csv_path = cfg.out_dir / f"ablate-{args.study}.csv"
    with csv_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["setting", "ndcg@10", "r@100", "config", "status"])
        for cell in cells:
            writer.writerow([
                cell.label,
                "" if cell.ndcg is None else f"{cell.ndcg:.6f}",
                "" if cell.recall is None else f"{cell.recall:.6f}",
                cell.config_hash,
                cell.error or "ok",
            ])
    print(table)
    print(f"wrote {text_path} and {csv_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embdistill",
        description="Distill black-box embedding teachers into a local student and "
        "measure retrieval fidelity.",
    )
    parser.add_argument("--config", help="experiment config (JSON)")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out-dir", default=None, help="override the config out_dir")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dedup", help="remove passages contained in other passages")
    p.add_argument("input", help="passages TSV (id<TAB>text)")
    p.add_argument("output", help="deduplicated TSV to write")
    p.set_defaults(func=cmd_dedup)

    p = sub.add_parser("harvest", help="collect teacher embeddings into the cache")
    p.add_argument("--teacher", required=True)
    p.add_argument("--confirm-spend", action="store_true",
                   help="actually spend money on a live API teacher")
    p.set_defaults(func=cmd_harvest)

    p = sub.add_parser("train", help="distill the cached teacher embeddings into a student")
    p.add_argument("--resume", help="checkpoint to continue from (config hash must match)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="retrieval evaluation for one or all configured pairings")
    p.add_argument("--pairing", choices=["qp", "q-only", "p-only", "bottleneck", "teacher"])
    p.add_argument("--run-file", action="store_true",
                   help="also write the ranking as a TREC run file (run-<pairing>.trec)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run a study matrix and emit a comparison table")
    p.add_argument("--study", required=True, choices=["data-size", "loss", "bottleneck", "concat"])
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("cost", help="estimate teacher spend for a token count")
    p.add_argument("--teacher", required=True)
    p.add_argument("--tokens", type=int, required=True)
    p.set_defaults(func=cmd_cost)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
