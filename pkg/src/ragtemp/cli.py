"""Command-line entry point: ``ragtemp <command> [options]``.

Exit status: 0 on success, 1 on a fatal configuration or dataset error,
2 when a run completed but some work items failed.
"""
from __future__ import annotations

import argparse
import collections
import json
import logging
import sys
from pathlib import Path

from .config import load_config
from .errors import RagTempError
from .pipeline import FAILED, PENDING, Workspace, expand_conditions, resume, run_benchmark

logger = logging.getLogger("ragtemp")

EXIT_OK, EXIT_FATAL, EXIT_FAILURES = 0, 1, 2


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="YAML or JSON run configuration")
    p.add_argument("--mock", action="store_true", help="use the offline mock model for every backend")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--strict", action="store_true", help="reject the whole dataset on any malformed record")
    p.add_argument("--concurrency", type=int, help="worker pool size")
    p.add_argument("--dataset", help="dataset path (overrides the config)")
    p.add_argument("--per-cell", type=int, help="samples per (fact count, question type) cell")
    p.add_argument("--seed", type=int, help="sampling and perturbation seed")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="ragtemp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("sample", parents=[common], help="select the stratified sample")
    sub.add_parser("perturb", parents=[common], help="write perturbed contexts")
    sub.add_parser("refprep", parents=[common], help="generate sentence-form references")
    run = sub.add_parser("run", parents=[common], help="generate and score every work item")
    run.add_argument("--resume", type=Path, metavar="MANIFEST", help="continue an earlier run")
    run.add_argument("--dry-run", action="store_true", help="print the condition matrix size and exit")
    run.add_argument("--stop-after", type=int, metavar="N", help="stop after N work items (leaves the rest pending)")
    sub.add_parser("score", parents=[common], help="write scores.csv from the run records")
    sub.add_parser("stats", parents=[common], help="write run and condition statistics")
    sub.add_parser("report", parents=[common], help="draw figures and the artifact digest table")
    sub.add_parser("fragile", parents=[common], help="list the samples most hurt by each perturbation")
    toy = sub.add_parser("toy", help="write a synthetic HotpotQA-format dataset")
    toy.add_argument("output", type=Path)
    toy.add_argument("--per-cell", type=int, default=4)
    toy.add_argument("--seed", type=int, default=0)
    return parser


def _config(args):
    return load_config(
        args.config,
        mock=True if args.mock else None,
        strict=True if args.strict else None,
        out_dir=args.out,
        concurrency=args.concurrency,
        dataset=args.dataset,
        per_cell=args.per_cell,
        seed=args.seed,
    )


def _cmd_run(args, config) -> int:
    if args.dry_run:
        ws = Workspace(config)
        samples = ws.select_samples() if config.dataset else ()
        groups, items = expand_conditions(config, samples)
        print(f"condition groups: {groups}")
        print(f"models: {len(config.models)}  temperatures: {len(config.temperatures)}  "
              f"perturbations: {len(config.perturbations)}  question types: {len(config.question_types)}")
        if config.dataset:
            print(f"samples: {len(samples)}  runs per condition: {config.runs_per_condition}  "
                  f"work items: {len(items)}")
        return EXIT_OK
    if args.resume:
        manifest = resume(args.resume, config, stop_after=args.stop_after)
    else:
        manifest = run_benchmark(config, stop_after=args.stop_after)
    counts = collections.Counter(manifest.statuses.values())
    print(f"manifest: {manifest.path}")
    print("  ".join(f"{s}: {counts.get(s, 0)}" for s in ("done", FAILED, PENDING)))
    print(f"backend calls: {manifest.fresh_calls}")
    return EXIT_FAILURES if counts.get(FAILED) else EXIT_OK


def _dispatch(args) -> int:
    if args.command == "toy":
        from .toy import make_toy_records

        records = make_toy_records(per_cell=args.per_cell, seed=args.seed)
        args.output.parent.mkdir(parents=True, exist_ok=True)
        args.output.write_text(json.dumps(records, indent=1) + "\n", encoding="utf-8")
        print(f"wrote {len(records)} records to {args.output}")
        return EXIT_OK

    config = _config(args)
    if args.command == "run":
        return _cmd_run(args, config)
    ws = Workspace(config)
    if args.command == "sample":
        samples = ws.samples(refresh=True)
        cells = collections.Counter((s.fact_count, s.question_type) for s in samples)
        print(f"{len(samples)} samples -> {ws.sample_path}")
        for (n, qt), c in sorted(cells.items()):
            print(f"  {n} facts, {qt}: {c}")
    elif args.command == "perturb":
        table = ws.perturbations(refresh=True)
        print(f"{len(table)} perturbed samples -> {ws.perturbed_path}")
    elif args.command == "refprep":
        refs = ws.references(refresh=True)
        sources = collections.Counter(r.source for r in refs.values())
        print(f"{len(refs)} references -> {ws.references_path} ({dict(sorted(sources.items()))})")
    elif args.command == "score":
        print(f"{len(ws.write_scores())} score rows -> {ws.scores_path}")
    elif args.command == "stats":
        run_stats, cond_stats = ws.write_stats()
        print(f"{sum(map(len, run_stats.values()))} run rows -> {ws.run_stats_path}")
        print(f"{sum(map(len, cond_stats.values()))} condition rows -> {ws.condition_stats_path}")
    elif args.command == "report":
        run_stats, cond_stats = ws.stats()
        for path in ws.write_figures(run_stats, cond_stats):
            print(path)
        from .report import write_artifact_manifest

        write_artifact_manifest(ws.artifact_paths(), ws.artifacts_path, root=ws.out)
        print(ws.artifacts_path)
    elif args.command == "fragile":
        run_stats, _ = ws.stats()
        print(f"{ws.write_fragile(run_stats)} rows -> {ws.fragile_path}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * getattr(args, "verbose", 0)
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except FileNotFoundError as exc:
        print(f"ragtemp: error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_FATAL
    except RagTempError as exc:
        print(f"ragtemp: error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
