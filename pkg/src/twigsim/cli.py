"""Command-line entry points for the pipeline stages.

Subcommands: parse, featurize, sweep, train-twig, finetune-twig, evaluate,
report. Experiment configuration files are JSON or TOML with the keys
``kgs`` (name -> train/valid/test paths), ``grid`` (hyperparameter value
lists), ``plan`` (config split plan) and ``twig`` (simulator settings).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from twigsim import features, harness, kg as kgmod, simulator
from twigsim.harness import (GridSpec, SplitPlan, TwigSettings, enumerate_grid,
                             make_split)


def _load_config(path: str | Path) -> dict:
    path = Path(path)
    if path.suffix.lower() == ".toml":
        try:
            import tomllib  # py311+
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _load_kgs(doc: dict) -> dict[str, kgmod.KnowledgeGraph]:
    kgs = {}
    for name, paths in doc["kgs"].items():
        kgs[name] = kgmod.parse_kg(paths["train"], paths["valid"],
                                   paths["test"], name=name)
    return kgs


def _grid_spec(doc: dict) -> GridSpec:
    return GridSpec.from_dict(doc.get("grid", {}))


def _plan(doc: dict) -> SplitPlan:
    return SplitPlan.from_dict(doc["plan"])


def _settings(doc: dict) -> TwigSettings:
    return TwigSettings.from_dict(doc.get("twig", {}))


def cmd_parse(args) -> int:
    graph = kgmod.parse_kg(args.train, args.valid, args.test, name=args.name)
    kgmod.dump_dictionaries(graph, args.dictionaries)
    if args.splits_out:
        kgmod.write_kg_tsv(graph, args.splits_out)
    print(f"{graph.name}: {graph.num_entities} entities, "
          f"{graph.num_relations} relations, "
          f"splits {len(graph.train)}/{len(graph.valid)}/{len(graph.test)}")
    return 0


def cmd_featurize(args) -> int:
    graph = kgmod.parse_kg(args.train, args.valid, args.test, name=args.name)
    table = features.featurize_kg(graph, args.split)
    features.write_feature_csv(table, args.out)
    print(f"wrote {len(table)} feature rows to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    doc = _load_config(args.config)
    kgs = _load_kgs(doc)
    spec = _grid_spec(doc)
    summary = harness.generate_ground_truth(
        kgs, spec, args.rundir, workers=args.workers,
        save_models=args.save_models)
    print(f"sweep: {len(summary.completed)} completed, "
          f"{len(summary.skipped)} skipped, {len(summary.failed)} failed")
    for cell, error in summary.failed:
        print(f"  FAILED {'/'.join(map(str, cell))}: {error}", file=sys.stderr)
    return 1 if summary.failed else 0


def _training_batches(doc, kgs, spec, plan, rundir):
    grid = enumerate_grid(spec)
    split = make_split(grid, plan)
    names = sorted(kgs)
    if plan.mode == "holdout-kg":
        names = [n for n in names if n != plan.holdout_kg]
    tables = harness.feature_tables(kgs)
    norm = harness.fit_norm_stats(tables, names)
    batches = []
    for name in names:
        batches.extend(harness.build_batches(rundir, kgs[name], tables[name],
                                             split.train, spec.replicate_seeds,
                                             norm))
    return batches, norm, split, tables


def cmd_train_twig(args) -> int:
    doc = _load_config(args.config)
    kgs = _load_kgs(doc)
    spec = _grid_spec(doc)
    plan = _plan(doc)
    settings = _settings(doc)
    batches, norm, _, _ = _training_batches(doc, kgs, spec, plan, args.rundir)
    model = simulator.train_twig(
        batches, norm, phase1_epochs=settings.phase1_epochs,
        phase2_epochs=settings.phase2_epochs, lr=settings.lr,
        seed=settings.seed, mse_weight=settings.mse_weight)
    simulator.save_twig(model, args.out)
    print(f"trained on {len(batches)} batches; checkpoint at {args.out}")
    return 0


def cmd_finetune_twig(args) -> int:
    doc = _load_config(args.config)
    kgs = _load_kgs(doc)
    spec = _grid_spec(doc)
    plan = _plan(doc)
    settings = _settings(doc)
    if plan.mode != "holdout-kg":
        print("finetune-twig requires a holdout-kg plan", file=sys.stderr)
        return 2
    model = simulator.load_twig(args.checkpoint)
    grid = enumerate_grid(spec)
    split = make_split(grid, plan)
    if not split.finetune:
        print("plan has shot_fraction 0; nothing to finetune on", file=sys.stderr)
        return 2
    holdout = kgs[plan.holdout_kg]
    table = features.featurize_kg(holdout, "test")
    batches = harness.build_batches(args.rundir, holdout, table,
                                    split.finetune, spec.replicate_seeds,
                                    model.norm)
    tuned = simulator.finetune_twig(model, batches,
                                    epochs=settings.finetune_epochs,
                                    lr=settings.finetune_lr,
                                    seed=settings.seed)
    simulator.save_twig(tuned, args.out)
    print(f"finetuned on {len(batches)} batches; checkpoint at {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    doc = _load_config(args.config)
    kgs = _load_kgs(doc)
    spec = _grid_spec(doc)
    plan = _plan(doc)
    model = simulator.load_twig(args.checkpoint)
    report = harness.evaluate_model(model, kgs, spec, plan, args.rundir)
    report.save(args.out)
    for name in sorted(report.per_kg_r2):
        print(f"{name}\tR^2 = {report.per_kg_r2[name]:.4f}")
    print(f"report written to {args.out}")
    return 0


def cmd_report(args) -> int:
    status = 0
    for path in args.reports:
        report = harness.ExperimentReport.load(path)
        try:
            report.verify()
            note = "ok"
        except ValueError as exc:
            note = f"INTEGRITY FAILURE: {exc}"
            status = 1
        print(f"{path} [{report.mode}] ({note})")
        for name in sorted(report.per_kg_r2):
            n_pairs = len(report.pairs[name])
            print(f"  {name:<20} R^2 = {report.per_kg_r2[name]: .4f} "
                  f"over {n_pairs} configs")
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twigsim",
        description="Simulate link-predictor rank outputs from graph "
                    "structure and hyperparameters.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="parse a KG and dump its dictionaries")
    p.add_argument("--train", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--name", default="kg")
    p.add_argument("--dictionaries", required=True,
                   help="output JSON path for the label dictionaries")
    p.add_argument("--splits-out", default=None,
                   help="optional directory for a TSV round-trip dump")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("featurize", help="export per-query structural features")
    p.add_argument("--train", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--name", default="kg")
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("sweep", help="generate ground-truth ranks over a grid")
    p.add_argument("--config", required=True)
    p.add_argument("--rundir", required=True)
    p.add_argument("--workers", type=int, default=None,
                   help=f"worker pool size (default ${harness.WORKERS_ENV} or 1)")
    p.add_argument("--save-models", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train-twig", help="train the simulator on a config split")
    p.add_argument("--config", required=True)
    p.add_argument("--rundir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_twig)

    p = sub.add_parser("finetune-twig",
                       help="finetune a checkpoint on a held-out KG's shot set")
    p.add_argument("--config", required=True)
    p.add_argument("--rundir", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune_twig)

    p = sub.add_parser("evaluate",
                       help="predicted-vs-true MRR pairs and R^2 per KG")
    p.add_argument("--config", required=True)
    p.add_argument("--rundir", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="verify and pretty-print report files")
    p.add_argument("reports", nargs="+")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
