"""Experiment orchestration: grids, ground-truth sweeps, splits, reports.

The full study proceeds in stages. A hyperparameter grid is enumerated and
the link predictor is trained and evaluated once per (KG, config, replicate
seed) cell, persisting per-query ranks and MRR. Config splits are then drawn,
rank batches are assembled by joining feature tables with stored ranks, the
simulator is trained (and optionally finetuned on a held-out KG), and
per-config predicted MRR is compared against ground truth with R-squared.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from twigsim.features import FeatureTable, build_stats, featurize_kg
from twigsim.kg import KnowledgeGraph
from twigsim import kge, ranking
from twigsim.kge import HyperparamConfig
from twigsim.simulator import (NormStats, RankBatch, TwigModel, encode_block,
                               finetune_twig, predict_mrr, save_twig,
                               train_twig)

WORKERS_ENV = "TWIGSIM_WORKERS"

MODES = ("unseen-hyperparameters", "holdout-kg")


@dataclass(frozen=True)
class GridSpec:
    """Value lists for every hyperparameter, plus replicate seeds.

    Defaults are the full 1215-config grid; narrow the lists for desk-scale
    studies. Margin values apply to MarginRanking configs only.
    """

    negative_samplers: tuple[str, ...] = ("Basic", "Bernoulli", "PseudoTyped")
    negatives_per_positive: tuple[int, ...] = (5, 25, 125)
    losses: tuple[str, ...] = ("MarginRanking", "BCE", "CrossEntropy")
    margins: tuple[float, ...] = (0.5, 1.0, 2.0)
    learning_rates: tuple[float, ...] = (1e-2, 1e-4, 1e-6)
    dimensions: tuple[int, ...] = (50, 100, 250)
    reg_coefficients: tuple[float, ...] = (1e-2, 1e-4, 1e-6)
    epochs: int = 100
    replicate_seeds: tuple[int, ...] = (0, 1, 2, 3)

    def __post_init__(self):
        for name in ("negative_samplers", "negatives_per_positive", "losses",
                     "learning_rates", "dimensions", "reg_coefficients"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be non-empty")
        if "MarginRanking" in self.losses and not self.margins:
            raise ValueError("margins must be non-empty for MarginRanking")
        if not self.replicate_seeds:
            raise ValueError("replicate_seeds must be non-empty")

    def to_dict(self) -> dict:
        return {
            "negative_samplers": list(self.negative_samplers),
            "negatives_per_positive": list(self.negatives_per_positive),
            "losses": list(self.losses),
            "margins": list(self.margins),
            "learning_rates": list(self.learning_rates),
            "dimensions": list(self.dimensions),
            "reg_coefficients": list(self.reg_coefficients),
            "epochs": self.epochs,
            "replicate_seeds": list(self.replicate_seeds),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GridSpec":
        kwargs = {}
        for key, value in doc.items():
            if key in ("epochs",):
                kwargs[key] = int(value)
            else:
                kwargs[key] = tuple(value)
        return cls(**kwargs)

    def grid_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]


def enumerate_grid(spec: GridSpec) -> tuple[HyperparamConfig, ...]:
    """Deterministic lexicographic enumeration; margin only where it applies."""
    configs = []
    for sampler in spec.negative_samplers:
        for npp in spec.negatives_per_positive:
            for loss in spec.losses:
                margins = spec.margins if loss == "MarginRanking" else (None,)
                for margin in margins:
                    for lr in spec.learning_rates:
                        for dim in spec.dimensions:
                            for reg in spec.reg_coefficients:
                                configs.append(HyperparamConfig(
                                    negative_sampler=sampler,
                                    negatives_per_positive=npp,
                                    loss=loss,
                                    margin=margin,
                                    learning_rate=lr,
                                    dimension=dim,
                                    reg_coefficient=reg,
                                    epochs=spec.epochs,
                                ))
    return tuple(configs)


@dataclass(frozen=True)
class SplitPlan:
    """How configs are partitioned for one simulator experiment."""

    mode: str
    test_fraction: float = 0.10
    holdout_kg: str | None = None
    shot_fraction: float = 0.0
    split_seed: int = 0
    include_finetune_in_test: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("test_fraction", "shot_fraction"):
            value = getattr(self, name)
            if not (0.0 <= value < 1.0):
                raise ValueError(f"{name} must be in [0, 1), got {value}")
        if self.mode == "holdout-kg" and not self.holdout_kg:
            raise ValueError("holdout-kg mode requires holdout_kg")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "test_fraction": self.test_fraction,
            "holdout_kg": self.holdout_kg,
            "shot_fraction": self.shot_fraction,
            "split_seed": self.split_seed,
            "include_finetune_in_test": self.include_finetune_in_test,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SplitPlan":
        return cls(**doc)


@dataclass(frozen=True)
class ConfigSplit:
    """Result of make_split; tuples of configs in grid order."""

    train: tuple[HyperparamConfig, ...]
    test: tuple[HyperparamConfig, ...]
    finetune: tuple[HyperparamConfig, ...] | None
    holdout_test: tuple[HyperparamConfig, ...] | None


def _fraction_count(n: int, fraction: float) -> int:
    if fraction == 0.0:
        return 0
    return max(1, round(n * fraction))


def make_split(grid: Sequence[HyperparamConfig],
               plan: SplitPlan) -> ConfigSplit:
    """Deterministic config partition; pure function of (grid, plan).

    In unseen-hyperparameters mode the same held-out config set applies to
    every KG. In holdout-kg mode the held-out KG additionally contributes a
    finetune set (empty for 0-shot) and is tested on all configs, or on all
    configs minus the finetune set when one exists.
    """
    n = len(grid)
    rng = np.random.default_rng(plan.split_seed)
    perm = rng.permutation(n)
    n_test = _fraction_count(n, plan.test_fraction)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    finetune = None
    holdout_test = None
    if plan.mode == "holdout-kg":
        n_shot = _fraction_count(n, plan.shot_fraction)
        shot_perm = rng.permutation(n)
        finetune_idx = np.sort(shot_perm[:n_shot])
        finetune = tuple(grid[int(i)] for i in finetune_idx)
        if n_shot and not plan.include_finetune_in_test:
            excluded = set(int(i) for i in finetune_idx)
            holdout_test = tuple(grid[i] for i in range(n) if i not in excluded)
        else:
            holdout_test = tuple(grid)
    return ConfigSplit(
        train=tuple(grid[int(i)] for i in train_idx),
        test=tuple(grid[int(i)] for i in test_idx),
        finetune=finetune,
        holdout_test=holdout_test,
    )


# --------------------------------------------------------------------------
# Ground-truth generation
# --------------------------------------------------------------------------

@dataclass
class SweepSummary:
    completed: list[tuple[str, str, int]] = field(default_factory=list)
    skipped: list[tuple[str, str, int]] = field(default_factory=list)
    failed: list[tuple[tuple[str, str, int], str]] = field(default_factory=list)


_WORKER_KGS: dict[str, KnowledgeGraph] = {}


def _worker_init(kgs: dict[str, KnowledgeGraph]) -> None:
    _WORKER_KGS.clear()
    _WORKER_KGS.update(kgs)


def _run_cell(args):
    kg_name, config_doc, seed, rundir, save_model = args
    config = HyperparamConfig.from_dict(config_doc)
    cell = (kg_name, config.config_hash(), seed)
    try:
        kg = _WORKER_KGS[kg_name]
        model = kge.train(kg, config, seed)
        result = ranking.evaluate(model, kg, config, seed)
        ranking.write_run_result(result, rundir)
        if save_model:
            base = Path(rundir) / kg_name / config.config_hash()
            kge.save_complex(model, config, base / f"{seed}.model")
        return cell, result.mrr, None
    except Exception as exc:  # per-run failures must not kill the sweep
        return cell, None, f"{type(exc).__name__}: {exc}"


def ground_truth_available(rundir: str | Path, kg_name: str,
                           config: HyperparamConfig, seed: int) -> bool:
    csv_path, json_path = ranking.run_result_paths(rundir, kg_name, config, seed)
    return csv_path.exists() and json_path.exists()


def generate_ground_truth(kgs: dict[str, KnowledgeGraph], spec: GridSpec,
                          rundir: str | Path,
                          grid: Sequence[HyperparamConfig] | None = None,
                          workers: int | None = None,
                          save_models: bool = False) -> SweepSummary:
    """One evaluated training run per (KG, config, replicate seed) cell.

    Cells whose result files already exist are skipped, so interrupted sweeps
    resume without duplicate work. Per-run failures are recorded and the
    sweep continues. Worker-pool size comes from the TWIGSIM_WORKERS
    environment variable unless given explicitly.
    """
    rundir = Path(rundir)
    rundir.mkdir(parents=True, exist_ok=True)
    if grid is None:
        grid = enumerate_grid(spec)
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    summary = SweepSummary()
    pending = []
    for kg_name in sorted(kgs):
        for config in grid:
            for seed in spec.replicate_seeds:
                if ground_truth_available(rundir, kg_name, config, seed):
                    summary.skipped.append((kg_name, config.config_hash(), seed))
                else:
                    pending.append((kg_name, config.to_dict(), seed,
                                    str(rundir), save_models))
    if workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init,
                                 initargs=(kgs,)) as pool:
            outcomes = list(pool.map(_run_cell, pending))
    else:
        _worker_init(kgs)
        outcomes = [_run_cell(task) for task in pending]
    for cell, mrr_value, error in outcomes:
        if error is None:
            summary.completed.append(cell)
        else:
            summary.failed.append((cell, error))
    summary.completed.sort()
    summary.failed.sort()
    _write_manifest(rundir, kgs, spec, summary)
    return summary


def _write_manifest(rundir: Path, kgs: dict[str, KnowledgeGraph],
                    spec: GridSpec, summary: SweepSummary) -> None:
    cells = []
    for kg_name, config_hash, seed in sorted(summary.completed + summary.skipped):
        json_path = rundir / kg_name / config_hash / f"{seed}.json"
        with open(json_path, encoding="utf-8") as fh:
            sidecar = json.load(fh)
        cells.append({"kg": kg_name, "config_hash": config_hash, "seed": seed,
                      "mrr": sidecar["mrr"]})
    doc = {
        "grid_hash": spec.grid_hash(),
        "replicate_seeds": list(spec.replicate_seeds),
        "kgs": {name: {"entities": kg.num_entities,
                       "relations": kg.num_relations,
                       "test_triples": int(len(kg.test))}
                for name, kg in sorted(kgs.items())},
        "cells": cells,
        "failed": [{"kg": c[0], "config_hash": c[1], "seed": c[2], "error": e}
                   for c, e in summary.failed],
    }
    with open(rundir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


# --------------------------------------------------------------------------
# Metrics and reports
# --------------------------------------------------------------------------

def r_squared(true_values, predicted_values) -> float:
    """Coefficient of determination 1 - SS_res/SS_tot; at most 1."""
    y = np.asarray(true_values, dtype=np.float64)
    f = np.asarray(predicted_values, dtype=np.float64)
    if y.size == 0 or y.shape != f.shape:
        raise ValueError("need equal-length non-empty value sequences")
    ss_tot = float(np.square(y - y.mean()).sum())
    if ss_tot == 0.0:
        raise ValueError("R^2 is undefined when all true values are identical")
    ss_res = float(np.square(y - f).sum())
    return 1.0 - ss_res / ss_tot


@dataclass
class ExperimentReport:
    """Per-KG R-squared plus the per-config MRR pairs behind it."""

    mode: str
    per_kg_r2: dict[str, float]
    pairs: dict[str, list[dict]]
    provenance: dict

    def to_dict(self) -> dict:
        return {"mode": self.mode, "per_kg_r2": self.per_kg_r2,
                "pairs": self.pairs, "provenance": self.provenance}

    def save(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentReport":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(mode=doc["mode"], per_kg_r2=doc["per_kg_r2"],
                   pairs=doc["pairs"], provenance=doc["provenance"])

    def verify(self, tolerance: float = 1e-10) -> None:
        """Recompute every stored R-squared from its own pairs."""
        for kg_name, stored in self.per_kg_r2.items():
            pairs = self.pairs[kg_name]
            recomputed = r_squared([p["true_mrr"] for p in pairs],
                                   [p["predicted_mrr"] for p in pairs])
            if abs(recomputed - stored) > tolerance:
                raise ValueError(
                    f"report integrity failure for {kg_name}: "
                    f"stored {stored!r} vs recomputed {recomputed!r}")


@dataclass(frozen=True)
class TwigSettings:
    """Simulator training knobs used by the harness."""

    lr: float = 5e-3
    phase1_epochs: int = 5
    phase2_epochs: int = 10
    mse_weight: float = 1.0
    seed: int = 0
    finetune_epochs: int = 10
    finetune_lr: float = 5e-3

    def to_dict(self) -> dict:
        return {"lr": self.lr, "phase1_epochs": self.phase1_epochs,
                "phase2_epochs": self.phase2_epochs,
                "mse_weight": self.mse_weight, "seed": self.seed,
                "finetune_epochs": self.finetune_epochs,
                "finetune_lr": self.finetune_lr}

    @classmethod
    def from_dict(cls, doc: dict) -> "TwigSettings":
        return cls(**doc)


# --------------------------------------------------------------------------
# Batch assembly
# --------------------------------------------------------------------------

def feature_tables(kgs: dict[str, KnowledgeGraph]) -> dict[str, FeatureTable]:
    """Test-split feature table per KG (training-split statistics only)."""
    return {name: featurize_kg(kg, "test", build_stats(kg))
            for name, kg in kgs.items()}


def fit_norm_stats(tables: dict[str, FeatureTable],
                   training_kg_names: Sequence[str]) -> NormStats:
    """Z-score statistics over the structure rows of the training KGs.

    Every training KG contributes the same number of (config, seed) batches,
    so fitting on the per-KG tables equals fitting on the full batch list.
    """
    stacked = np.vstack([tables[name].values for name in sorted(training_kg_names)])
    return NormStats.fit(stacked)


def _read_sidecar_mrr(rundir: str | Path, kg_name: str,
                      config: HyperparamConfig, seed: int) -> float:
    _, json_path = ranking.run_result_paths(rundir, kg_name, config, seed)
    with open(json_path, encoding="utf-8") as fh:
        return float(json.load(fh)["mrr"])


def _load_ranks(rundir: str | Path, kg_name: str, config: HyperparamConfig,
                seed: int, table: FeatureTable) -> np.ndarray:
    result = ranking.read_run_result(rundir, kg_name, config, seed)
    if len(result.ranks) != len(table):
        raise ValueError(f"rank records and feature rows disagree for "
                         f"{kg_name}/{config.config_hash()}/{seed}")
    ranks = np.empty(len(table), dtype=np.float64)
    for i, record in enumerate(result.ranks):
        if (record.triple_index != table.triple_index[i]
                or record.direction != table.direction[i]):
            raise ValueError(f"rank record order mismatch at row {i} for "
                             f"{kg_name}/{config.config_hash()}/{seed}")
        ranks[i] = record.rank
    return ranks


def build_batches(rundir: str | Path, kg: KnowledgeGraph, table: FeatureTable,
                  configs: Sequence[HyperparamConfig], seeds: Sequence[int],
                  norm: NormStats) -> list[RankBatch]:
    """RankBatches for every (config, seed) cell of one KG, in given order."""
    batches = []
    for config in configs:
        hyp, struct = encode_block(config, table.values, norm)
        for seed in seeds:
            ranks = _load_ranks(rundir, kg.name, config, seed, table)
            batches.append(RankBatch(kg_name=kg.name, config=config, seed=seed,
                                     hyp=hyp, struct=struct, true_ranks=ranks,
                                     entity_count=kg.num_entities))
    return batches


def prediction_pairs(model: TwigModel, kg: KnowledgeGraph, table: FeatureTable,
                     configs: Sequence[HyperparamConfig], seeds: Sequence[int],
                     rundir: str | Path) -> list[dict]:
    """Per-config (true MRR averaged over replicates, predicted MRR) pairs."""
    pairs = []
    for config in configs:
        hyp, struct = encode_block(config, table.values, model.norm)
        batch = RankBatch(kg_name=kg.name, config=config, seed=seeds[0],
                          hyp=hyp, struct=struct,
                          true_ranks=np.ones(len(table)),
                          entity_count=kg.num_entities)
        true_mrr = float(np.mean([_read_sidecar_mrr(rundir, kg.name, config, s)
                                  for s in seeds]))
        pairs.append({"config_hash": config.config_hash(),
                      "true_mrr": true_mrr,
                      "predicted_mrr": predict_mrr(model, batch)})
    return pairs


# --------------------------------------------------------------------------
# Full experiment
# --------------------------------------------------------------------------

def _require_ground_truth(rundir: str | Path, kg_names: Sequence[str],
                          grid: Sequence[HyperparamConfig],
                          seeds: Sequence[int]) -> None:
    for kg_name in kg_names:
        for config in grid:
            for seed in seeds:
                if not ground_truth_available(rundir, kg_name, config, seed):
                    raise FileNotFoundError(
                        f"missing ground truth for cell "
                        f"{kg_name}/{config.config_hash()}/{seed}")


def run_experiment(kgs: dict[str, KnowledgeGraph], grid_spec: GridSpec,
                   plan: SplitPlan, settings: TwigSettings,
                   rundir: str | Path,
                   report_path: str | Path | None = None) -> ExperimentReport:
    """Train and evaluate the simulator per the split plan; write a report."""
    rundir = Path(rundir)
    grid = enumerate_grid(grid_spec)
    split = make_split(grid, plan)
    seeds = grid_spec.replicate_seeds
    kg_names = sorted(kgs)
    if plan.mode == "holdout-kg":
        if plan.holdout_kg not in kgs:
            raise ValueError(f"unknown holdout KG {plan.holdout_kg!r}")
        training_names = [n for n in kg_names if n != plan.holdout_kg]
        if not training_names:
            raise ValueError("holdout-kg mode needs at least two KGs")
    else:
        training_names = kg_names
    _require_ground_truth(rundir, kg_names, grid, seeds)

    tables = feature_tables(kgs)
    norm = fit_norm_stats(tables, training_names)
    train_batches = []
    for name in training_names:
        train_batches.extend(build_batches(rundir, kgs[name], tables[name],
                                           split.train, seeds, norm))
    model = train_twig(train_batches, norm,
                       phase1_epochs=settings.phase1_epochs,
                       phase2_epochs=settings.phase2_epochs,
                       lr=settings.lr, seed=settings.seed,
                       mse_weight=settings.mse_weight)
    checkpoints = {}
    ckpt_dir = rundir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    tag = f"{plan.mode}-s{plan.split_seed}-shot{plan.shot_fraction}"
    pretrained_path = ckpt_dir / f"twig-{tag}-pretrained.ckpt"
    save_twig(model, pretrained_path)
    checkpoints["pretrained"] = _file_sha(pretrained_path)

    final = model
    if plan.mode == "holdout-kg" and split.finetune:
        holdout_kg = kgs[plan.holdout_kg]
        finetune_batches = build_batches(rundir, holdout_kg,
                                         tables[plan.holdout_kg],
                                         split.finetune, seeds, norm)
        final = finetune_twig(model, finetune_batches,
                              epochs=settings.finetune_epochs,
                              lr=settings.finetune_lr, seed=settings.seed)
        finetuned_path = ckpt_dir / f"twig-{tag}-finetuned.ckpt"
        save_twig(final, finetuned_path)
        checkpoints["finetuned"] = _file_sha(finetuned_path)

    report = evaluate_model(final, kgs, grid_spec, plan, rundir,
                            tables=tables, checkpoints=checkpoints,
                            settings=settings)
    if report_path is None:
        report_path = rundir / "reports" / f"report-{tag}.json"
    report.save(report_path)
    return report


def evaluate_model(model: TwigModel, kgs: dict[str, KnowledgeGraph],
                   grid_spec: GridSpec, plan: SplitPlan, rundir: str | Path,
                   tables: dict[str, FeatureTable] | None = None,
                   checkpoints: dict | None = None,
                   settings: TwigSettings | None = None) -> ExperimentReport:
    """Per-KG predicted-vs-true MRR pairs and R-squared for a trained model."""
    grid = enumerate_grid(grid_spec)
    split = make_split(grid, plan)
    seeds = grid_spec.replicate_seeds
    kg_names = sorted(kgs)
    _require_ground_truth(rundir, kg_names, grid, seeds)
    if tables is None:
        tables = feature_tables(kgs)
    per_kg_r2 = {}
    pairs = {}
    for name in kg_names:
        if plan.mode == "holdout-kg" and name == plan.holdout_kg:
            eval_configs = split.holdout_test
        else:
            eval_configs = split.test
        kg_pairs = prediction_pairs(model, kgs[name], tables[name],
                                    eval_configs, seeds, rundir)
        pairs[name] = kg_pairs
        per_kg_r2[name] = r_squared([p["true_mrr"] for p in kg_pairs],
                                    [p["predicted_mrr"] for p in kg_pairs])
    return ExperimentReport(
        mode=plan.mode,
        per_kg_r2=per_kg_r2,
        pairs=pairs,
        provenance={
            "grid_hash": grid_spec.grid_hash(),
            "grid_size": len(grid),
            "plan": plan.to_dict(),
            "twig_settings": settings.to_dict() if settings else None,
            "replicate_seeds": list(seeds),
            "kgs": kg_names,
            "checkpoints": checkpoints or {},
        },
    )


def _file_sha(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]
