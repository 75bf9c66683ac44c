"""Simulate knowledge-graph-embedding rank outputs from graph structure.

The package is organised as a pipeline:

- ``kg``: parse and index triple stores with fixed train/valid/test splits.
- ``features``: per-query structural features computed from the training split.
- ``kge``: the ComplEx link predictor (scoring, negative sampling, losses,
  full training loop with hand-written gradients).
- ``ranking``: filtered rank-based evaluation and MRR.
- ``simulator``: the TWIG network that predicts the rank a trained ComplEx
  model would assign to each query, from hyperparameters plus structure.
- ``harness``: hyperparameter grids, ground-truth sweeps, train/test splits,
  zero- and few-shot transfer experiments, and R-squared reporting.
"""

from twigsim.kg import KnowledgeGraph, Triple, parse_kg, entity_count, relation_count
from twigsim.features import build_stats, featurize_query, featurize_kg, FEATURE_NAMES
from twigsim.kge import HyperparamConfig, ComplexModel, score, sample_negatives, loss, train
from twigsim.ranking import RankRecord, RunResult, rank_query, mrr, evaluate
from twigsim.simulator import (
    NormStats,
    TwigModel,
    encode,
    forward,
    kl_loss,
    mse_loss,
    train_twig,
    finetune_twig,
    predict_mrr,
)
from twigsim.harness import (
    GridSpec,
    SplitPlan,
    ExperimentReport,
    enumerate_grid,
    generate_ground_truth,
    make_split,
    r_squared,
    run_experiment,
)

__version__ = "0.1.0"

__all__ = [
    "KnowledgeGraph",
    "Triple",
    "parse_kg",
    "entity_count",
    "relation_count",
    "build_stats",
    "featurize_query",
    "featurize_kg",
    "FEATURE_NAMES",
    "HyperparamConfig",
    "ComplexModel",
    "score",
    "sample_negatives",
    "loss",
    "train",
    "RankRecord",
    "RunResult",
    "rank_query",
    "mrr",
    "evaluate",
    "NormStats",
    "TwigModel",
    "encode",
    "forward",
    "kl_loss",
    "mse_loss",
    "train_twig",
    "finetune_twig",
    "predict_mrr",
    "GridSpec",
    "SplitPlan",
    "ExperimentReport",
    "enumerate_grid",
    "generate_ground_truth",
    "make_split",
    "r_squared",
    "run_experiment",
    "__version__",
]
