"""Filtered rank-based evaluation of a trained link predictor.

For each test triple two queries are posed: rank the subject against all
entities (direction "head") and rank the object (direction "tail"). Candidate
corruptions that are themselves known triples (train + valid + test) are
removed before ranking, except the query's own answer. Ties are scored with
the realistic rule 1 + (strictly higher) + (tied)/2, so ranks can be
half-integers.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from twigsim.kg import KnowledgeGraph, Triple
from twigsim.kge import (ComplexModel, HyperparamConfig,
                         score_head_candidates, score_tail_candidates)


@dataclass(frozen=True)
class RankRecord:
    triple_index: int
    direction: str
    rank: float


@dataclass(frozen=True)
class RunResult:
    """Per-query ranks and summary MRR for one (KG, config, seed) run."""

    kg_name: str
    config: HyperparamConfig
    seed: int
    ranks: tuple[RankRecord, ...]
    mrr: float


class FilterIndex:
    """Known-triple lookup over train + valid + test for filtered ranking."""

    def __init__(self, kg: KnowledgeGraph):
        heads: dict[tuple[int, int], list[int]] = {}
        tails: dict[tuple[int, int], list[int]] = {}
        for split in ("train", "valid", "test"):
            for s, p, o in kg.split(split):
                heads.setdefault((int(p), int(o)), []).append(int(s))
                tails.setdefault((int(s), int(p)), []).append(int(o))
        self._heads = {k: np.asarray(sorted(set(v)), dtype=np.int64)
                       for k, v in heads.items()}
        self._tails = {k: np.asarray(sorted(set(v)), dtype=np.int64)
                       for k, v in tails.items()}
        self._empty = np.empty(0, dtype=np.int64)

    def known_heads(self, p: int, o: int) -> np.ndarray:
        return self._heads.get((p, o), self._empty)

    def known_tails(self, s: int, p: int) -> np.ndarray:
        return self._tails.get((s, p), self._empty)


def _realistic_rank(scores: np.ndarray, true_id: int,
                    filtered: np.ndarray) -> float:
    keep = np.ones(len(scores), dtype=bool)
    keep[filtered] = False
    keep[true_id] = True
    true_score = scores[true_id]
    keep[true_id] = False  # the answer never competes with itself
    kept = scores[keep]
    higher = int((kept > true_score).sum())
    tied = int((kept == true_score).sum())
    return 1.0 + higher + tied / 2.0


def rank_query(model: ComplexModel, triple: Triple, direction: str,
               kg: KnowledgeGraph,
               filter_index: FilterIndex | None = None) -> float:
    """Filtered realistic rank of the true answer for one query."""
    if filter_index is None:
        filter_index = FilterIndex(kg)
    s, p, o = int(triple[0]), int(triple[1]), int(triple[2])
    if direction == "head":
        scores = score_head_candidates(model, p, o)
        return _realistic_rank(scores, s, filter_index.known_heads(p, o))
    if direction == "tail":
        scores = score_tail_candidates(model, s, p)
        return _realistic_rank(scores, o, filter_index.known_tails(s, p))
    raise ValueError(f"direction must be 'head' or 'tail', got {direction!r}")


def mrr(ranks) -> float:
    """Mean reciprocal rank; in (0, 1] for non-empty rank sequences."""
    values = np.asarray([float(r.rank) if isinstance(r, RankRecord) else float(r)
                         for r in ranks], dtype=np.float64)
    if values.size == 0:
        raise ValueError("mrr of an empty rank sequence is undefined")
    if (values < 1.0).any():
        raise ValueError("ranks must be >= 1")
    return float((1.0 / values).mean())


def evaluate(model: ComplexModel, kg: KnowledgeGraph, config: HyperparamConfig,
             seed: int, filter_index: FilterIndex | None = None) -> RunResult:
    """Rank both queries of every test triple; deterministic record order."""
    if filter_index is None:
        filter_index = FilterIndex(kg)
    records = []
    for i, row in enumerate(kg.test):
        t = Triple(int(row[0]), int(row[1]), int(row[2]))
        for direction in ("head", "tail"):
            records.append(RankRecord(
                triple_index=i, direction=direction,
                rank=rank_query(model, t, direction, kg, filter_index)))
    return RunResult(kg_name=kg.name, config=config, seed=seed,
                     ranks=tuple(records), mrr=mrr(records))


# --------------------------------------------------------------------------
# Persistence: one CSV of rank records plus a JSON sidecar per run
# --------------------------------------------------------------------------

def run_result_paths(rundir: str | Path, kg_name: str,
                     config: HyperparamConfig, seed: int) -> tuple[Path, Path]:
    base = Path(rundir) / kg_name / config.config_hash()
    return base / f"{seed}.csv", base / f"{seed}.json"


def write_run_result(result: RunResult, rundir: str | Path) -> tuple[Path, Path]:
    csv_path, json_path = run_result_paths(rundir, result.kg_name,
                                           result.config, result.seed)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("triple_index", "direction", "rank"))
        for record in result.ranks:
            writer.writerow((record.triple_index, record.direction,
                             repr(record.rank)))
    sidecar = {
        "kg": result.kg_name,
        "config": result.config.to_dict(),
        "config_hash": result.config.config_hash(),
        "seed": result.seed,
        "mrr": result.mrr,
    }
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return csv_path, json_path


def read_run_result(rundir: str | Path, kg_name: str, config: HyperparamConfig,
                    seed: int) -> RunResult:
    csv_path, json_path = run_result_paths(rundir, kg_name, config, seed)
    with open(json_path, encoding="utf-8") as fh:
        sidecar = json.load(fh)
    if sidecar["config_hash"] != config.config_hash():
        raise ValueError(f"{json_path}: config hash mismatch")
    records = []
    with open(csv_path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for idx, direction, rank in reader:
            records.append(RankRecord(int(idx), direction, float(rank)))
    result = RunResult(kg_name=kg_name, config=config, seed=int(sidecar["seed"]),
                       ranks=tuple(records), mrr=float(sidecar["mrr"]))
    if abs(mrr(result.ranks) - result.mrr) > 1e-12:
        raise ValueError(f"{csv_path}: stored MRR does not match rank records")
    return result
