"""Per-query structural features computed from the training split only.

For a link-prediction query derived from a ground-truth triple, both endpoint
feature groups are populated from the known triple; only the ``is_head`` flag
distinguishes the (?,p,o) query from the (s,p,?) query. Aggregates over an
empty neighbourhood are 0, which is distinguishable because real degrees are
at least 1.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from twigsim.kg import KnowledgeGraph, Triple

FEATURE_NAMES: tuple[str, ...] = (
    "is_head",
    "s_deg",
    "o_deg",
    "p_freq",
    "sp_cofreq",
    "op_cofreq",
    "so_cofreq",
    "s_min_deg_neighbour",
    "s_max_deg_neighbour",
    "s_mean_deg_neighbour",
    "o_min_deg_neighbour",
    "o_max_deg_neighbour",
    "o_mean_deg_neighbour",
    "s_num_neighbours",
    "o_num_neighbours",
    "s_min_freq_edge",
    "s_max_freq_edge",
    "s_mean_freq_edge",
    "o_min_freq_edge",
    "o_max_freq_edge",
    "o_mean_freq_edge",
    "s_num_edges",
    "o_num_edges",
)

DIRECTIONS = ("head", "tail")


class QueryFeatureVector(NamedTuple):
    """The 23 structural features of one link-prediction query."""

    is_head: float
    s_deg: float
    o_deg: float
    p_freq: float
    sp_cofreq: float
    op_cofreq: float
    so_cofreq: float
    s_min_deg_neighbour: float
    s_max_deg_neighbour: float
    s_mean_deg_neighbour: float
    o_min_deg_neighbour: float
    o_max_deg_neighbour: float
    o_mean_deg_neighbour: float
    s_num_neighbours: float
    o_num_neighbours: float
    s_min_freq_edge: float
    s_max_freq_edge: float
    s_mean_freq_edge: float
    o_min_freq_edge: float
    o_max_freq_edge: float
    o_mean_freq_edge: float
    s_num_edges: float
    o_num_edges: float

    def as_array(self) -> np.ndarray:
        return np.asarray(self, dtype=np.float64)


@dataclass(frozen=True)
class NodeStats:
    """Training-split statistics for one entity.

    A self-loop contributes 2 to `degree` and puts the node in its own
    neighbour set; `degree` always equals the incident-predicate multiset
    size.
    """

    degree: int
    neighbours: frozenset[int]
    incident_predicates: Counter


@dataclass(frozen=True)
class GlobalStats:
    """Training-split predicate frequencies and pair co-occurrence counts.

    Co-occurrence counts are slot-specific: sp counts triples (s, p, *),
    op counts (*, p, o), and so counts (s, *, o).
    """

    predicate_frequency: np.ndarray
    sp_cofreq: dict[tuple[int, int], int]
    op_cofreq: dict[tuple[int, int], int]
    so_cofreq: dict[tuple[int, int], int]


@dataclass(frozen=True)
class TrainingStats:
    """Bundle of per-entity NodeStats and GlobalStats for one graph."""

    nodes: tuple[NodeStats, ...]
    glob: GlobalStats


def build_stats(kg: KnowledgeGraph) -> TrainingStats:
    """Compute node and global statistics over kg.train only.

    Entities absent from the training split get degree 0 and empty sets,
    so triples added to valid/test can never change any feature value.
    """
    n_ent = kg.num_entities
    n_rel = kg.num_relations
    degree = np.zeros(n_ent, dtype=np.int64)
    neighbours: list[set[int]] = [set() for _ in range(n_ent)]
    incident: list[Counter] = [Counter() for _ in range(n_ent)]
    p_freq = np.zeros(n_rel, dtype=np.int64)
    sp: Counter = Counter()
    op: Counter = Counter()
    so: Counter = Counter()

    for s, p, o in kg.train:
        s, p, o = int(s), int(p), int(o)
        degree[s] += 1
        degree[o] += 1
        neighbours[s].add(o)
        neighbours[o].add(s)
        incident[s][p] += 1
        incident[o][p] += 1
        p_freq[p] += 1
        sp[(s, p)] += 1
        op[(o, p)] += 1
        so[(s, o)] += 1

    nodes = tuple(
        NodeStats(degree=int(degree[i]),
                  neighbours=frozenset(neighbours[i]),
                  incident_predicates=incident[i])
        for i in range(n_ent)
    )
    glob = GlobalStats(
        predicate_frequency=p_freq,
        sp_cofreq=dict(sp),
        op_cofreq=dict(op),
        so_cofreq=dict(so),
    )
    return TrainingStats(nodes=nodes, glob=glob)


def _endpoint_features(node: NodeStats, nodes: Sequence[NodeStats],
                       p_freq: np.ndarray) -> tuple[float, ...]:
    # (min_deg_nb, max_deg_nb, mean_deg_nb, num_nb,
    #  min_freq_edge, max_freq_edge, mean_freq_edge, num_edges)
    if node.neighbours:
        degs = [nodes[nb].degree for nb in node.neighbours]
        total = sum(degs)
        nb_feats = (float(min(degs)), float(max(degs)),
                    total / len(degs), float(len(degs)))
    else:
        nb_feats = (0.0, 0.0, 0.0, 0.0)
    if node.incident_predicates:
        # One term per incident triple: multiplicity-weighted frequencies.
        freqs = {p: int(p_freq[p]) for p in node.incident_predicates}
        weighted = sum(freqs[p] * c for p, c in node.incident_predicates.items())
        edge_feats = (float(min(freqs.values())), float(max(freqs.values())),
                      weighted / node.degree,
                      float(len(node.incident_predicates)))
    else:
        edge_feats = (0.0, 0.0, 0.0, 0.0)
    return nb_feats + edge_feats


def featurize_query(triple: Triple, direction: str,
                    stats: TrainingStats) -> QueryFeatureVector:
    """All 23 features for the query derived from `triple` in `direction`.

    `direction` is "head" for the (?,p,o) query and "tail" for (s,p,?).
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    s, p, o = int(triple[0]), int(triple[1]), int(triple[2])
    nodes = stats.nodes
    glob = stats.glob
    s_stats = nodes[s]
    o_stats = nodes[o]
    s_side = _endpoint_features(s_stats, nodes, glob.predicate_frequency)
    o_side = _endpoint_features(o_stats, nodes, glob.predicate_frequency)
    return QueryFeatureVector(
        is_head=1.0 if direction == "head" else 0.0,
        s_deg=float(s_stats.degree),
        o_deg=float(o_stats.degree),
        p_freq=float(glob.predicate_frequency[p]),
        sp_cofreq=float(glob.sp_cofreq.get((s, p), 0)),
        op_cofreq=float(glob.op_cofreq.get((o, p), 0)),
        so_cofreq=float(glob.so_cofreq.get((s, o), 0)),
        s_min_deg_neighbour=s_side[0],
        s_max_deg_neighbour=s_side[1],
        s_mean_deg_neighbour=s_side[2],
        o_min_deg_neighbour=o_side[0],
        o_max_deg_neighbour=o_side[1],
        o_mean_deg_neighbour=o_side[2],
        s_num_neighbours=s_side[3],
        o_num_neighbours=o_side[3],
        s_min_freq_edge=s_side[4],
        s_max_freq_edge=s_side[5],
        s_mean_freq_edge=s_side[6],
        o_min_freq_edge=o_side[4],
        o_max_freq_edge=o_side[5],
        o_mean_freq_edge=o_side[6],
        s_num_edges=s_side[7],
        o_num_edges=o_side[7],
    )


@dataclass(frozen=True)
class FeatureTable:
    """Feature rows for every query of one split, two per triple.

    Row order is deterministic: triple order, head row before tail row.
    """

    kg_name: str
    split: str
    triple_index: np.ndarray
    direction: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.triple_index)


def featurize_kg(kg: KnowledgeGraph, split: str = "test",
                 stats: TrainingStats | None = None) -> FeatureTable:
    """Featurize both queries of every triple in the selected split."""
    if stats is None:
        stats = build_stats(kg)
    triples = kg.split(split)
    n = len(triples)
    triple_index = np.repeat(np.arange(n, dtype=np.int64), 2)
    direction = np.tile(np.asarray(DIRECTIONS), n)
    values = np.empty((2 * n, len(FEATURE_NAMES)), dtype=np.float64)
    for i, row in enumerate(triples):
        t = Triple(int(row[0]), int(row[1]), int(row[2]))
        values[2 * i] = featurize_query(t, "head", stats)
        values[2 * i + 1] = featurize_query(t, "tail", stats)
    return FeatureTable(kg_name=kg.name, split=split,
                        triple_index=triple_index, direction=direction,
                        values=values)


def write_feature_csv(table: FeatureTable, path: str | Path) -> None:
    """CSV export: identity columns then the 23 features in fixed order."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("triple_index", "direction") + FEATURE_NAMES)
        for idx, direction, row in zip(table.triple_index, table.direction,
                                       table.values):
            writer.writerow([int(idx), str(direction)] + [repr(float(v)) for v in row])


def read_feature_csv(path: str | Path) -> FeatureTable:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != ("triple_index", "direction") + FEATURE_NAMES:
            raise ValueError(f"{path}: unexpected feature CSV header")
        idx, direction, values = [], [], []
        for row in reader:
            idx.append(int(row[0]))
            direction.append(row[1])
            values.append([float(v) for v in row[2:]])
    return FeatureTable(kg_name=str(Path(path).stem), split="",
                        triple_index=np.asarray(idx, dtype=np.int64),
                        direction=np.asarray(direction),
                        values=np.asarray(values, dtype=np.float64))
