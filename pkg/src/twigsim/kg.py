"""Triple store: TSV parsing, label dictionaries, immutable splits.

Triple files are UTF-8 TSV with exactly three fields per non-empty line
(subject, predicate, object); no quoting or escaping. Ids are dense and
assigned in first-seen order over train, then valid, then test, so parsing
the same files twice always yields identical dictionaries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

SPLIT_NAMES = ("train", "valid", "test")


class Triple(NamedTuple):
    s: int
    p: int
    o: int


class KGError(Exception):
    """Base class for knowledge-graph loading problems."""


class KGParseError(KGError):
    """A line is not a valid subject<TAB>predicate<TAB>object record."""

    def __init__(self, path: str | Path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class KGValidationError(KGError):
    """Parsed content violates a KnowledgeGraph invariant."""


@dataclass(frozen=True)
class KnowledgeGraph:
    """An immutable, integer-indexed knowledge graph with three splits.

    Splits are (n, 3) int64 arrays of (s, p, o) rows. The label tuples are
    the id->label dictionaries; ids are dense 0..N-1. Instances are safe to
    share across parallel workers.
    """

    name: str
    entity_labels: tuple[str, ...]
    relation_labels: tuple[str, ...]
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray

    @cached_property
    def entity_ids(self) -> dict[str, int]:
        return {label: i for i, label in enumerate(self.entity_labels)}

    @cached_property
    def relation_ids(self) -> dict[str, int]:
        return {label: i for i, label in enumerate(self.relation_labels)}

    @property
    def num_entities(self) -> int:
        return len(self.entity_labels)

    @property
    def num_relations(self) -> int:
        return len(self.relation_labels)

    def split(self, name: str) -> np.ndarray:
        if name not in SPLIT_NAMES:
            raise KeyError(f"unknown split {name!r}")
        return getattr(self, name)


def entity_count(kg: KnowledgeGraph) -> int:
    """Number of entries in the entity dictionary (ranking denominator)."""
    return kg.num_entities


def relation_count(kg: KnowledgeGraph) -> int:
    return kg.num_relations


def _read_split(path: str | Path) -> list[tuple[str, str, str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise KGParseError(
                    path, line_no,
                    f"expected 3 tab-separated fields, got {len(fields)}")
            if any(f == "" for f in fields):
                raise KGParseError(path, line_no, "empty field")
            rows.append((fields[0], fields[1], fields[2]))
    return rows


def parse_kg(train_file: str | Path, valid_file: str | Path,
             test_file: str | Path, name: str = "kg") -> KnowledgeGraph:
    """Parse three TSV files into a validated KnowledgeGraph.

    Raises KGParseError for malformed lines and KGValidationError for empty
    splits, duplicate triples within a split, or overlap between splits.
    """
    raw = {
        "train": _read_split(train_file),
        "valid": _read_split(valid_file),
        "test": _read_split(test_file),
    }
    for split, rows in raw.items():
        if not rows:
            raise KGValidationError(f"empty split: {split}")

    entity_ids: dict[str, int] = {}
    relation_ids: dict[str, int] = {}

    def intern(table: dict[str, int], label: str) -> int:
        if label not in table:
            table[label] = len(table)
        return table[label]

    indexed: dict[str, np.ndarray] = {}
    seen: dict[str, set[tuple[int, int, int]]] = {}
    for split in SPLIT_NAMES:
        ids = []
        split_seen: set[tuple[int, int, int]] = set()
        for s_label, p_label, o_label in raw[split]:
            s = intern(entity_ids, s_label)
            p = intern(relation_ids, p_label)
            o = intern(entity_ids, o_label)
            if (s, p, o) in split_seen:
                raise KGValidationError(
                    f"duplicate triple in {split}: "
                    f"({s_label}, {p_label}, {o_label})")
            split_seen.add((s, p, o))
            ids.append((s, p, o))
        indexed[split] = np.asarray(ids, dtype=np.int64)
        seen[split] = split_seen

    for a, b in (("train", "valid"), ("train", "test"), ("valid", "test")):
        overlap = seen[a] & seen[b]
        if overlap:
            s, p, o = sorted(overlap)[0]
            raise KGValidationError(
                f"triple shared between {a} and {b}: "
                f"({_label(entity_ids, s)}, {_label(relation_ids, p)}, "
                f"{_label(entity_ids, o)})")

    return KnowledgeGraph(
        name=name,
        entity_labels=tuple(entity_ids),
        relation_labels=tuple(relation_ids),
        train=indexed["train"],
        valid=indexed["valid"],
        test=indexed["test"],
    )


def _label(table: dict[str, int], wanted: int) -> str:
    for label, i in table.items():
        if i == wanted:
            return label
    raise KeyError(wanted)


def write_split_tsv(kg: KnowledgeGraph, split: str, path: str | Path) -> None:
    """Serialize one split back to TSV, preserving row order."""
    rows = kg.split(split)
    with open(path, "w", encoding="utf-8") as fh:
        for s, p, o in rows:
            fh.write(f"{kg.entity_labels[s]}\t{kg.relation_labels[p]}\t"
                     f"{kg.entity_labels[o]}\n")


def write_kg_tsv(kg: KnowledgeGraph, directory: str | Path) -> dict[str, Path]:
    """Write train/valid/test TSV files under `directory`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for split in SPLIT_NAMES:
        path = directory / f"{split}.txt"
        write_split_tsv(kg, split, path)
        paths[split] = path
    return paths


def dump_dictionaries(kg: KnowledgeGraph, path: str | Path) -> None:
    """JSON dump of the label dictionaries for reproducibility audits."""
    doc = {
        "name": kg.name,
        "entities": list(kg.entity_labels),
        "relations": list(kg.relation_labels),
        "split_sizes": {s: int(len(kg.split(s))) for s in SPLIT_NAMES},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, ensure_ascii=False, indent=2)
        fh.write("\n")


def from_triples(name: str,
                 entity_labels: Iterable[str],
                 relation_labels: Iterable[str],
                 train: Iterable[tuple[int, int, int]],
                 valid: Iterable[tuple[int, int, int]],
                 test: Iterable[tuple[int, int, int]]) -> KnowledgeGraph:
    """Build a KnowledgeGraph from already-indexed triples (e.g. synthetic)."""
    return KnowledgeGraph(
        name=name,
        entity_labels=tuple(entity_labels),
        relation_labels=tuple(relation_labels),
        train=np.asarray(list(train), dtype=np.int64).reshape(-1, 3),
        valid=np.asarray(list(valid), dtype=np.int64).reshape(-1, 3),
        test=np.asarray(list(test), dtype=np.int64).reshape(-1, 3),
    )
