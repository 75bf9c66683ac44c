"""Synthetic knowledge graphs for tests and experiments."""

from __future__ import annotations

import numpy as np

from twigsim.kg import KnowledgeGraph, from_triples


def random_kg(n_entities: int, n_relations: int, n_train: int, n_valid: int,
              n_test: int, seed: int, name: str = "random") -> KnowledgeGraph:
    """Uniformly random distinct triples, split disjointly."""
    rng = np.random.default_rng(seed)
    needed = n_train + n_valid + n_test
    seen = set()
    triples = []
    while len(triples) < needed:
        s = int(rng.integers(n_entities))
        p = int(rng.integers(n_relations))
        o = int(rng.integers(n_entities))
        if (s, p, o) not in seen:
            seen.add((s, p, o))
            triples.append((s, p, o))
    return from_triples(
        name,
        [f"e{i}" for i in range(n_entities)],
        [f"r{i}" for i in range(n_relations)],
        triples[:n_train],
        triples[n_train:n_train + n_valid],
        triples[n_train + n_valid:needed],
    )


def cyclic_kg(n_entities: int, offsets, seed: int, name: str = "cyclic",
              train_fraction: float = 0.85,
              valid_fraction: float = 0.05) -> KnowledgeGraph:
    """Modular-translation graph: relation j maps s -> (s + offsets[j]) mod N.

    The regular cyclic structure is easy for a complex-embedding scorer to
    learn, giving a clear trained-vs-random contrast.
    """
    rng = np.random.default_rng(seed)
    triples = np.array([(s, r, (s + a) % n_entities)
                        for r, a in enumerate(offsets)
                        for s in range(n_entities)], dtype=np.int64)
    triples = triples[rng.permutation(len(triples))]
    n = len(triples)
    n_train = int(n * train_fraction)
    n_valid = int(n * valid_fraction)
    return from_triples(
        name,
        [f"e{i}" for i in range(n_entities)],
        [f"r{i}" for i in range(len(offsets))],
        triples[:n_train],
        triples[n_train:n_train + n_valid],
        triples[n_train + n_valid:],
    )


def write_kg_files(kg: KnowledgeGraph, directory):
    """TSV files for CLI tests; returns {split: path}."""
    from twigsim.kg import write_kg_tsv

    return write_kg_tsv(kg, directory)
