"""Independent brute-force oracles used to cross-check the fast paths.

Everything here is deliberately written as per-query full scans in plain
Python, without reusing any precomputed statistics or vectorized scoring
from the package under test.
"""

from __future__ import annotations

import numpy as np

from twigsim.kg import KnowledgeGraph


def naive_features(kg: KnowledgeGraph, triple, direction: str) -> dict[str, float]:
    """All 23 features for one query via O(|train|) scans per feature."""
    train = [tuple(int(x) for x in row) for row in kg.train]
    s, p, o = int(triple[0]), int(triple[1]), int(triple[2])

    def degree(e):
        return sum((ts == e) + (to == e) for ts, _, to in train)

    def neighbours(e):
        nbs = set()
        for ts, _, to in train:
            if ts == e:
                nbs.add(to)
            if to == e:
                nbs.add(ts)
        return nbs

    def p_freq(r):
        return sum(tp == r for _, tp, _ in train)

    def incident_freqs(e):
        # one entry per incident triple endpoint (self-loops count twice)
        freqs = []
        for ts, tp, to in train:
            if ts == e:
                freqs.append(p_freq(tp))
            if to == e:
                freqs.append(p_freq(tp))
        return freqs

    def distinct_incident_predicates(e):
        preds = set()
        for ts, tp, to in train:
            if ts == e or to == e:
                preds.add(tp)
        return preds

    def agg(values):
        if not values:
            return 0.0, 0.0, 0.0
        return float(min(values)), float(max(values)), sum(values) / len(values)

    s_nb = neighbours(s)
    o_nb = neighbours(o)
    s_nb_degs = [degree(nb) for nb in s_nb]
    o_nb_degs = [degree(nb) for nb in o_nb]
    s_ef = incident_freqs(s)
    o_ef = incident_freqs(o)
    s_nb_min, s_nb_max, s_nb_mean = agg(s_nb_degs)
    o_nb_min, o_nb_max, o_nb_mean = agg(o_nb_degs)
    s_ef_min, s_ef_max, s_ef_mean = agg(s_ef)
    o_ef_min, o_ef_max, o_ef_mean = agg(o_ef)

    return {
        "is_head": 1.0 if direction == "head" else 0.0,
        "s_deg": float(degree(s)),
        "o_deg": float(degree(o)),
        "p_freq": float(p_freq(p)),
        "sp_cofreq": float(sum(ts == s and tp == p for ts, tp, _ in train)),
        "op_cofreq": float(sum(to == o and tp == p for _, tp, to in train)),
        "so_cofreq": float(sum(ts == s and to == o for ts, _, to in train)),
        "s_min_deg_neighbour": s_nb_min,
        "s_max_deg_neighbour": s_nb_max,
        "s_mean_deg_neighbour": s_nb_mean,
        "o_min_deg_neighbour": o_nb_min,
        "o_max_deg_neighbour": o_nb_max,
        "o_mean_deg_neighbour": o_nb_mean,
        "s_num_neighbours": float(len(s_nb)),
        "o_num_neighbours": float(len(o_nb)),
        "s_min_freq_edge": s_ef_min,
        "s_max_freq_edge": s_ef_max,
        "s_mean_freq_edge": s_ef_mean,
        "o_min_freq_edge": o_ef_min,
        "o_max_freq_edge": o_ef_max,
        "o_mean_freq_edge": o_ef_mean,
        "s_num_edges": float(len(distinct_incident_predicates(s))),
        "o_num_edges": float(len(distinct_incident_predicates(o))),
    }


def naive_score(model, s: int, p: int, o: int) -> float:
    """Re<e_s, e_p, conj(e_o)> via Python complex arithmetic."""
    total = 0.0
    for k in range(model.dimension):
        es = complex(model.ent_re[s, k], model.ent_im[s, k])
        ep = complex(model.rel_re[p, k], model.rel_im[p, k])
        eo = complex(model.ent_re[o, k], model.ent_im[o, k])
        total += (es * ep * eo.conjugate()).real
    return total


def naive_rank(model, kg: KnowledgeGraph, triple, direction: str) -> float:
    """Score-sort-filter rank with the realistic mid-tie rule."""
    known = set()
    for split in ("train", "valid", "test"):
        for row in kg.split(split):
            known.add(tuple(int(x) for x in row))
    s, p, o = int(triple[0]), int(triple[1]), int(triple[2])
    if direction == "head":
        true_id = s
        candidates = [(c, naive_score(model, c, p, o))
                      for c in range(kg.num_entities)
                      if c == s or (c, p, o) not in known]
    else:
        true_id = o
        candidates = [(c, naive_score(model, s, p, c))
                      for c in range(kg.num_entities)
                      if c == o or (s, p, c) not in known]
    true_score = dict(candidates)[true_id]
    higher = sum(1 for c, sc in candidates if c != true_id and sc > true_score)
    tied = sum(1 for c, sc in candidates if c != true_id and sc == true_score)
    return 1.0 + higher + tied / 2.0


def finite_difference_grads(func, arrays: dict[str, np.ndarray],
                            step: float = 1e-6) -> dict[str, np.ndarray]:
    """Central finite differences of a scalar function of named arrays."""
    grads = {}
    for key, arr in arrays.items():
        grad = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = grad.ravel()
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            up = func()
            flat[i] = original - step
            down = func()
            flat[i] = original
            gflat[i] = (up - down) / (2.0 * step)
        grads[key] = grad
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.abs(analytic - numeric)
    den = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    return float((num / den).max())
