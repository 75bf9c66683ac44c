"""ComplEx link predictor: scoring, negative sampling, losses, training.

Embeddings are stored as paired real/imaginary coordinate arrays. The score
of (s, p, o) is Re<e_s, e_p, conj(e_o)>. Training runs full passes over the
training split with Adam updates, an N3 penalty on the embedding rows touched
by each batch, and per-positive negative sampling. All gradients are written
by hand and checked against finite differences in the test suite.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit, logsumexp

from twigsim.kg import KnowledgeGraph, Triple
from twigsim.optim import Adam
from twigsim.serial import load_blob, save_blob

SAMPLER_KINDS = ("Basic", "Bernoulli", "PseudoTyped")
LOSS_KINDS = ("MarginRanking", "BCE", "CrossEntropy")

CONFIG_FIELDS = ("negative_sampler", "negatives_per_positive", "loss", "margin",
                 "learning_rate", "dimension", "reg_coefficient", "epochs")


class TrainingDivergedError(RuntimeError):
    """Raised when a training step produces a non-finite loss."""


@dataclass(frozen=True)
class HyperparamConfig:
    """One point of the hyperparameter grid for a ComplEx training run.

    `margin` must be present exactly when the loss is MarginRanking.
    """

    negative_sampler: str
    negatives_per_positive: int
    loss: str
    margin: float | None
    learning_rate: float
    dimension: int
    reg_coefficient: float
    epochs: int = 100

    def __post_init__(self):
        if self.negative_sampler not in SAMPLER_KINDS:
            raise ValueError(f"unknown negative sampler {self.negative_sampler!r}")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.loss!r}")
        if (self.loss == "MarginRanking") != (self.margin is not None):
            raise ValueError("margin must be set exactly when loss is MarginRanking")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.learning_rate <= 0 or self.reg_coefficient < 0:
            raise ValueError("learning_rate must be > 0 and reg_coefficient >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def canonical_key(self) -> str:
        """Canonical string of sorted field=value pairs; config identity."""
        parts = []
        for field in sorted(CONFIG_FIELDS):
            value = getattr(self, field)
            parts.append(f"{field}={value!r}" if isinstance(value, str)
                         else f"{field}={value}")
        return "|".join(parts)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_key().encode("utf-8")).hexdigest()[:12]

    def to_dict(self) -> dict:
        return {field: getattr(self, field) for field in CONFIG_FIELDS}

    @classmethod
    def from_dict(cls, doc: dict) -> "HyperparamConfig":
        return cls(**{field: doc[field] for field in CONFIG_FIELDS})


@dataclass(frozen=True)
class ComplexModel:
    """Entity/relation embeddings as (real, imaginary) coordinate arrays."""

    ent_re: np.ndarray
    ent_im: np.ndarray
    rel_re: np.ndarray
    rel_im: np.ndarray
    seed: int

    @property
    def num_entities(self) -> int:
        return self.ent_re.shape[0]

    @property
    def num_relations(self) -> int:
        return self.rel_re.shape[0]

    @property
    def dimension(self) -> int:
        return self.ent_re.shape[1]


def _params(model: ComplexModel) -> dict[str, np.ndarray]:
    return {"ent_re": model.ent_re, "ent_im": model.ent_im,
            "rel_re": model.rel_re, "rel_im": model.rel_im}


def score_triples(model: ComplexModel, triples: np.ndarray) -> np.ndarray:
    """Vectorized Re<e_s, e_p, conj(e_o)> for (n, 3) id rows."""
    s, p, o = triples[:, 0], triples[:, 1], triples[:, 2]
    sr, si = model.ent_re[s], model.ent_im[s]
    pr, pi = model.rel_re[p], model.rel_im[p]
    orr, oi = model.ent_re[o], model.ent_im[o]
    return ((sr * pr - si * pi) * orr + (si * pr + sr * pi) * oi).sum(axis=-1)


def score(model: ComplexModel, triple: Triple) -> float:
    """Plausibility score of one triple; raises IndexError on bad ids."""
    s, p, o = int(triple[0]), int(triple[1]), int(triple[2])
    if not (0 <= s < model.num_entities and 0 <= o < model.num_entities):
        raise IndexError(f"entity id out of range: ({s}, {o})")
    if not (0 <= p < model.num_relations):
        raise IndexError(f"relation id out of range: {p}")
    return float(score_triples(model, np.asarray([[s, p, o]], dtype=np.int64))[0])


def score_head_candidates(model: ComplexModel, p: int, o: int) -> np.ndarray:
    """Scores of (c, p, o) for every candidate entity c."""
    pr, pi = model.rel_re[p], model.rel_im[p]
    orr, oi = model.ent_re[o], model.ent_im[o]
    u = pr * orr + pi * oi
    v = pr * oi - pi * orr
    return model.ent_re @ u + model.ent_im @ v


def score_tail_candidates(model: ComplexModel, s: int, p: int) -> np.ndarray:
    """Scores of (s, p, c) for every candidate entity c."""
    sr, si = model.ent_re[s], model.ent_im[s]
    pr, pi = model.rel_re[p], model.rel_im[p]
    a = sr * pr - si * pi
    b = si * pr + sr * pi
    return model.ent_re @ a + model.ent_im @ b


# --------------------------------------------------------------------------
# Negative sampling
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplerTables:
    """Per-relation corruption statistics precomputed from the training split.

    `corrupt_head_prob[r]` is tph/(tph+hpt) where tph is mean tails per head
    and hpt mean heads per tail over training triples of relation r. Domains
    are sorted distinct entities observed in each slot; padded copies allow
    vectorized gathering.
    """

    num_entities: int
    corrupt_head_prob: np.ndarray
    head_domains: tuple[np.ndarray, ...]
    tail_domains: tuple[np.ndarray, ...]
    head_pad: np.ndarray
    head_size: np.ndarray
    tail_pad: np.ndarray
    tail_size: np.ndarray


def _pad_domains(domains: Sequence[np.ndarray], sentinel: int) -> tuple[np.ndarray, np.ndarray]:
    sizes = np.asarray([len(d) for d in domains], dtype=np.int64)
    width = max(1, int(sizes.max()) if len(sizes) else 1)
    pad = np.full((len(domains), width), sentinel, dtype=np.int64)
    for i, dom in enumerate(domains):
        pad[i, :len(dom)] = dom
    return pad, sizes


def build_sampler_tables(kg: KnowledgeGraph) -> SamplerTables:
    n_rel = kg.num_relations
    s, p, o = kg.train[:, 0], kg.train[:, 1], kg.train[:, 2]
    head_domains = []
    tail_domains = []
    prob = np.full(n_rel, 0.5)
    for r in range(n_rel):
        mask = p == r
        heads = np.unique(s[mask])
        tails = np.unique(o[mask])
        head_domains.append(heads)
        tail_domains.append(tails)
        if len(heads) and len(tails):
            # tph/(tph+hpt) simplifies to #tails / (#heads + #tails).
            prob[r] = len(tails) / (len(heads) + len(tails))
    head_pad, head_size = _pad_domains(head_domains, kg.num_entities)
    tail_pad, tail_size = _pad_domains(tail_domains, kg.num_entities)
    return SamplerTables(
        num_entities=kg.num_entities,
        corrupt_head_prob=prob,
        head_domains=tuple(head_domains),
        tail_domains=tuple(tail_domains),
        head_pad=head_pad,
        head_size=head_size,
        tail_pad=tail_pad,
        tail_size=tail_size,
    )


def _uniform_excluding(orig: np.ndarray, n_entities: int,
                       rng: np.random.Generator) -> np.ndarray:
    # Uniform over all entities except `orig`, via the shift trick.
    if n_entities < 2:
        raise ValueError("cannot corrupt triples in a single-entity graph")
    draw = rng.integers(0, n_entities - 1, size=orig.shape)
    return draw + (draw >= orig)


def _domain_positions(domains: Sequence[np.ndarray], rel: np.ndarray,
                      values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per element: insertion index of value in its relation's domain, and
    whether the value is actually present."""
    pos = np.zeros(len(values), dtype=np.int64)
    contains = np.zeros(len(values), dtype=bool)
    for r in np.unique(rel):
        mask = rel == r
        dom = domains[int(r)]
        if len(dom) == 0:
            continue
        idx = np.searchsorted(dom, values[mask])
        inside = idx < len(dom)
        hit = inside & (dom[np.minimum(idx, len(dom) - 1)] == values[mask])
        pos[mask] = idx
        contains[mask] = hit
    return pos, contains


def sample_negatives_batch(sampler_kind: str, positives: np.ndarray, k: int,
                           tables: SamplerTables,
                           rng: np.random.Generator) -> np.ndarray:
    """k corruptions per positive; returns (B, k, 3) id rows.

    Every negative differs from its positive in exactly one of the subject
    or object slot.
    """
    if sampler_kind not in SAMPLER_KINDS:
        raise ValueError(f"unknown negative sampler {sampler_kind!r}")
    if k < 1:
        raise ValueError("k must be >= 1")
    positives = np.asarray(positives, dtype=np.int64)
    n_ent = tables.num_entities
    bsz = len(positives)
    s, p, o = positives[:, 0], positives[:, 1], positives[:, 2]

    if sampler_kind == "Bernoulli":
        head_prob = tables.corrupt_head_prob[p][:, None]
    else:
        head_prob = 0.5
    corrupt_head = rng.random((bsz, k)) < head_prob
    orig = np.where(corrupt_head, s[:, None], o[:, None])

    if sampler_kind == "PseudoTyped":
        pos_h, has_h = _domain_positions(tables.head_domains, p, s)
        pos_t, has_t = _domain_positions(tables.tail_domains, p, o)
        eff_h = tables.head_size[p] - has_h
        eff_t = tables.tail_size[p] - has_t
        eff = np.where(corrupt_head, eff_h[:, None], eff_t[:, None])
        pos_in_dom = np.where(corrupt_head, pos_h[:, None], pos_t[:, None])
        has = np.where(corrupt_head, has_h[:, None], has_t[:, None])
        draw = rng.random((bsz, k))
        fallback_repl = _uniform_excluding(orig, n_ent, rng)
        usable = eff >= 1
        j = (draw * np.maximum(eff, 1)).astype(np.int64)
        j += (j >= pos_in_dom) & has
        rel_bk = np.broadcast_to(p[:, None], (bsz, k))
        from_head = tables.head_pad[rel_bk, np.minimum(j, tables.head_pad.shape[1] - 1)]
        from_tail = tables.tail_pad[rel_bk, np.minimum(j, tables.tail_pad.shape[1] - 1)]
        typed = np.where(corrupt_head, from_head, from_tail)
        repl = np.where(usable, typed, fallback_repl)
    else:
        repl = _uniform_excluding(orig, n_ent, rng)

    negatives = np.repeat(positives[:, None, :], k, axis=1)
    negatives[:, :, 0] = np.where(corrupt_head, repl, negatives[:, :, 0])
    negatives[:, :, 2] = np.where(corrupt_head, negatives[:, :, 2], repl)
    return negatives


def sample_negatives(sampler_kind: str, positive: Triple, k: int,
                     kg: KnowledgeGraph, rng: np.random.Generator,
                     tables: SamplerTables | None = None) -> np.ndarray:
    """k corrupted triples for one positive; (k, 3) id rows."""
    if tables is None:
        tables = build_sampler_tables(kg)
    positives = np.asarray([tuple(positive)], dtype=np.int64)
    return sample_negatives_batch(sampler_kind, positives, k, tables, rng)[0]


# --------------------------------------------------------------------------
# Losses
# --------------------------------------------------------------------------

def _as_pos_neg(positive_scores, negative_scores) -> tuple[np.ndarray, np.ndarray]:
    pos = np.atleast_1d(np.asarray(positive_scores, dtype=np.float64))
    neg = np.asarray(negative_scores, dtype=np.float64)
    if neg.ndim == 1:
        neg = neg.reshape(len(pos), -1)
    if neg.shape[0] != pos.shape[0]:
        raise ValueError("each positive must be paired with its own negatives")
    return pos, neg


def _margin_ranking_grad(pos: np.ndarray, neg: np.ndarray, margin: float):
    diff = margin - pos[:, None] + neg
    active = diff > 0
    value = float(np.where(active, diff, 0.0).mean())
    g = active / diff.size
    return value, -g.sum(axis=1), g


def _bce_grad(pos: np.ndarray, neg: np.ndarray):
    total = pos.size + neg.size
    value = float((np.logaddexp(0.0, -pos).sum() + np.logaddexp(0.0, neg).sum()) / total)
    return value, (expit(pos) - 1.0) / total, expit(neg) / total


def _cross_entropy_grad(pos: np.ndarray, neg: np.ndarray):
    logits = np.concatenate([pos[:, None], neg], axis=1)
    log_z = logsumexp(logits, axis=1)
    value = float((log_z - pos).mean())
    soft = np.exp(logits - log_z[:, None]) / len(pos)
    soft[:, 0] -= 1.0 / len(pos)
    return value, soft[:, 0], soft[:, 1:]


def _loss_grad(loss_kind: str, pos: np.ndarray, neg: np.ndarray,
               margin: float | None):
    if loss_kind == "MarginRanking":
        return _margin_ranking_grad(pos, neg, float(margin))
    if loss_kind == "BCE":
        return _bce_grad(pos, neg)
    if loss_kind == "CrossEntropy":
        return _cross_entropy_grad(pos, neg)
    raise ValueError(f"unknown loss {loss_kind!r}")


def loss(loss_kind: str, positive_scores, negative_scores,
         margin: float | None = None) -> float:
    """Batch loss value for positives paired with their negatives.

    MarginRanking averages max(0, margin - f(pos) + f(neg)) over pairs; BCE
    averages binary cross-entropy of sigmoid scores over all items;
    CrossEntropy averages -log softmax of each positive within its own
    (1 + k)-candidate list.
    """
    if loss_kind == "MarginRanking" and margin is None:
        raise ValueError("MarginRanking requires a margin")
    pos, neg = _as_pos_neg(positive_scores, negative_scores)
    return _loss_grad(loss_kind, pos, neg, margin)[0]


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------

def _scatter_rows(acc: np.ndarray, idx: np.ndarray, vals: np.ndarray) -> None:
    # Row-indexed += via bincount; much faster than np.add.at.
    n, d = acc.shape
    flat = (idx[:, None] * d + np.arange(d)).ravel()
    acc += np.bincount(flat, weights=vals.ravel(), minlength=n * d).reshape(n, d)


def _accumulate_score_grads(params: dict[str, np.ndarray],
                            grads: dict[str, np.ndarray],
                            triples: np.ndarray, dscore: np.ndarray) -> None:
    s, p, o = triples[:, 0], triples[:, 1], triples[:, 2]
    gathered = (params["ent_re"][s], params["ent_im"][s],
                params["rel_re"][p], params["rel_im"][p],
                params["ent_re"][o], params["ent_im"][o])
    _scatter_score_grads(grads, (s, p, o), gathered, dscore)


def _scatter_score_grads(grads: dict[str, np.ndarray], ids, gathered,
                         dscore: np.ndarray) -> None:
    s, p, o = ids
    sr, si, pr, pi, orr, oi = gathered
    w = dscore[:, None]
    ent_idx = np.concatenate([s, o])
    _scatter_rows(grads["ent_re"], ent_idx,
                  np.concatenate([(pr * orr + pi * oi) * w,
                                  (sr * pr - si * pi) * w]))
    _scatter_rows(grads["ent_im"], ent_idx,
                  np.concatenate([(pr * oi - pi * orr) * w,
                                  (si * pr + sr * pi) * w]))
    _scatter_rows(grads["rel_re"], p, (sr * orr + si * oi) * w)
    _scatter_rows(grads["rel_im"], p, (sr * oi - si * orr) * w)


def n3_penalty(params: dict[str, np.ndarray], ent_rows: np.ndarray,
               rel_rows: np.ndarray) -> float:
    """Sum of cubed absolute coordinate values over the touched rows."""
    value = 0.0
    for key, rows in (("ent_re", ent_rows), ("ent_im", ent_rows),
                      ("rel_re", rel_rows), ("rel_im", rel_rows)):
        block = params[key][rows]
        value += float(np.abs(block ** 3).sum())
    return value


def _add_n3_grads(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                  ent_rows: np.ndarray, rel_rows: np.ndarray,
                  coefficient: float) -> None:
    for key, rows in (("ent_re", ent_rows), ("ent_im", ent_rows),
                      ("rel_re", rel_rows), ("rel_im", rel_rows)):
        block = params[key][rows]
        grads[key][rows] += coefficient * 3.0 * np.abs(block) * block


def batch_loss_and_grads(params: dict[str, np.ndarray], positives: np.ndarray,
                         negatives: np.ndarray, config: HyperparamConfig):
    """Training loss (data term + weighted N3) and gradients for one batch."""
    n_pos = len(positives)
    triples = np.concatenate([positives, negatives.reshape(-1, 3)])
    s, p, o = triples[:, 0], triples[:, 1], triples[:, 2]
    # Gather each embedding row once; reused for scores and gradients.
    sr, si = params["ent_re"][s], params["ent_im"][s]
    pr, pi = params["rel_re"][p], params["rel_im"][p]
    orr, oi = params["ent_re"][o], params["ent_im"][o]
    scores = ((sr * pr - si * pi) * orr + (si * pr + sr * pi) * oi).sum(axis=-1)
    value, dpos, dneg = _loss_grad(config.loss, scores[:n_pos],
                                   scores[n_pos:].reshape(negatives.shape[:2]),
                                   config.margin)
    grads = {key: np.zeros_like(arr) for key, arr in params.items()}
    dscore = np.concatenate([dpos, dneg.ravel()])
    _scatter_score_grads(grads, (s, p, o), (sr, si, pr, pi, orr, oi), dscore)
    if config.reg_coefficient > 0:
        ent_rows = np.unique(np.concatenate([s, o]))
        rel_rows = np.unique(positives[:, 1])
        value += config.reg_coefficient * n3_penalty(params, ent_rows, rel_rows)
        _add_n3_grads(params, grads, ent_rows, rel_rows, config.reg_coefficient)
    return value, grads


def init_model(kg: KnowledgeGraph, config: HyperparamConfig,
               seed: int) -> ComplexModel:
    """Embeddings drawn i.i.d. from N(0, 1/sqrt(d)); fixed draw order."""
    rng = np.random.default_rng(seed)
    d = config.dimension
    std = 1.0 / np.sqrt(d)
    shape_e = (kg.num_entities, d)
    shape_r = (kg.num_relations, d)
    return ComplexModel(
        ent_re=rng.normal(0.0, std, shape_e),
        ent_im=rng.normal(0.0, std, shape_e),
        rel_re=rng.normal(0.0, std, shape_r),
        rel_im=rng.normal(0.0, std, shape_r),
        seed=seed,
    )


def train(kg: KnowledgeGraph, config: HyperparamConfig, seed: int,
          batch_size: int = 128) -> ComplexModel:
    """Train ComplEx for `config.epochs` full passes; deterministic per seed."""
    rng = np.random.default_rng(seed)
    d = config.dimension
    std = 1.0 / np.sqrt(d)
    params = {
        "ent_re": rng.normal(0.0, std, (kg.num_entities, d)),
        "ent_im": rng.normal(0.0, std, (kg.num_entities, d)),
        "rel_re": rng.normal(0.0, std, (kg.num_relations, d)),
        "rel_im": rng.normal(0.0, std, (kg.num_relations, d)),
    }
    tables = build_sampler_tables(kg)
    adam = Adam(params, lr=config.learning_rate)
    k = config.negatives_per_positive
    n_train = len(kg.train)
    for epoch in range(config.epochs):
        perm = rng.permutation(n_train)
        for batch_no, start in enumerate(range(0, n_train, batch_size)):
            positives = kg.train[perm[start:start + batch_size]]
            negatives = sample_negatives_batch(config.negative_sampler,
                                               positives, k, tables, rng)
            value, grads = batch_loss_and_grads(params, positives, negatives,
                                                config)
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {batch_no}")
            adam.step(params, grads)
    return ComplexModel(seed=seed, **params)


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

def save_complex(model: ComplexModel, config: HyperparamConfig,
                 path: str | Path) -> None:
    meta = {"kind": "complex", "seed": model.seed, "config": config.to_dict()}
    save_blob(path, meta, _params(model))


def load_complex(path: str | Path) -> tuple[ComplexModel, HyperparamConfig]:
    meta, arrays = load_blob(path)
    if meta.get("kind") != "complex":
        raise ValueError(f"{path}: not a ComplEx checkpoint")
    model = ComplexModel(seed=int(meta["seed"]), **arrays)
    return model, HyperparamConfig.from_dict(meta["config"])
