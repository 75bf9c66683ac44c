"""The TWIG simulator network and its two-phase training loop.

TWIG predicts, for every link-prediction query of a knowledge graph, the
normalized rank a trained ComplEx model would assign to the true answer.
Inputs are split into a 23-value structure block (z-scored per feature over
the simulator's training rows) and a 12-value hyperparameter block; two
branch networks process them independently and an integration block combines
them into a sigmoid output in (0, 1). Normalized outputs map back to rank
scale as r = 1 + (N - 1) * output for a graph with N entities.

Training is phased: first epochs minimize a batch-level KL divergence between
reciprocal-rank distributions, later epochs add a pointwise MSE term. One
gradient step is taken per (KG, config, replicate) batch. All gradients are
hand-written and finite-difference checked in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from twigsim.features import FEATURE_NAMES, QueryFeatureVector
from twigsim.kge import HyperparamConfig, LOSS_KINDS, SAMPLER_KINDS
from twigsim.optim import Adam
from twigsim.ranking import mrr
from twigsim.serial import load_blob, save_blob

HYP_FEATURE_NAMES: tuple[str, ...] = (
    "sampler_basic",
    "sampler_bernoulli",
    "sampler_pseudo_typed",
    "loss_margin_ranking",
    "loss_bce",
    "loss_cross_entropy",
    "log10_learning_rate",
    "log10_reg_coefficient",
    "margin_or_zero",
    "negatives_per_positive_scaled",
    "dimension_scaled",
    "margin_present",
)

NEGATIVES_SCALE = 125.0
DIMENSION_SCALE = 250.0
LEAKY_SLOPE = 0.01

PARAM_KEYS = ("ws1", "bs1", "ws2", "bs2", "wh1", "bh1", "wh2", "bh2",
              "wi1", "bi1", "wi2", "bi2")


class TwigTrainingError(RuntimeError):
    """Raised when a TWIG training step produces a non-finite loss."""


class EncodedInput(NamedTuple):
    hyp: np.ndarray
    struct: np.ndarray


@dataclass(frozen=True)
class NormStats:
    """Per-feature z-score statistics, fitted once on TWIG training rows."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> "NormStats":
        mean = values.mean(axis=0)
        std = values.std(axis=0)
        std = np.where(std == 0.0, 1.0, std)
        return cls(mean=mean, std=std)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std


def encode_config(config: HyperparamConfig) -> np.ndarray:
    """12-value hyperparameter block; deterministic, not fitted."""
    if config.reg_coefficient <= 0 or config.learning_rate <= 0:
        raise ValueError("encoding requires positive learning rate and "
                         "regularization coefficient")
    out = np.zeros(len(HYP_FEATURE_NAMES), dtype=np.float64)
    out[SAMPLER_KINDS.index(config.negative_sampler)] = 1.0
    out[3 + LOSS_KINDS.index(config.loss)] = 1.0
    out[6] = np.log10(config.learning_rate)
    out[7] = np.log10(config.reg_coefficient)
    out[8] = config.margin if config.margin is not None else 0.0
    out[9] = config.negatives_per_positive / NEGATIVES_SCALE
    out[10] = config.dimension / DIMENSION_SCALE
    out[11] = 1.0 if config.margin is not None else 0.0
    return out


def encode(config: HyperparamConfig, fv: QueryFeatureVector,
           norm_stats: NormStats) -> EncodedInput:
    """Deterministic 35-value encoding of one query under one config."""
    struct = norm_stats.apply(np.asarray(fv, dtype=np.float64))
    return EncodedInput(hyp=encode_config(config), struct=struct)


def encode_block(config: HyperparamConfig, values: np.ndarray,
                 norm_stats: NormStats) -> tuple[np.ndarray, np.ndarray]:
    """Encode a whole feature table under one config: (n,12) and (n,23)."""
    hyp = np.tile(encode_config(config), (len(values), 1))
    return hyp, norm_stats.apply(values)


@dataclass(frozen=True)
class RankBatch:
    """All queries of one (KG, config, replicate) ground-truth run."""

    kg_name: str
    config: HyperparamConfig
    seed: int
    hyp: np.ndarray
    struct: np.ndarray
    true_ranks: np.ndarray
    entity_count: int

    def __post_init__(self):
        n = len(self.true_ranks)
        if len(self.hyp) != n or len(self.struct) != n:
            raise ValueError("input blocks and ranks must have equal length")
        if n == 0:
            raise ValueError("empty rank batch")

    def label(self) -> str:
        return f"{self.kg_name}/{self.config.config_hash()}/{self.seed}"


@dataclass
class TwigModel:
    """Parameters of the three-block simulator network plus bookkeeping."""

    params: dict[str, np.ndarray]
    norm: NormStats
    phase: str
    seed: int
    settings: dict
    manifest: tuple[tuple[str, str, int], ...] = ()

    def copy(self) -> "TwigModel":
        return TwigModel(params={k: v.copy() for k, v in self.params.items()},
                         norm=self.norm, phase=self.phase, seed=self.seed,
                         settings=dict(self.settings), manifest=self.manifest)


def init_params(rng: np.random.Generator,
                struct_in: int = len(FEATURE_NAMES),
                hyp_in: int = len(HYP_FEATURE_NAMES),
                struct_hidden: tuple[int, int] = (16, 8),
                hyp_hidden: tuple[int, int] = (8, 6),
                integration_hidden: int = 8) -> dict[str, np.ndarray]:
    """He-style normal init, zero biases; fixed draw order over PARAM_KEYS."""
    joint = struct_hidden[1] + hyp_hidden[1]
    shapes = {
        "ws1": (struct_in, struct_hidden[0]),
        "bs1": (struct_hidden[0],),
        "ws2": (struct_hidden[0], struct_hidden[1]),
        "bs2": (struct_hidden[1],),
        "wh1": (hyp_in, hyp_hidden[0]),
        "bh1": (hyp_hidden[0],),
        "wh2": (hyp_hidden[0], hyp_hidden[1]),
        "bh2": (hyp_hidden[1],),
        "wi1": (joint, integration_hidden),
        "bi1": (integration_hidden,),
        "wi2": (integration_hidden, 1),
        "bi2": (1,),
    }
    params = {}
    for key in PARAM_KEYS:
        shape = shapes[key]
        if key.startswith("w"):
            params[key] = rng.normal(0.0, np.sqrt(2.0 / shape[0]), shape)
        else:
            params[key] = np.zeros(shape)
    return params


def _lrelu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, LEAKY_SLOPE * x)


def _dlrelu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, 1.0, LEAKY_SLOPE)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _forward_cached(params: dict[str, np.ndarray], hyp: np.ndarray,
                    struct: np.ndarray):
    z1s = struct @ params["ws1"] + params["bs1"]
    h1s = _lrelu(z1s)
    z2s = h1s @ params["ws2"] + params["bs2"]
    h2s = _lrelu(z2s)
    z1h = hyp @ params["wh1"] + params["bh1"]
    h1h = _lrelu(z1h)
    z2h = h1h @ params["wh2"] + params["bh2"]
    h2h = _lrelu(z2h)
    zc = np.concatenate([h2s, h2h], axis=1)
    z1i = zc @ params["wi1"] + params["bi1"]
    h1i = _lrelu(z1i)
    z2i = h1i @ params["wi2"] + params["bi2"]
    y = _sigmoid(z2i[:, 0])
    cache = (struct, hyp, z1s, h1s, z2s, z1h, h1h, z2h, zc, z1i, h1i, y)
    return y, cache


def _backward(params: dict[str, np.ndarray], cache, dy: np.ndarray):
    struct, hyp, z1s, h1s, z2s, z1h, h1h, z2h, zc, z1i, h1i, y = cache
    grads = {}
    dz2i = (dy * y * (1.0 - y))[:, None]
    grads["wi2"] = h1i.T @ dz2i
    grads["bi2"] = dz2i.sum(axis=0)
    dh1i = dz2i @ params["wi2"].T
    dz1i = dh1i * _dlrelu(z1i)
    grads["wi1"] = zc.T @ dz1i
    grads["bi1"] = dz1i.sum(axis=0)
    dzc = dz1i @ params["wi1"].T
    n_struct = params["ws2"].shape[1]
    dh2s = dzc[:, :n_struct]
    dh2h = dzc[:, n_struct:]
    dz2s = dh2s * _dlrelu(z2s)
    grads["ws2"] = h1s.T @ dz2s
    grads["bs2"] = dz2s.sum(axis=0)
    dh1s = dz2s @ params["ws2"].T
    dz1s = dh1s * _dlrelu(z1s)
    grads["ws1"] = struct.T @ dz1s
    grads["bs1"] = dz1s.sum(axis=0)
    dz2h = dh2h * _dlrelu(z2h)
    grads["wh2"] = h1h.T @ dz2h
    grads["bh2"] = dz2h.sum(axis=0)
    dh1h = dz2h @ params["wh2"].T
    dz1h = dh1h * _dlrelu(z1h)
    grads["wh1"] = hyp.T @ dz1h
    grads["bh1"] = dz1h.sum(axis=0)
    return grads


def forward_batch(model: TwigModel, hyp: np.ndarray,
                  struct: np.ndarray) -> np.ndarray:
    """Normalized rank predictions in (0, 1) for a block of queries."""
    if not (np.isfinite(hyp).all() and np.isfinite(struct).all()):
        raise ValueError("non-finite simulator input")
    y, _ = _forward_cached(model.params, np.atleast_2d(hyp),
                           np.atleast_2d(struct))
    return y


def forward(model: TwigModel, enc: EncodedInput) -> float:
    """Normalized rank prediction for one query."""
    return float(forward_batch(model, enc.hyp[None, :], enc.struct[None, :])[0])


# --------------------------------------------------------------------------
# Losses over one batch of predictions
# --------------------------------------------------------------------------

def denormalize(pred: np.ndarray, entity_count: int) -> np.ndarray:
    """Map normalized outputs back to rank scale: r = 1 + (N - 1) * pred."""
    return 1.0 + (entity_count - 1) * np.asarray(pred, dtype=np.float64)


def _kl_grad(pred: np.ndarray, true_ranks: np.ndarray, entity_count: int):
    true_ranks = np.asarray(true_ranks, dtype=np.float64)
    u_true = 1.0 / true_ranks
    t = u_true / u_true.sum()
    r_hat = denormalize(pred, entity_count)
    u = 1.0 / r_hat
    s = u.sum()
    p = u / s
    value = float((t * (np.log(t) - np.log(p))).sum())
    dpred = (t * r_hat - 1.0 / s) * (entity_count - 1) / np.square(r_hat)
    return value, dpred


def _mse_grad(pred: np.ndarray, true_ranks: np.ndarray, entity_count: int):
    target = (np.asarray(true_ranks, dtype=np.float64) - 1.0) / (entity_count - 1)
    diff = pred - target
    value = float(np.square(diff).mean())
    return value, 2.0 * diff / len(pred)


def kl_loss(batch_pred, batch_true, entity_count: int) -> float:
    """KL divergence between reciprocal-rank distributions of a batch.

    Both rank lists are turned into distributions p_i = (1/r_i) / sum(1/r_j);
    predictions are denormalized to rank scale first. Zero iff the induced
    distributions coincide.
    """
    pred = np.asarray(batch_pred, dtype=np.float64)
    if len(pred) != len(batch_true) or len(pred) == 0:
        raise ValueError("prediction and truth batches must match and be non-empty")
    return _kl_grad(pred, batch_true, entity_count)[0]


def mse_loss(batch_pred, batch_true, entity_count: int) -> float:
    """Mean squared error against ranks normalized as (r - 1) / (N - 1)."""
    pred = np.asarray(batch_pred, dtype=np.float64)
    if len(pred) != len(batch_true) or len(pred) == 0:
        raise ValueError("prediction and truth batches must match and be non-empty")
    return _mse_grad(pred, batch_true, entity_count)[0]


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------

def _run_epochs(params: dict[str, np.ndarray], runs: Sequence[RankBatch],
                adam: Adam, rng: np.random.Generator, epochs: int,
                with_mse: bool, mse_weight: float, phase: str) -> None:
    for epoch in range(epochs):
        order = rng.permutation(len(runs))
        for b in order:
            run = runs[int(b)]
            y, cache = _forward_cached(params, run.hyp, run.struct)
            value, dy = _kl_grad(y, run.true_ranks, run.entity_count)
            if with_mse:
                mse_value, dmse = _mse_grad(y, run.true_ranks, run.entity_count)
                value += mse_weight * mse_value
                dy = dy + mse_weight * dmse
            if not np.isfinite(value):
                raise TwigTrainingError(
                    f"non-finite loss in {phase} epoch {epoch}, "
                    f"batch {run.label()}")
            adam.step(params, _backward(params, cache, dy))


def train_twig(runs: Sequence[RankBatch], norm_stats: NormStats,
               phase1_epochs: int = 5, phase2_epochs: int = 10,
               lr: float = 5e-3, seed: int = 0, mse_weight: float = 1.0,
               struct_hidden: tuple[int, int] = (16, 8),
               hyp_hidden: tuple[int, int] = (8, 6),
               integration_hidden: int = 8) -> TwigModel:
    """Two-phase training: KL alone, then KL + MSE; one step per batch."""
    if not runs:
        raise ValueError("no training batches")
    rng = np.random.default_rng(seed)
    params = init_params(rng,
                         struct_in=runs[0].struct.shape[1],
                         hyp_in=runs[0].hyp.shape[1],
                         struct_hidden=struct_hidden, hyp_hidden=hyp_hidden,
                         integration_hidden=integration_hidden)
    adam = Adam(params, lr=lr)
    _run_epochs(params, runs, adam, rng, phase1_epochs,
                with_mse=False, mse_weight=mse_weight, phase="phase1")
    _run_epochs(params, runs, adam, rng, phase2_epochs,
                with_mse=True, mse_weight=mse_weight, phase="phase2")
    settings = {"phase1_epochs": phase1_epochs, "phase2_epochs": phase2_epochs,
                "lr": lr, "mse_weight": mse_weight,
                "struct_hidden": list(struct_hidden),
                "hyp_hidden": list(hyp_hidden),
                "integration_hidden": integration_hidden}
    manifest = tuple((r.kg_name, r.config.config_hash(), r.seed) for r in runs)
    return TwigModel(params=params, norm=norm_stats, phase="phase2",
                     seed=seed, settings=settings, manifest=manifest)


def finetune_twig(model: TwigModel, runs: Sequence[RankBatch], epochs: int,
                  lr: float = 5e-3, seed: int = 0,
                  mse_weight: float | None = None) -> TwigModel:
    """Continue phase-2-style training on new runs; norm stats are frozen."""
    tuned = model.copy()
    if epochs == 0 or not runs:
        return tuned
    if mse_weight is None:
        mse_weight = float(model.settings.get("mse_weight", 1.0))
    rng = np.random.default_rng(seed)
    adam = Adam(tuned.params, lr=lr)
    _run_epochs(tuned.params, runs, adam, rng, epochs,
                with_mse=True, mse_weight=mse_weight, phase="finetune")
    tuned.phase = "finetuned"
    tuned.settings["finetune_epochs"] = epochs
    tuned.settings["finetune_lr"] = lr
    tuned.manifest = tuned.manifest + tuple(
        (r.kg_name, r.config.config_hash(), r.seed) for r in runs)
    return tuned


def predict_mrr(model: TwigModel, run: RankBatch) -> float:
    """MRR of the denormalized predicted ranks of one run."""
    pred = forward_batch(model, run.hyp, run.struct)
    return mrr(denormalize(pred, run.entity_count))


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

def save_twig(model: TwigModel, path: str | Path) -> None:
    arrays = dict(model.params)
    arrays["norm_mean"] = model.norm.mean
    arrays["norm_std"] = model.norm.std
    meta = {
        "kind": "twig",
        "phase": model.phase,
        "seed": model.seed,
        "settings": model.settings,
        "manifest": [list(entry) for entry in model.manifest],
    }
    save_blob(path, meta, arrays)


def load_twig(path: str | Path) -> TwigModel:
    meta, arrays = load_blob(path)
    if meta.get("kind") != "twig":
        raise ValueError(f"{path}: not a TWIG checkpoint")
    norm = NormStats(mean=arrays.pop("norm_mean"), std=arrays.pop("norm_std"))
    return TwigModel(params=arrays, norm=norm, phase=meta["phase"],
                     seed=int(meta["seed"]), settings=meta["settings"],
                     manifest=tuple((kg, h, int(s))
                                    for kg, h, s in meta["manifest"]))
