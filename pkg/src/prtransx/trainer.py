"""SGD training for the margin (TransX) and probability-aware (PrTransX) objectives."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, fields
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import loss as L
from .checkpoint import params_checksum, read_checkpoint, write_checkpoint
from .errors import ConfigError, TrainingError
from .kg import KnowledgeGraph, ProbTriplet
from .models import ModelKind, ModelParams, accumulate_grads, apply_constraints, init_params, score_batch
from .sampler import NegativeSampler, compute_bernoulli_stats

OBJECTIVES = ("margin", "probabilistic")
PAIR_WEIGHTINGS = ("raw", "batch")
# tensors shared by every triplet of a relation, or reshaping an entity per relation
PROJECTION_TENSORS = ("normal", "matrix", "entity_proj", "relation_proj")


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "probabilistic"
    kind: ModelKind = ModelKind()
    dim: int = 20
    rel_dim: Optional[int] = None
    epochs: int = 500
    learning_rate: float = 0.0005
    batch_size: int = 256
    negatives_per_positive: int = 1
    seed: int = 0
    hyper: L.Hyperparams = L.Hyperparams()
    checkpoint_every: int = 0
    detach_weight: bool = True
    # "batch" rescales the exp(K * hinge) weights of a batch by their mean
    pair_weighting: str = "batch"
    theta_min: float = 0.3
    # "all": train + held-out positives are never used as negatives
    filter_positives: str = "all"
    constrain_projected: bool = True
    # step multiplier for PROJECTION_TENSORS
    projection_lr_scale: float = 0.01

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"train.objective must be one of {OBJECTIVES}")
        if self.epochs < 1:
            raise ConfigError("train.epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("train.learning_rate must be > 0")
        if not self.projection_lr_scale >= 0:
            raise ConfigError("train.projection_lr_scale must be >= 0")
        if self.batch_size < 1 or self.negatives_per_positive < 1:
            raise ConfigError("train.batch_size and train.negatives_per_positive must be >= 1")
        if self.pair_weighting not in PAIR_WEIGHTINGS:
            raise ConfigError(f"train.pair_weighting must be one of {PAIR_WEIGHTINGS}")
        if self.filter_positives not in ("all", "train"):
            raise ConfigError("train.filter_positives must be 'all' or 'train'")

    def to_dict(self):
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name == "kind":
                out["variant"], out["distance_norm"] = val.variant, val.distance_norm
            elif f.name == "hyper":
                out["loss"] = val.to_dict()
            else:
                out[f.name] = val
        return out

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind = ModelKind(d.pop("variant", "TransE"), d.pop("distance_norm", "L1"))
        hyper = L.Hyperparams.from_dict(d.pop("loss", {}))
        known = {f.name for f in fields(cls)} - {"kind", "hyper"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        return cls(kind=kind, hyper=hyper, **d)


@dataclass
class TrainReport:
    epoch_losses: list = field(default_factory=list)
    wall_time: float = 0.0
    checksum: str = ""
    config: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(
            {"epoch_losses": self.epoch_losses, "wall_time": self.wall_time,
             "checksum": self.checksum, "config": self.config},
            sort_keys=True,
        )


def _sparse_counts(kind, triplets, n_rel):
    arr = np.array([tr.key for tr in triplets], dtype=np.int64)
    if kind.variant == "TranSparseShare":
        return np.bincount(arr[:, 1], minlength=n_rel)
    counts = np.zeros((n_rel, 2))
    for r in range(n_rel):
        sel = arr[arr[:, 1] == r]
        counts[r] = len(np.unique(sel[:, 0])), len(np.unique(sel[:, 2]))
    return counts


def pair_loss_and_grads(config: TrainConfig, s, s_neg, p, r):
    """Per-pair loss plus d loss / d s and d loss / d s_neg for one batch."""
    hyper = config.hyper
    if config.objective == "margin":
        losses = L.margin_pair_loss(s, s_neg, hyper.gamma)
        d_pos, d_neg = L.margin_grad(s, s_neg, hyper.gamma)
        return losses, d_pos, d_neg
    with np.errstate(over="ignore", invalid="ignore"):
        losses = L.combined_pair_loss(s, s_neg, p, r, hyper)
        d_pos, d_neg = L.grad_combined(s, s_neg, p, r, hyper, detach_weight=config.detach_weight)
        if config.pair_weighting == "batch":
            scale = np.mean(L.margin_weight(s, s_neg, hyper))
            d_pos, d_neg = d_pos / scale, d_neg / scale
    return losses, d_pos, d_neg


def train(
    graph: KnowledgeGraph,
    triplets: Sequence[ProbTriplet],
    config: TrainConfig,
    known_positives: Iterable[ProbTriplet] = (),
    checkpoint_path=None,
    log: Optional[Callable[[int, float, float], None]] = None,
) -> tuple[ModelParams, TrainReport]:
    """Fit embeddings with minibatch SGD.

    Each epoch shuffles the positives, draws fresh negatives per batch,
    accumulates analytic gradients over the batch, takes one SGD step and
    re-projects the touched parameters onto their constraints.
    """
    if not triplets:
        raise ValueError("empty training set")
    hyper = config.hyper
    triplets = list(triplets)
    H = np.array([tr.h for tr in triplets], dtype=np.int64)
    R = np.array([tr.r for tr in triplets], dtype=np.int64)
    T = np.array([tr.t for tr in triplets], dtype=np.int64)
    P = L.clamp_probability(np.array([tr.p for tr in triplets]), hyper)
    if R.max() >= len(hyper.alpha):
        raise ConfigError("loss.alpha/beta need one weight per relation")

    stats = compute_bernoulli_stats(triplets, graph.n_relations)
    filt = list(triplets) + (list(known_positives) if config.filter_positives == "all" else [])
    sampler = NegativeSampler(graph, stats, filt)

    theta = None
    if config.kind.sparse:
        from .models import sparse_degree

        theta, _ = sparse_degree(_sparse_counts(config.kind, triplets, graph.n_relations),
                                 config.theta_min, config.dim, config.rel_dim or config.dim)
    params = init_params(config.kind, graph.n_entities, graph.n_relations, d=config.dim,
                         seed=config.seed, k=config.rel_dim, theta=theta, theta_min=config.theta_min)
    rng = np.random.default_rng([config.seed, 1])

    report = TrainReport(config=config.to_dict())
    n = len(triplets)
    start = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        total, pairs = 0.0, 0
        order = rng.permutation(n)
        for b, lo in enumerate(range(0, n, config.batch_size)):
            idx = np.repeat(order[lo: lo + config.batch_size], config.negatives_per_positive)
            h, r, t, p = H[idx], R[idx], T[idx], P[idx]
            nh, nt, _ = sampler.sample_batch(h, r, t, rng)
            s = score_batch(params, h, r, t)
            s_neg = score_batch(params, nh, r, nt)
            losses, d_pos, d_neg = pair_loss_and_grads(config, s, s_neg, p, r)
            batch_loss = float(np.sum(losses))
            if not np.isfinite(batch_loss) or not (np.all(np.isfinite(d_pos)) and np.all(np.isfinite(d_neg))):
                raise TrainingError(epoch, b, "loss")
            grads: dict = {}
            accumulate_grads(params, h, r, t, d_pos, grads)
            accumulate_grads(params, nh, r, nt, d_neg, grads)
            for name, g in grads.items():
                lr = config.learning_rate * (config.projection_lr_scale if name in PROJECTION_TENSORS else 1.0)
                params.tensors[name] -= lr * g
            if not all(np.all(np.isfinite(params.tensors[name])) for name in grads):
                raise TrainingError(epoch, b, "parameters")
            ents = np.concatenate([h, t, nh, nt])
            pairs_ = (ents, np.tile(r, 4), np.repeat([0, 1, 0, 1], len(r)))
            apply_constraints(params, ents, pairs_, projected=config.constrain_projected)
            total += batch_loss
            pairs += len(idx)
        mean = total / pairs
        report.epoch_losses.append(mean)
        if log is not None:
            log(epoch, mean, time.perf_counter() - t0)
        if checkpoint_path is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            save_checkpoint(params, config, checkpoint_path)
    report.wall_time = time.perf_counter() - start
    report.checksum = params_checksum(params)
    if checkpoint_path is not None:
        save_checkpoint(params, config, checkpoint_path)
    return params, report


def save_checkpoint(params: ModelParams, config: TrainConfig, path):
    write_checkpoint(path, params, config.to_dict())


def load_checkpoint(path, expected_variant=None) -> tuple[ModelParams, TrainConfig]:
    params, cfg = read_checkpoint(path, expected_variant)
    return params, TrainConfig.from_dict(cfg)
