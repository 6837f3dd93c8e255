"""Translational score functions and their analytic gradients.

Every variant scores a triplet as ``||proj_h(h) + r - proj_t(t)||`` (L1 or
L2) and differs only in the projection:

========================  ================================================
TransE                    identity
TransH                    ``e - (w_r . e) w_r``
TransR                    ``M_r e``
TransD                    ``e + (e_p . e) r_p``
TranSparseShare           ``(M_r * mask_r) e`` for both sides
TranSparseSeparate        ``(M_r^side * mask_r^side) e``
========================  ================================================

All heavy lifting is batched: ``h``, ``r`` and ``t`` are integer arrays of
equal length.
"""

from __future__ import annotations

import copy
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError

VARIANTS = ("TransE", "TransH", "TransR", "TransD", "TranSparseShare", "TranSparseSeparate")
_ALIASES = {v.lower(): v for v in VARIANTS}
_ALIASES.update({"transparse_share": "TranSparseShare", "transparse_separate": "TranSparseSeparate",
                 "transparse-share": "TranSparseShare", "transparse-separate": "TranSparseSeparate"})
_SQUARE = ("TransE", "TransH", "TransD")
_PROJECTED = ("TransR", "TransD", "TranSparseShare", "TranSparseSeparate")
SIDES = ("head", "tail")


@dataclass(frozen=True)
class ModelKind:
    variant: str = "TransE"
    distance_norm: str = "L1"

    def __post_init__(self):
        v = _ALIASES.get(str(self.variant).lower())
        if v is None:
            raise ConfigError(f"unknown model variant {self.variant!r}; expected one of {VARIANTS}")
        object.__setattr__(self, "variant", v)
        norm = str(self.distance_norm).upper()
        if norm not in ("L1", "L2"):
            raise ConfigError("distance_norm must be 'L1' or 'L2'")
        object.__setattr__(self, "distance_norm", norm)

    @property
    def sparse(self):
        return self.variant.startswith("TranSparse")


@dataclass
class ModelParams:
    """Embedding state for one model.

    ``tensors`` holds every trainable array by name: ``entity`` (E, d),
    ``relation`` (R, k), and per variant ``normal`` (R, d), ``matrix``
    ((R, k, d), or (R, 2, k, d) for TranSparseSeparate), ``entity_proj``
    (E, d), ``relation_proj`` (R, k). ``mask`` matches ``matrix`` for the
    sparse variants.
    """

    kind: ModelKind
    d: int
    k: int
    tensors: dict
    mask: Optional[np.ndarray] = None
    theta: Optional[np.ndarray] = None
    seed: int = 0
    mask_seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_entities(self):
        return self.tensors["entity"].shape[0]

    @property
    def n_relations(self):
        return self.tensors["relation"].shape[0]

    def __getitem__(self, name):
        return self.tensors[name]

    def copy(self):
        return copy.deepcopy(self)


def _uniform_rows(rng, n, dim):
    bound = 6.0 / math.sqrt(dim)
    return rng.uniform(-bound, bound, size=(n, dim))


def _normalize_rows(x):
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.where(norms > 0, norms, 1.0)


def build_masks(theta, d, k, seed):
    """Boolean keep-masks with exactly ``floor(theta * d * k)`` zeros each.

    Zeros are drawn uniformly among off-diagonal entries first; the diagonal
    is only thinned once every off-diagonal entry is already zero.
    """
    theta = np.asarray(theta, dtype=float)
    rng = np.random.default_rng(seed)
    diag = np.zeros((k, d), dtype=bool)
    diag[np.arange(min(d, k)), np.arange(min(d, k))] = True
    off_idx = np.flatnonzero(~diag.ravel())
    diag_idx = np.flatnonzero(diag.ravel())
    masks = np.ones(theta.shape + (k, d), dtype=bool)
    for pos in np.ndindex(theta.shape):
        n_zero = int(math.floor(theta[pos] * d * k + 1e-9))
        n_zero = min(max(n_zero, 0), d * k)
        flat = masks[pos].reshape(-1)
        if n_zero <= len(off_idx):
            flat[rng.permutation(off_idx)[:n_zero]] = False
        else:
            flat[off_idx] = False
            flat[rng.permutation(diag_idx)[: n_zero - len(off_idx)]] = False
    return masks


def sparse_degree(counts, theta_min=0.3, d=20, k=20, seed=0):
    """Sparseness ``theta = 1 - (1 - theta_min) * N / N_max`` and its masks.

    ``counts`` is per relation (shared matrices) or per (relation, side)
    (separate matrices); the output shapes follow it.
    """
    if not 0.0 <= theta_min < 1.0:
        raise ValueError("theta_min must lie in [0, 1)")
    counts = np.asarray(counts, dtype=float)
    top = counts.max() if counts.size else 0.0
    if top <= 0:
        theta = np.full(counts.shape, theta_min)
    else:
        theta = 1.0 - (1.0 - theta_min) * counts / top
    return theta, build_masks(theta, d, k, seed)


def init_params(
    kind: ModelKind,
    entity_count: int,
    relation_count: int,
    d: int = 20,
    seed: int = 0,
    k: Optional[int] = None,
    theta=None,
    theta_min: float = 0.3,
    mask_seed: Optional[int] = None,
) -> ModelParams:
    if d < 1:
        raise ValueError("d must be >= 1")
    k = d if k is None else k
    if kind.variant in _SQUARE and k != d:
        raise ValueError(f"{kind.variant} requires k == d")
    rng = np.random.default_rng(seed)
    tensors = {
        "entity": _normalize_rows(_uniform_rows(rng, entity_count, d)),
        "relation": _normalize_rows(_uniform_rows(rng, relation_count, k)),
    }
    mask = None
    if kind.variant == "TransH":
        tensors["normal"] = _normalize_rows(_uniform_rows(rng, relation_count, d))
    elif kind.variant == "TransR":
        tensors["matrix"] = np.tile(np.eye(k, d), (relation_count, 1, 1))
    elif kind.variant == "TransD":
        tensors["entity_proj"] = _normalize_rows(_uniform_rows(rng, entity_count, d))
        tensors["relation_proj"] = _normalize_rows(_uniform_rows(rng, relation_count, k))
    elif kind.sparse:
        shape = (relation_count,) if kind.variant == "TranSparseShare" else (relation_count, 2)
        theta = np.full(shape, theta_min) if theta is None else np.asarray(theta, dtype=float)
        if theta.shape != shape:
            raise ValueError(f"theta must have shape {shape}, got {theta.shape}")
        mask_seed = seed if mask_seed is None else mask_seed
        mask = build_masks(theta, d, k, mask_seed)
        tensors["matrix"] = np.broadcast_to(np.eye(k, d), mask.shape) * mask
    return ModelParams(kind, d, k, tensors, mask=mask, theta=theta, seed=seed,
                       mask_seed=mask_seed if mask_seed is not None else seed)


def _matrices(params, r, side):
    """Effective (masked) projection matrices for relation ids ``r``."""
    M = params.tensors["matrix"]
    if params.kind.variant == "TranSparseSeparate":
        s = SIDES.index(side)
        return M[r, s] * params.mask[r, s]
    if params.kind.variant == "TranSparseShare":
        return M[r] * params.mask[r]
    return M[r]


def project_batch(params: ModelParams, e, r, side="head"):
    e = np.asarray(e)
    r = np.asarray(r)
    x = params.tensors["entity"][e]
    v = params.kind.variant
    if v == "TransE":
        return x
    if v == "TransH":
        w = params.tensors["normal"][r]
        return x - np.sum(w * x, axis=-1, keepdims=True) * w
    if v == "TransD":
        ep = params.tensors["entity_proj"][e]
        rp = params.tensors["relation_proj"][r]
        return x + np.sum(ep * x, axis=-1, keepdims=True) * rp
    return np.einsum("...kd,...d->...k", _matrices(params, r, side), x)


def project(params: ModelParams, e: int, r: int, side="head") -> np.ndarray:
    return project_batch(params, np.array([e]), np.array([r]), side)[0]


def _norm(v, kind):
    if kind.distance_norm == "L1":
        return np.abs(v).sum(axis=-1)
    return np.sqrt((v * v).sum(axis=-1))


def _residual(params, h, r, t):
    ph = project_batch(params, h, r, "head")
    pt = project_batch(params, t, r, "tail")
    return ph + params.tensors["relation"][r] - pt


def score_batch(params: ModelParams, h, r, t) -> np.ndarray:
    h, r, t = np.broadcast_arrays(np.asarray(h), np.asarray(r), np.asarray(t))
    return _norm(_residual(params, h, r, t), params.kind)


def score(params: ModelParams, h: int, r: int, t: int) -> float:
    return float(score_batch(params, np.array([h]), np.array([r]), np.array([t]))[0])


def _outer_grad(v, kind):
    if kind.distance_norm == "L1":
        return np.sign(v)
    n = np.sqrt((v * v).sum(axis=-1, keepdims=True))
    return np.divide(v, n, out=np.zeros_like(v), where=n > 0)


def grad_rows(params: ModelParams, h, r, t):
    """Per-triplet gradient rows of the score.

    Returns a list of ``(tensor name, index, rows)``: ``rows[i]`` is the
    derivative of ``score(h[i], r[i], t[i])`` w.r.t. ``tensor[index[i]]``.
    ``index`` is an int array, or a tuple of arrays for 4-d matrices.
    """
    h, r, t = (np.asarray(a) for a in (h, r, t))
    T = params.tensors
    v = params.kind.variant
    g = _outer_grad(_residual(params, h, r, t), params.kind)
    eh, et = T["entity"][h], T["entity"][t]
    out = [("relation", r, g)]
    if v == "TransE":
        out += [("entity", h, g), ("entity", t, -g)]
    elif v == "TransH":
        w = T["normal"][r]
        wg = np.sum(w * g, axis=-1, keepdims=True)
        ge = g - wg * w
        diff = eh - et
        wd = np.sum(w * diff, axis=-1, keepdims=True)
        out += [("entity", h, ge), ("entity", t, -ge), ("normal", r, -wd * g - wg * diff)]
    elif v == "TransD":
        hp, tp = T["entity_proj"][h], T["entity_proj"][t]
        rp = T["relation_proj"][r]
        rg = np.sum(rp * g, axis=-1, keepdims=True)
        hh = np.sum(hp * eh, axis=-1, keepdims=True)
        tt = np.sum(tp * et, axis=-1, keepdims=True)
        out += [
            ("entity", h, g + rg * hp),
            ("entity", t, -(g + rg * tp)),
            ("entity_proj", h, rg * eh),
            ("entity_proj", t, -rg * et),
            ("relation_proj", r, (hh - tt) * g),
        ]
    elif v == "TranSparseSeparate":
        Mh, Mt = _matrices(params, r, "head"), _matrices(params, r, "tail")
        out += [
            ("entity", h, np.einsum("bkd,bk->bd", Mh, g)),
            ("entity", t, -np.einsum("bkd,bk->bd", Mt, g)),
            ("matrix", (r, np.zeros_like(r)), g[:, :, None] * eh[:, None, :] * params.mask[r, 0]),
            ("matrix", (r, np.ones_like(r)), -g[:, :, None] * et[:, None, :] * params.mask[r, 1]),
        ]
    else:  # TransR, TranSparseShare
        M = _matrices(params, r, "head")
        mtg = np.einsum("bkd,bk->bd", M, g)
        gm = g[:, :, None] * (eh - et)[:, None, :]
        if params.mask is not None:
            gm = gm * params.mask[r]
        out += [("entity", h, mtg), ("entity", t, -mtg), ("matrix", r, gm)]
    return out


def accumulate_grads(params: ModelParams, h, r, t, coef, grads: dict):
    """Add ``coef[i] * d score_i`` into the dense gradient dict ``grads``."""
    coef = np.asarray(coef, dtype=float)
    for name, idx, rows in grad_rows(params, h, r, t):
        c = coef.reshape((-1,) + (1,) * (rows.ndim - 1))
        if name not in grads:
            grads[name] = np.zeros_like(params.tensors[name])
        np.add.at(grads[name], idx, c * rows)
    return grads


def grad_score(params: ModelParams, h: int, r: int, t: int) -> dict:
    """Sparse gradient of one score: ``{(tensor name, index): array}``."""
    out: dict = defaultdict(lambda: 0.0)
    for name, idx, rows in grad_rows(params, np.array([h]), np.array([r]), np.array([t])):
        key = tuple(int(i[0]) for i in idx) if isinstance(idx, tuple) else int(idx[0])
        out[(name, key)] = out[(name, key)] + rows[0]
    return dict(out)


def apply_constraints(params: ModelParams, entities=None, pairs=None, projected=True):
    """Project parameters back onto the feasible set, in place.

    Entity rows are scaled to L2 norm <= 1 and hyperplane normals to unit
    norm. With ``projected``, for the variants that map entities into a
    relation space, each touched (entity, relation, side) triple also gets
    ``||proj(e)|| <= 1`` by shrinking the entity; every such projection is
    linear in the entity, so shrinking never breaks an earlier pair.
    """
    T = params.tensors
    ent = T["entity"]
    rows = np.arange(len(ent)) if entities is None else np.unique(np.asarray(entities))
    norms = np.linalg.norm(ent[rows], axis=1)
    over = norms > 1.0
    ent[rows[over]] /= norms[over][:, None]
    if "normal" in T:
        T["normal"][:] = _normalize_rows(T["normal"])
    if projected and params.kind.variant in _PROJECTED and pairs is not None:
        e, r, side = (np.asarray(a) for a in pairs)
        factor = np.ones(len(ent))
        for s, name in enumerate(SIDES):
            sel = side == s
            if not sel.any():
                continue
            pn = np.linalg.norm(project_batch(params, e[sel], r[sel], name), axis=1)
            np.maximum.at(factor, e[sel], pn)
        shrink = factor > 1.0
        ent[shrink] /= factor[shrink][:, None]
    if params.mask is not None:
        T["matrix"] *= params.mask
    return params
