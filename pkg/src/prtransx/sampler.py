"""Bernoulli negative sampling with type and ICD-class constraints."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import SamplingError
from .kg import HIERARCHY_RELATION, KnowledgeGraph, ProbTriplet


@dataclass(frozen=True)
class BernoulliStats:
    tph: np.ndarray  # mean distinct tails per head, per relation
    hpt: np.ndarray  # mean distinct heads per tail, per relation

    @property
    def replace_head_prob(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            p = self.tph / (self.tph + self.hpt)
        return np.where(np.isfinite(p), p, 0.5)


@dataclass(frozen=True)
class NegativePair:
    positive: ProbTriplet
    negative: tuple[int, int, int]


def compute_bernoulli_stats(triplets: Iterable[ProbTriplet], n_relations: int) -> BernoulliStats:
    triplets = list(triplets)
    if not triplets:
        raise ValueError("cannot compute Bernoulli statistics of an empty training set")
    arr = np.array([tr.key for tr in triplets], dtype=np.int64)
    tph = np.zeros(n_relations)
    hpt = np.zeros(n_relations)
    for r in range(n_relations):
        sel = arr[arr[:, 1] == r]
        if len(sel):
            tph[r] = len(sel) / len(np.unique(sel[:, 0]))
            hpt[r] = len(sel) / len(np.unique(sel[:, 2]))
    return BernoulliStats(tph, hpt)


class NegativeSampler:
    """Corrupts positives by replacing the head or the tail.

    Replacements come uniformly from the entities of the type the relation
    requires. A candidate is rejected when the corrupted triplet is a known
    positive, or, for head replacement, when the new head shares an ICD class
    with the original. For the disease-to-disease hierarchy relation the
    class rule also applies to tail replacement. Rejected draws are redrawn
    up to ``max_retries`` times.
    """

    def __init__(
        self,
        graph: KnowledgeGraph,
        stats: BernoulliStats,
        positives: Iterable[ProbTriplet],
        max_retries: int = 100,
        class_exclusion: bool = True,
    ):
        self.graph = graph
        self.stats = stats
        self.max_retries = max_retries
        self.class_exclusion = class_exclusion
        self.n_ent = graph.n_entities
        self.n_rel = graph.n_relations
        keys = {self._encode(tr.h, tr.r, tr.t) for tr in positives}
        self._positive_keys = np.array(sorted(keys), dtype=np.int64)
        # class id = hierarchy root; non-diseases get a unique negative id
        cls = -1 - np.arange(self.n_ent)
        for d in graph.hierarchy.parent:
            cls[d] = graph.hierarchy.root(d)
        self._class = cls
        self._pools = [
            (graph.ids_of_type(rel.head_type), graph.ids_of_type(rel.tail_type))
            for rel in graph.relations
        ]
        self._p_head = stats.replace_head_prob

    def _encode(self, h, r, t):
        return (np.asarray(h, dtype=np.int64) * self.n_rel + r) * self.n_ent + t

    def is_positive(self, h, r, t) -> np.ndarray:
        keys = self._encode(h, r, t)
        if not len(self._positive_keys):
            return np.zeros(keys.shape, dtype=bool)
        pos = np.searchsorted(self._positive_keys, keys)
        pos = np.minimum(pos, len(self._positive_keys) - 1)
        return self._positive_keys[pos] == keys

    def _draw(self, r, replace_head, rng):
        out = np.empty(len(r), dtype=np.int64)
        for rel in np.unique(r).tolist():
            heads, tails = self._pools[rel]
            for flag, pool in ((True, heads), (False, tails)):
                sel = (r == rel) & (replace_head == flag)
                n = int(sel.sum())
                if n:
                    if not len(pool):
                        raise SamplingError((None, rel, None), 0)
                    out[sel] = pool[rng.integers(0, len(pool), size=n)]
        return out

    def _valid(self, h, r, t, new_h, new_t, replace_head):
        ok = ~self.is_positive(new_h, r, new_t)
        if self.class_exclusion:
            same_head = self._class[new_h] == self._class[h]
            same_tail = self._class[new_t] == self._class[t]
            ok &= ~(replace_head & same_head)
            ok &= ~(~replace_head & (r == HIERARCHY_RELATION) & same_tail)
        return ok

    def sample_batch(self, h, r, t, rng: np.random.Generator):
        """Return corrupted (heads, tails) arrays and the replace-head flags."""
        h, r, t = (np.asarray(a, dtype=np.int64) for a in (h, r, t))
        replace_head = rng.random(len(r)) < self._p_head[r]
        new_h, new_t = h.copy(), t.copy()
        todo = np.arange(len(r))
        for _ in range(self.max_retries):
            if not len(todo):
                break
            cand = self._draw(r[todo], replace_head[todo], rng)
            rh = replace_head[todo]
            nh = np.where(rh, cand, h[todo])
            nt = np.where(rh, t[todo], cand)
            ok = self._valid(h[todo], r[todo], t[todo], nh, nt, rh)
            new_h[todo[ok]] = nh[ok]
            new_t[todo[ok]] = nt[ok]
            todo = todo[~ok]
        if len(todo):
            i = int(todo[0])
            raise SamplingError((int(h[i]), int(r[i]), int(t[i])), self.max_retries)
        return new_h, new_t, replace_head

    def sample(self, positive: ProbTriplet, rng: np.random.Generator) -> NegativePair:
        nh, nt, _ = self.sample_batch([positive.h], [positive.r], [positive.t], rng)
        return NegativePair(positive, (int(nh[0]), positive.r, int(nt[0])))


def sample_negative(
    positive: ProbTriplet,
    sampler: NegativeSampler,
    rng: Optional[np.random.Generator] = None,
) -> NegativePair:
    return sampler.sample(positive, rng if rng is not None else np.random.default_rng())
