"""Synthetic EMR world: planted conditionals, visit sampling, triplet extraction.

A world is a three-level disease forest (chapter / category / subcategory)
plus five pools of tail entities. Every leaf disease carries a planted
profile ``P(tail | disease)`` per EMR relation. Sibling leaves draw most of
their tails from a shared category profile, so held-out (head, relation)
groups remain predictable from the rest of the graph.
"""

from __future__ import annotations

import json
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .errors import ConfigError, ExtractionError
from .kg import (
    ENTITY_TYPES,
    HIERARCHY_RELATION,
    RELATION_BY_TAIL_TYPE,
    RELATIONS,
    DiseaseHierarchy,
    Entity,
    GroundTruthLabel,
    KnowledgeGraph,
    ProbTriplet,
)

TAIL_TYPES = tuple(t for t in ENTITY_TYPES if t != "disease")
_CODE_PREFIX = {
    "medicine": "MED",
    "symptom": "SYM",
    "operation": "OPR",
    "laboratory": "LAB",
    "examination": "EXM",
}


@dataclass(frozen=True)
class WorldConfig:
    chapters: int = 4
    categories_per_chapter: int = 3
    subcategories_per_category: int = 2
    n_medicine: int = 100
    n_symptom: int = 100
    n_operation: int = 100
    n_laboratory: int = 100
    n_examination: int = 100
    # tails per category profile, inclusive range; the defaults give every
    # disease of a chapter the same tail set, differing only in probabilities
    fan_out_min: int = 20
    fan_out_max: int = 20
    # tails of each type a chapter's categories draw from
    chapter_pool: int = 20
    keep_prob: float = 1.0
    jitter: float = 0.3
    private_max: int = 0
    p_min: float = 0.01
    pareto_shape: float = 0.3
    seed: int = 0

    def __post_init__(self):
        for name in ("chapters", "categories_per_chapter", "subcategories_per_category"):
            if getattr(self, name) < 1:
                raise ConfigError(f"world.{name} must be >= 1")
        for t in TAIL_TYPES:
            if getattr(self, f"n_{t}") < 1:
                raise ConfigError(f"world.n_{t} must be >= 1")
        if self.categories_per_chapter > 10:
            raise ConfigError("world.categories_per_chapter must be <= 10 (one code digit)")
        if self.subcategories_per_category > 100:
            raise ConfigError("world.subcategories_per_category must be <= 100")
        if not 1 <= self.fan_out_min <= self.fan_out_max:
            raise ConfigError("world.fan_out_min/fan_out_max must satisfy 1 <= min <= max")
        if self.chapter_pool < 1:
            raise ConfigError("world.chapter_pool must be >= 1")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ConfigError("world.keep_prob must lie in (0, 1]")
        if not 0.0 < self.p_min < 1.0:
            raise ConfigError("world.p_min must lie in (0, 1)")
        if self.pareto_shape <= 0 or self.jitter < 0 or self.private_max < 0:
            raise ConfigError("world.pareto_shape must be > 0; jitter, private_max >= 0")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown world keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class World:
    config: WorldConfig
    entities: list[Entity]
    hierarchy: DiseaseHierarchy
    # (leaf disease, relation id) -> {tail id: planted probability}
    profiles: dict[tuple[int, int], dict[int, float]]

    @property
    def graph(self) -> KnowledgeGraph:
        return KnowledgeGraph(self.entities, self.hierarchy)

    def leaves(self) -> list[int]:
        return self.hierarchy.leaves()

    def planted(self, h: int, r: int) -> dict[int, float]:
        """Planted ``P(tail | h)`` for any disease, rolled up over leaves.

        Leaf primaries are uniform, so an inner node's conditional is the
        mean of its leaves' conditionals.
        """
        if r == HIERARCHY_RELATION:
            return {c: 1.0 for c in self.hierarchy.children(h)}
        leaves = self.hierarchy.descendant_leaves(h)
        acc: dict[int, float] = defaultdict(float)
        for leaf in leaves:
            for t, p in self.profiles.get((leaf, r), {}).items():
                acc[t] += p
        return {t: acc[t] / len(leaves) for t in sorted(acc)}


def _bounded_pareto(rng, size, low, shape):
    u = rng.random(size)
    return low / (1.0 - u * (1.0 - low**shape)) ** (1.0 / shape)


def generate_world(config: WorldConfig) -> World:
    rng = np.random.default_rng(config.seed)
    entities: list[Entity] = []
    parent: dict[int, Optional[int]] = {}

    def add(entity_type, code):
        entities.append(Entity(len(entities), entity_type, code))
        return len(entities) - 1

    chapters, categories = [], []
    cat_chapter = {}
    for i in range(config.chapters):
        code = f"{chr(65 + i % 26)}{i // 26:02d}"
        d = add("disease", code)
        parent[d] = None
        chapters.append(d)
    for ch in chapters:
        for j in range(config.categories_per_chapter):
            d = add("disease", f"{entities[ch].code}.{j}")
            parent[d] = ch
            categories.append(d)
            cat_chapter[d] = ch
    leaf_category = {}
    for cat in categories:
        for k in range(config.subcategories_per_category):
            d = add("disease", f"{entities[cat].code}{k:02d}")
            parent[d] = cat
            leaf_category[d] = cat

    tails_of: dict[str, np.ndarray] = {}
    for t in TAIL_TYPES:
        n = getattr(config, f"n_{t}")
        start = len(entities)
        for i in range(n):
            add(t, f"{_CODE_PREFIX[t]}{i + 1:04d}")
        tails_of[t] = np.arange(start, start + n)

    hierarchy = DiseaseHierarchy(parent)
    profiles: dict[tuple[int, int], dict[int, float]] = {}
    for t in TAIL_TYPES:
        r = RELATION_BY_TAIL_TYPE[t]
        all_tails = tails_of[t]
        pool_size = min(config.chapter_pool, len(all_tails))
        if pool_size * len(chapters) <= len(all_tails):
            # disjoint pools keep each tail specific to one chapter
            perm = rng.permutation(all_tails)
            pools = {ch: perm[i * pool_size:(i + 1) * pool_size] for i, ch in enumerate(chapters)}
        else:
            pools = {ch: rng.choice(all_tails, size=pool_size, replace=False) for ch in chapters}
        cat_profile = {}
        for cat in categories:
            pool = pools[cat_chapter[cat]]
            n = int(rng.integers(config.fan_out_min, config.fan_out_max + 1))
            n = min(n, len(pool))
            chosen = rng.choice(pool, size=n, replace=False)
            base = _bounded_pareto(rng, n, config.p_min, config.pareto_shape)
            cat_profile[cat] = dict(zip(chosen.tolist(), base.tolist()))
        for leaf, cat in leaf_category.items():
            prof = {}
            for tail, base in cat_profile[cat].items():
                if rng.random() < config.keep_prob:
                    p = base * np.exp(config.jitter * rng.standard_normal())
                    prof[tail] = float(min(1.0, max(config.p_min, p)))
            n_private = int(rng.integers(0, config.private_max + 1))
            free = np.setdiff1d(all_tails, list(cat_profile[cat]))
            if n_private and len(free):
                extra = rng.choice(free, size=min(n_private, len(free)), replace=False)
                ps = _bounded_pareto(rng, len(extra), config.p_min, config.pareto_shape)
                for tail, p in zip(extra.tolist(), ps.tolist()):
                    prof[tail] = float(p)
            if not prof:
                # keep every leaf related to at least one tail per relation
                tail, base = next(iter(cat_profile[cat].items()))
                prof[tail] = float(base)
            profiles[(leaf, r)] = dict(sorted(prof.items()))
    return World(config, entities, hierarchy, profiles)


@dataclass(frozen=True)
class VisitRecord:
    visit_id: int
    primary_disease: int
    observed: dict  # entity type -> frozenset of entity ids


class VisitSet(Sequence[VisitRecord]):
    """Columnar store of visits; indexing yields :class:`VisitRecord`.

    ``obs_indptr[i]:obs_indptr[i + 1]`` slices ``obs_entities`` for visit i.
    """

    def __init__(self, visit_ids, primaries, obs_indptr, obs_entities, entity_types):
        self.visit_ids = np.asarray(visit_ids, dtype=np.int64)
        self.primaries = np.asarray(primaries, dtype=np.int64)
        self.obs_indptr = np.asarray(obs_indptr, dtype=np.int64)
        self.obs_entities = np.asarray(obs_entities, dtype=np.int64)
        self._types = entity_types

    def __len__(self):
        return len(self.visit_ids)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        ents = self.obs_entities[self.obs_indptr[i]:self.obs_indptr[i + 1]]
        observed = defaultdict(set)
        for e in ents.tolist():
            observed[self._types[e]].add(e)
        return VisitRecord(
            int(self.visit_ids[i]),
            int(self.primaries[i]),
            {k: frozenset(v) for k, v in observed.items()},
        )

    def __iter__(self) -> Iterator[VisitRecord]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_records(cls, records: Iterable[VisitRecord], entity_types):
        ids, prim, indptr, ents = [], [], [0], []
        for rec in records:
            ids.append(rec.visit_id)
            prim.append(rec.primary_disease)
            obs = sorted(e for group in rec.observed.values() for e in group)
            ents.extend(obs)
            indptr.append(len(ents))
        return cls(ids, prim, indptr, ents, entity_types)


_CHUNK = 10_000


def _sample_chunk(world, leaves, seed, chunk, start, n):
    rng = np.random.default_rng([seed, chunk])
    primaries = leaves[rng.integers(0, len(leaves), size=n)]
    rows, ents = [], []
    for leaf in leaves.tolist():
        idx = np.flatnonzero(primaries == leaf)
        if not len(idx):
            continue
        for r in range(len(RELATIONS)):
            prof = world.profiles.get((leaf, r))
            if not prof:
                continue
            tails = np.fromiter(prof.keys(), dtype=np.int64)
            ps = np.fromiter(prof.values(), dtype=np.float64)
            hit = rng.random((len(idx), len(tails))) < ps
            vi, ti = np.nonzero(hit)
            rows.append(idx[vi])
            ents.append(tails[ti])
    rows = np.concatenate(rows) if rows else np.empty(0, np.int64)
    ents = np.concatenate(ents) if ents else np.empty(0, np.int64)
    order = np.lexsort((ents, rows))
    rows, ents = rows[order], ents[order]
    counts = np.bincount(rows, minlength=n)
    return np.arange(start, start + n), primaries, counts, ents


def sample_visits(world: World, n_visits: int, seed: int, workers: int = 1) -> VisitSet:
    """Draw visits: a uniform leaf primary, then each planted tail independently.

    Visits are generated in fixed chunks with per-chunk seeds, so the result
    does not depend on ``workers``.
    """
    if n_visits < 0:
        raise ValueError("n_visits must be >= 0")
    types = [e.entity_type for e in world.entities]
    leaves = np.asarray(world.leaves(), dtype=np.int64)
    jobs = [
        (chunk, start, min(_CHUNK, n_visits - start))
        for chunk, start in enumerate(range(0, n_visits, _CHUNK))
    ]
    run = lambda job: _sample_chunk(world, leaves, seed, *job)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(job) for job in jobs]
    if not parts:
        return VisitSet([], [], [0], [], types)
    ids = np.concatenate([p[0] for p in parts])
    prim = np.concatenate([p[1] for p in parts])
    counts = np.concatenate([p[2] for p in parts])
    ents = np.concatenate([p[3] for p in parts])
    indptr = np.concatenate([[0], np.cumsum(counts)])
    return VisitSet(ids, prim, indptr, ents, types)


def extract_triplets(visits, graph: KnowledgeGraph) -> list[ProbTriplet]:
    """Count co-occurrences with ICD rollup and emit probabilistic triplets.

    A visit holds its primary disease and every ancestor of it; each observed
    tail is credited to all held diseases. Hierarchy edges become
    ``upper_disease_to_lower_disease`` triplets with probability 1.
    """
    if not isinstance(visits, VisitSet):
        visits = VisitSet.from_records(visits, [e.entity_type for e in graph.entities])
    hierarchy = graph.hierarchy
    n_ent = graph.n_entities
    types = [e.entity_type for e in graph.entities]

    prim = visits.primaries
    bad = [i for i, d in enumerate(prim.tolist()) if not 0 <= d < n_ent or d not in hierarchy]
    if bad:
        raise ExtractionError(int(visits.visit_ids[bad[0]]), f"unknown primary disease {prim[bad[0]]}")
    ents = visits.obs_entities
    visit_of_obs = np.repeat(np.arange(len(visits)), np.diff(visits.obs_indptr))
    invalid = (ents < 0) | (ents >= n_ent)
    if not invalid.any():
        invalid = np.array([types[e] not in RELATION_BY_TAIL_TYPE for e in ents.tolist()], dtype=bool)
    if invalid.any():
        i = int(np.flatnonzero(invalid)[0])
        raise ExtractionError(int(visits.visit_ids[visit_of_obs[i]]), f"unknown observed entity {ents[i]}")

    holders = {d: [d, *hierarchy.ancestors(d)] for d in hierarchy.parent}
    primary_counts = np.bincount(prim, minlength=n_ent)
    head_count: dict[int, int] = defaultdict(int)
    for d in np.flatnonzero(primary_counts).tolist():
        for h in holders[d]:
            head_count[h] += int(primary_counts[d])

    pair_keys = prim[visit_of_obs] * n_ent + ents
    uniq, cnt = np.unique(pair_keys, return_counts=True)
    co: dict[tuple[int, int], int] = defaultdict(int)
    for key, c in zip(uniq.tolist(), cnt.tolist()):
        d, t = divmod(key, n_ent)
        for h in holders[d]:
            co[(h, t)] += c

    out = []
    for (h, t), c in co.items():
        r = RELATION_BY_TAIL_TYPE[types[t]]
        out.append(ProbTriplet(h, r, t, c / head_count[h], c, head_count[h]))
    for par, child in hierarchy.edges():
        out.append(ProbTriplet(par, HIERARCHY_RELATION, child, 1.0))
    out.sort(key=lambda tr: tr.key)
    return out


def derive_ground_truth(
    world: World, thresholds=(0.5, 0.2, 0.05), heads: Optional[Iterable[int]] = None
) -> list[GroundTruthLabel]:
    """Grade planted conditionals into relevance 3/2/1; below ``t1`` is unlabeled."""
    t3, t2, t1 = thresholds
    if not t3 > t2 > t1 > 0:
        raise ConfigError(f"thresholds must satisfy t3 > t2 > t1 > 0, got {thresholds}")
    if heads is None:
        heads = sorted(world.hierarchy.parent)
    labels = []
    for h in heads:
        for r in sorted(RELATION_BY_TAIL_TYPE.values()):
            for t, p in world.planted(h, r).items():
                rel = 3 if p >= t3 else 2 if p >= t2 else 1 if p >= t1 else 0
                if rel:
                    labels.append(GroundTruthLabel(h, r, t, rel))
    return labels


# ---------------------------------------------------------------------------
# file formats


def write_visits(path, visits: VisitSet):
    types = visits._types
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("visit_id\tprimary_disease_id\tobservations\n")
        for i in range(len(visits)):
            ents = visits.obs_entities[visits.obs_indptr[i]:visits.obs_indptr[i + 1]]
            obs = ";".join(f"{types[e]}:{e}" for e in ents.tolist())
            fh.write(f"{visits.visit_ids[i]}\t{visits.primaries[i]}\t{obs}\n")


def read_visits(path, entity_types: Sequence[str]) -> VisitSet:
    ids, prim, indptr, ents = [], [], [0], []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != ["visit_id", "primary_disease_id", "observations"]:
            raise ValueError(f"{path}: unexpected header {header}")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields")
            vid = int(parts[0])
            ids.append(vid)
            prim.append(int(parts[1]))
            for tok in filter(None, parts[2].split(";")):
                typ, _, eid = tok.partition(":")
                e = int(eid)
                if not 0 <= e < len(entity_types) or entity_types[e] != typ:
                    raise ExtractionError(vid, f"observation {tok!r} does not match the entity table")
                ents.append(e)
            indptr.append(len(ents))
    return VisitSet(ids, prim, indptr, ents, list(entity_types))


def world_to_json(world: World) -> dict:
    return {
        "config": asdict(world.config),
        "entities": [[e.id, e.entity_type, e.code] for e in world.entities],
        "hierarchy": [[c, p] for p, c in world.hierarchy.edges()],
        "profiles": [
            {"disease": d, "relation": r, "tails": [[t, p] for t, p in prof.items()]}
            for (d, r), prof in sorted(world.profiles.items())
        ],
    }


def world_from_json(doc: dict) -> World:
    entities = [Entity(i, typ, code) for i, typ, code in doc["entities"]]
    parent = {e.id: None for e in entities if e.entity_type == "disease"}
    for c, p in doc["hierarchy"]:
        parent[c] = p
    profiles = {
        (item["disease"], item["relation"]): {t: p for t, p in item["tails"]}
        for item in doc["profiles"]
    }
    return World(WorldConfig.from_dict(doc["config"]), entities, DiseaseHierarchy(parent), profiles)


def save_world(path, world: World, **extra):
    """Write ``world.json``; ``extra`` keys (e.g. a run-config echo) ride along."""
    doc = {**world_to_json(world), **extra}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_world(path) -> World:
    return world_from_json(json.loads(Path(path).read_text(encoding="utf-8")))
