"""Domain model for the probabilistic medical knowledge graph.

Entities, the fixed relation schema, probabilistic triplets, triplet groups,
the disease hierarchy and the group-level train/test split, plus the TSV/JSON
formats they are stored in.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ConflictingTripletError

ENTITY_TYPES = ("disease", "medicine", "symptom", "operation", "laboratory", "examination")


@dataclass(frozen=True)
class Entity:
    id: int
    entity_type: str
    code: str

    def __post_init__(self):
        if self.entity_type not in ENTITY_TYPES:
            raise ValueError(f"unknown entity type {self.entity_type!r}")


@dataclass(frozen=True)
class Relation:
    id: int
    name: str
    head_type: str
    tail_type: str
    is_prior_knowledge: bool = False


# Order matters: per-relation loss weights are given in this sequence.
RELATIONS = (
    Relation(0, "disease_to_medicine", "disease", "medicine"),
    Relation(1, "disease_to_symptom", "disease", "symptom"),
    Relation(2, "disease_to_operation", "disease", "operation"),
    Relation(3, "disease_to_laboratory", "disease", "laboratory"),
    Relation(4, "disease_to_examination", "disease", "examination"),
    Relation(5, "upper_disease_to_lower_disease", "disease", "disease", True),
)
RELATION_BY_NAME = {rel.name: rel for rel in RELATIONS}
HIERARCHY_RELATION = RELATION_BY_NAME["upper_disease_to_lower_disease"].id
PRIOR_RELATIONS = frozenset(rel.id for rel in RELATIONS if rel.is_prior_knowledge)
# The five EMR-derived relations are keyed by their tail type.
RELATION_BY_TAIL_TYPE = {
    rel.tail_type: rel.id for rel in RELATIONS if not rel.is_prior_knowledge
}


@dataclass(frozen=True)
class ProbTriplet:
    """A (head, relation, tail) fact with its empirical probability.

    ``cooccurrence_count`` and ``head_count`` are ``None`` for facts that do
    not come from counting (hierarchy edges).
    """

    h: int
    r: int
    t: int
    p: float
    cooccurrence_count: Optional[int] = None
    head_count: Optional[int] = None

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"probability {self.p!r} outside (0, 1] for {self.key}")
        if self.cooccurrence_count is not None and self.head_count is not None:
            if self.head_count <= 0 or self.cooccurrence_count < 0:
                raise ValueError(f"invalid counts for {self.key}")

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.h, self.r, self.t)


@dataclass(frozen=True)
class TripletGroup:
    """All tails sharing one (head, relation) pair, sorted by (-p, tail id)."""

    h: int
    r: int
    tails: tuple[tuple[int, float], ...]

    @property
    def key(self) -> tuple[int, int]:
        return (self.h, self.r)

    def __len__(self):
        return len(self.tails)

    def triplets(self) -> list[ProbTriplet]:
        return [ProbTriplet(self.h, self.r, t, p) for t, p in self.tails]


@dataclass(frozen=True)
class GroundTruthLabel:
    h: int
    r: int
    tail: int
    relevance: int

    def __post_init__(self):
        if self.relevance not in (1, 2, 3):
            raise ValueError(f"relevance must be 1, 2 or 3, got {self.relevance}")


@dataclass(frozen=True)
class DataSplit:
    train_groups: frozenset
    test_groups: frozenset
    seed: int = 0
    test_fraction: float = 0.2

    def __post_init__(self):
        overlap = self.train_groups & self.test_groups
        if overlap:
            raise ValueError(f"groups in both train and test: {sorted(overlap)[:5]}")


class DiseaseHierarchy:
    """Forest of diseases given by a child -> parent map (roots map to None)."""

    def __init__(self, parent: Mapping[int, Optional[int]]):
        self.parent: dict[int, Optional[int]] = dict(parent)
        for child, par in self.parent.items():
            if par is not None and par not in self.parent:
                raise ValueError(f"parent {par} of {child} is not a known disease")
        self._roots: dict[int, int] = {}
        for d in self.parent:
            self._roots[d] = self._find_root(d)
        self._children: dict[int, list[int]] = defaultdict(list)
        for child, par in sorted(self.parent.items()):
            if par is not None:
                self._children[par].append(child)

    def _find_root(self, d):
        seen = set()
        while self.parent[d] is not None:
            if d in seen:
                raise ValueError(f"cycle in disease hierarchy through {d}")
            seen.add(d)
            d = self.parent[d]
        return d

    def __contains__(self, d):
        return d in self.parent

    def __len__(self):
        return len(self.parent)

    def ancestors(self, d) -> list[int]:
        """Strict ancestors of ``d``, nearest first."""
        out = []
        p = self.parent[d]
        while p is not None:
            out.append(p)
            p = self.parent[p]
        return out

    def root(self, d) -> int:
        return self._roots[d]

    def children(self, d) -> list[int]:
        return list(self._children.get(d, ()))

    def is_leaf(self, d) -> bool:
        return d not in self._children

    def leaves(self) -> list[int]:
        return sorted(d for d in self.parent if self.is_leaf(d))

    def descendant_leaves(self, d) -> list[int]:
        stack, out = [d], []
        while stack:
            x = stack.pop()
            kids = self._children.get(x)
            if kids:
                stack.extend(kids)
            else:
                out.append(x)
        return sorted(out)

    def edges(self) -> list[tuple[int, int]]:
        """(parent, child) pairs sorted by child id."""
        return [(p, c) for c, p in sorted(self.parent.items()) if p is not None]

    def check_codes(self, entities: Sequence[Entity]):
        """Raise if a child's code does not extend its parent's code."""
        for parent, child in self.edges():
            pc, cc = entities[parent].code, entities[child].code
            if not (cc.startswith(pc) and len(cc) > len(pc)):
                raise ValueError(f"code {cc!r} does not extend parent code {pc!r}")


@dataclass
class KnowledgeGraph:
    """Entity table plus disease hierarchy; relations use the fixed schema."""

    entities: list[Entity]
    hierarchy: DiseaseHierarchy
    relations: tuple[Relation, ...] = RELATIONS
    _by_type: dict = field(default_factory=dict, init=False, repr=False)
    _by_code: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        for i, ent in enumerate(self.entities):
            if ent.id != i:
                raise ValueError(f"entity ids must be contiguous from 0; got {ent.id} at {i}")
        by_type = defaultdict(list)
        for ent in self.entities:
            by_type[ent.entity_type].append(ent.id)
            if ent.code in self._by_code:
                raise ValueError(f"duplicate entity code {ent.code!r}")
            self._by_code[ent.code] = ent.id
        self._by_type = {k: np.asarray(v, dtype=np.int64) for k, v in by_type.items()}
        for d in self.hierarchy.parent:
            if self.entities[d].entity_type != "disease":
                raise ValueError(f"hierarchy member {d} is not a disease")
        for ent in self.entities:
            if ent.entity_type == "disease" and ent.id not in self.hierarchy:
                raise ValueError(f"disease {ent.code} missing from hierarchy")

    @property
    def n_entities(self):
        return len(self.entities)

    @property
    def n_relations(self):
        return len(self.relations)

    def ids_of_type(self, entity_type) -> np.ndarray:
        return self._by_type.get(entity_type, np.empty(0, dtype=np.int64))

    def entity_types(self) -> np.ndarray:
        return np.array([ENTITY_TYPES.index(e.entity_type) for e in self.entities])

    def lookup(self, code) -> int:
        return self._by_code[code]

    def check_triplet(self, tr: ProbTriplet):
        rel = self.relations[tr.r]
        ht = self.entities[tr.h].entity_type
        tt = self.entities[tr.t].entity_type
        if ht != rel.head_type or tt != rel.tail_type:
            raise ValueError(
                f"triplet {tr.key} has types ({ht}, {tt}); {rel.name} needs "
                f"({rel.head_type}, {rel.tail_type})"
            )


def build_groups(triplets: Iterable[ProbTriplet]) -> list[TripletGroup]:
    """Partition triplets by (head, relation).

    Exact duplicates collapse to one member; duplicates with a different
    probability raise :class:`ConflictingTripletError`.
    """
    seen: dict[tuple[int, int, int], float] = {}
    members: dict[tuple[int, int], list[tuple[int, float]]] = defaultdict(list)
    for tr in triplets:
        prev = seen.get(tr.key)
        if prev is not None:
            if prev != tr.p:
                raise ConflictingTripletError(tr.key, prev, tr.p)
            continue
        seen[tr.key] = tr.p
        members[(tr.h, tr.r)].append((tr.t, tr.p))
    return [
        TripletGroup(h, r, tuple(sorted(tails, key=lambda tp: (-tp[1], tp[0]))))
        for (h, r), tails in sorted(members.items())
    ]


def top_k_filter(group: TripletGroup, k: int) -> TripletGroup:
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(group.tails) <= k:
        return group
    ordered = sorted(group.tails, key=lambda tp: (-tp[1], tp[0]))
    return TripletGroup(group.h, group.r, tuple(ordered[:k]))


def split_groups(
    groups,
    test_fraction: float,
    seed: int,
    prior_relations=PRIOR_RELATIONS,
    stratified: bool = True,
) -> DataSplit:
    """Assign whole triplet groups to train or test.

    ``groups`` may hold :class:`TripletGroup` objects or bare (h, r) keys.
    Prior-knowledge relations always go to train. For the rest,
    ``floor(test_fraction * n)`` groups are drawn into test, either per
    relation (``stratified``) or over the pooled non-prior groups.
    """
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError("test_fraction must lie in [0, 1)")
    keys = sorted({g.key if isinstance(g, TripletGroup) else tuple(g) for g in groups})
    rng = np.random.default_rng(seed)
    train, test = set(), set()
    by_rel: dict[int, list] = defaultdict(list)
    for key in keys:
        if key[1] in prior_relations:
            train.add(key)
        else:
            by_rel[key[1] if stratified else -1].append(key)
    for rel in sorted(by_rel):
        pool = by_rel[rel]
        n_test = math.floor(test_fraction * len(pool))
        chosen = set(rng.permutation(len(pool))[:n_test].tolist())
        for i, key in enumerate(pool):
            (test if i in chosen else train).add(key)
    return DataSplit(frozenset(train), frozenset(test), seed, test_fraction)


def same_class(d1: int, d2: int, hierarchy: DiseaseHierarchy) -> bool:
    """True iff the two diseases share an ancestor (themselves included)."""
    for d in (d1, d2):
        if d not in hierarchy:
            raise TypeError(f"entity {d} is not a disease")
    return hierarchy.root(d1) == hierarchy.root(d2)


def flatten(groups: Iterable[TripletGroup]) -> list[ProbTriplet]:
    return [tr for g in groups for tr in g.triplets()]


# ---------------------------------------------------------------------------
# file formats


def write_entities(path, entities: Sequence[Entity]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id\tentity_type\tcode\n")
        for e in entities:
            fh.write(f"{e.id}\t{e.entity_type}\t{e.code}\n")


def read_entities(path) -> list[Entity]:
    rows = _read_tsv(path, ["id", "entity_type", "code"])
    return [Entity(int(i), typ, code) for i, typ, code in rows]


def write_hierarchy(path, hierarchy: DiseaseHierarchy):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("child_id\tparent_id\n")
        for parent, child in hierarchy.edges():
            fh.write(f"{child}\t{parent}\n")


def read_hierarchy(path, disease_ids: Iterable[int]) -> DiseaseHierarchy:
    parent: dict[int, Optional[int]] = {int(d): None for d in disease_ids}
    for child, par in _read_tsv(path, ["child_id", "parent_id"]):
        parent[int(child)] = int(par)
    return DiseaseHierarchy(parent)


def _fmt_count(c):
    return "" if c is None else str(c)


def write_triplets(path, triplets: Iterable[ProbTriplet]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("head_id\trelation_id\ttail_id\tprobability\tcooccurrence_count\thead_count\n")
        for tr in triplets:
            fh.write(
                f"{tr.h}\t{tr.r}\t{tr.t}\t{tr.p:.10g}\t"
                f"{_fmt_count(tr.cooccurrence_count)}\t{_fmt_count(tr.head_count)}\n"
            )


def read_triplets(path) -> list[ProbTriplet]:
    cols = ["head_id", "relation_id", "tail_id", "probability", "cooccurrence_count", "head_count"]
    out = []
    for h, r, t, p, n, nh in _read_tsv(path, cols):
        out.append(
            ProbTriplet(int(h), int(r), int(t), float(p),
                        int(n) if n else None, int(nh) if nh else None)
        )
    return out


def write_split(path, split: DataSplit, **extra):
    doc = {
        "seed": split.seed,
        "test_fraction": split.test_fraction,
        **extra,
        "train": sorted([list(k) for k in split.train_groups]),
        "test": sorted([list(k) for k in split.test_groups]),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def read_split(path) -> tuple[DataSplit, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        split = DataSplit(
            frozenset(tuple(k) for k in doc.pop("train")),
            frozenset(tuple(k) for k in doc.pop("test")),
            doc.pop("seed"),
            doc.pop("test_fraction"),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed split file {path}: {exc}") from exc
    return split, doc


def _read_tsv(path, header):
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n").split("\t")
        if first != header:
            raise ValueError(f"{path}: expected header {header}, found {first}")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields")
            rows.append(parts)
    return rows
