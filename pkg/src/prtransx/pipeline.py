"""In-process end-to-end pipeline: world -> visits -> triplets -> split."""

from __future__ import annotations

from dataclasses import dataclass

from .kg import (
    PRIOR_RELATIONS,
    DataSplit,
    KnowledgeGraph,
    ProbTriplet,
    TripletGroup,
    build_groups,
    flatten,
    split_groups,
    top_k_filter,
)
from .synth import World, WorldConfig, extract_triplets, generate_world, sample_visits


@dataclass
class Corpus:
    world: World
    graph: KnowledgeGraph
    triplets: list[ProbTriplet]  # everything extracted
    groups: list[TripletGroup]  # after top-k filtering
    split: DataSplit

    def groups_in(self, keys) -> list[TripletGroup]:
        return [g for g in self.groups if g.key in keys]

    @property
    def train_triplets(self) -> list[ProbTriplet]:
        return flatten(self.groups_in(self.split.train_groups))

    @property
    def test_triplets(self) -> list[ProbTriplet]:
        return flatten(self.groups_in(self.split.test_groups))


def filter_groups(groups, top_k=20):
    """Keep the top-k tails of every EMR group; prior-knowledge groups stay whole."""
    return [g if g.r in PRIOR_RELATIONS else top_k_filter(g, top_k) for g in groups]


def make_corpus(
    world_config: WorldConfig = WorldConfig(),
    n_visits: int = 50_000,
    visit_seed: int = 0,
    top_k: int = 20,
    test_fraction: float = 0.2,
    split_seed: int = 0,
    stratified: bool = True,
) -> Corpus:
    world = generate_world(world_config)
    graph = world.graph
    triplets = extract_triplets(sample_visits(world, n_visits, visit_seed), graph)
    groups = filter_groups(build_groups(triplets), top_k)
    split = split_groups(groups, test_fraction, split_seed, stratified=stratified)
    return Corpus(world, graph, triplets, groups, split)
