import numpy as np
import pytest

from prtransx.errors import ConflictingTripletError
from prtransx.kg import (
    HIERARCHY_RELATION,
    RELATIONS,
    DataSplit,
    DiseaseHierarchy,
    Entity,
    GroundTruthLabel,
    KnowledgeGraph,
    ProbTriplet,
    TripletGroup,
    build_groups,
    flatten,
    read_entities,
    read_hierarchy,
    read_split,
    read_triplets,
    same_class,
    split_groups,
    top_k_filter,
    write_entities,
    write_hierarchy,
    write_split,
    write_triplets,
)

from conftest import make_graph


class TestSchema:
    def test_relation_types(self):
        assert [r.name for r in RELATIONS] == [
            "disease_to_medicine", "disease_to_symptom", "disease_to_operation",
            "disease_to_laboratory", "disease_to_examination", "upper_disease_to_lower_disease",
        ]
        assert all(r.head_type == "disease" for r in RELATIONS)
        assert [r.tail_type for r in RELATIONS] == [
            "medicine", "symptom", "operation", "laboratory", "examination", "disease"]
        assert [r.is_prior_knowledge for r in RELATIONS] == [False] * 5 + [True]

    def test_entity_type_checked(self):
        with pytest.raises(ValueError):
            Entity(0, "drug", "x")

    def test_probability_range(self):
        ProbTriplet(0, 0, 1, 1.0)
        for bad in (0.0, -0.1, 1.5, float("nan")):
            with pytest.raises(ValueError):
                ProbTriplet(0, 0, 1, bad)

    def test_relevance_range(self):
        GroundTruthLabel(0, 0, 1, 3)
        with pytest.raises(ValueError):
            GroundTruthLabel(0, 0, 1, 0)

    def test_check_triplet_types(self, graph):
        m1 = graph.lookup("m1")
        graph.check_triplet(ProbTriplet(0, 0, m1, 0.5))
        with pytest.raises(ValueError):
            graph.check_triplet(ProbTriplet(0, 1, m1, 0.5))  # symptom relation, medicine tail
        with pytest.raises(ValueError):
            graph.check_triplet(ProbTriplet(m1, 0, m1, 0.5))

    def test_graph_rejects_bad_ids(self):
        with pytest.raises(ValueError):
            KnowledgeGraph([Entity(1, "disease", "A")], DiseaseHierarchy({1: None}))


class TestHierarchy:
    def test_cycle_rejected(self):
        with pytest.raises(ValueError):
            DiseaseHierarchy({0: 1, 1: 0})

    def test_navigation(self, graph):
        h = graph.hierarchy
        assert h.ancestors(2) == [1, 0]
        assert h.root(2) == 0
        assert h.children(1) == [2, 3]
        assert h.leaves() == [2, 3, 6]
        assert h.descendant_leaves(0) == [2, 3]
        assert h.edges() == [(0, 1), (1, 2), (1, 3), (4, 5), (5, 6)]

    def test_codes_prefix_consistent(self, graph):
        graph.hierarchy.check_codes(graph.entities)
        bad = [Entity(0, "disease", "C16"), Entity(1, "disease", "K25.1")]
        with pytest.raises(ValueError):
            DiseaseHierarchy({0: None, 1: 0}).check_codes(bad)

    def test_same_class(self, graph):
        assert same_class(2, 0, graph.hierarchy)  # leaf and its chapter
        assert same_class(3, 3, graph.hierarchy)
        assert not same_class(0, 4, graph.hierarchy)
        with pytest.raises(TypeError):
            same_class(0, graph.lookup("m1"), graph.hierarchy)


class TestGroups:
    def test_grouping(self):
        trs = [ProbTriplet(5, 1, t, 0.5) for t in (7, 8, 9)] + [ProbTriplet(5, 2, 10, 0.2)]
        groups = build_groups(trs)
        assert [len(g) for g in groups] == [3, 1]
        assert all(len({t for t, _ in g.tails}) == len(g) for g in groups)

    def test_empty(self):
        assert build_groups([]) == []

    def test_exact_duplicate_collapses(self):
        groups = build_groups([ProbTriplet(0, 0, 1, 0.5), ProbTriplet(0, 0, 1, 0.5)])
        assert len(groups[0]) == 1

    def test_conflict_reports_key(self):
        with pytest.raises(ConflictingTripletError) as err:
            build_groups([ProbTriplet(0, 0, 1, 0.5), ProbTriplet(0, 0, 1, 0.4)])
        assert err.value.key == (0, 0, 1)

    def test_top_k(self):
        g = TripletGroup(0, 0, tuple((t, (t + 1) / 30) for t in range(25)))
        kept = top_k_filter(g, 20)
        assert len(kept) == 20
        assert sorted(p for _, p in kept.tails) == sorted(p for _, p in g.tails)[-20:]
        small = TripletGroup(0, 0, ((1, 0.5),) * 1)
        assert top_k_filter(small, 20) == small

    def test_top_k_ties(self):
        g = TripletGroup(0, 0, ((1, 0.5), (2, 0.3), (3, 0.3), (4, 0.1)))
        assert [p for _, p in top_k_filter(g, 3).tails] == [0.5, 0.3, 0.3]

    def test_flatten_roundtrip(self):
        trs = [ProbTriplet(0, 0, 3, 0.2), ProbTriplet(0, 0, 4, 0.7)]
        assert {t.key for t in flatten(build_groups(trs))} == {t.key for t in trs}


class TestSplit:
    def test_floor_count(self):
        split = split_groups([(h, 0) for h in range(10)], 0.2, seed=1)
        assert len(split.test_groups) == 2
        assert len(split.train_groups) == 8

    def test_prior_relation_in_train(self):
        keys = [(h, HIERARCHY_RELATION) for h in range(30)] + [(h, 1) for h in range(30)]
        split = split_groups(keys, 0.5, seed=3)
        assert all(k[1] != HIERARCHY_RELATION for k in split.test_groups)

    def test_deterministic(self):
        keys = [(h, r) for h in range(20) for r in range(5)]
        assert split_groups(keys, 0.2, 7) == split_groups(keys, 0.2, 7)

    def test_stratified_per_relation(self):
        keys = [(h, r) for h in range(10) for r in range(5)]
        split = split_groups(keys, 0.2, 0)
        assert np.bincount([r for _, r in split.test_groups], minlength=5).tolist() == [2] * 5

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            DataSplit(frozenset({(0, 0)}), frozenset({(0, 0)}))


class TestFiles:
    def test_entities_hierarchy_roundtrip(self, tmp_path, graph):
        write_entities(tmp_path / "e.tsv", graph.entities)
        write_hierarchy(tmp_path / "h.tsv", graph.hierarchy)
        ents = read_entities(tmp_path / "e.tsv")
        assert ents == graph.entities
        hier = read_hierarchy(tmp_path / "h.tsv", [e.id for e in ents if e.entity_type == "disease"])
        assert hier.parent == graph.hierarchy.parent

    def test_triplets_roundtrip(self, tmp_path):
        trs = [ProbTriplet(0, 0, 9, 50 / 200, 50, 200), ProbTriplet(0, 5, 1, 1.0)]
        write_triplets(tmp_path / "t.tsv", trs)
        assert read_triplets(tmp_path / "t.tsv") == trs

    def test_bad_header(self, tmp_path):
        (tmp_path / "t.tsv").write_text("h\tr\tt\n")
        with pytest.raises(ValueError):
            read_triplets(tmp_path / "t.tsv")

    def test_split_roundtrip(self, tmp_path):
        split = split_groups([(h, r) for h in range(5) for r in range(6)], 0.2, 4)
        write_split(tmp_path / "s.json", split, top_k=20)
        back, extra = read_split(tmp_path / "s.json")
        assert back == split and extra == {"top_k": 20}


def test_standard_graph_fixture_is_consistent():
    g = make_graph()
    assert len(g.ids_of_type("disease")) == 7
    assert g.entity_types().shape == (g.n_entities,)
