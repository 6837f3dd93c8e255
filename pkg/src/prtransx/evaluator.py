"""Tail-prediction ranking and Hits@k, mean rank, NDCG@k."""

from __future__ import annotations

import json
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .kg import GroundTruthLabel, KnowledgeGraph
from .loss import phi
from .models import ModelParams, score, score_batch


@dataclass(frozen=True)
class RankingResult:
    h: int
    r: int
    tails: np.ndarray
    scores: np.ndarray
    probabilities: np.ndarray

    @property
    def key(self):
        return (self.h, self.r)

    def rank_of(self) -> dict[int, int]:
        """1-based rank of every candidate."""
        return {int(t): i + 1 for i, t in enumerate(self.tails)}


def rank_tails(params: ModelParams, h: int, r: int, candidates, lam: float = 10.0) -> RankingResult:
    candidates = np.asarray(candidates, dtype=np.int64)
    if not len(candidates):
        raise ValueError("no candidates to rank")
    s = score_batch(params, h, r, candidates)
    order = np.lexsort((candidates, s))
    s = s[order]
    return RankingResult(h, r, candidates[order], s, phi(s, lam))


def infer_probability(params: ModelParams, h: int, r: int, t: int, lam: float = 10.0) -> float:
    return phi(score(params, h, r, t), lam)


def labels_by_group(labels: Iterable[GroundTruthLabel]) -> dict[tuple[int, int], dict[int, int]]:
    out: dict = defaultdict(dict)
    for lab in labels:
        out[(lab.h, lab.r)][lab.tail] = lab.relevance
    return dict(out)


def _truth_ranks(ranking: RankingResult, truth: Mapping[int, int], filtered=False) -> list[int]:
    pos = ranking.rank_of()
    ranks = sorted(pos[t] for t in truth)
    if filtered:
        # drop the other truths ranked ahead of each one
        return [rk - i for i, rk in enumerate(ranks)]
    return ranks


def hits_at_k(rankings, labels, k: int = 10, filtered=False) -> float:
    hits, total = 0, 0
    for rk in rankings:
        truth = labels.get(rk.key)
        if not truth:
            continue
        ranks = _truth_ranks(rk, truth, filtered)
        hits += sum(x <= k for x in ranks)
        total += len(ranks)
    return hits / total if total else float("nan")


def mean_rank(rankings, labels, filtered=False) -> float:
    ranks = []
    for rk in rankings:
        truth = labels.get(rk.key)
        if truth:
            ranks += _truth_ranks(rk, truth, filtered)
    return float(np.mean(ranks)) if ranks else float("nan")


def dcg(relevances, k: int) -> float:
    rel = np.asarray(relevances, dtype=float)[:k]
    return float(np.sum((2.0**rel - 1.0) / np.log2(np.arange(2, len(rel) + 2))))


def ndcg_group(ranking: RankingResult, truth: Mapping[int, int], k: int = 10):
    """NDCG@k of one ranking, or None when the ideal DCG is zero."""
    ideal = dcg(sorted(truth.values(), reverse=True), k)
    if ideal <= 0:
        return None
    got = [truth.get(int(t), 0) for t in ranking.tails[:k]]
    return dcg(got, k) / ideal


def ndcg_at_k(rankings, labels, k: int = 10) -> float:
    vals = [v for rk in rankings if (v := ndcg_group(rk, labels.get(rk.key, {}), k)) is not None]
    return float(np.mean(vals)) if vals else float("nan")


@dataclass
class EvalReport:
    overall: dict
    per_relation: dict
    skipped_groups: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "overall": self.overall,
            "per_relation": self.per_relation,
            "skipped_groups": self.skipped_groups,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def _metrics(rankings, labels, k, filtered):
    return {
        "groups": len(rankings),
        "truths": sum(len(labels[rk.key]) for rk in rankings),
        f"hits_at_{k}": hits_at_k(rankings, labels, k, filtered),
        "mean_rank": mean_rank(rankings, labels, filtered),
        f"ndcg_at_{k}": ndcg_at_k(rankings, labels, k),
    }


def evaluate(
    params: ModelParams,
    graph: KnowledgeGraph,
    groups: Iterable[tuple[int, int]],
    labels,
    k: int = 10,
    lam: float = 10.0,
    filtered: bool = False,
    workers: int = 1,
    config: dict | None = None,
) -> tuple[EvalReport, list[RankingResult]]:
    """Rank every candidate tail for each (h, r) group and score the rankings.

    Candidates are all entities of the relation's tail type. Groups without
    any labeled tail are skipped and listed in the report.
    """
    if not isinstance(labels, dict):
        labels = labels_by_group(labels)
    keys = sorted(set(map(tuple, groups)))
    skipped = [list(key) for key in keys if not labels.get(key)]
    keys = [key for key in keys if labels.get(key)]

    def run(key):
        h, r = key
        return rank_tails(params, h, r, graph.ids_of_type(graph.relations[r].tail_type), lam)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rankings = list(pool.map(run, keys))
    else:
        rankings = [run(key) for key in keys]

    per_rel = {}
    for r in sorted({key[1] for key in keys}):
        sub = [rk for rk in rankings if rk.r == r]
        per_rel[graph.relations[r].name] = _metrics(sub, labels, k, filtered)
    overall = _metrics(rankings, labels, k, filtered) if rankings else {}
    cfg = {"k": k, "lambda": lam, "filtered": filtered, **(config or {})}
    return EvalReport(overall, per_rel, skipped, cfg), rankings


def write_rankings(path, rankings: Iterable[RankingResult]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("h\tr\trank\ttail\tscore\tprobability\n")
        for rk in rankings:
            for i, (t, s, p) in enumerate(zip(rk.tails, rk.scores, rk.probabilities), start=1):
                fh.write(f"{rk.h}\t{rk.r}\t{i}\t{t}\t{s:.10g}\t{p:.10g}\n")
