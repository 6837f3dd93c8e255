"""Command-line pipeline: gen -> extract -> split -> train -> eval, plus predict.

Every stage reads and writes fixed file names inside ``--out``::

    gen      world.json entities.tsv hierarchy.tsv visits.tsv
    extract  triplets.tsv
    split    split.json
    train    model.ckpt train.log
    eval     eval_report.json [rankings.tsv]

Exit codes: 1 training failure (sampling or numerics), 2 invalid config,
3 missing input, 4 malformed input, 5 unresolved entity or relation.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import RunConfig, load_config
from .errors import CheckpointError, ConfigError, ExtractionError, SamplingError, TrainingError
from .evaluator import evaluate, infer_probability, labels_by_group, write_rankings
from .kg import (
    RELATION_BY_NAME,
    RELATIONS,
    KnowledgeGraph,
    build_groups,
    flatten,
    read_entities,
    read_hierarchy,
    read_split,
    read_triplets,
    split_groups,
    write_entities,
    write_hierarchy,
    write_split,
    write_triplets,
)
from .models import ModelKind, score
from .pipeline import filter_groups
from .synth import (
    derive_ground_truth,
    extract_triplets,
    generate_world,
    load_world,
    read_visits,
    sample_visits,
    save_world,
    write_visits,
)
from .trainer import load_checkpoint, train

EXIT_FAILURE, EXIT_CONFIG, EXIT_MISSING, EXIT_SCHEMA, EXIT_RESOLVE = 1, 2, 3, 4, 5

WORLD, ENTITIES, HIERARCHY, VISITS = "world.json", "entities.tsv", "hierarchy.tsv", "visits.tsv"
TRIPLETS, SPLIT, CHECKPOINT, TRAIN_LOG = "triplets.tsv", "split.json", "model.ckpt", "train.log"
EVAL_REPORT, RANKINGS = "eval_report.json", "rankings.tsv"


class CliError(Exception):
    def __init__(self, code, message):
        self.code = code
        super().__init__(message)


def _need(out: Path, *names) -> list[Path]:
    paths = [out / n for n in names]
    for p in paths:
        if not p.is_file():
            raise CliError(EXIT_MISSING, f"missing input {p}; run the upstream command first")
    return paths


def _graph(out: Path) -> KnowledgeGraph:
    ent_path, hier_path = _need(out, ENTITIES, HIERARCHY)
    entities = read_entities(ent_path)
    disease_ids = [e.id for e in entities if e.entity_type == "disease"]
    return KnowledgeGraph(entities, read_hierarchy(hier_path, disease_ids))


def _corpus(out: Path, graph: KnowledgeGraph):
    """Filtered groups and the split recorded by ``split``."""
    trip_path, split_path = _need(out, TRIPLETS, SPLIT)
    triplets = read_triplets(trip_path)
    for tr in triplets:
        graph.check_triplet(tr)
    split, extra = read_split(split_path)
    if "top_k" not in extra:
        raise ValueError(f"{split_path}: missing top_k")
    groups = filter_groups(build_groups(triplets), extra["top_k"])
    keys = {g.key for g in groups}
    if not (split.train_groups | split.test_groups) <= keys:
        raise ValueError(f"{split_path}: split names groups absent from {TRIPLETS}")
    return groups, split


def cmd_gen(args, cfg: RunConfig):
    if cfg.n_visits is None:
        raise ConfigError("missing required field visits.n_visits")
    world = generate_world(cfg.world)
    visits = sample_visits(world, cfg.n_visits, cfg.visit_seed, workers=args.workers)
    args.out.mkdir(parents=True, exist_ok=True)
    save_world(args.out / WORLD, world, run=cfg.to_dict())
    write_entities(args.out / ENTITIES, world.entities)
    write_hierarchy(args.out / HIERARCHY, world.hierarchy)
    write_visits(args.out / VISITS, visits)
    print(f"world: {len(world.entities)} entities, {len(world.leaves())} leaf diseases; "
          f"{len(visits)} visits")


def cmd_extract(args, cfg: RunConfig):
    graph = _graph(args.out)
    (visits_path,) = _need(args.out, VISITS)
    types = [e.entity_type for e in graph.entities]
    triplets = extract_triplets(read_visits(visits_path, types), graph)
    write_triplets(args.out / TRIPLETS, triplets)
    print(f"{len(triplets)} triplets")


def cmd_split(args, cfg: RunConfig):
    (trip_path,) = _need(args.out, TRIPLETS)
    groups = filter_groups(build_groups(read_triplets(trip_path)), cfg.top_k)
    split = split_groups(groups, cfg.test_fraction, cfg.split_seed, stratified=cfg.stratified)
    write_split(args.out / SPLIT, split, top_k=cfg.top_k, stratified=cfg.stratified)
    print(f"{len(split.train_groups)} train groups, {len(split.test_groups)} test groups")


def cmd_train(args, cfg: RunConfig):
    graph = _graph(args.out)
    groups, split = _corpus(args.out, graph)
    tc = cfg.train
    if args.objective:
        tc = replace(tc, objective=args.objective)
    if args.model:
        tc = replace(tc, kind=ModelKind(args.model, tc.kind.distance_norm))
    if args.epochs:
        tc = replace(tc, epochs=args.epochs)
    train_set = flatten(g for g in groups if g.key in split.train_groups)
    test_set = flatten(g for g in groups if g.key in split.test_groups)
    log_path = args.out / TRAIN_LOG
    with open(log_path, "w", encoding="utf-8", newline="\n") as log:
        def on_epoch(epoch, loss, seconds):
            log.write(f"{epoch}\t{loss:.10g}\t{seconds:.4f}\n")
            log.flush()

        _, report = train(graph, train_set, tc, known_positives=test_set,
                          checkpoint_path=args.out / CHECKPOINT, log=on_epoch)
        log.write(report.to_json() + "\n")
    print(f"trained {tc.kind.variant} ({tc.objective}) for {tc.epochs} epochs; "
          f"final loss {report.epoch_losses[-1]:.6g}")


def _load_model(args):
    path = args.checkpoint or args.out / CHECKPOINT
    if not Path(path).is_file():
        raise CliError(EXIT_MISSING, f"missing input {path}; run train first")
    return load_checkpoint(path)


def cmd_eval(args, cfg: RunConfig):
    params, tc = _load_model(args)
    graph = _graph(args.out)
    (world_path,) = _need(args.out, WORLD)
    _, split = _corpus(args.out, graph)
    world = load_world(world_path)
    keys = sorted(split.test_groups)
    labels = labels_by_group(derive_ground_truth(world, cfg.thresholds, heads=sorted({h for h, _ in keys})))
    echo = {"thresholds": list(cfg.thresholds), "train": tc.to_dict()}
    report, rankings = evaluate(params, graph, keys, labels, k=cfg.eval_k, lam=tc.hyper.lam,
                                filtered=cfg.filtered, workers=args.workers, config=echo)
    (args.out / EVAL_REPORT).write_text(report.to_json(), encoding="utf-8")
    if args.rankings:
        write_rankings(args.out / RANKINGS, rankings)
    print(json.dumps(report.overall, sort_keys=True))


def _resolve_entity(graph: KnowledgeGraph, token: str) -> int:
    try:
        return graph.lookup(token)
    except KeyError:
        raise CliError(EXIT_RESOLVE, f"unknown entity {token!r}") from None


def _resolve_relation(token: str) -> int:
    if token in RELATION_BY_NAME:
        return RELATION_BY_NAME[token].id
    if token.isdigit() and int(token) < len(RELATIONS):
        return int(token)
    raise CliError(EXIT_RESOLVE, f"unknown relation {token!r}")


def cmd_predict(args, cfg: RunConfig):
    params, tc = _load_model(args)
    graph = _graph(args.out)
    h, t = _resolve_entity(graph, args.head), _resolve_entity(graph, args.tail)
    r = _resolve_relation(args.relation)
    rel = graph.relations[r]
    for token, e, want in ((args.head, h, rel.head_type), (args.tail, t, rel.tail_type)):
        if graph.entities[e].entity_type != want:
            raise CliError(EXIT_RESOLVE, f"entity {token!r} is not a {want} ({rel.name})")
    if graph.n_entities != params.n_entities:
        raise ValueError("checkpoint entity count does not match entities.tsv")
    s = score(params, h, r, t)
    print(f"score={s!r} probability={infer_probability(params, h, r, t, tc.hyper.lam)!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, default=Path("."), help="artifact directory")
    common.add_argument("--seed", type=int, default=None, help="override every stage seed")
    common.add_argument("--workers", type=int, default=1, help="threads for sampling and ranking")
    common.add_argument("--config", type=Path, default=None, help="TOML file of dotted keys")

    parser = argparse.ArgumentParser(prog="prtransx", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate a synthetic world and visits")
    sub.add_parser("extract", parents=[common], help="visits -> probabilistic triplets")
    sub.add_parser("split", parents=[common], help="top-k filter and group-level split")
    p = sub.add_parser("train", parents=[common], help="fit embeddings")
    p.add_argument("--objective", choices=("margin", "probabilistic"))
    p.add_argument("--model", help="variant name, e.g. TransE or transh")
    p.add_argument("--epochs", type=int)
    p = sub.add_parser("eval", parents=[common], help="rank held-out groups")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--rankings", action="store_true", help=f"also write {RANKINGS}")
    p = sub.add_parser("predict", parents=[common], help="score one triplet")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("head", help="head entity code")
    p.add_argument("relation", help="relation name or id")
    p.add_argument("tail", help="tail entity code")
    return parser


COMMANDS = {
    "gen": cmd_gen, "extract": cmd_extract, "split": cmd_split,
    "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        if args.config is not None and not args.config.is_file():
            raise CliError(EXIT_MISSING, f"missing config file {args.config}")
        cfg = load_config(args.config).with_seed(args.seed)
        COMMANDS[args.command](args, cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, ExtractionError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"malformed input: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (SamplingError, TrainingError) as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return 0


if __name__ == "__main__":
    sys.exit(main())
