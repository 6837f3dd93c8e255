"""Run configuration read from TOML files with flat dotted keys.

Example::

    world.seed = 3
    visits.n_visits = 50000
    split.top_k = 20
    train.variant = "TransH"
    loss.lambda = 10

Sections: ``world``, ``visits``, ``split``, ``train``, ``loss``, ``eval``.
Unknown sections or keys are rejected with the offending dotted name.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

import tomli

from .errors import ConfigError
from .loss import Hyperparams
from .synth import WorldConfig
from .trainer import TrainConfig

_VISITS_KEYS = {"n_visits", "seed"}
_SPLIT_KEYS = {"test_fraction", "seed", "top_k", "stratified"}
_EVAL_KEYS = {"k", "filtered", "thresholds"}


@dataclass(frozen=True)
class RunConfig:
    world: WorldConfig = WorldConfig()
    n_visits: Optional[int] = None
    visit_seed: int = 0
    test_fraction: float = 0.2
    split_seed: int = 0
    top_k: int = 20
    stratified: bool = True
    train: TrainConfig = TrainConfig()
    eval_k: int = 10
    filtered: bool = False
    thresholds: tuple = (0.5, 0.2, 0.05)

    def to_dict(self) -> dict:
        train = self.train.to_dict()
        return {
            "world": asdict(self.world),
            "visits": {"n_visits": self.n_visits, "seed": self.visit_seed},
            "split": {"test_fraction": self.test_fraction, "seed": self.split_seed,
                      "top_k": self.top_k, "stratified": self.stratified},
            "loss": train.pop("loss"),
            "train": train,
            "eval": {"k": self.eval_k, "filtered": self.filtered, "thresholds": list(self.thresholds)},
        }

    def with_seed(self, seed: Optional[int]) -> "RunConfig":
        """Apply a ``--seed`` override to every seeded stage."""
        if seed is None:
            return self
        return replace(self, world=replace(self.world, seed=seed), visit_seed=seed,
                       split_seed=seed, train=replace(self.train, seed=seed))


def _tuples(v):
    return tuple(v) if isinstance(v, list) else v


def _check_keys(section: str, d: dict, known: set):
    for key in d:
        if key not in known:
            raise ConfigError(f"unknown config key {section}.{key}")
        if isinstance(d[key], dict):
            raise ConfigError(f"config key {section}.{key} is nested too deeply")


def config_from_dict(doc: dict) -> RunConfig:
    """Build a :class:`RunConfig` from the nested dict TOML produces."""
    sections = {"world", "visits", "split", "train", "loss", "eval"}
    for name, val in doc.items():
        if name not in sections:
            raise ConfigError(f"unknown config section {name!r}")
        if not isinstance(val, dict):
            raise ConfigError(f"config key {name!r} must be a section of dotted keys")
    world = doc.get("world", {})
    visits = doc.get("visits", {})
    split = doc.get("split", {})
    train = dict(doc.get("train", {}))
    loss = {k: _tuples(v) for k, v in doc.get("loss", {}).items()}
    ev = doc.get("eval", {})

    _check_keys("world", world, {f.name for f in fields(WorldConfig)})
    _check_keys("visits", visits, _VISITS_KEYS)
    _check_keys("split", split, _SPLIT_KEYS)
    train_keys = {f.name for f in fields(TrainConfig)} - {"kind", "hyper"} | {"variant", "distance_norm"}
    _check_keys("train", train, train_keys)
    _check_keys("loss", loss, {f.name for f in fields(Hyperparams) if f.init} - {"lam"} | {"lambda"})
    _check_keys("eval", ev, _EVAL_KEYS)

    try:
        if loss:
            train["loss"] = loss
        cfg = RunConfig(
            world=WorldConfig(**world),
            n_visits=visits.get("n_visits"),
            visit_seed=visits.get("seed", 0),
            test_fraction=split.get("test_fraction", 0.2),
            split_seed=split.get("seed", 0),
            top_k=split.get("top_k", 20),
            stratified=split.get("stratified", True),
            train=TrainConfig.from_dict(train),
            eval_k=ev.get("k", 10),
            filtered=ev.get("filtered", False),
            thresholds=_tuples(ev.get("thresholds", (0.5, 0.2, 0.05))),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc
    if cfg.n_visits is not None and (not isinstance(cfg.n_visits, int) or cfg.n_visits < 1):
        raise ConfigError("visits.n_visits must be a positive integer")
    if not 0.0 < cfg.test_fraction < 1.0:
        raise ConfigError("split.test_fraction must lie in (0, 1)")
    if cfg.top_k < 1:
        raise ConfigError("split.top_k must be >= 1")
    if cfg.eval_k < 1:
        raise ConfigError("eval.k must be >= 1")
    return cfg


def load_config(path=None) -> RunConfig:
    """Read a TOML config; ``None`` yields all defaults."""
    if path is None:
        return RunConfig()
    try:
        with open(Path(path), "rb") as fh:
            doc = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: not valid TOML ({exc})") from exc
    return config_from_dict(doc)
