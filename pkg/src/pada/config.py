"""Flat ``section.key = value`` configuration files.

Blank lines and ``#`` comments are ignored. Every key has a documented
default (see :data:`SCHEMA`); unknown keys, bad types and out-of-range values
are rejected with the offending line number.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError
from .ranking_eval import OracleConfig
from .sampling import GRANULARITIES, STYLES, UPDATE_FREQS
from .search_space import CellSpec, OpKind
from .trainer import DAConfig, PAConfig, SearchConfig, TrainConfig
from .variance_stats import GV_SCOPES


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _ops(text: str) -> tuple[str, ...]:
    ops = tuple(tok.strip() for tok in text.split(",") if tok.strip())
    for op in ops:
        OpKind(op)
    return ops


def _choice(*choices: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in choices:
            raise ValueError(f"expected one of {list(choices)}, got {text!r}")
        return text
    return parse


def _positive(x):
    return x > 0


def _nonneg(x):
    return x >= 0


# key -> (parser, default, range check or None)
SCHEMA: dict[str, tuple[Callable[[str], Any], Any, Callable[[Any], bool] | None]] = {
    "space.ops": (_ops, ("skip", "linear"), lambda v: len(v) > 0),
    "space.hidden": (int, 16, _positive),
    "space.d_in": (int, 16, _positive),
    "space.n_classes": (int, 4, _positive),
    "space.n_nodes": (int, 4, lambda v: v >= 2),
    "train.epochs": (int, 60, _positive),
    "train.batch_size": (int, 64, _positive),
    "train.base_lr": (float, 0.005, _positive),
    "train.min_lr": (float, 0.0, _nonneg),
    "train.momentum": (float, 0.9, lambda v: 0 <= v < 1),
    "train.weight_decay": (float, 5e-4, _nonneg),
    "pa.enabled": (_bool, True, None),
    "pa.update_freq": (_choice(*UPDATE_FREQS), "per_epoch", None),
    "pa.style": (_choice(*STYLES), "increase", None),
    "pa.reweight": (_bool, False, None),
    "da.enabled": (_bool, True, None),
    "da.style": (_choice(*STYLES), "increase", None),
    "da.granularity": (_choice(*GRANULARITIES), "instance", None),
    "seeds.master": (int, 0, _nonneg),
    "seeds.search": (int, -1, lambda v: v >= -1),
    "gv.scope": (_choice(*GV_SCOPES), "ops", None),
    "search.strategy": (_choice("random", "evolution"), "evolution", None),
    "search.rounds": (int, 20, _positive),
    "search.population": (int, 50, _positive),
    "search.n_parents": (int, 10, _positive),
    "search.n_mutate": (int, 25, _nonneg),
    "search.n_crossover": (int, 25, _nonneg),
    "search.mutation_rate": (float, 0.1, lambda v: 0 <= v <= 1),
    "search.param_budget": (int, 0, _nonneg),
    "search.eval_subset_size": (int, 0, _nonneg),
    "search.max_retries": (int, 100, _positive),
    "oracle.epochs": (int, 60, _positive),
    "oracle.batch_size": (int, 64, _positive),
    "oracle.base_lr": (float, 2e-4, _positive),
    "oracle.min_lr": (float, 0.0, _nonneg),
    "oracle.momentum": (float, 0.9, lambda v: 0 <= v < 1),
    "oracle.weight_decay": (float, 5e-4, _nonneg),
    "oracle.seed": (int, 0, _nonneg),
    "data.n_per_class": (int, 512, _positive),
    "data.eval_per_class": (int, 128, _positive),
    "data.separation": (float, 1.0, _nonneg),
    "data.noise": (float, 1.0, _nonneg),
    "data.seed": (int, 0, _nonneg),
    "eval.k_frac": (float, 0.05, lambda v: 0 < v <= 1),
}


@dataclass
class DataConfig:
    n_per_class: int = 512
    eval_per_class: int = 128
    separation: float = 1.0
    noise: float = 1.0
    seed: int = 0


@dataclass
class RunConfig:
    spec: CellSpec
    train: TrainConfig
    search: SearchConfig
    oracle: OracleConfig
    data: DataConfig
    search_seed: int
    oracle_seed: int
    k_frac: float
    values: dict[str, Any] = field(default_factory=dict)

    def dumps(self) -> str:
        """Fully resolved config in the input format; re-loading it is lossless."""
        lines = []
        for key, value in self.values.items():
            if isinstance(value, tuple):
                value = ",".join(value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


def defaults() -> dict[str, Any]:
    return {key: default for key, (_, default, _) in SCHEMA.items()}


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values = defaults()
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: key {key!r} already set on line {seen[key]}")
        seen[key] = lineno
        parser, _, check = SCHEMA[key]
        try:
            parsed = parser(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: type error for {key}: {exc}") from None
        if check is not None and not check(parsed):
            raise ConfigError(f"{source}:{lineno}: value {value!r} out of range for {key}")
        values[key] = parsed
    try:
        return resolve(values)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path=None) -> RunConfig:
    if path is None:
        return resolve(defaults())
    return parse_config(Path(path).read_text(), str(path))


def resolve(v: dict[str, Any]) -> RunConfig:
    spec = CellSpec(
        ops=v["space.ops"],
        hidden=v["space.hidden"],
        d_in=v["space.d_in"],
        n_classes=v["space.n_classes"],
        n_nodes=v["space.n_nodes"],
    )
    train = TrainConfig(
        epochs=v["train.epochs"],
        batch_size=v["train.batch_size"],
        base_lr=v["train.base_lr"],
        min_lr=v["train.min_lr"],
        momentum=v["train.momentum"],
        weight_decay=v["train.weight_decay"],
        pa=PAConfig(v["pa.enabled"], v["pa.update_freq"], v["pa.style"], v["pa.reweight"]),
        da=DAConfig(v["da.enabled"], v["da.style"], v["da.granularity"]),
        seed=v["seeds.master"],
        gv_scope=v["gv.scope"],
    )
    if train.min_lr > train.base_lr:
        raise ConfigError("train.min_lr exceeds train.base_lr")
    search = SearchConfig(
        strategy=v["search.strategy"],
        rounds=v["search.rounds"],
        population=v["search.population"],
        n_parents=v["search.n_parents"],
        n_mutate=v["search.n_mutate"],
        n_crossover=v["search.n_crossover"],
        mutation_rate=v["search.mutation_rate"],
        param_budget=v["search.param_budget"] or None,
        eval_subset_size=v["search.eval_subset_size"] or None,
        max_retries=v["search.max_retries"],
    )
    oracle = OracleConfig(
        epochs=v["oracle.epochs"],
        batch_size=v["oracle.batch_size"],
        base_lr=v["oracle.base_lr"],
        min_lr=v["oracle.min_lr"],
        momentum=v["oracle.momentum"],
        weight_decay=v["oracle.weight_decay"],
    )
    data = DataConfig(
        v["data.n_per_class"], v["data.eval_per_class"], v["data.separation"], v["data.noise"], v["data.seed"]
    )
    search_seed = v["seeds.search"] if v["seeds.search"] >= 0 else v["seeds.master"]
    return RunConfig(spec, train, search, oracle, data, search_seed, v["oracle.seed"], v["eval.k_frac"], dict(v))
