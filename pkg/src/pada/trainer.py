"""Supernet training with path/data importance sampling, and sub-model search."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .checkpoint import Checkpoint
from .data import Dataset
from .errors import ConfigError, InsufficientSamplesError, NumericError, SearchError, UsageError
from .nn_core import Batch, OptimizerState, backward, cosine_lr, forward, sgd_step
from .ranking_eval import path_accuracy
from .rng import get_state, set_state, stream
from .sampling import (
    DataDistribution,
    PathDistribution,
    accumulate_path_norms,
    record_data_importance,
    reweight_factor,
    sample_epoch_indices,
    sample_path,
    update_data_distribution,
    update_path_distribution,
)
from .search_space import (
    CellSpec,
    Path,
    crossover,
    enumerate_paths,
    format_path,
    mutate,
    path_param_count,
    random_path,
)
from .supernet import Supernet, build_supernet, inherit_weights
from .variance_stats import GradVarTracker, Moments, scope_filter, supernet_gv

log = logging.getLogger(__name__)

TRAIN_STREAMS = ("init", "path", "data")


@dataclass
class PAConfig:
    enabled: bool = True
    update_freq: str = "per_epoch"
    style: str = "increase"
    reweight: bool = False


@dataclass
class DAConfig:
    enabled: bool = True
    style: str = "increase"
    granularity: str = "instance"


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 64
    base_lr: float = 0.005
    min_lr: float = 0.0
    momentum: float = 0.9
    weight_decay: float = 5e-4
    pa: PAConfig = field(default_factory=PAConfig)
    da: DAConfig = field(default_factory=DAConfig)
    seed: int = 0
    gv_scope: str = "ops"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")

    @classmethod
    def spos(cls, **kwargs) -> "TrainConfig":
        return cls(pa=PAConfig(enabled=False), da=DAConfig(enabled=False), **kwargs)


@dataclass
class EpochMetrics:
    epoch: int
    step_count: int
    mean_loss: float
    gv: float
    delta: float
    tau: float
    lr: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list:
        return [getattr(self, c) for c in self.columns()]


def format_float(x: float) -> str:
    return repr(float(x))


def metrics_csv(history: list[EpochMetrics]) -> str:
    lines = [",".join(EpochMetrics.columns())]
    for m in history:
        lines.append(",".join(str(v) if isinstance(v, int) else format_float(v) for v in m.row()))
    return "\n".join(lines) + "\n"


def epoch_data_plan(data_dist: DataDistribution, n_samples: int, batch_size: int, rng) -> list[np.ndarray]:
    """Pre-drawn index batches for one epoch, sampled with replacement from ``q``."""
    idx = sample_epoch_indices(data_dist, n_samples, rng)
    return [idx[s:s + batch_size] for s in range(0, n_samples, batch_size)]


def shuffled_plan(n_samples: int, batch_size: int, rng) -> list[np.ndarray]:
    order = rng.permutation(n_samples)
    return [order[s:s + batch_size] for s in range(0, n_samples, batch_size)]


class SupernetTrainer:
    """Stateful training run; one :meth:`run_epoch` per training epoch.

    With both PA and DA disabled this is plain single-path one-shot
    training: uniform paths, shuffled data without replacement.
    """

    def __init__(self, config: TrainConfig, spec: CellSpec, dataset: Dataset):
        if dataset.d_in != spec.d_in:
            raise ConfigError(f"dataset has {dataset.d_in} features, spec expects {spec.d_in}")
        if dataset.n_classes > spec.n_classes:
            raise ConfigError(f"dataset has {dataset.n_classes} classes, spec has {spec.n_classes}")
        self.config = config
        self.spec = spec
        self.dataset = dataset
        self.rngs = {name: stream(config.seed, name) for name in TRAIN_STREAMS}
        self.supernet = build_supernet(spec, self.rngs["init"])
        self.opt = OptimizerState.for_params(
            self.supernet.params,
            base_lr=config.base_lr,
            min_lr=config.min_lr,
            momentum=config.momentum,
            weight_decay=config.weight_decay,
        )
        pa, da = config.pa, config.da
        self.path_dist = PathDistribution.uniform(
            spec, update_freq=pa.update_freq, style=pa.style, reweight=pa.reweight
        )
        self.data_dist = DataDistribution.uniform(
            len(dataset), classes=dataset.labels, style=da.style, granularity=da.granularity
        )
        self.include = scope_filter(config.gv_scope)
        self.run_tracker = GradVarTracker(self.include)
        self.history: list[EpochMetrics] = []
        self.epoch = 0
        self.step_hook = None  # optional callable(path, grads), e.g. for trace logging

    @property
    def done(self) -> bool:
        return self.epoch >= self.config.epochs

    def run_epoch(self) -> EpochMetrics:
        cfg = self.config
        if self.done:
            raise UsageError("training already finished")
        lr = cosine_lr(self.epoch, cfg.epochs, cfg.base_lr, cfg.min_lr)
        n = len(self.dataset)
        if cfg.da.enabled:
            plan = epoch_data_plan(self.data_dist, n, cfg.batch_size, self.rngs["data"])
        else:
            plan = shuffled_plan(n, cfg.batch_size, self.rngs["data"])

        tracker = GradVarTracker(self.include)
        n_paths = self.spec.space_size
        loss_sum = 0.0
        for idx in plan:
            path, prob = sample_path(self.path_dist, self.rngs["path"])
            batch = Batch(self.dataset.inputs[idx], self.dataset.labels[idx], idx)
            scale = reweight_factor(prob, n_paths) if cfg.pa.enabled and cfg.pa.reweight else 1.0
            try:
                _, cache = forward(self.supernet, path, batch)
                loss, grads, llg = backward(self.supernet, path, batch, cache, loss_scale=scale)
                if not math.isfinite(loss):
                    raise NumericError("non-finite loss")
            except NumericError as exc:
                raise NumericError(
                    f"epoch {self.epoch + 1} step {self.opt.step}: path {format_path(path)}, "
                    f"batch of {len(idx)} starting at sample {int(idx[0])}: {exc}"
                ) from exc
            sgd_step(self.supernet, grads, self.opt, lr)
            tracker.record(grads)
            if cfg.pa.enabled:
                accumulate_path_norms(self.path_dist, path, grads)
            if cfg.da.enabled:
                record_data_importance(self.data_dist, idx, llg)
            if self.step_hook is not None:
                self.step_hook(path, grads)
            loss_sum += loss

        self.epoch += 1
        self.opt.epoch = self.epoch
        if cfg.pa.enabled:
            update_path_distribution(self.path_dist, self.epoch, cfg.epochs)
        if cfg.da.enabled:
            update_data_distribution(self.data_dist, self.epoch, cfg.epochs)
        try:
            gv = supernet_gv(tracker)
        except InsufficientSamplesError:
            log.warning("epoch %d: too few gradient samples for a variance estimate", self.epoch)
            gv = float("nan")
        self.run_tracker.merge(tracker)
        m = EpochMetrics(
            epoch=self.epoch,
            step_count=self.opt.step,
            mean_loss=loss_sum / len(plan),
            gv=gv,
            delta=float(self.path_dist.delta),
            tau=float(self.data_dist.tau),
            lr=lr,
        )
        self.history.append(m)
        log.debug("epoch %d loss %.4f gv %.3e", m.epoch, m.mean_loss, m.gv)
        return m

    def run(self, until: int | None = None) -> list[EpochMetrics]:
        stop = self.config.epochs if until is None else min(until, self.config.epochs)
        while self.epoch < stop:
            self.run_epoch()
        return self.history

    def run_gv(self) -> float:
        return supernet_gv(self.run_tracker)

    # --- persistence --------------------------------------------------------

    def to_checkpoint(self) -> Checkpoint:
        pd, dd = self.path_dist, self.data_dist
        trainer = {
            "epoch": np.array(float(self.epoch)),
            "opt.step": np.array(float(self.opt.step)),
            "history": np.array([m.row() for m in self.history], dtype=np.float64).reshape(-1, 7),
        }
        trainer.update({f"opt.buf.{k}": v for k, v in self.opt.buffers.items()})
        for name, m in self.run_tracker.stats.items():
            trainer[f"gv.{name}.count"] = np.array(float(m.count))
            trainer[f"gv.{name}.mean"] = m.mean
            trainer[f"gv.{name}.m2"] = m.m2
        return Checkpoint(
            params=dict(self.supernet.params),
            path_dist={"probs": pd.probs, "acc": pd.acc, "delta": np.array(pd.delta)},
            data_dist={
                "probs": dd.probs,
                "acc": dd.acc,
                "counts": dd.counts.astype(np.float64),
                "tau": np.array(dd.tau),
            },
            rng={name: get_state(gen) for name, gen in self.rngs.items()},
            trainer=trainer,
        )

    @classmethod
    def from_checkpoint(cls, config: TrainConfig, spec: CellSpec, dataset: Dataset, ckpt: Checkpoint) -> "SupernetTrainer":
        self = cls(config, spec, dataset)
        load_params_into(self.supernet, ckpt)
        pd, dd = self.path_dist, self.data_dist
        try:
            pd.probs[...] = ckpt.path_dist["probs"]
            pd.acc[...] = ckpt.path_dist["acc"]
            pd.delta = float(ckpt.path_dist["delta"])
            dd.probs = ckpt.data_dist["probs"].copy()
            dd.acc[...] = ckpt.data_dist["acc"]
            dd.counts[...] = ckpt.data_dist["counts"].astype(np.int64)
            dd.tau = float(ckpt.data_dist["tau"])
            for name, gen in self.rngs.items():
                set_state(gen, ckpt.rng[name])
            t = ckpt.trainer
            self.epoch = int(t["epoch"])
            self.opt.step = int(t["opt.step"])
            self.opt.epoch = self.epoch
            for k in self.opt.buffers:
                self.opt.buffers[k][...] = t[f"opt.buf.{k}"]
            self.history = [
                EpochMetrics(int(r[0]), int(r[1]), *map(float, r[2:])) for r in t["history"]
            ]
            for key in t:
                if key.startswith("gv.") and key.endswith(".count"):
                    name = key[3:-6]
                    self.run_tracker.stats[name] = Moments(
                        int(t[key]), t[f"gv.{name}.mean"].copy(), t[f"gv.{name}.m2"].copy()
                    )
        except (KeyError, ValueError) as exc:
            raise UsageError(f"checkpoint does not match this configuration: {exc}") from exc
        if self.epoch > config.epochs:
            raise UsageError(f"checkpoint is at epoch {self.epoch}, beyond the configured {config.epochs}")
        return self


def load_params_into(supernet: Supernet, ckpt: Checkpoint) -> Supernet:
    if set(ckpt.params) != set(supernet.params):
        missing = sorted(set(supernet.params) ^ set(ckpt.params))[:4]
        raise UsageError(f"checkpoint parameters do not match the search space (e.g. {missing})")
    for name, w in supernet.params.items():
        if ckpt.params[name].shape != w.shape:
            raise UsageError(f"checkpoint shape {ckpt.params[name].shape} for {name}, expected {w.shape}")
        w[...] = ckpt.params[name]
    supernet.version += 1
    return supernet


def supernet_from_checkpoint(spec: CellSpec, ckpt: Checkpoint) -> Supernet:
    net = build_supernet(spec, np.random.default_rng(0))
    return load_params_into(net, ckpt)


def train_supernet(config: TrainConfig, spec: CellSpec, dataset: Dataset):
    """Train to completion; returns ``(supernet, history)``."""
    trainer = SupernetTrainer(config, spec, dataset)
    trainer.run()
    return trainer.supernet, trainer.history


# --- search -------------------------------------------------------------------

@dataclass
class SearchConfig:
    strategy: str = "evolution"
    rounds: int = 20
    population: int = 50
    n_parents: int = 10
    n_mutate: int = 25
    n_crossover: int = 25
    mutation_rate: float = 0.1
    param_budget: int | None = None
    eval_subset_size: int | None = None
    max_retries: int = 100

    def __post_init__(self):
        if self.strategy not in ("random", "evolution"):
            raise ConfigError(f"search.strategy must be random or evolution, got {self.strategy!r}")
        if self.rounds < 1 or self.population < 1 or self.n_parents < 1:
            raise ConfigError("search rounds, population and n_parents must be >= 1")
        if self.n_mutate < 0 or self.n_crossover < 0:
            raise ConfigError("n_mutate and n_crossover must be nonnegative")
        if self.n_mutate + self.n_crossover > self.population:
            raise ConfigError("n_mutate + n_crossover must not exceed population")
        if not 0 <= self.mutation_rate <= 1:
            raise ConfigError("mutation_rate must lie in [0, 1]")


@dataclass
class SearchResult:
    path: Path
    score: float
    history: list[float]
    n_evaluated: int


class _Scorer:
    def __init__(self, supernet: Supernet, eval_set: Dataset):
        self.supernet = supernet
        self.eval_set = eval_set
        self.cache: dict[Path, float] = {}

    def __call__(self, path: Path) -> float:
        if path not in self.cache:
            view = inherit_weights(self.supernet, path)
            self.cache[path] = path_accuracy(view, path, self.eval_set.inputs, self.eval_set.labels)
        return self.cache[path]


def _within(spec: CellSpec, path, budget) -> bool:
    return budget is None or path_param_count(spec, path) <= budget


def _valid_paths(spec: CellSpec, budget) -> list[Path] | None:
    """All budget-valid paths when the space is enumerable, else ``None``."""
    try:
        paths = enumerate_paths(spec)
    except UsageError:
        return None
    valid = [p for p in paths if _within(spec, p, budget)]
    if not valid:
        raise SearchError(f"no path satisfies the parameter budget {budget}")
    return valid


def _draw_valid(spec, budget, valid, rng, max_retries) -> Path:
    if valid is not None:
        return valid[int(rng.integers(len(valid)))]
    for _ in range(max_retries):
        p = random_path(spec, rng)
        if _within(spec, p, budget):
            return p
    raise SearchError(f"no budget-valid path found in {max_retries} draws")


def random_search(supernet: Supernet, config: SearchConfig, eval_set: Dataset, rng) -> SearchResult:
    spec = supernet.spec
    score = _Scorer(supernet, eval_set.subset(config.eval_subset_size))
    valid = _valid_paths(spec, config.param_budget)
    best: tuple[Path, float] | None = None
    history = []
    for _ in range(config.rounds):
        for _ in range(config.population):
            p = _draw_valid(spec, config.param_budget, valid, rng, config.max_retries)
            s = score(p)
            if best is None or s > best[1]:
                best = (p, s)
        history.append(best[1])
    return SearchResult(best[0], best[1], history, len(score.cache))


def _top(population: list[Path], score, k: int) -> list[Path]:
    order = sorted(range(len(population)), key=lambda i: -score(population[i]))
    return [population[i] for i in order[:k]]


def evolutionary_search(supernet: Supernet, config: SearchConfig, eval_set: Dataset, rng) -> SearchResult:
    """Elitist (mu + lambda) evolution with mutation and uniform crossover."""
    if config.population < 2:
        raise ConfigError("evolutionary search needs population >= 2")
    spec = supernet.spec
    budget = config.param_budget
    score = _Scorer(supernet, eval_set.subset(config.eval_subset_size))
    valid = _valid_paths(spec, budget)

    if valid is not None and config.population >= len(valid):
        population = list(valid)
    elif valid is not None:
        pick = rng.choice(len(valid), size=config.population, replace=False)
        population = [valid[i] for i in sorted(pick)]
    else:
        population, seen = [], set()
        for _ in range(config.population * config.max_retries):
            p = _draw_valid(spec, budget, None, rng, config.max_retries)
            if p not in seen:
                seen.add(p)
                population.append(p)
            if len(population) == config.population:
                break

    def child_of(make) -> Path:
        for _ in range(config.max_retries):
            c = make()
            if _within(spec, c, budget):
                return c
        raise SearchError(f"could not produce a budget-valid child in {config.max_retries} tries")

    best = _top(population, score, 1)[0]
    history = [score(best)]
    for _ in range(config.rounds):
        parents = _top(population, score, config.n_parents)

        def pick():
            return parents[int(rng.integers(len(parents)))]

        children = [child_of(lambda: mutate(spec, pick(), config.mutation_rate, rng)) for _ in range(config.n_mutate)]
        children += [child_of(lambda: crossover(spec, pick(), pick(), rng)) for _ in range(config.n_crossover)]
        pool = list(dict.fromkeys(population + children))
        population = _top(pool, score, config.population)
        if score(population[0]) > score(best):
            best = population[0]
        history.append(score(best))
    return SearchResult(best, score(best), history, len(score.cache))
