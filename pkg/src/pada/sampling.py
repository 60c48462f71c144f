"""Path and data importance sampling.

Both distributions are mixtures ``s * importance + (1 - s) * uniform`` where
``importance`` is the normalised gradient-norm record of the last epoch and
the smoothing weight ``s`` follows a linear schedule over epochs.

Path importance factorises per edge: every candidate op keeps a running sum
of the gradient norm of its parameters over the steps in which it was
sampled, and an edge's op probabilities are those sums normalised.

Data importance uses the last-layer gradient ``softmax(logits) - onehot`` of
each sample as a cheap upper bound on its full gradient norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .nn_core import GradientSet, op_prefix
from .search_space import CellSpec, Path

NORM_FLOOR = 1e-12

UPDATE_FREQS = ("per_epoch", "per_step")
STYLES = ("increase", "decrease")
GRANULARITIES = ("instance", "class")


def _check_choice(value: str, choices: Sequence[str], what: str) -> None:
    if value not in choices:
        raise ConfigError(f"{what} must be one of {list(choices)}, got {value!r}")


def schedule(epoch: int, total_epochs: int, style: str = "increase") -> float:
    """Smoothing weight after ``epoch`` (1-based) of ``total_epochs``."""
    _check_choice(style, STYLES, "style")
    if total_epochs < 1:
        raise ConfigError("total_epochs must be positive")
    frac = min(max(epoch / total_epochs, 0.0), 1.0)
    return frac if style == "increase" else 1.0 - frac


def optimal_simplex_weights(norms) -> np.ndarray:
    """Minimiser of ``sum(g_i**2 / p_i)`` over the probability simplex: ``p ∝ g``."""
    norms = np.asarray(norms, dtype=np.float64)
    if (norms < 0).any():
        raise ValueError("gradient norms must be nonnegative")
    total = norms.sum()
    if total <= 0:
        return np.full(norms.shape, 1.0 / norms.size)
    return norms / total


def _mix(importance: np.ndarray, weight: float) -> np.ndarray:
    uniform = np.full(importance.shape, 1.0 / importance.size)
    return weight * optimal_simplex_weights(importance + NORM_FLOOR) + (1.0 - weight) * uniform


# --- path distribution ----------------------------------------------------

@dataclass
class PathDistribution:
    probs: np.ndarray  # [n_edges, n_ops]
    acc: np.ndarray  # accumulated op gradient norms, same shape
    delta: float = 0.0
    update_freq: str = "per_epoch"
    style: str = "increase"
    reweight: bool = False

    @classmethod
    def uniform(cls, spec: CellSpec, **kwargs) -> "PathDistribution":
        shape = (spec.n_edges, spec.n_ops)
        style = kwargs.get("style", "increase")
        kwargs.setdefault("delta", schedule(0, 1, style))
        return cls(np.full(shape, 1.0 / spec.n_ops), np.zeros(shape), **kwargs)

    def __post_init__(self):
        _check_choice(self.update_freq, UPDATE_FREQS, "pa.update_freq")
        _check_choice(self.style, STYLES, "pa.style")

    def snapshot(self) -> np.ndarray:
        return self.probs.copy()

    def path_probability(self, path) -> float:
        return float(np.prod(self.probs[np.arange(len(path)), list(path)]))

    def refresh_edge(self, e: int) -> None:
        self.probs[e] = _mix(self.acc[e], self.delta)


def op_grad_norm(grads: GradientSet, edge: int, op_index: int) -> float:
    prefix = op_prefix(edge, op_index)
    sq = sum(float(np.sum(g * g)) for name, g in grads.items() if name.startswith(prefix))
    return float(np.sqrt(sq))


def accumulate_path_norms(dist: PathDistribution, path, grads: GradientSet) -> None:
    """Add each chosen op's gradient L2 norm to its accumulator.

    In ``per_step`` mode the touched edges are re-normalised immediately.
    """
    for e, k in enumerate(path):
        dist.acc[e, k] += op_grad_norm(grads, e, k)
    if dist.update_freq == "per_step":
        for e in range(len(path)):
            dist.refresh_edge(e)


def update_path_distribution(dist: PathDistribution, epoch: int, total_epochs: int) -> None:
    dist.delta = schedule(epoch, total_epochs, dist.style)
    for e in range(dist.probs.shape[0]):
        dist.refresh_edge(e)
    if dist.update_freq == "per_epoch":
        dist.acc[...] = 0.0


def sample_path(dist: PathDistribution, rng: np.random.Generator) -> tuple[Path, float]:
    """Independent categorical draw per edge; also returns the joint probability."""
    n_edges, n_ops = dist.probs.shape
    u = rng.random(n_edges)
    cdf = np.cumsum(dist.probs, axis=1)
    path = tuple(
        min(int(np.searchsorted(cdf[e], u[e] * cdf[e, -1], side="right")), n_ops - 1)
        for e in range(n_edges)
    )
    return path, dist.path_probability(path)


def reweight_factor(path_prob: float, n_paths: int) -> float:
    """Loss scale ``1 / (N p)`` that makes importance-sampled gradients unbiased."""
    return 1.0 / (n_paths * path_prob)


# --- data distribution ----------------------------------------------------

@dataclass
class DataDistribution:
    probs: np.ndarray  # [n_samples]
    acc: np.ndarray  # summed last-layer gradient norms this epoch
    counts: np.ndarray  # times each sample was drawn this epoch
    tau: float = 0.0
    style: str = "increase"
    granularity: str = "instance"
    classes: np.ndarray | None = None

    @classmethod
    def uniform(cls, n_samples: int, classes=None, **kwargs) -> "DataDistribution":
        style = kwargs.get("style", "increase")
        kwargs.setdefault("tau", schedule(0, 1, style))
        if classes is not None:
            classes = np.asarray(classes, dtype=np.int64)
        return cls(
            np.full(n_samples, 1.0 / n_samples),
            np.zeros(n_samples),
            np.zeros(n_samples, dtype=np.int64),
            classes=classes,
            **kwargs,
        )

    def __post_init__(self):
        _check_choice(self.style, STYLES, "da.style")
        _check_choice(self.granularity, GRANULARITIES, "da.granularity")
        if self.granularity == "class":
            if self.classes is None or len(self.classes) != len(self.probs):
                raise ConfigError("class granularity needs one class index per sample")

    @property
    def sampled(self) -> np.ndarray:
        return self.counts > 0

    def snapshot(self) -> np.ndarray:
        return self.probs.copy()


def per_sample_importance(last_layer_grad: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(last_layer_grad * last_layer_grad, axis=1))


def record_data_importance(dist: DataDistribution, sample_ids, last_layer_grad: np.ndarray) -> None:
    np.add.at(dist.acc, np.asarray(sample_ids), per_sample_importance(last_layer_grad))


def sample_importance_estimate(dist: DataDistribution) -> np.ndarray:
    """Norms accumulated over this epoch's draws; zero if never drawn.

    A sample drawn k times contributes k norms, so frequently drawn samples
    reinforce their own mass; ``dist.acc / dist.counts`` would give the
    per-draw mean instead.
    """
    return dist.acc.copy()


def update_data_distribution(dist: DataDistribution, epoch: int, total_epochs: int) -> None:
    dist.tau = schedule(epoch, total_epochs, dist.style)
    norms = sample_importance_estimate(dist)
    if dist.granularity == "instance":
        dist.probs = _mix(norms, dist.tau)
    else:
        labels = dist.classes
        n_cls = int(labels.max()) + 1
        sizes = np.bincount(labels, minlength=n_cls)
        present = sizes > 0
        means = np.zeros(n_cls)
        means[present] = np.bincount(labels, weights=norms, minlength=n_cls)[present] / sizes[present]
        class_mass = np.zeros(n_cls)
        class_mass[present] = optimal_simplex_weights(means[present] + NORM_FLOOR)
        spread = class_mass[labels] / sizes[labels]
        n = len(norms)
        dist.probs = dist.tau * spread + (1.0 - dist.tau) / n
    dist.acc[...] = 0.0
    dist.counts[...] = 0


def sample_epoch_indices(dist: DataDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` sample indices i.i.d. from ``q`` with replacement."""
    if n <= 0:
        raise ConfigError("number of indices must be positive")
    cdf = np.cumsum(dist.probs)
    u = rng.random(n) * cdf[-1]
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)
    np.add.at(dist.counts, idx, 1)
    return idx


def total_variation_from_uniform(probs: np.ndarray) -> float:
    probs = np.atleast_2d(probs)
    return float(0.5 * np.abs(probs - 1.0 / probs.shape[1]).sum(axis=1).mean())
