"""Ranking consistency: supernet scores vs. standalone-trained ground truth."""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import NumericError, UsageError
from .nn_core import Batch, OptimizerState, backward, cosine_lr, forward, sgd_step
from .rng import stream
from .search_space import CellSpec, format_path, validate_path
from .supernet import Supernet, build_supernet, inherit_weights

EVAL_CHUNK = 4096


def path_accuracy(weights, path, inputs: np.ndarray, labels: np.ndarray) -> float:
    correct = 0
    for start in range(0, len(labels), EVAL_CHUNK):
        batch = Batch(inputs[start:start + EVAL_CHUNK], labels[start:start + EVAL_CHUNK])
        logits, _ = forward(weights, path, batch)
        correct += int(np.sum(logits.argmax(axis=1) == batch.labels))
    return correct / len(labels)


def evaluate_all(supernet: Supernet, paths, dataset, workers: int | None = None) -> np.ndarray:
    """Inherited-weight accuracy of every path, in the given order."""
    if len(dataset) == 0:
        raise UsageError("evaluation set is empty")
    inputs, labels = dataset.inputs, dataset.labels

    def score(path):
        return path_accuracy(inherit_weights(supernet, path), path, inputs, labels)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return np.array(list(pool.map(score, paths)))
    return np.array([score(p) for p in paths])


@dataclass
class OracleConfig:
    epochs: int = 60
    batch_size: int = 64
    base_lr: float = 2e-4
    min_lr: float = 0.0
    momentum: float = 0.9
    weight_decay: float = 5e-4


def train_standalone_oracle(spec: CellSpec, path, train_set, eval_set, config: OracleConfig, seed: int) -> float:
    """Train ``path`` from scratch and return its eval accuracy.

    Only the path's own parameters are ever touched, so this is a standalone
    model even though storage is laid out like a supernet. Every path uses the
    same init and data-order streams for a given seed.
    """
    path = validate_path(spec, path)
    model = build_supernet(spec, stream(seed, "init"))
    data_rng = stream(seed, "data")
    opt = OptimizerState.for_params(
        model.params,
        base_lr=config.base_lr,
        min_lr=config.min_lr,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )
    n = len(train_set)
    step = 0
    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.base_lr, config.min_lr)
        order = data_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = Batch(train_set.inputs[idx], train_set.labels[idx], idx)
            try:
                _, cache = forward(model, path, batch)
            except NumericError as exc:
                raise NumericError(f"standalone training of path {format_path(path)} diverged at step {step}: {exc}") from exc
            loss, grads, _ = backward(model, path, batch, cache)
            if not math.isfinite(loss):
                raise NumericError(f"standalone training of path {format_path(path)} diverged at step {step}")
            sgd_step(model, grads, opt, lr)
            step += 1
    return path_accuracy(model, path, eval_set.inputs, eval_set.labels)


# --- metrics ----------------------------------------------------------------

def kendall_tau(a, b) -> float:
    """Tau-a: (concordant - discordant) / (n(n-1)/2); tied pairs count as neither."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise UsageError(f"kendall_tau needs equal-length vectors, got {a.shape} and {b.shape}")
    n = len(a)
    if n < 2:
        raise UsageError("kendall_tau needs at least two items")
    score = 0
    chunk = max(1, 4_000_000 // n)
    for start in range(0, n - 1, chunk):
        rows = np.arange(start, min(start + chunk, n - 1))
        sa = np.sign(a[rows, None] - a[None, :])
        sb = np.sign(b[rows, None] - b[None, :])
        prod = (sa * sb).astype(np.int64)
        upper = np.arange(n)[None, :] > rows[:, None]
        score += int(prod[upper].sum())
    return score / (n * (n - 1) / 2)


def topk_indices(scores, k: int) -> np.ndarray:
    # stable: equal scores keep enumeration order
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")[:k]


def topk_count(n: int, k_frac: float) -> int:
    if not 0 < k_frac <= 1:
        raise UsageError(f"k_frac must lie in (0, 1], got {k_frac}")
    return max(1, int(math.floor(k_frac * n + 1e-9)))


def precision_at_topk(pred, truth, k_frac: float = 0.05) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise UsageError(f"precision_at_topk needs equal-length vectors, got {pred.shape} and {truth.shape}")
    k = topk_count(len(pred), k_frac)
    overlap = np.intersect1d(topk_indices(pred, k), topk_indices(truth, k))
    return len(overlap) / k


@dataclass
class RankingReport:
    paths: list[str]
    supernet_accuracy: list[float]
    truth_accuracy: list[float]
    kendall_tau: float
    p_at_topk: float
    k_frac: float
    seed: int
    label: str = ""
    timestamp: float = field(default_factory=time.time)

    def __post_init__(self):
        if not len(self.paths) == len(self.supernet_accuracy) == len(self.truth_accuracy):
            raise UsageError("report vectors must share one path order")

    @classmethod
    def build(cls, paths: Sequence, supernet_acc, truth_acc, k_frac=0.05, seed=0, label="") -> "RankingReport":
        return cls(
            paths=[p if isinstance(p, str) else format_path(p) for p in paths],
            supernet_accuracy=[float(v) for v in supernet_acc],
            truth_accuracy=[float(v) for v in truth_acc],
            kendall_tau=kendall_tau(supernet_acc, truth_acc),
            p_at_topk=precision_at_topk(supernet_acc, truth_acc, k_frac),
            k_frac=k_frac,
            seed=seed,
            label=label,
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RankingReport":
        return cls(**json.loads(text))
