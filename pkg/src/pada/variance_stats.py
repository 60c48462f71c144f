"""Streaming per-parameter gradient variance (Welford / Chan updates).

Each parameter tensor keeps element-wise running moments over the steps in
which it received a gradient. Its variance is the mean of the element-wise
population variances; the supernet figure is the unweighted mean over
parameters that were updated at least twice.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import InsufficientSamplesError

GV_SCOPES = ("ops", "all")


def scope_filter(scope: str) -> Callable[[str], bool]:
    if scope == "all":
        return lambda name: True
    if scope == "ops":
        return lambda name: name.startswith("edge")
    raise ValueError(f"gv scope must be one of {GV_SCOPES}, got {scope!r}")


@dataclass
class Moments:
    count: int
    mean: np.ndarray
    m2: np.ndarray

    def variance(self) -> float:
        return float(np.mean(self.m2 / self.count)) if self.count else 0.0


@dataclass
class GradVarTracker:
    include: Callable[[str], bool] = field(default=lambda name: True)
    stats: dict[str, Moments] = field(default_factory=dict)

    def record(self, grads: Mapping[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if not self.include(name):
                continue
            m = self.stats.get(name)
            if m is None:
                self.stats[name] = Moments(1, np.array(g, dtype=np.float64), np.zeros(np.shape(g)))
                continue
            m.count += 1
            delta = g - m.mean
            m.mean += delta / m.count
            m.m2 += delta * (g - m.mean)

    def reset(self) -> None:
        self.stats.clear()

    def merge(self, other: "GradVarTracker") -> None:
        """Fold another tracker's moments into this one (parallel-moments combine)."""
        for name, o in other.stats.items():
            m = self.stats.get(name)
            if m is None:
                self.stats[name] = Moments(o.count, o.mean.copy(), o.m2.copy())
                continue
            n = m.count + o.count
            delta = o.mean - m.mean
            m.mean = m.mean + delta * (o.count / n)
            m.m2 = m.m2 + o.m2 + delta * delta * (m.count * o.count / n)
            m.count = n

    def variances(self) -> dict[str, float]:
        return {name: m.variance() for name, m in self.stats.items()}

    def counts(self) -> dict[str, int]:
        return {name: m.count for name, m in self.stats.items()}


def supernet_gv(tracker: GradVarTracker) -> float:
    eligible = sorted(name for name, m in tracker.stats.items() if m.count >= 2)
    if not eligible:
        raise InsufficientSamplesError("no parameter has received at least two gradient samples")
    return float(np.mean([tracker.stats[name].variance() for name in eligible]))

