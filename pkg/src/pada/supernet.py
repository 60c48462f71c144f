"""Shared weight store: one parameter set per (edge, candidate op) plus stem and classifier."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .nn_core import Batch, forward, op_prefix, path_param_names
from .search_space import CellSpec, validate_path


@dataclass
class Supernet:
    spec: CellSpec
    params: dict[str, np.ndarray]
    # bumped by every in-place update; forward caches and views record it
    version: int = 0

    def param_names(self) -> list[str]:
        return list(self.params)

    def n_params(self) -> int:
        return sum(w.size for w in self.params.values())


def _param_layout(spec: CellSpec) -> list[tuple[str, tuple[int, ...]]]:
    h = spec.hidden
    layout = [("stem.W", (spec.d_in, h)), ("stem.b", (h,))]
    for e in range(spec.n_edges):
        for k, op in enumerate(spec.ops):
            layout.extend((op_prefix(e, k) + n, s) for n, s in op.param_shapes(h).items())
    layout += [("cls.W", (h, spec.n_classes)), ("cls.b", (spec.n_classes,))]
    return layout


def build_supernet(spec: CellSpec, rng: np.random.Generator) -> Supernet:
    """Fresh supernet; weights ~ U(+-sqrt(6/fan_in)), biases zero."""
    spec.validate()
    params = {}
    for name, shape in _param_layout(spec):
        if len(shape) == 2:
            bound = np.sqrt(6.0 / shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
        else:
            params[name] = np.zeros(shape)
    return Supernet(spec, params)


def path_params(supernet: Supernet, path) -> list[str]:
    return path_param_names(supernet.spec, validate_path(supernet.spec, path))


class ModelView:
    """Read-only standalone model for one path, aliasing the supernet's storage.

    The view becomes invalid once the supernet is updated; using it afterwards
    raises :class:`UsageError`.
    """

    def __init__(self, supernet: Supernet, path):
        self.spec = supernet.spec
        self.path = validate_path(supernet.spec, path)
        self._supernet = supernet
        self._version = supernet.version
        self.params = {}
        for name in path_params(supernet, self.path):
            ro = supernet.params[name].view()
            ro.flags.writeable = False
            self.params[name] = ro

    def assert_fresh(self) -> None:
        if self._supernet.version != self._version:
            raise UsageError("supernet was modified after this view was created")

    def logits(self, inputs: np.ndarray) -> np.ndarray:
        out, _ = forward(self, self.path, Batch(inputs, np.zeros(len(inputs), dtype=np.int64)))
        return out

    def accuracy(self, inputs: np.ndarray, labels: np.ndarray) -> float:
        pred = self.logits(inputs).argmax(axis=1)
        return float(np.mean(pred == np.asarray(labels)))


def inherit_weights(supernet: Supernet, path) -> ModelView:
    return ModelView(supernet, path)
