"""Cell topology, candidate operations and path manipulation.

A cell is a DAG over ``n_nodes`` nodes. Node 0 receives the stem output and
every later node sums the outputs of its incoming edges::

    node_j = sum(op_(i, j)(node_i) for i < j)

The cell output is the last node. A :class:`Path` picks one candidate
operation per edge.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, UsageError

ENUMERATION_CAP = 20_000


class OpKind(str, Enum):
    ZERO = "zero"
    SKIP = "skip"
    LINEAR = "linear"
    LINEAR_RELU = "linear_relu"
    MLP2 = "mlp2"

    def param_shapes(self, hidden: int) -> dict[str, tuple[int, ...]]:
        """Parameter tensor shapes for one instance of this op, in storage order."""
        if self in (OpKind.ZERO, OpKind.SKIP):
            return {}
        if self in (OpKind.LINEAR, OpKind.LINEAR_RELU):
            return {"W": (hidden, hidden), "b": (hidden,)}
        half = hidden // 2
        return {"W1": (hidden, half), "b1": (half,), "W2": (half, hidden), "b2": (hidden,)}

    @property
    def has_params(self) -> bool:
        return self not in (OpKind.ZERO, OpKind.SKIP)


def default_edges(n_nodes: int) -> tuple[tuple[int, int], ...]:
    # grouped by destination: (0,1), (0,2), (1,2), (0,3), (1,3), (2,3), ...
    return tuple((i, j) for j in range(1, n_nodes) for i in range(j))


@dataclass(frozen=True)
class CellSpec:
    ops: tuple[OpKind, ...] = (OpKind.SKIP, OpKind.LINEAR)
    hidden: int = 16
    d_in: int = 16
    n_classes: int = 4
    n_nodes: int = 4
    edges: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(OpKind(o) for o in self.ops))
        if not self.edges:
            object.__setattr__(self, "edges", default_edges(self.n_nodes))
        else:
            object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))
        self.validate()

    def validate(self) -> None:
        if not self.ops:
            raise ConfigError("ops_per_edge must be nonempty")
        if len(set(self.ops)) != len(self.ops):
            raise ConfigError(f"duplicate ops in {[o.value for o in self.ops]}")
        for name in ("hidden", "d_in", "n_classes", "n_nodes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_nodes < 2:
            raise ConfigError("a cell needs at least 2 nodes")
        if OpKind.MLP2 in self.ops and self.hidden % 2:
            raise ConfigError(f"mlp2 requires an even hidden size, got {self.hidden}")
        for src, dst in self.edges:
            if not 0 <= src < dst < self.n_nodes:
                raise ConfigError(f"edge ({src},{dst}) must satisfy 0 <= src < dst < n_nodes")
        if len(set(self.edges)) != len(self.edges):
            raise ConfigError("duplicate edges")
        # every edge must be evaluated after its source: order edges by destination
        dsts = [d for _, d in self.edges]
        if dsts != sorted(dsts):
            raise ConfigError("edges must be ordered by destination node")

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_ops(self) -> int:
        return len(self.ops)

    @property
    def space_size(self) -> int:
        return self.n_ops ** self.n_edges


Path = tuple[int, ...]


def validate_path(spec: CellSpec, path: Sequence[int]) -> Path:
    path = tuple(int(k) for k in path)
    if len(path) != spec.n_edges:
        raise UsageError(f"path has {len(path)} entries, spec has {spec.n_edges} edges")
    for k in path:
        if not 0 <= k < spec.n_ops:
            raise UsageError(f"op index {k} out of range [0, {spec.n_ops})")
    return path


def format_path(path: Sequence[int]) -> str:
    return ",".join(str(int(k)) for k in path)


def parse_path(text: str, spec: CellSpec | None = None) -> Path:
    try:
        path = tuple(int(tok) for tok in text.strip().split(","))
    except ValueError:
        raise UsageError(f"malformed path string {text!r}") from None
    return validate_path(spec, path) if spec is not None else path


def cell_forward_rule(spec: CellSpec, node0, apply_edge: Callable[[int, object], object]):
    """Evaluate the cell sum rule.

    ``apply_edge(e, x)`` returns the output of edge ``e`` on input ``x``, or
    ``None`` for a contribution that is identically zero. Returns all node
    values; the cell output is the last one.
    """
    nodes = [node0] + [np.zeros_like(node0) for _ in range(spec.n_nodes - 1)]
    for e, (src, dst) in enumerate(spec.edges):
        out = apply_edge(e, nodes[src])
        if out is not None:
            nodes[dst] = nodes[dst] + out
    return nodes


def enumerate_paths(spec: CellSpec, cap: int = ENUMERATION_CAP) -> list[Path]:
    if spec.space_size > cap:
        raise UsageError(
            f"search space has {spec.space_size} paths, above the enumeration cap {cap}; sample instead"
        )
    return list(itertools.product(range(spec.n_ops), repeat=spec.n_edges))


def random_path(spec: CellSpec, rng: np.random.Generator) -> Path:
    return tuple(int(k) for k in rng.integers(0, spec.n_ops, size=spec.n_edges))


def mutate(spec: CellSpec, path: Sequence[int], rate: float, rng: np.random.Generator) -> Path:
    """Resample each edge uniformly with probability ``rate``."""
    path = validate_path(spec, path)
    flips = rng.random(spec.n_edges) < rate
    fresh = rng.integers(0, spec.n_ops, size=spec.n_edges)
    return tuple(int(f) if flip else k for k, flip, f in zip(path, flips, fresh))


def crossover(spec: CellSpec, a: Sequence[int], b: Sequence[int], rng: np.random.Generator) -> Path:
    """Uniform crossover: each edge copies parent ``a`` or ``b`` with equal odds."""
    if len(a) != len(b):
        raise UsageError("crossover parents come from different specs")
    a, b = validate_path(spec, a), validate_path(spec, b)
    take_a = rng.random(spec.n_edges) < 0.5
    return tuple(x if t else y for x, y, t in zip(a, b, take_a))


def op_param_count(op: OpKind, hidden: int) -> int:
    return sum(int(np.prod(s)) for s in op.param_shapes(hidden).values())


def path_param_count(spec: CellSpec, path: Sequence[int]) -> int:
    path = validate_path(spec, path)
    h = spec.hidden
    total = spec.d_in * h + h + h * spec.n_classes + spec.n_classes
    return total + sum(op_param_count(spec.ops[k], h) for k in path)
