"""Dense forward/backward for one path through the cell network.

Model layout (row vectors, ``y = x @ W + b``)::

    node0  = x @ stem.W + stem.b
    node_j = sum_i op_(i,j)(node_i)           # cell sum rule
    logits = node_last @ cls.W + cls.b

Gradients are hand-derived; tensors are float64 numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .errors import ConfigError, NumericError, UsageError
from .search_space import CellSpec, OpKind, Path, cell_forward_rule, validate_path

GradientSet = dict[str, np.ndarray]


@dataclass
class Batch:
    inputs: np.ndarray
    labels: np.ndarray
    sample_ids: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.sample_ids is None:
            self.sample_ids = np.arange(len(self.labels))
        if self.inputs.ndim != 2 or len(self.inputs) != len(self.labels):
            raise ConfigError(
                f"batch inputs {self.inputs.shape} do not match {len(self.labels)} labels"
            )

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class ForwardCache:
    path: Path
    batch_id: int
    version: Any
    x: np.ndarray
    nodes: list[np.ndarray]
    edge_caches: list[Any]
    logits: np.ndarray


def op_prefix(edge: int, op_index: int) -> str:
    return f"edge{edge}.op{op_index}."


# --- per-op kernels -------------------------------------------------------

def _op_forward(kind: OpKind, p: Mapping[str, np.ndarray], prefix: str, x: np.ndarray):
    if kind is OpKind.ZERO:
        return None, None
    if kind is OpKind.SKIP:
        return x, None
    if kind is OpKind.LINEAR:
        return x @ p[prefix + "W"] + p[prefix + "b"], x
    if kind is OpKind.LINEAR_RELU:
        z = x @ p[prefix + "W"] + p[prefix + "b"]
        return np.maximum(z, 0.0), (x, z > 0)
    z1 = x @ p[prefix + "W1"] + p[prefix + "b1"]
    a1 = np.maximum(z1, 0.0)
    return a1 @ p[prefix + "W2"] + p[prefix + "b2"], (x, a1, z1 > 0)


def _op_backward(kind: OpKind, p, prefix: str, cache, g: np.ndarray, grads: GradientSet):
    """Accumulate parameter grads into ``grads``; return grad w.r.t. the op input."""
    if kind is OpKind.ZERO:
        return None
    if kind is OpKind.SKIP:
        return g
    if kind is OpKind.LINEAR:
        x = cache
        grads[prefix + "W"] = x.T @ g
        grads[prefix + "b"] = g.sum(axis=0)
        return g @ p[prefix + "W"].T
    if kind is OpKind.LINEAR_RELU:
        x, mask = cache
        gz = g * mask
        grads[prefix + "W"] = x.T @ gz
        grads[prefix + "b"] = gz.sum(axis=0)
        return gz @ p[prefix + "W"].T
    x, a1, mask = cache
    grads[prefix + "W2"] = a1.T @ g
    grads[prefix + "b2"] = g.sum(axis=0)
    gz1 = (g @ p[prefix + "W2"].T) * mask
    grads[prefix + "W1"] = x.T @ gz1
    grads[prefix + "b1"] = gz1.sum(axis=0)
    return gz1 @ p[prefix + "W1"].T


# --- model-level passes ---------------------------------------------------

def _check_fresh(weights) -> None:
    check = getattr(weights, "assert_fresh", None)
    if check is not None:
        check()


def forward(weights, path, batch: Batch) -> tuple[np.ndarray, ForwardCache]:
    """Logits for ``batch`` through ``path``.

    ``weights`` is anything exposing ``spec`` and ``params`` (a supernet or a
    model view).
    """
    _check_fresh(weights)
    spec: CellSpec = weights.spec
    p = weights.params
    path = validate_path(spec, path)
    x = batch.inputs
    if x.shape[1] != spec.d_in:
        raise ConfigError(f"input dim {x.shape[1]} does not match stem input dim {spec.d_in}")

    node0 = x @ p["stem.W"] + p["stem.b"]
    edge_caches: list[Any] = [None] * spec.n_edges

    def apply_edge(e, h):
        out, edge_caches[e] = _op_forward(spec.ops[path[e]], p, op_prefix(e, path[e]), h)
        return out

    nodes = cell_forward_rule(spec, node0, apply_edge)
    logits = nodes[-1] @ p["cls.W"] + p["cls.b"]
    if not np.isfinite(logits).all():
        raise NumericError(_locate_nonfinite(weights, path, nodes))
    cache = ForwardCache(path, id(batch), getattr(weights, "version", None), x, nodes, edge_caches, logits)
    return logits, cache


def _locate_nonfinite(weights, path: Path, nodes) -> str:
    for name in path_param_names(weights.spec, path):
        if not np.isfinite(weights.params[name]).all():
            return f"non-finite forward output: parameter {name} is non-finite"
    for j, node in enumerate(nodes):
        if not np.isfinite(node).all():
            return f"non-finite forward output: activations overflowed at cell node {j}"
    return "non-finite forward output: classifier overflowed"


def path_param_names(spec: CellSpec, path) -> list[str]:
    names = ["stem.W", "stem.b"]
    for e, k in enumerate(path):
        prefix = op_prefix(e, k)
        names.extend(prefix + n for n in spec.ops[k].param_shapes(spec.hidden))
    return names + ["cls.W", "cls.b"]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample cross-entropy via log-sum-exp."""
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    return lse - logits[np.arange(len(labels)), labels]


def backward(weights, path, batch: Batch, cache: ForwardCache, loss_scale: float = 1.0):
    """Return ``(loss, grads, last_layer_grad)``.

    ``loss`` is the unscaled batch-mean cross-entropy; ``grads`` are gradients
    of ``loss_scale * loss``; ``last_layer_grad`` is ``softmax(logits) -
    onehot(label)`` per row, with no ``1/B`` factor.
    """
    spec: CellSpec = weights.spec
    p = weights.params
    path = validate_path(spec, path)
    if (
        cache.path != path
        or cache.batch_id != id(batch)
        or cache.version != getattr(weights, "version", None)
    ):
        raise UsageError("stale forward cache: path, batch or weights changed since forward()")
    labels = batch.labels
    if labels.min() < 0 or labels.max() >= spec.n_classes:
        raise ConfigError(f"labels must lie in [0, {spec.n_classes})")
    B = len(labels)
    logits = cache.logits

    loss = float(cross_entropy(logits, labels).mean())
    llg = softmax(logits)
    llg[np.arange(B), labels] -= 1.0
    g_logits = llg * (loss_scale / B)

    grads: GradientSet = {}
    out = cache.nodes[-1]
    grads["cls.W"] = out.T @ g_logits
    grads["cls.b"] = g_logits.sum(axis=0)

    g_nodes: list[np.ndarray | None] = [None] * spec.n_nodes
    g_nodes[-1] = g_logits @ p["cls.W"].T
    for e in range(spec.n_edges - 1, -1, -1):
        src, dst = spec.edges[e]
        k = path[e]
        g_out = g_nodes[dst]
        if g_out is None:
            g_out = np.zeros_like(cache.nodes[dst])
        g_in = _op_backward(spec.ops[k], p, op_prefix(e, k), cache.edge_caches[e], g_out, grads)
        if g_in is not None:
            g_nodes[src] = g_in if g_nodes[src] is None else g_nodes[src] + g_in

    g0 = g_nodes[0] if g_nodes[0] is not None else np.zeros_like(cache.nodes[0])
    grads["stem.W"] = cache.x.T @ g0
    grads["stem.b"] = g0.sum(axis=0)
    return loss, grads, llg


# --- optimisation ---------------------------------------------------------

@dataclass
class OptimizerState:
    base_lr: float = 0.005
    min_lr: float = 0.0
    momentum: float = 0.9
    weight_decay: float = 0.0
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    epoch: int = 0

    def __post_init__(self):
        if self.base_lr <= 0 or self.min_lr < 0 or self.min_lr > self.base_lr:
            raise ConfigError(f"need 0 <= min_lr <= base_lr and base_lr > 0, got {self.min_lr}, {self.base_lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")

    @classmethod
    def for_params(cls, params: Mapping[str, np.ndarray], **kwargs) -> "OptimizerState":
        state = cls(**kwargs)
        state.buffers = {name: np.zeros_like(w) for name, w in params.items()}
        return state


def sgd_step(weights, grads: GradientSet, opt: OptimizerState, lr: float) -> None:
    """In-place SGD with momentum: ``v = m*v + g + wd*w; w -= lr*v``.

    Parameters without an entry in ``grads`` are left untouched, buffers included.
    """
    if not lr > 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    params = weights.params
    for name, g in grads.items():
        w = params[name]
        if g.shape != w.shape:
            raise ConfigError(f"gradient shape {g.shape} does not match parameter {name} {w.shape}")
        buf = opt.buffers.get(name)
        if buf is None:
            buf = opt.buffers[name] = np.zeros_like(w)
        buf[...] = opt.momentum * buf + g + opt.weight_decay * w
        w -= lr * buf
    opt.step += 1
    if hasattr(weights, "version"):
        weights.version += 1


def cosine_lr(epoch: int, total_epochs: int, base_lr: float, min_lr: float) -> float:
    if total_epochs <= 0:
        raise ConfigError("total_epochs must be positive")
    if not 0 <= epoch < total_epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {total_epochs})")
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * epoch / total_epochs))
