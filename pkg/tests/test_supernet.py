import numpy as np
import pytest

from pada.errors import ConfigError, UsageError
from pada.nn_core import Batch, OptimizerState, backward, forward, sgd_step
from pada.search_space import CellSpec, OpKind
from pada.supernet import build_supernet, inherit_weights, path_params

FIVE = ("zero", "skip", "linear", "linear_relu", "mlp2")


def test_toy_supernet_has_sixteen_tensors():
    net = build_supernet(CellSpec(), np.random.default_rng(0))
    assert len(net.params) == 16


def test_five_op_supernet_tensor_count():
    spec = CellSpec(ops=FIVE, hidden=8)
    expected = 4 + sum(len(OpKind(o).param_shapes(8)) for o in FIVE) * spec.n_edges
    net = build_supernet(spec, np.random.default_rng(0))
    assert len(net.params) == expected == 52


def test_build_is_deterministic():
    a = build_supernet(CellSpec(), np.random.default_rng(5))
    b = build_supernet(CellSpec(), np.random.default_rng(5))
    assert list(a.params) == list(b.params)
    assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)


def test_init_ranges():
    spec = CellSpec(ops=FIVE, hidden=8, d_in=5)
    net = build_supernet(spec, np.random.default_rng(0))
    for name, w in net.params.items():
        if w.ndim == 1:
            assert not w.any(), name
        else:
            assert np.abs(w).max() <= np.sqrt(6 / w.shape[0])


def test_build_rejects_odd_hidden_with_mlp2():
    with pytest.raises(ConfigError):
        build_supernet(CellSpec(ops=FIVE, hidden=7), np.random.default_rng(0))


def test_path_params_cases():
    net = build_supernet(CellSpec(), np.random.default_rng(0))
    assert set(path_params(net, (0,) * 6)) == {"stem.W", "stem.b", "cls.W", "cls.b"}
    assert set(path_params(net, (1, 0, 0, 0, 0, 0))) == {
        "stem.W", "stem.b", "cls.W", "cls.b", "edge0.op1.W", "edge0.op1.b",
    }


def test_path_params_match_shape_scan():
    spec = CellSpec(ops=FIVE, hidden=8)
    net = build_supernet(spec, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    for _ in range(20):
        path = tuple(rng.integers(0, 5, 6))
        scan = {"stem.W", "stem.b", "cls.W", "cls.b"}
        for e, k in enumerate(path):
            for pname in OpKind(FIVE[k]).param_shapes(8):
                scan.add(f"edge{e}.op{k}.{pname}")
        assert set(path_params(net, path)) == scan


def _data(spec, n=32, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, spec.d_in)), rng.integers(0, spec.n_classes, n)


def test_view_forward_equals_supernet_forward():
    spec = CellSpec(ops=FIVE, hidden=8, d_in=6, n_classes=3)
    net = build_supernet(spec, np.random.default_rng(2))
    x, y = _data(spec)
    rng = np.random.default_rng(3)
    for _ in range(10):
        path = tuple(rng.integers(0, 5, 6))
        view = inherit_weights(net, path)
        direct, _ = forward(net, path, Batch(x, y))
        np.testing.assert_array_equal(view.logits(x), direct)


def test_view_accuracy_matches_direct_route():
    spec = CellSpec(hidden=8, d_in=6, n_classes=3)
    net = build_supernet(spec, np.random.default_rng(2))
    x, y = _data(spec, 200)
    path = (1, 0, 1, 1, 0, 1)
    logits, _ = forward(net, path, Batch(x, y))
    assert inherit_weights(net, path).accuracy(x, y) == np.mean(logits.argmax(1) == y)


def test_view_is_read_only_and_invalidated_by_updates():
    spec = CellSpec(hidden=4, d_in=4, n_classes=2)
    net = build_supernet(spec, np.random.default_rng(0))
    path = (1,) * 6
    view = inherit_weights(net, path)
    with pytest.raises(ValueError):
        view.params["edge0.op1.W"][0, 0] = 1.0
    x, y = _data(spec, 8)
    b = Batch(x, y)
    _, cache = forward(net, path, b)
    _, grads, _ = backward(net, path, b, cache)
    sgd_step(net, grads, OptimizerState.for_params(net.params), 0.1)
    with pytest.raises(UsageError):
        view.logits(x)


def test_weight_sharing_is_exact():
    spec = CellSpec(hidden=4, d_in=4, n_classes=2)
    net = build_supernet(spec, np.random.default_rng(0))
    a = inherit_weights(net, (1, 0, 0, 0, 0, 0))
    b = inherit_weights(net, (1, 1, 1, 1, 1, 1))
    net.params["edge0.op1.W"][1, 2] = 123.0
    assert a.params["edge0.op1.W"][1, 2] == b.params["edge0.op1.W"][1, 2] == 123.0
    assert np.shares_memory(a.params["edge0.op1.W"], b.params["edge0.op1.W"])


def test_training_step_leaves_off_path_bitwise_unchanged():
    spec = CellSpec(ops=FIVE, hidden=8, d_in=4, n_classes=3)
    net = build_supernet(spec, np.random.default_rng(0))
    path = (2, 3, 4, 1, 0, 2)
    on = set(path_params(net, path))
    before = {k: v.tobytes() for k, v in net.params.items()}
    x, y = _data(spec, 16)
    b = Batch(x, y)
    _, cache = forward(net, path, b)
    _, grads, _ = backward(net, path, b, cache)
    assert set(grads) == on
    sgd_step(net, grads, OptimizerState.for_params(net.params, weight_decay=1e-3), 0.1)
    for k, v in net.params.items():
        if k in on:
            assert v.tobytes() != before[k] or not grads[k].any()
        else:
            assert v.tobytes() == before[k], k
