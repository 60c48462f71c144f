import math

import numpy as np
import pytest

from pada.errors import ConfigError, NumericError, UsageError
from pada.nn_core import (
    Batch,
    OptimizerState,
    backward,
    cosine_lr,
    forward,
    path_param_names,
    sgd_step,
    softmax,
)
from pada.search_space import CellSpec
from pada.supernet import build_supernet

from reference import finite_difference_grads, ref_logits

ALL_OPS = ("zero", "skip", "linear", "linear_relu", "mlp2")


def tiny(ops=ALL_OPS, seed=0, d_in=3, hidden=4, n_classes=3, batch=2):
    spec = CellSpec(ops=ops, hidden=hidden, d_in=d_in, n_classes=n_classes)
    rng = np.random.default_rng(seed)
    net = build_supernet(spec, rng)
    for w in net.params.values():  # nonzero biases too
        w += 0.1 * rng.standard_normal(w.shape)
    b = Batch(rng.standard_normal((batch, d_in)), rng.integers(0, n_classes, batch))
    return spec, net, b, rng


def identity_net(n_ops_skip_only=True):
    spec = CellSpec(ops=("skip", "linear"), hidden=3, d_in=3, n_classes=3)
    net = build_supernet(spec, np.random.default_rng(0))
    net.params["stem.W"][...] = np.eye(3)
    net.params["stem.b"][...] = 0
    net.params["cls.W"][...] = np.eye(3)
    net.params["cls.b"][...] = 0
    return spec, net


def test_all_skip_path_quadruples_input():
    spec, net = identity_net()
    x = np.array([[1.0, -2.0, 0.5], [3.0, 0.0, 1.0]])
    logits, _ = forward(net, (0,) * 6, Batch(x, [0, 1]))
    np.testing.assert_array_equal(logits, 4 * x)


def test_zero_into_output_gives_classifier_bias():
    spec = CellSpec(ops=("zero", "linear"), hidden=4, d_in=3, n_classes=2)
    net = build_supernet(spec, np.random.default_rng(1))
    net.params["cls.b"][...] = [0.3, -0.7]
    # edges 3, 4, 5 feed node 3
    logits, _ = forward(net, (1, 1, 1, 0, 0, 0), Batch(np.ones((5, 3)), np.zeros(5)))
    np.testing.assert_array_equal(logits, np.tile([0.3, -0.7], (5, 1)))


@pytest.mark.parametrize("seed", range(10))
def test_forward_matches_straight_line_oracle(seed):
    spec, net, b, rng = tiny(seed=seed)
    path = tuple(rng.integers(0, spec.n_ops, spec.n_edges))
    logits, _ = forward(net, path, b)
    np.testing.assert_allclose(logits, ref_logits(net.params, spec.ops, path, b.inputs), rtol=0, atol=1e-12)


def test_last_layer_grad_examples():
    spec = CellSpec(ops=("skip",), hidden=2, d_in=2, n_classes=2)
    net = build_supernet(spec, np.random.default_rng(0))
    net.params["stem.W"][...] = np.eye(2)
    net.params["cls.W"][...] = np.eye(2) / 4
    b = Batch(np.array([[0.0, 0.0], [20.0, -20.0]]), [0, 0])
    _, cache = forward(net, (0,) * 6, b)
    _, _, llg = backward(net, (0,) * 6, b, cache)
    np.testing.assert_allclose(llg[0], [-0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(llg[1], [0.0, 0.0], atol=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(seed):
    spec, net, b, rng = tiny(seed=seed)
    path = tuple(rng.integers(0, spec.n_ops, spec.n_edges))
    _, cache = forward(net, path, b)
    _, grads, _ = backward(net, path, b, cache)
    names = path_param_names(spec, path)
    assert sorted(grads) == sorted(names)
    fd = finite_difference_grads(net.params, names, spec.ops, path, b.inputs, b.labels)
    for name in names:
        a, n = grads[name], fd[name]
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-7)
        assert rel.max() < 1e-6, name


def test_off_path_params_absent_from_grads():
    spec, net, b, _ = tiny()
    path = (2, 1, 0, 3, 4, 2)
    _, cache = forward(net, path, b)
    _, grads, _ = backward(net, path, b, cache)
    assert "edge0.op3.W" not in grads
    assert "edge1.op2.W" not in grads
    assert "edge0.op2.W" in grads and "edge4.op4.W1" in grads


def test_loss_scale_scales_grads_not_llg():
    spec, net, b, _ = tiny()
    path = (2, 2, 3, 4, 1, 2)
    _, cache = forward(net, path, b)
    loss1, g1, llg1 = backward(net, path, b, cache)
    loss3, g3, llg3 = backward(net, path, b, cache, loss_scale=3.0)
    assert loss1 == loss3
    np.testing.assert_array_equal(llg1, llg3)
    for k in g1:
        np.testing.assert_allclose(g3[k], 3 * g1[k], rtol=1e-14, atol=0)


def test_stale_cache_rejected():
    spec, net, b, _ = tiny()
    path = (2,) * 6
    _, cache = forward(net, path, b)
    with pytest.raises(UsageError):
        backward(net, (1,) * 6, b, cache)
    _, grads, _ = backward(net, path, b, cache)
    sgd_step(net, grads, OptimizerState.for_params(net.params), 0.1)
    with pytest.raises(UsageError):
        backward(net, path, b, cache)


def test_shape_mismatch_is_config_error():
    spec, net, _, _ = tiny()
    with pytest.raises(ConfigError):
        forward(net, (1,) * 6, Batch(np.zeros((2, 5)), [0, 1]))


def test_nonfinite_output_names_parameter():
    spec, net, b, _ = tiny()
    net.params["edge2.op2.W"][0, 0] = np.inf
    with pytest.raises(NumericError, match="edge2.op2.W"):
        forward(net, (2,) * 6, b)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(3)
    z = rng.standard_normal((50, 7)) * 30
    np.testing.assert_allclose(softmax(z).sum(axis=1), 1.0, atol=1e-12)


class _W:
    def __init__(self, **params):
        self.params = {k: np.atleast_1d(np.asarray(v, dtype=float)) for k, v in params.items()}
        self.version = 0


def test_sgd_plain_step():
    w = _W(p=1.0)
    opt = OptimizerState.for_params(w.params, momentum=0.0, weight_decay=0.0)
    sgd_step(w, {"p": np.array([2.0])}, opt, 0.1)
    assert w.params["p"][0] == pytest.approx(0.8, abs=1e-15)


def test_sgd_momentum_two_steps():
    w = _W(p=0.0)
    opt = OptimizerState.for_params(w.params, momentum=0.9, weight_decay=0.0, base_lr=1.0)
    for _ in range(2):
        sgd_step(w, {"p": np.array([1.0])}, opt, 1.0)
    assert w.params["p"][0] == pytest.approx(-2.9, abs=1e-15)


def test_sgd_weight_decay_term():
    w = _W(p=2.0)
    opt = OptimizerState.for_params(w.params, momentum=0.0, weight_decay=0.5)
    sgd_step(w, {"p": np.array([0.0])}, opt, 0.1)
    assert w.params["p"][0] == pytest.approx(2.0 - 0.1 * 1.0)


def test_sgd_skips_absent_params():
    w = _W(p=1.0, q=5.0)
    opt = OptimizerState.for_params(w.params, momentum=0.9)
    opt.buffers["q"][...] = 0.25
    before_q, before_buf = w.params["q"].copy(), opt.buffers["q"].copy()
    sgd_step(w, {"p": np.array([1.0])}, opt, 0.1)
    assert w.params["q"].tobytes() == before_q.tobytes()
    assert opt.buffers["q"].tobytes() == before_buf.tobytes()


def test_sgd_rejects_nonpositive_lr():
    w = _W(p=1.0)
    with pytest.raises(ConfigError):
        sgd_step(w, {"p": np.array([1.0])}, OptimizerState.for_params(w.params), 0.0)


def test_cosine_lr_values():
    assert cosine_lr(0, 10, 0.1, 0.0) == pytest.approx(0.1)
    assert cosine_lr(5, 10, 0.1, 0.02) == pytest.approx(0.06)
    assert cosine_lr(128, 256, 0.05, 0.0) == pytest.approx(0.025)
    lrs = [cosine_lr(e, 30, 0.05, 0.001) for e in range(30)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    with pytest.raises(ConfigError):
        cosine_lr(0, 0, 0.1, 0.0)
    assert math.isfinite(cosine_lr(9, 10, 0.1, 0.0))
