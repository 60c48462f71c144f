import json

import numpy as np
import pytest

from pada.data import generate_synthetic
from pada.errors import UsageError
from pada.ranking_eval import (
    OracleConfig,
    RankingReport,
    evaluate_all,
    kendall_tau,
    path_accuracy,
    precision_at_topk,
    topk_count,
    train_standalone_oracle,
)
from pada.search_space import CellSpec, enumerate_paths
from pada.supernet import build_supernet, inherit_weights

from reference import brute_kendall_tau, brute_precision_at_topk


def test_kendall_fixed_cases():
    a = [0.3, 0.1, 0.9, 0.5]
    assert kendall_tau(a, a) == 1.0
    assert kendall_tau(a, [-x for x in a]) == -1.0
    assert kendall_tau([1, 2, 3], [1, 3, 2]) == pytest.approx(1 / 3)


def test_kendall_ties_count_as_neither():
    assert kendall_tau([1, 1, 2], [1, 2, 3]) == pytest.approx(2 / 3)
    assert kendall_tau([1, 1], [1, 1]) == 0.0


def test_kendall_errors():
    with pytest.raises(UsageError):
        kendall_tau([1, 2], [1, 2, 3])
    with pytest.raises(UsageError):
        kendall_tau([1], [1])


def test_kendall_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(2, 201))
        # coarse values so ties actually occur
        a = rng.integers(0, 20, n).astype(float)
        b = rng.integers(0, 20, n).astype(float)
        assert kendall_tau(a, b) == brute_kendall_tau(a, b)


def test_kendall_invariances():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal(50), rng.standard_normal(50)
    assert kendall_tau(a, a + 3.0) == 1.0
    assert kendall_tau(a, np.exp(a)) == 1.0
    assert kendall_tau(a, b) == kendall_tau(b, a)


def test_topk_fixed_cases():
    assert topk_count(64, 0.05) == 3
    assert topk_count(10, 0.05) == 1
    assert topk_count(100, 0.05) == 5
    truth = np.arange(64, dtype=float)
    assert precision_at_topk(truth, truth) == 1.0
    assert precision_at_topk(-truth, truth) == 0.0
    pred = truth.copy()
    pred[[62, 61]] = -1  # keep only 63 in the predicted top 3
    assert precision_at_topk(pred, truth, 0.05) == pytest.approx(1 / 3)
    with pytest.raises(UsageError):
        precision_at_topk([1, 2], [1, 2, 3])
    with pytest.raises(UsageError):
        precision_at_topk([1, 2], [1, 2], 0.0)


def test_topk_ties_use_enumeration_order():
    assert precision_at_topk([1, 1, 1, 1], [0, 0, 0, 1], 0.25) == 0.0
    assert precision_at_topk([1, 1, 1, 1], [1, 0, 0, 0], 0.25) == 1.0


def test_topk_matches_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n = int(rng.integers(1, 201))
        pred = rng.integers(0, 10, n).astype(float)
        truth = rng.standard_normal(n)
        k_frac = float(rng.choice([0.05, 0.1, 0.25, 1.0]))
        assert precision_at_topk(pred, truth, k_frac) == brute_precision_at_topk(pred, truth, k_frac)


def test_topk_order_preserving_invariance():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal(64), rng.standard_normal(64)
    assert precision_at_topk(a, b, 0.1) == precision_at_topk(np.exp(a) * 2 + 1, b**3, 0.1)


def _toy(seed=0):
    spec = CellSpec(hidden=8, d_in=6, n_classes=3)
    data = generate_synthetic(20, 3, 6, 1.0, 1.0, seed)
    return spec, build_supernet(spec, np.random.default_rng(seed)), data


def test_constant_logits_score_majority_frequency():
    spec, net, data = _toy()
    net.params["cls.W"][...] = 0
    net.params["cls.b"][...] = [0.0, 1.0, 0.0]
    sub = type(data)(data.inputs[:50], np.array([1] * 30 + [0] * 20), "eval", 3, {})
    acc = evaluate_all(net, enumerate_paths(spec), sub)
    assert np.all(acc == 0.6)


def test_duplicate_paths_score_identically():
    spec, net, data = _toy()
    p = (1, 0, 1, 1, 0, 1)
    acc = evaluate_all(net, [p, (0,) * 6, p], data)
    assert acc[0] == acc[2]


def test_evaluate_all_matches_inherit_route():
    spec, net, data = _toy(4)
    paths = enumerate_paths(spec)
    acc = evaluate_all(net, paths, data, workers=4)
    for path, a in zip(paths, acc):
        view = inherit_weights(net, path)
        assert abs(a - view.accuracy(data.inputs, data.labels)) <= 1e-15


class _Empty:
    inputs = np.zeros((0, 6))
    labels = np.zeros(0, dtype=int)

    def __len__(self):
        return 0


def test_evaluate_all_rejects_empty():
    spec, net, _ = _toy()
    with pytest.raises(UsageError):
        evaluate_all(net, [(0,) * 6], _Empty())


def test_oracle_reaches_high_accuracy_on_separable_data():
    spec = CellSpec(hidden=16, d_in=16, n_classes=4)
    train = generate_synthetic(128, 4, 16, 10.0, 0.1, 0)
    held = generate_synthetic(32, 4, 16, 10.0, 0.1, 0, split="eval")
    acc = train_standalone_oracle(spec, (1,) * 6, train, held, OracleConfig(), seed=0)
    assert acc >= 0.99


def test_oracle_zero_path_scores_majority():
    spec = CellSpec(ops=("zero", "linear"), hidden=8, d_in=6, n_classes=3)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((40, 6))
    labels = np.array([2] * 25 + [0] * 15)
    from pada.data import Dataset

    train = Dataset(x, labels, "train", 3, {})
    acc = train_standalone_oracle(spec, (0,) * 6, train, train, OracleConfig(epochs=30, batch_size=8), seed=1)
    assert acc == 25 / 40


def test_oracle_deterministic():
    spec, _, data = _toy()
    cfg = OracleConfig(epochs=3, batch_size=16)
    a = train_standalone_oracle(spec, (1, 1, 0, 1, 0, 1), data, data, cfg, seed=7)
    b = train_standalone_oracle(spec, (1, 1, 0, 1, 0, 1), data, data, cfg, seed=7)
    assert a == b


def test_path_accuracy_chunking():
    spec, net, _ = _toy()
    data = generate_synthetic(1500, 3, 6, 1.0, 1.0, 1)
    path = (1,) * 6
    whole = inherit_weights(net, path).accuracy(data.inputs, data.labels)
    assert path_accuracy(net, path, data.inputs, data.labels) == whole


def test_report_roundtrip_and_validation():
    r = RankingReport.build([(0,) * 6, (1,) * 6, (1, 0, 0, 0, 0, 0)], [0.5, 0.7, 0.6], [0.4, 0.9, 0.5], seed=3)
    assert r.kendall_tau == 1.0 and r.p_at_topk == 1.0
    back = RankingReport.from_json(r.to_json())
    assert back == r
    assert set(json.loads(r.to_json())) >= {"kendall_tau", "p_at_topk", "seed", "timestamp"}
    with pytest.raises(UsageError):
        RankingReport(["a"], [1.0, 2.0], [1.0], 0.0, 0.0, 0.05, 0)
