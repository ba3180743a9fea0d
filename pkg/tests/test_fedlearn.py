import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mobcache.core import DivergenceError
from mobcache.demand import pooled_ridge_solution
from mobcache.fedlearn import (
    PEDESTRIAN,
    REQUEST,
    AggregationRound,
    LinearModel,
    TrainingBatch,
    aggregate,
    batch_gradient,
    global_correction,
    global_gradient,
    global_update,
    local_loss,
    local_update,
    train,
)


def B(X, y):
    return TrainingBatch(np.atleast_2d(np.asarray(X, float)), np.asarray(y, float))


def central_diff(fun, w, h=1e-6):
    g = np.zeros_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (fun(w + e) - fun(w - e)) / (2 * h)
    return g


def test_loss_examples():
    assert local_loss(LinearModel.zeros(2, PEDESTRIAN), B([[1, 2]], [0])) == 0
    assert local_loss(LinearModel([2.0], PEDESTRIAN), B([[1]], [1])) == 1
    assert local_loss(LinearModel([1.0], REQUEST), B([[0]], [0]), ridge=1.0) == 1


def test_loss_dimension_mismatch():
    with pytest.raises(ValueError):
        local_loss(LinearModel.zeros(3), B([[1, 2]], [0]))
    with pytest.raises(ValueError):
        TrainingBatch(np.ones((2, 2)), np.ones(3))


def test_non_finite_weights_rejected():
    with pytest.raises(DivergenceError):
        LinearModel([np.nan])


def test_local_update_examples():
    batch = B([[1]], [0])
    out = local_update(LinearModel([1.0], PEDESTRIAN), batch, 0.003)
    assert out.weights == pytest.approx([0.994], abs=1e-15)
    # the gradient used above agrees with central differences
    fd = central_diff(lambda w: local_loss(LinearModel(w, PEDESTRIAN), batch), np.array([1.0]))
    assert fd == pytest.approx([2.0], rel=1e-6)
    still = local_update(LinearModel([0.7, -2.0]), B([[1, 2], [3, 4]], [1, 0]), 1e-12)
    assert np.allclose(still.weights, [0.7, -2.0], atol=1e-9)


def test_duplicate_rows_average_out():
    m = LinearModel([0.3, -0.2], PEDESTRIAN)
    one = local_update(m, B([[1.0, 2.0]], [1.0]), 0.01)
    two = local_update(m, B([[1.0, 2.0], [1.0, 2.0]], [1.0, 1.0]), 0.01)
    assert np.allclose(one.weights, two.weights, rtol=0, atol=1e-15)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    worst = 0.0
    for trial in range(100):
        d = int(rng.integers(1, 9))
        n = int(rng.integers(1, 12))
        task = PEDESTRIAN if trial % 2 else REQUEST
        ridge = float(rng.uniform(0, 10))
        batch = B(rng.normal(size=(n, d)), rng.normal(size=n))
        w = rng.normal(size=d)
        g = batch_gradient(w, batch, task, ridge)
        fd = central_diff(lambda v: local_loss(LinearModel(v, task), batch, ridge), w)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-12))
    assert worst <= 1e-5


def test_aggregate_examples():
    a = LinearModel([2.0])
    assert aggregate([(a, 7)]) == a
    assert aggregate([(LinearModel([2.0]), 1), (LinearModel([6.0]), 3)]).weights.tolist() == [5.0]
    same = LinearModel([1.5, -2.5])
    assert aggregate([(same, 2), (same, 9), (same, 4)]).weights.tolist() == [1.5, -2.5]
    with pytest.raises(ValueError):
        aggregate([])


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.integers(1, 50)), min_size=1, max_size=6),
       st.randoms())
def test_aggregate_permutation_invariant(parts, rnd):
    models = [(LinearModel([a, b]), q) for a, b, q in parts]
    shuffled = list(models)
    rnd.shuffle(shuffled)
    assert aggregate(models).weights.tolist() == aggregate(shuffled).weights.tolist()


def test_global_correction_examples():
    X = np.array([[1.0], [2.0]])
    batches = [B(X, [1.0, 0.0])]
    beta = LinearModel([0.5])
    grad = global_gradient(beta.weights, batches, REQUEST)
    # models whose weighted mean equals the gradient cancel it
    assert np.allclose(global_correction(beta, [(LinearModel(grad), 2)], batches), 0.0)
    assert global_update(LinearModel([1.0]), [0.0], [2.0], 0.5).weights.tolist() == [0.0]
    theta = np.array([3.0])
    assert global_update(LinearModel([1.0]), theta, theta, 0.5).weights.tolist() == [1.0]
    # grad 4, mean 1 -> 3
    assert (np.array([4.0]) - aggregate([(LinearModel([1.0]), 1)]).weights).tolist() == [3.0]


def test_substituted_update_is_step_along_mean_model():
    rng = np.random.default_rng(3)
    for _ in range(20):
        d = int(rng.integers(1, 8))
        batches = [B(rng.normal(size=(q, d)), rng.normal(size=q)) for q in rng.integers(2, 20, size=3)]
        beta = LinearModel(rng.normal(size=d))
        models = [(LinearModel(rng.normal(size=d)), b.sample_count) for b in batches]
        eta = float(rng.uniform(0.001, 0.5))
        grad = global_gradient(beta.weights, batches, REQUEST)
        theta = global_correction(beta, models, batches)
        new = global_update(beta, theta, grad, eta).weights
        expect = beta.weights - eta * aggregate(models).weights
        scale = np.abs(beta.weights).max() + eta * np.abs(grad).max() + 1.0
        assert np.max(np.abs(new - expect)) <= 16 * np.finfo(float).eps * scale


def test_single_participant_fedavg_is_plain_gradient_descent():
    rng = np.random.default_rng(0)
    batch = B(rng.normal(size=(30, 3)), rng.normal(size=30))
    res = train([batch], AggregationRound(theta=4, learning_rate=0.01, rounds=5))
    w = LinearModel.zeros(3)
    for _ in range(20):
        w = local_update(w, batch, 0.01)
    assert np.allclose(res.model.weights, w.weights, rtol=0, atol=1e-14)


def test_tiny_step_returns_initial_model():
    batch = B([[1.0, 2.0]], [3.0])
    init = LinearModel([0.25, -1.0])
    res = train([batch], AggregationRound(1, 1e-12, 1), init=init)
    assert np.allclose(res.model.weights, init.weights, atol=1e-9)


def test_fedavg_recovers_pooled_ridge_solution():
    rng = np.random.default_rng(11)
    d = 6
    w_true = rng.normal(size=d)
    batches = []
    for _ in range(4):
        X = rng.normal(size=(60, d))
        batches.append(B(X, X @ w_true + 0.1 * rng.normal(size=60)))
    ref = pooled_ridge_solution(batches, 1.0)
    res = train(batches, AggregationRound(theta=1, learning_rate=0.003, rounds=2000, ridge=1.0))
    assert np.linalg.norm(res.model.weights - ref) / np.linalg.norm(ref) <= 0.01
    assert np.linalg.norm(ref - w_true) / np.linalg.norm(w_true) < 0.05


def test_fedavg_centralized_loss_within_one_percent():
    rng = np.random.default_rng(5)
    d = 8
    batches = []
    for _ in range(4):
        X = rng.normal(size=(80, d))
        batches.append(B(X, X @ np.arange(1.0, d + 1) + rng.normal(size=80)))
    ref = LinearModel(pooled_ridge_solution(batches, 1.0))
    res = train(batches, AggregationRound(theta=2, learning_rate=0.003, rounds=2000))
    best = sum(local_loss(ref, b) for b in batches)
    got = sum(local_loss(res.model, b) for b in batches)
    assert got <= 1.01 * best


def test_divergence_detected():
    rng = np.random.default_rng(0)
    batch = B(rng.normal(size=(10, 3)) * 10, rng.normal(size=10))
    with pytest.raises(DivergenceError):
        train([batch], AggregationRound(theta=1, learning_rate=10.0, rounds=200))


def test_paper_faithful_mode_runs_the_substituted_update():
    rng = np.random.default_rng(1)
    batches = [B(rng.normal(size=(5, 2)), rng.normal(size=5)) for _ in range(2)]
    init = LinearModel([1.0, -1.0])
    cfg = AggregationRound(theta=3, learning_rate=0.01, rounds=1)
    res = train(batches, cfg, mode="paper-faithful", init=init)
    locals_ = []
    for b in batches:
        rho = init
        for _ in range(3):
            rho = local_update(rho, b, 0.01)
        locals_.append((rho, b.sample_count))
    expect = init.weights - 0.01 * aggregate(locals_).weights
    assert np.allclose(res.model.weights, expect, rtol=0, atol=1e-15)


def test_round_config_validation():
    with pytest.raises(ValueError):
        AggregationRound(theta=0)
    with pytest.raises(ValueError):
        AggregationRound(learning_rate=0)
    with pytest.raises(ValueError):
        train([], AggregationRound())
