import math

import numpy as np
import pytest

from feelsched.data import Dataset, synth_corpus
from feelsched.learner import (MLP, DimensionMismatch, EmptyDataset, LocalUpdate, SgdConfig, SoftmaxLinear,
                               aggregate, aggregation_weights, evaluate, local_train)

from oracles import central_difference, relative_error, softmax_xent_grad_single


def blobs(n=400, C=10, D=6, sep=3.0, seed=0):
    return synth_corpus(C, n, D, sep, np.random.default_rng(seed))


class TestLocalTrain:
    def test_zero_lr(self):
        model = SoftmaxLinear(6, 10)
        u = local_train(model, model.init(), blobs(), SgdConfig(3, 8, 0.0), np.random.default_rng(0))
        assert np.array_equal(u.delta, np.zeros(model.dim))
        assert u.data_size == 400

    def test_single_sample_step_matches_closed_form(self):
        rng = np.random.default_rng(3)
        model = SoftmaxLinear(5, 4)
        theta = rng.standard_normal(model.dim)
        x, y = rng.standard_normal(5), 2
        data = Dataset(x[None, :], np.array([y]), 4)
        u = local_train(model, theta, data, SgdConfig(1, 16, 0.1), rng)
        W, b = theta[:20].reshape(4, 5), theta[20:]
        gW, gb = softmax_xent_grad_single(W, b, x, y)
        assert np.allclose(u.delta, -0.1 * np.concatenate([gW.ravel(), gb]), atol=1e-14)

    def test_does_not_modify_model(self):
        model = SoftmaxLinear(6, 10)
        theta = np.ones(model.dim)
        local_train(model, theta, blobs(), SgdConfig(), np.random.default_rng(0))
        assert np.array_equal(theta, np.ones(model.dim))

    def test_empty(self):
        model = SoftmaxLinear(6, 10)
        with pytest.raises(EmptyDataset):
            local_train(model, model.init(), blobs().subset(slice(0, 0)), SgdConfig(), np.random.default_rng(0))

    def test_deterministic(self):
        model = MLP(6, 10, 8)
        theta = model.init(np.random.default_rng(1))
        a = local_train(model, theta, blobs(), SgdConfig(), np.random.default_rng(5))
        b = local_train(model, theta, blobs(), SgdConfig(), np.random.default_rng(5))
        assert a.delta.tobytes() == b.delta.tobytes()


@pytest.mark.parametrize("model", [SoftmaxLinear(4, 3), MLP(4, 3, 5)])
def test_gradient_check(model):
    rng = np.random.default_rng(11)
    for _ in range(10):
        theta = rng.standard_normal(model.dim) * 0.5
        X, y = rng.standard_normal((7, 4)), rng.integers(0, 3, 7)
        _, g = model.loss_and_grad(theta, X, y)
        fd = central_difference(lambda th: model.loss_and_grad(th, X, y)[0], theta)
        assert relative_error(g, fd) < 1e-5


class TestAggregate:
    def test_single(self):
        theta = np.arange(3.0)
        assert np.array_equal(aggregate(theta, [LocalUpdate(np.ones(3), 10)]), theta + 1)

    def test_weights(self):
        assert np.allclose(aggregation_weights([100, 300]), [0.25, 0.75])
        out = aggregate(np.zeros(2), [LocalUpdate(np.array([4.0, 0]), 100), LocalUpdate(np.array([0, 4.0]), 300)])
        assert np.allclose(out, [1.0, 3.0])

    def test_zero_updates(self):
        theta = np.arange(3.0)
        assert np.array_equal(aggregate(theta, [LocalUpdate(np.zeros(3), 5)] * 3), theta)

    def test_no_updates(self):
        theta = np.arange(3.0)
        assert np.array_equal(aggregate(theta, []), theta)

    def test_mismatch(self):
        with pytest.raises(DimensionMismatch):
            aggregate(np.zeros(3), [LocalUpdate(np.zeros(4), 1)])

    def test_linear(self):
        rng = np.random.default_rng(0)
        d1, d2, d3 = rng.standard_normal((3, 5))
        sizes = [3, 7]
        lhs = aggregate(np.zeros(5), [LocalUpdate(d1 + d3, 3), LocalUpdate(d2 + d3, 7)])
        rhs = aggregate(np.zeros(5), [LocalUpdate(d1, 3), LocalUpdate(d2, 7)]) + \
            aggregate(np.zeros(5), [LocalUpdate(d3, s) for s in sizes])
        assert np.allclose(lhs, rhs)


class TestEvaluate:
    def test_untrained_softmax(self):
        model = SoftmaxLinear(6, 10)
        loss, acc = evaluate(model, model.init(), blobs(2000))
        assert acc == pytest.approx(0.1, abs=0.02)
        assert loss == pytest.approx(math.log(10), rel=1e-12)

    def test_memorise_one(self):
        model = SoftmaxLinear(6, 10)
        one = blobs().subset(slice(0, 1))
        u = local_train(model, model.init(), one, SgdConfig(20, 1, 0.5), np.random.default_rng(0))
        assert evaluate(model, u.delta, one)[1] == 1.0

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            evaluate(SoftmaxLinear(6, 10), np.zeros(70), blobs().subset(slice(0, 0)))


def test_full_participation_loss_decreases():
    """All devices every round on static iid data: training loss should not go up."""
    model = SoftmaxLinear(6, 10)
    for seed in range(3):
        data = blobs(1000, seed=seed)
        shards = [data.subset(slice(i * 100, (i + 1) * 100)) for i in range(10)]
        theta = model.init()
        losses = [evaluate(model, theta, data)[0]]
        for t in range(30):
            ups = [local_train(model, theta, s, SgdConfig(5, 100, 0.02), np.random.default_rng([seed, t, k]))
                   for k, s in enumerate(shards)]
            theta = aggregate(theta, ups)
            losses.append(evaluate(model, theta, data)[0])
        assert all(b <= a + 1e-3 for a, b in zip(losses, losses[1:]))
        assert losses[-1] < losses[0] - 0.5
