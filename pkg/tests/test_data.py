import struct

import numpy as np
import pytest

from feelsched.config import PartitionModel
from feelsched.data import (Dataset, FormatError, InfeasiblePartition, arrived_between, assign_arrivals,
                            available_at, class_means, draw_arrival_times, load_idx_corpus, partition,
                            synth_corpus, write_idx)
from feelsched.learner import SgdConfig, SoftmaxLinear, evaluate, local_train


def balanced(n, C=10, D=4, seed=0):
    return synth_corpus(C, n, D, 3.0, np.random.default_rng(seed))


class TestPartition:
    def test_iid_sizes_and_histograms(self):
        corpus = balanced(60000, D=2)
        groups = partition(corpus, PartitionModel("iid"), 40, np.random.default_rng(0))
        assert [len(g) for g in groups] == [1500] * 40
        hists = np.array([np.bincount(corpus.labels[g], minlength=10) for g in groups])
        assert np.all(np.abs(hists - 150) < 60)

    def test_disjoint_cover(self):
        corpus = balanced(1003)
        groups = partition(corpus, PartitionModel("iid"), 10, np.random.default_rng(0))
        flat = np.concatenate(groups)
        assert len(flat) == 1000 == len(np.unique(flat))

    def test_single_label_shards(self):
        corpus = balanced(1000)
        groups = partition(corpus, PartitionModel("shards", 1), 10, np.random.default_rng(3))
        labels = [set(corpus.labels[g]) for g in groups]
        assert all(len(s) == 1 for s in labels)
        assert set().union(*labels) == set(range(10))

    @pytest.mark.parametrize("seed", range(5))
    def test_three_label_shards(self, seed):
        corpus = balanced(6000, seed=seed)
        groups = partition(corpus, PartitionModel("shards", 3), 40, np.random.default_rng(seed))
        label_sets = [set(corpus.labels[g].tolist()) for g in groups]
        assert max(len(s) for s in label_sets) <= 3
        assert set().union(*label_sets) == set(range(10))
        assert [len(g) for g in groups] == [150] * 40
        assert len(np.unique(np.concatenate(groups))) == 6000

    def test_unbalanced_corpus(self):
        rng = np.random.default_rng(0)
        labels = np.concatenate([np.zeros(700, int), np.arange(300) % 9 + 1])
        corpus = Dataset(rng.standard_normal((1000, 2)), labels, 10)
        groups = partition(corpus, PartitionModel("shards", 3), 20, rng)
        assert max(len(set(corpus.labels[g])) for g in groups) <= 3
        assert [len(g) for g in groups] == [50] * 20

    def test_no_flow_solution(self):
        # 6 devices x 100 samples from 10 labels of 60 with <= 2 labels each:
        # a balanced component needs >= 3 devices and 5 labels, i.e. 7 edges > 6
        with pytest.raises(InfeasiblePartition):
            partition(balanced(600), PartitionModel("shards", 2), 6, np.random.default_rng(0))

    def test_infeasible(self):
        with pytest.raises(InfeasiblePartition):
            partition(balanced(100), PartitionModel("shards", 1), 5, np.random.default_rng(0))

    def test_deterministic(self):
        corpus = balanced(600)
        a = partition(corpus, PartitionModel("shards", 3), 6, np.random.default_rng(9))
        b = partition(corpus, PartitionModel("shards", 3), 6, np.random.default_rng(9))
        assert all(np.array_equal(x, y) for x, y in zip(a, b))


class TestArrivals:
    def test_uniform_cdf(self):
        T = 100.0
        rng = np.random.default_rng(0)
        t = np.concatenate([draw_arrival_times(500, "uniform", T, rng) for _ in range(200)])
        grid = np.linspace(0, T, 101)
        ecdf = np.searchsorted(np.sort(t), grid, side="right") / len(t)
        assert np.max(np.abs(ecdf - grid / T)) < 0.01

    def test_truncated_normal_range(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            t = draw_arrival_times(300, "truncated_normal", 40.0, rng, sigma_frac=0.1)
            assert np.all(t > 0) and np.all(t <= 40.0)
            assert np.all(np.diff(t) >= 0)

    def test_truncated_normal_is_bursty(self):
        t = draw_arrival_times(5000, "truncated_normal", 100.0, np.random.default_rng(2), sigma_frac=0.1)
        assert np.std(t) < 12.0  # uniform would give ~28.9

    def test_cyclic_digit_order(self):
        labels = np.array([4, 5, 4, 5, 5, 4])
        data = Dataset(np.arange(6.0)[:, None], labels, 10)
        # find a seed whose random start digit is 5
        for seed in range(100):
            rng = np.random.default_rng(seed)
            if int(np.random.default_rng(seed).integers(10)) == 5:
                break
        stream = assign_arrivals(data, "uniform", 10.0, rng)
        assert stream.data.labels.tolist() == [5, 5, 5, 4, 4, 4]
        assert np.all(np.diff(stream.arrival_times) >= 0)

    def test_digit_order_preserved_in_time(self):
        data = balanced(300)
        stream = assign_arrivals(data, "truncated_normal", 50.0, np.random.default_rng(1))
        shifted = (stream.data.labels - stream.data.labels[0]) % 10
        assert np.all(np.diff(shifted) >= 0)


@pytest.fixture
def stream():
    return assign_arrivals(balanced(200), "uniform", 100.0, np.random.default_rng(4))


class TestWindows:
    def test_total_window(self, stream):
        assert len(arrived_between(stream, 0.0, 100.0)) == 200

    def test_empty_window(self, stream):
        assert len(arrived_between(stream, 37.0, 37.0)) == 0

    @pytest.mark.parametrize("x", [0.0, 12.5, 50.0, 99.9, 100.0])
    def test_disjoint_cover(self, stream, x):
        a, b = arrived_between(stream, 0.0, x), arrived_between(stream, x, 100.0)
        joined = np.concatenate([a.features, b.features])
        assert np.array_equal(joined, stream.data.features)

    def test_available_at(self, stream):
        assert len(available_at(stream, 0.0)) == 0
        assert len(available_at(stream, 100.0)) == 200
        sizes = [len(available_at(stream, t)) for t in np.linspace(0, 100, 21)]
        assert sizes == sorted(sizes)
        a, b = available_at(stream, 30.0), available_at(stream, 60.0)
        assert np.array_equal(b.features[: len(a)], a.features)

    def test_window_hist(self, stream):
        hist = stream.window_hist(10.0, 70.0)
        assert np.array_equal(hist, arrived_between(stream, 10.0, 70.0).histogram())

    def test_idempotent(self, stream):
        arrived_between(stream, 0.0, 50.0)
        assert stream.cursor == 0


class TestIdx:
    def _write(self, tmp_path, n=60, labels=None):
        rng = np.random.default_rng(0)
        images = rng.integers(0, 256, size=(n, 28, 28), dtype=np.uint8)
        labels = rng.integers(0, 10, size=n) if labels is None else labels
        write_idx(tmp_path / "img", tmp_path / "lbl", images, labels)
        return images, labels

    def test_round_trip(self, tmp_path):
        images, labels = self._write(tmp_path)
        data = load_idx_corpus(tmp_path / "img", tmp_path / "lbl")
        assert len(data) == 60 and data.feature_dim == 784
        assert data.features.min() >= 0 and data.features.max() <= 1
        assert np.allclose(data.features[3] * 255, images[3].ravel())
        assert np.array_equal(data.labels, labels)

    def test_truncated(self, tmp_path):
        self._write(tmp_path)
        raw = (tmp_path / "img").read_bytes()
        (tmp_path / "img").write_bytes(raw[:-10])
        with pytest.raises(FormatError):
            load_idx_corpus(tmp_path / "img", tmp_path / "lbl")

    def test_bad_magic(self, tmp_path):
        self._write(tmp_path)
        raw = bytearray((tmp_path / "lbl").read_bytes())
        raw[3] = 0x03
        (tmp_path / "lbl").write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="magic"):
            load_idx_corpus(tmp_path / "img", tmp_path / "lbl")

    def test_label_out_of_range(self, tmp_path):
        self._write(tmp_path, labels=np.array([0] * 59 + [10]))
        with pytest.raises(FormatError):
            load_idx_corpus(tmp_path / "img", tmp_path / "lbl")

    def test_missing(self, tmp_path):
        with pytest.raises(OSError):
            load_idx_corpus(tmp_path / "nope", tmp_path / "nope2")

    def test_header(self, tmp_path):
        self._write(tmp_path, n=5)
        magic, n, r, c = struct.unpack(">IIII", (tmp_path / "img").read_bytes()[:16])
        assert (magic, n, r, c) == (0x803, 5, 28, 28)


class TestSynthetic:
    def test_balanced(self):
        data = synth_corpus(10, 5000, 8, 3.0, np.random.default_rng(0))
        assert np.array_equal(data.histogram(), [500] * 10)

    def test_mean_separation(self):
        means = class_means(10, 20, 7.0, np.random.default_rng(0))
        d = np.linalg.norm(means[:, None] - means[None], axis=2)
        assert np.allclose(d[~np.eye(10, dtype=bool)], 7.0)

    @pytest.mark.parametrize("sep, lo, hi", [(0.0, 0.05, 0.15), (10.0, 0.95, 1.0)])
    def test_linear_separability(self, sep, lo, hi):
        rng = np.random.default_rng(1)
        means = class_means(10, 20, sep, rng)
        train = synth_corpus(10, 4000, 20, sep, rng, means)
        test = synth_corpus(10, 2000, 20, sep, rng, means)
        model = SoftmaxLinear(20, 10)
        update = local_train(model, model.init(), train, SgdConfig(400, 64, 0.1), rng)
        _, acc = evaluate(model, update.delta, test)
        assert lo <= acc <= hi
