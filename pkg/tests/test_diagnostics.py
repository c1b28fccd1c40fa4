import numpy as np
import pytest
from numpy.testing import assert_allclose

from gossipsum import rng as rstream
from gossipsum.data import Shard
from gossipsum.diagnostics import (CSV_HEADER, MetricsRecord, collect_metrics,
                                   consensus_distance, estimate_sigma_sq, evaluate_test,
                                   format_record, heterogeneity, parse_metrics_csv,
                                   tracker_error)
from gossipsum.errors import StateError
from gossipsum.objectives import LogisticRegression, SyntheticNonConvex
from gossipsum.optim import Algo, SumHyper, gossip_average, make_cohort
from gossipsum.topology import build_full_mesh

from conftest import blobs, partition, static_schedule


class TestConsensusDistance:
    def test_equal_workers_zero(self):
        xs = [np.array([1.0, 2.0])] * 5
        assert consensus_distance(xs) == 0.0

    def test_two_scalars_hand_value(self):
        assert consensus_distance([np.array([0.0]), np.array([2.0])]) == 1.0

    def test_full_mesh_gossip_collapses(self):
        rng = np.random.default_rng(0)
        xs = [rng.normal(size=4) for _ in range(6)]
        mixed = gossip_average(xs, build_full_mesh(6))
        assert consensus_distance(mixed) < 1e-12

    def test_weakly_decreases_under_gossip(self):
        from gossipsum.topology import build_ring
        rng = np.random.default_rng(1)
        for _ in range(20):
            xs = [rng.normal(size=3) for _ in range(5)]
            mixed = gossip_average(xs, build_ring(5))
            assert consensus_distance(mixed) <= consensus_distance(xs) + 1e-12


class TestHeterogeneity:
    def test_identical_shards_zero(self, small_dataset):
        oracle = SyntheticNonConvex(dim=4)
        shards = [Shard(owner=i, indices=np.arange(small_dataset.n_samples))
                  for i in range(4)]
        z = heterogeneity(oracle, np.ones(4), shards, small_dataset)
        assert z < 1e-12

    def test_single_worker_zero(self, small_dataset):
        oracle = SyntheticNonConvex(dim=4)
        shards = [Shard(owner=0, indices=np.arange(small_dataset.n_samples))]
        assert heterogeneity(oracle, np.ones(4), shards, small_dataset) == 0.0

    def test_skew_orders_the_estimate(self):
        oracle = SyntheticNonConvex(dim=6)
        x = np.full(6, 0.8)
        wins = 0
        for seed in range(3):
            ds = blobs(seed=seed, classes=8, dim=6, samples=1600)
            skewed = partition(ds, n=8, conc=0.1, seed=seed)
            uniform = partition(ds, n=8, conc=1e6, seed=seed)
            if heterogeneity(oracle, x, skewed, ds) > heterogeneity(oracle, x, uniform, ds):
                wins += 1
        assert wins == 3


class TestTrackerError:
    def test_requires_tracking_state(self, small_dataset):
        oracle = SyntheticNonConvex(dim=4)
        cohort = make_cohort(np.zeros(4), 2, static_schedule(build_full_mesh(2), 1),
                             SumHyper(alpha=2.0, beta=0.9, eta=0.1, algo=Algo.DSUM))
        shards = [Shard(owner=i, indices=np.arange(10)) for i in range(2)]
        with pytest.raises(StateError):
            tracker_error(cohort.workers, oracle, shards, small_dataset)

    def test_initial_discrepancy_positive_under_skew(self):
        ds = blobs(seed=2, classes=8, dim=5, samples=800)
        shards = partition(ds, n=4, conc=0.1, seed=2)
        oracle = SyntheticNonConvex(dim=5)
        x0 = np.full(5, 1.0)

        class W:
            def __init__(self, x, y):
                self.x, self.y = x, y

        from gossipsum.objectives import full_gradient
        workers = [W(x0, full_gradient(oracle, x0, shards[i], ds)) for i in range(4)]
        assert tracker_error(workers, oracle, shards, ds) > 1e-3

    def test_single_worker_full_batch_zero(self, small_dataset):
        oracle = SyntheticNonConvex(dim=4)
        shard = Shard(owner=0, indices=np.arange(small_dataset.n_samples))
        from gossipsum.objectives import full_gradient
        x = np.full(4, 0.5)

        class W:
            def __init__(self):
                self.x = x
                self.y = full_gradient(oracle, x, shard, small_dataset)

        assert tracker_error([W()], oracle, [shard], small_dataset) == 0.0


class TestEvaluateTest:
    def test_separable_toy_perfect_accuracy(self):
        ds = blobs(seed=5, classes=3, dim=4, samples=300, stddev=0.05)
        oracle = LogisticRegression(4, 3)
        # nearest-mean classifier: score_c = 2 s m_c . x - s ||m_c||^2
        means = np.stack([ds.features[ds.labels == c].mean(axis=0) for c in range(3)])
        s = 4.0
        params = np.concatenate([(2.0 * s * means).ravel(),
                                 -s * np.sum(means * means, axis=1)])
        loss, acc = evaluate_test(oracle, params, ds)
        assert acc == 1.0
        assert loss < 0.5

    def test_random_params_near_chance(self):
        ds = blobs(seed=6, classes=5, dim=8, samples=4000, stddev=1.0)
        oracle = LogisticRegression(8, 5)
        rng = np.random.default_rng(9)
        accs = []
        for _ in range(5):
            params = rng.normal(size=oracle.param_dim)
            accs.append(evaluate_test(oracle, params, ds)[1])
        p = 1.0 / 5.0
        sigma = np.sqrt(p * (1 - p) / ds.n_samples)
        assert abs(np.mean(accs) - p) < 4 * sigma + 0.05

    def test_empty_test_set_rejected(self):
        oracle = LogisticRegression(4, 2)
        with pytest.raises(ValueError):
            evaluate_test(oracle, np.zeros(oracle.param_dim), None)


class TestCsvFormat:
    def test_round_trip_exact(self, tmp_path):
        rec = MetricsRecord(epoch=3, train_loss=1.0 / 3.0, test_acc=None,
                            grad_norm_avg=np.pi, consensus_dist=1e-17,
                            tracker_err=None, heterogeneity=2.0 / 7.0, rho=8.0 / 9.0)
        path = tmp_path / "m.csv"
        path.write_text(CSV_HEADER + "\n" + format_record(rec) + "\n")
        back = parse_metrics_csv(str(path))[0]
        assert back.epoch == 3
        assert back.train_loss == rec.train_loss
        assert back.grad_norm_avg == rec.grad_norm_avg
        assert back.test_acc is None and back.tracker_err is None
        assert back.rho == rec.rho

    def test_header_enforced(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("nope\n1,2\n")
        with pytest.raises(ValueError):
            parse_metrics_csv(str(path))

    def test_truncated_row_rejected(self, tmp_path):
        path = tmp_path / "trunc.csv"
        path.write_text(CSV_HEADER + "\n1,0.5,,0.1\n")
        with pytest.raises(ValueError):
            parse_metrics_csv(str(path))


class TestSigmaEstimate:
    def test_nonnegative_and_shrinks_with_batch(self):
        ds = blobs(seed=3, classes=4, dim=5, samples=400)
        shards = partition(ds, n=3, conc=1.0, seed=3)
        oracle = SyntheticNonConvex(dim=5)
        x = np.full(5, 0.7)
        small = estimate_sigma_sq(oracle, x, shards, ds, batch_size=4,
                                  rng=rstream.substream(0, rstream.TAG_SIGMA_EST))
        large = estimate_sigma_sq(oracle, x, shards, ds, batch_size=256,
                                  rng=rstream.substream(0, rstream.TAG_SIGMA_EST))
        assert small > large >= 0.0


class TestCollectMetrics:
    def test_record_is_complete(self):
        ds = blobs(seed=4, classes=4, dim=6, samples=300)
        shards = partition(ds, n=4, conc=1.0, seed=4)
        oracle = SyntheticNonConvex(dim=6)
        sched = static_schedule(build_full_mesh(4), 3)
        cohort = make_cohort(np.full(6, 0.5), 4, sched,
                             SumHyper(alpha=2.0, beta=0.9, eta=0.02, algo=Algo.DSUM))
        rec = collect_metrics(cohort, 0, oracle, shards, ds, test_ds=None)
        assert rec.epoch == 0
        assert rec.consensus_dist == 0.0
        assert rec.tracker_err is None       # not a tracking run
        assert rec.test_acc is None          # synthetic objective, no classifier
        assert rec.rho == 1.0
        assert np.isfinite(rec.train_loss) and np.isfinite(rec.grad_norm_avg)
