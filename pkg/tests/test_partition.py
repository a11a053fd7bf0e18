import math

import numpy as np
import pytest

from fedbalance.data import generate_synthetic
from fedbalance.partition import (
    PartitionSpec,
    dirichlet_log_density,
    largest_remainder_counts,
    partition,
    sample_dirichlet,
    shard_statistics,
)
from fedbalance.rng import RngStream


class TestSampleDirichlet:
    def test_single_component_is_one(self):
        x = sample_dirichlet([5.0], RngStream(1, "dir"))
        assert x.tolist() == [1.0]

    def test_simplex_constraint(self):
        for seed in range(50):
            x = sample_dirichlet([0.3] * 7, RngStream(seed, "dir"))
            assert abs(x.sum() - 1.0) < 1e-12
            assert (x >= 0).all()

    def test_uniform_alpha_moments(self):
        # Monte Carlo oracle: E[x_i] = alpha_i / sum(alpha) = 1/20
        gen_lane = RngStream(123, "moments")
        gen = gen_lane.generator()
        draws = gen.gamma(np.ones((10_000, 20)))
        samples = draws / draws.sum(axis=1, keepdims=True)
        means = samples.mean(axis=0)
        assert (np.abs(means - 0.05) < 0.007).all()

    def test_asymmetric_alpha_mean(self):
        # E[x_1] = 2 / (2 + 1 + 1) = 0.5
        total = np.zeros(3)
        for seed in range(10_000):
            total += sample_dirichlet([2.0, 1.0, 1.0], RngStream(seed, "dir3"))
        mean = total / 10_000
        assert abs(mean[0] - 0.5) < 0.02

    def test_rejects_nonpositive_alpha(self):
        with pytest.raises(ValueError):
            sample_dirichlet([1.0, 0.0], RngStream(0, "dir"))
        with pytest.raises(ValueError):
            sample_dirichlet([], RngStream(0, "dir"))


class TestLogDensity:
    def test_flat_simplex_density_is_log_two(self):
        # 1/B(1,1,1) = Gamma(3) / Gamma(1)^3 = 2
        for x in ([0.2, 0.3, 0.5], [1 / 3, 1 / 3, 1 / 3], [0.9, 0.05, 0.05]):
            assert dirichlet_log_density(x, [1.0, 1.0, 1.0]) == pytest.approx(math.log(2.0))

    def test_uniform_on_1_simplex_is_zero(self):
        assert dirichlet_log_density([0.3, 0.7], [1.0, 1.0]) == pytest.approx(0.0)

    def test_off_simplex_rejected(self):
        with pytest.raises(ValueError, match="simplex"):
            dirichlet_log_density([0.5, 0.6], [1.0, 1.0])

    def test_boundary_divergence_rejected(self):
        with pytest.raises(ValueError, match="diverges"):
            dirichlet_log_density([0.0, 1.0], [0.5, 1.5])

    def test_matches_hand_formula(self):
        # K=2 is Beta(a, b) on (x, 1-x)
        a, b = 2.0, 3.0
        x = 0.25
        expected = (
            math.lgamma(a + b)
            - math.lgamma(a)
            - math.lgamma(b)
            + (a - 1) * math.log(x)
            + (b - 1) * math.log(1 - x)
        )
        assert dirichlet_log_density([x, 1 - x], [a, b]) == pytest.approx(expected, rel=1e-12)


class TestLargestRemainder:
    def test_exact_quarters(self):
        counts = largest_remainder_counts(np.array([0.25, 0.75]), 100)
        assert counts.tolist() == [25, 75]

    def test_conserves_total(self):
        gen = np.random.default_rng(0)
        for _ in range(200):
            k = int(gen.integers(1, 12))
            p = gen.dirichlet(np.full(k, 0.5))
            total = int(gen.integers(0, 500))
            counts = largest_remainder_counts(p, total)
            assert counts.sum() == total
            assert (counts >= 0).all()

    def test_remainder_ties_go_to_lowest_index(self):
        counts = largest_remainder_counts(np.array([0.5, 0.5]), 3)
        assert counts.tolist() == [2, 1]


class TestPartition:
    def test_iid_equal_shards(self):
        ds = generate_synthetic(4, 100, (8, 8), 0.1, RngStream(0, "data"))
        shards = partition(ds, PartitionSpec.iid(20), RngStream(0, "partition"))
        assert [len(s) for s in shards] == [20] * 20

    def test_iid_plus_minus_one(self):
        ds = generate_synthetic(2, 11, (4, 4), 0.0, RngStream(0, "data"))
        shards = partition(ds, PartitionSpec.iid(4), RngStream(0, "partition"))
        sizes = [len(s) for s in shards]
        assert sum(sizes) == 22
        assert max(sizes) - min(sizes) <= 1

    def test_iid_rejects_more_clients_than_examples(self):
        ds = generate_synthetic(2, 1, (4, 4), 0.0, RngStream(0, "data"))
        with pytest.raises(ValueError):
            partition(ds, PartitionSpec.iid(3), RngStream(0, "partition"))

    @pytest.mark.parametrize("alpha", [0.3, 1.0, 2.0, 5.0])
    def test_dirichlet_conservation_and_disjointness(self, alpha):
        ds = generate_synthetic(4, 50, (6, 6), 0.1, RngStream(1, "data"))
        for seed in range(5):
            shards = partition(
                ds, PartitionSpec.dirichlet(20, alpha), RngStream(seed, "partition")
            )
            total_hist = sum(s.label_histogram for s in shards)
            assert np.array_equal(total_hist, ds.label_histogram())
            all_indices = [i for s in shards for i in s.indices]
            assert sorted(all_indices) == list(range(len(ds)))

    def test_shard_histograms_match_examples(self):
        ds = generate_synthetic(3, 30, (4, 4), 0.1, RngStream(2, "data"))
        shards = partition(ds, PartitionSpec.dirichlet(5, 0.5), RngStream(3, "partition"))
        for s in shards:
            recount = np.zeros(3, dtype=np.int64)
            for ex in s.examples:
                recount[ex.label] += 1
            assert np.array_equal(recount, s.label_histogram)

    def test_deterministic(self):
        ds = generate_synthetic(3, 30, (4, 4), 0.1, RngStream(2, "data"))
        spec = PartitionSpec.dirichlet(6, 1.0)
        a = partition(ds, spec, RngStream(9, "partition"))
        b = partition(ds, spec, RngStream(9, "partition"))
        assert [s.indices for s in a] == [s.indices for s in b]

    def test_monotone_skew(self):
        # lower alpha concentrates labels: mean max/min share ratio grows
        def mean_ratio(alpha):
            ratios = []
            for seed in range(200):
                x = sample_dirichlet([alpha] * 20, RngStream(seed, "skew"))
                ratios.append(x.max() / x.min())
            return float(np.mean(ratios))

        assert mean_ratio(0.3) > mean_ratio(5.0)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            PartitionSpec.iid(0)
        with pytest.raises(ValueError):
            PartitionSpec.dirichlet(3, 0.0)
        with pytest.raises(ValueError):
            PartitionSpec(3, "dirichlet", (1.0, 1.0))  # wrong alpha count
        with pytest.raises(ValueError):
            PartitionSpec(3, "bogus")


class TestShardStatistics:
    def test_single_client_holds_everything(self):
        ds = generate_synthetic(3, 10, (4, 4), 0.0, RngStream(0, "data"))
        shards = partition(ds, PartitionSpec.iid(1), RngStream(0, "partition"))
        header, rows = shard_statistics(shards)
        assert header == ["client_id", "label_0", "label_1", "label_2", "total"]
        assert rows == [[0, 10, 10, 10, 30]]

    def test_column_sums_equal_central_histogram(self):
        ds = generate_synthetic(4, 30, (4, 4), 0.1, RngStream(5, "data"))
        shards = partition(ds, PartitionSpec.dirichlet(8, 0.4), RngStream(5, "partition"))
        _, rows = shard_statistics(shards)
        sums = [sum(r[1 + c] for r in rows) for c in range(4)]
        assert sums == ds.label_histogram().tolist()

    def test_empty_shard_rows_are_zero(self):
        from fedbalance.partition import make_shard

        ds = generate_synthetic(2, 2, (4, 4), 0.0, RngStream(0, "data"))
        shards = [make_shard(0, ds, range(len(ds)), 2), make_shard(1, ds, (), 2)]
        _, rows = shard_statistics(shards)
        assert rows[1] == [1, 0, 0, 0]
