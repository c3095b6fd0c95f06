"""Frozen posteriors, macro-state computation and persistence."""

import numpy as np
import pytest

from graphmix.errors import ConfigError, FormatError, IntegrityError
from graphmix.graphs import Dataset, Graph
from graphmix.statistics import (FrozenPosterior, compute_statistics,
                                 load_statistics, neighbor_counts_match,
                                 save_statistics)


def one_hot(i, width):
    v = np.zeros(width)
    v[i] = 1.0
    return v


def random_posterior(rng, n, width, layer=0):
    vals = rng.dirichlet(np.ones(width), size=n)
    return FrozenPosterior(layer, vals)


class TestFrozenPosterior:

    def test_rows_must_sum_to_one(self):
        with pytest.raises(IntegrityError):
            FrozenPosterior(0, [[0.5, 0.4]])

    def test_one_hot_mode_requires_indicators(self):
        with pytest.raises(IntegrityError):
            FrozenPosterior(0, [[0.5, 0.5]], mode="one_hot")
        FrozenPosterior(0, [[0.0, 1.0]], mode="one_hot")

    def test_negative_entries_rejected(self):
        with pytest.raises(IntegrityError):
            FrozenPosterior(0, [[1.5, -0.5]])

    def test_graph_view_follows_offsets(self):
        d = Dataset([Graph(2, np.empty((0, 3)), [0, 0]),
                     Graph(1, np.empty((0, 3)), [0])], 1, 1)
        fp = FrozenPosterior(0, np.eye(3)[:, :2] * 0 + [[0.5, 0.5]] * 3)
        assert fp.for_graph(d, 1).shape == (1, 2)


class TestComputeStatistics:

    def test_single_one_hot_neighbor(self):
        """A lone neighbor's one-hot posterior passes through unchanged."""
        d = Dataset([Graph(2, [[0, 1, 0]], [0, 0])], 1, 1)
        fp = FrozenPosterior(0, [one_hot(2, 3), one_hot(0, 3)])
        stats = compute_statistics(d, [fp], [0])
        np.testing.assert_array_equal(stats.macro[0][1, 0], one_hot(2, 3))
        assert stats.counts[1, 0] == 1

    def test_two_neighbors_average(self):
        d = Dataset([Graph(3, [[0, 2, 0], [1, 2, 0]], [0] * 3)], 1, 1)
        fp = FrozenPosterior(0, [[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
        stats = compute_statistics(d, [fp], [0])
        np.testing.assert_array_equal(stats.macro[0][2, 0], [0.5, 0.5])

    def test_matches_naive_per_vertex_loop(self):
        """Vectorized macro-states equal a direct per-vertex mean."""
        rng = np.random.default_rng(42)
        arcs = np.column_stack([rng.integers(0, 4, 9), rng.integers(0, 4, 9),
                                rng.integers(0, 2, 9)])
        d = Dataset([Graph(4, arcs, [0] * 4)], 1, 2)
        fp = random_posterior(rng, 4, 3)
        stats = compute_statistics(d, [fp], [0])
        for u in range(4):
            for a in range(2):
                members = [int(s) for s, t, lab in arcs if t == u and lab == a]
                if members:
                    want = np.mean([fp.values[v] for v in members], axis=0)
                else:
                    want = np.zeros(3)
                np.testing.assert_allclose(stats.macro[0][u, a], want, atol=1e-15)
                assert stats.counts[u, a] == len(members)

    def test_empty_neighborhood_zero_vector(self):
        d = Dataset([Graph(2, [[0, 1, 0]], [0, 0])], 1, 2)
        fp = random_posterior(np.random.default_rng(0), 2, 2)
        stats = compute_statistics(d, [fp], [0])
        np.testing.assert_array_equal(stats.macro[0][1, 1], 0.0)
        assert stats.counts[1, 1] == 0

    def test_missing_frozen_layer_is_config_error(self):
        d = Dataset([Graph(1, np.empty((0, 3)), [0])], 1, 1)
        with pytest.raises(ConfigError):
            compute_statistics(d, [random_posterior(np.random.default_rng(0), 1, 2)], [1])

    def test_bottom_contributes_appended_one_hot(self):
        d = Dataset([Graph(2, [[0, 1, 0]], [0, 0])], 1, 1).with_bottom()
        fp = random_posterior(np.random.default_rng(1), 2, 2)
        stats = compute_statistics(d, [fp], [0])
        assert stats.macro[0].shape == (2, 2, 3)  # width C+1, labels incl bottom
        # vertex 0 has in-degree 0, so one dummy neighbor under the bottom label
        np.testing.assert_array_equal(stats.macro[0][0, 1], [0, 0, 1])
        assert stats.counts[0, 1] == 1
        # vertex 1 has full degree: no dummies, zero bottom row
        np.testing.assert_array_equal(stats.macro[0][1, 1], 0.0)
        # the real-label macro of vertex 1 lives in the first C coordinates
        np.testing.assert_allclose(stats.macro[0][1, 0, :2], fp.values[0], atol=1e-15)
        assert stats.macro[0][1, 0, 2] == 0

    def test_multi_layer_subset(self):
        rng = np.random.default_rng(5)
        d = Dataset([Graph(3, [[0, 2, 0], [1, 2, 0]], [0] * 3)], 1, 1)
        fps = [random_posterior(rng, 3, 2, layer=0), random_posterior(rng, 3, 4, layer=1)]
        stats = compute_statistics(d, fps, [0, 1])
        assert stats.macro[0].shape[2] == 2
        assert stats.macro[1].shape[2] == 4

    def test_counts_match_neighbor_index(self):
        rng = np.random.default_rng(9)
        arcs = np.column_stack([rng.integers(0, 6, 14), rng.integers(0, 6, 14),
                                rng.integers(0, 2, 14)])
        d = Dataset([Graph(6, arcs, [0] * 6)], 1, 2)
        stats = compute_statistics(d, [random_posterior(rng, 6, 3)], [0])
        assert neighbor_counts_match(d, stats)


class TestStatisticsProperties:

    def test_permutation_covariance(self):
        """Relabeling vertices permutes macro rows identically."""
        rng = np.random.default_rng(12)
        n, m = 6, 15
        arcs = np.column_stack([rng.integers(0, n, m), rng.integers(0, n, m),
                                rng.integers(0, 2, m)])
        d = Dataset([Graph(n, arcs, [0] * n)], 1, 2)
        fp = random_posterior(rng, n, 3)
        stats = compute_statistics(d, [fp], [0])

        perm = rng.permutation(n)
        parcs = arcs.copy()
        parcs[:, 0] = perm[arcs[:, 0]]
        parcs[:, 1] = perm[arcs[:, 1]]
        pd = Dataset([Graph(n, parcs, [0] * n)], 1, 2)
        pvals = np.empty_like(fp.values)
        pvals[perm] = fp.values
        pstats = compute_statistics(pd, [FrozenPosterior(0, pvals)], [0])
        np.testing.assert_allclose(pstats.macro[0][perm], stats.macro[0], atol=1e-15)

    def test_uniform_posteriors_give_uniform_macros(self):
        rng = np.random.default_rng(13)
        arcs = np.column_stack([rng.integers(0, 5, 12), rng.integers(0, 5, 12),
                                np.zeros(12, dtype=int)])
        d = Dataset([Graph(5, arcs, [0] * 5)], 1, 1)
        fp = FrozenPosterior(0, np.full((5, 4), 0.25))
        stats = compute_statistics(d, [fp], [0])
        nonempty = stats.counts[:, 0] > 0
        np.testing.assert_allclose(stats.macro[0][nonempty, 0], 0.25, atol=1e-12)


class TestPersistence:

    def make_stats(self):
        rng = np.random.default_rng(21)
        arcs = np.column_stack([rng.integers(0, 5, 11), rng.integers(0, 5, 11),
                                rng.integers(0, 2, 11)])
        d = Dataset([Graph(5, arcs, [0] * 5)], 1, 2)
        return d, compute_statistics(d, [random_posterior(rng, 5, 3)], [0])

    def test_bit_exact_roundtrip(self, tmp_path):
        _, stats = self.make_stats()
        path = tmp_path / "layer0.stats"
        save_statistics(stats, path)
        back = load_statistics(path)
        assert back.layer_subset == stats.layer_subset
        assert back.num_labels == stats.num_labels
        assert np.array_equal(back.counts, stats.counts)
        assert np.array_equal(back.macro[0], stats.macro[0])

    def test_truncated_file_is_structured_error(self, tmp_path):
        _, stats = self.make_stats()
        path = tmp_path / "layer0.stats"
        save_statistics(stats, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:len(raw) - 16])
        with pytest.raises(FormatError):
            load_statistics(path)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "bogus.stats"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(FormatError):
            load_statistics(path)
