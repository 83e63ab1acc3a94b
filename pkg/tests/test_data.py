"""Dataset generators, CSV ingestion, and split logic."""

import numpy as np
import pytest

from tnvae.data import (
    HmmConfig,
    SeriesMatrix,
    SpiralConfig,
    default_hmm_config,
    embed_spiral_coords,
    gen_hmm,
    gen_spiral,
    load_csv,
    save_csv,
    shuffle_series,
    spiral_arc_length,
    spiral_embedding_map,
    split_series,
    standardize_coords,
)
from tnvae.errors import ConfigError, DataError, UsageError
from tnvae.rng import RngStream


class TestSpiral:
    def test_noiseless_rows_reproducible_from_ground_truth(self):
        cfg = SpiralConfig(n_points=400, noise_sigma=0.0, seed=3)
        series, coords = gen_spiral(cfg)
        emb = spiral_embedding_map(cfg)
        again = embed_spiral_coords(standardize_coords(coords), emb)
        assert np.array_equal(series.values, again)

    def test_segment_labels(self):
        series, _ = gen_spiral(SpiralConfig(n_points=5000, noise_sigma=0.0))
        labels, counts = np.unique(series.labels, return_counts=True)
        assert labels.size == 50
        assert np.all(counts == 100)
        # consecutive: each block of 100 rows shares one label
        assert np.array_equal(series.labels, np.arange(5000) // 100)

    def test_arc_length_spacing_uniform(self):
        _, coords = gen_spiral(SpiralConfig(n_points=1000, noise_sigma=0.0))
        theta = np.hypot(coords[:, 0], coords[:, 1])
        arcs = spiral_arc_length(theta)
        gaps = np.diff(arcs)
        assert np.max(np.abs(gaps - gaps[0])) < 1e-6

    @pytest.mark.parametrize("noise", [0.1, 0.2, 0.4])
    def test_noise_level_matches_nominal(self, noise):
        n = 10**4
        clean, _ = gen_spiral(SpiralConfig(n_points=n, noise_sigma=0.0, seed=8))
        noisy, _ = gen_spiral(SpiralConfig(n_points=n, noise_sigma=noise, seed=8))
        ratio = (noisy.values - clean.values).std(axis=0) / clean.values.std(axis=0)
        assert np.max(np.abs(ratio - noise)) <= 0.05 * noise

    def test_noise_seeds_share_manifold(self):
        a, _ = gen_spiral(SpiralConfig(n_points=300, noise_sigma=0.0, seed=1))
        b, _ = gen_spiral(SpiralConfig(n_points=300, noise_sigma=0.0, seed=2))
        assert np.array_equal(a.values, b.values)

    def test_local_patches_are_two_dimensional(self):
        # top-2 singular values of any 20-NN patch carry >= 99% of variance
        series, _ = gen_spiral(SpiralConfig(n_points=2000, noise_sigma=0.0))
        x = series.values
        centers = RngStream(4).integers(0, x.shape[0], size=40)
        for c in centers:
            dist = np.linalg.norm(x - x[c], axis=1)
            patch = x[np.argsort(dist)[:20]]
            sv = np.linalg.svd(patch - patch.mean(axis=0), compute_uv=False)
            assert (sv[:2] ** 2).sum() / (sv**2).sum() >= 0.99

    def test_determinism_bitwise(self):
        cfg = SpiralConfig(n_points=500, noise_sigma=0.3, seed=42)
        a, ga = gen_spiral(cfg)
        b, gb = gen_spiral(cfg)
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(ga, gb)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            gen_spiral(SpiralConfig(n_points=100))
        with pytest.raises(ConfigError):
            gen_spiral(SpiralConfig(n_points=500, noise_sigma=-0.1))
        with pytest.raises(ConfigError):
            gen_spiral(SpiralConfig(n_points=500, turns=0.0))


class TestHmm:
    def test_identity_transition_freezes_state(self):
        cfg = default_hmm_config(200, seed=5)
        cfg.transition = np.eye(3)
        series = gen_hmm(cfg)
        assert np.all(series.labels == series.labels[0])

    def test_occupancy_matches_stationary_distribution(self):
        cfg = default_hmm_config(10**5, seed=12)
        series = gen_hmm(cfg)
        evals, evecs = np.linalg.eig(cfg.transition.T)
        stat = np.real(evecs[:, np.argmin(np.abs(evals - 1.0))])
        stat = stat / stat.sum()
        occupancy = np.bincount(series.labels, minlength=3) / series.n_points
        assert np.max(np.abs(occupancy - stat)) < 0.02

    def test_degenerate_variance_pins_emissions(self):
        cfg = default_hmm_config(300, seed=2)
        cfg.variances = np.full_like(cfg.variances, 1e-12)
        series = gen_hmm(cfg)
        assert np.max(np.abs(series.values - cfg.means[series.labels])) < 1e-5

    def test_label_emission_consistency(self):
        cfg = default_hmm_config(10**5, seed=9)
        series = gen_hmm(cfg)
        for k in range(3):
            rows = series.values[series.labels == k]
            se = np.sqrt(cfg.variances[k] / rows.shape[0])
            assert np.max(np.abs(rows.mean(axis=0) - cfg.means[k]) / se) < 4.0

    def test_default_geometry_separation(self):
        cfg = default_hmm_config(100, seed=0)
        avg_std = np.mean(np.sqrt(cfg.variances))
        dists = [
            np.linalg.norm(cfg.means[i] - cfg.means[j])
            for i in range(3)
            for j in range(i + 1, 3)
        ]
        assert abs(min(dists) - 3.0 * avg_std) < 1e-9

    def test_invalid_transition_rejected(self):
        cfg = default_hmm_config(100, seed=0)
        cfg.transition = np.array([[0.5, 0.5, 0.1], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        with pytest.raises(ConfigError):
            gen_hmm(cfg)

    def test_determinism_bitwise(self):
        cfg = default_hmm_config(2000, seed=77)
        assert np.array_equal(gen_hmm(cfg).values, gen_hmm(cfg).values)

    def test_shuffle_keeps_label_alignment(self):
        series = gen_hmm(default_hmm_config(500, seed=3))
        shuffled = shuffle_series(series, seed=4)
        assert not np.array_equal(shuffled.values, series.values)
        # rows travel with their labels
        order = np.lexsort(shuffled.values.T)
        base = np.lexsort(series.values.T)
        assert np.array_equal(shuffled.labels[order], series.labels[base])


class TestCsv:
    def test_round_trip_bitwise(self, tmp_path):
        series = gen_hmm(default_hmm_config(120, seed=6))
        path = tmp_path / "data.csv"
        save_csv(series, path)
        loaded = load_csv(path)
        assert np.array_equal(loaded.values, series.values)
        assert np.array_equal(loaded.labels, series.labels)

    def test_nan_cell_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("f0,f1\n1.0,2.0\n3.0,nan\n4.0,5.0\n")
        with pytest.raises(DataError, match="line 3"):
            load_csv(path)

    def test_non_numeric_cell_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("f0,f1\n1.0,2.0\nx,5.0\n")
        with pytest.raises(DataError, match="line 3"):
            load_csv(path)

    def test_ragged_row_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("f0,f1\n1.0,2.0\n3.0\n")
        with pytest.raises(DataError, match="line 3"):
            load_csv(path)

    def test_too_few_rows(self, tmp_path):
        path = tmp_path / "short.csv"
        path.write_text("f0,f1\n1.0,2.0\n")
        with pytest.raises(DataError):
            load_csv(path)

    def test_label_column_with_flag(self, tmp_path):
        series = gen_hmm(default_hmm_config(50, seed=1))
        path = tmp_path / "labeled.csv"
        save_csv(series, path)
        loaded = load_csv(path, has_labels=True)
        assert loaded.dim == 31
        assert loaded.labels is not None

    def test_flag_without_label_column(self, tmp_path):
        path = tmp_path / "plain.csv"
        path.write_text("f0,f1\n1.0,2.0\n3.0,4.0\n")
        with pytest.raises(DataError):
            load_csv(path, has_labels=True)
        assert load_csv(path, has_labels=False).labels is None


class TestSplits:
    def make_series(self, n):
        values = np.arange(n, dtype=np.float64)[:, None] * np.ones((1, 3))
        return SeriesMatrix(values, None, {})

    def test_seed_isolation(self):
        series = self.make_series(500)
        a = split_series(series, seed=1, val_fraction=0.2, test_fraction=0.15)
        b = split_series(series, seed=2, val_fraction=0.2, test_fraction=0.15)
        assert not np.array_equal(a.val_pairs, b.val_pairs)
        assert a.test_start == b.test_start

    def test_partition_completeness(self):
        series = self.make_series(500)
        s = split_series(series, seed=3, val_fraction=0.2, test_fraction=0.15)
        n_nontest = s.test_start
        combined = np.concatenate([s.train_pairs, s.val_pairs])
        assert len(np.intersect1d(s.train_pairs, s.val_pairs)) == 0
        assert len(combined) == n_nontest - 1
        assert np.array_equal(np.sort(combined), np.arange(n_nontest - 1))

    def test_val_count_arithmetic(self):
        # 1178 rows, test 15% -> 1001 non-test rows -> 1000 pairs -> 200 val
        series = self.make_series(1178)
        s = split_series(series, seed=0, val_fraction=0.2, test_fraction=0.15)
        assert s.test_start == 1001
        assert len(s.val_pairs) == 200

    def test_no_pair_straddles_test_boundary(self):
        series = self.make_series(200)
        s = split_series(series, seed=5, val_fraction=0.2, test_fraction=0.1)
        max_pair = max(s.train_pairs.max(), s.val_pairs.max())
        assert max_pair + 1 <= s.test_start - 1

    def test_test_series_slices_labels(self):
        values = np.arange(100, dtype=np.float64)[:, None] * np.ones((1, 2))
        series = SeriesMatrix(values, np.arange(100), {})
        s = split_series(series, seed=0, val_fraction=0.2, test_fraction=0.2)
        test = s.test_series()
        assert test.n_points == 20
        assert np.array_equal(test.labels, np.arange(80, 100))

    def test_too_short_rejected(self):
        with pytest.raises(UsageError):
            split_series(self.make_series(4), seed=0, val_fraction=0.3, test_fraction=0.3)

    def test_bad_fractions_rejected(self):
        series = self.make_series(100)
        with pytest.raises(UsageError):
            split_series(series, seed=0, val_fraction=0.0, test_fraction=0.2)
        with pytest.raises(UsageError):
            split_series(series, seed=0, val_fraction=0.7, test_fraction=0.4)


class TestSeriesMatrix:
    def test_non_finite_rejected(self):
        values = np.ones((3, 2))
        values[1, 1] = np.inf
        with pytest.raises(DataError, match="row 1"):
            SeriesMatrix(values)

    def test_label_length_checked(self):
        with pytest.raises(DataError):
            SeriesMatrix(np.ones((3, 2)), labels=np.array([1, 2]))
