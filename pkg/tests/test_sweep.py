"""Sweep harness: grid expansion, execution, resume, selection, reports."""

import os
import shutil

import numpy as np
import pytest

from tnvae import data
from tnvae.errors import ConfigError, DataError, UsageError
from tnvae.models import Hyperparams, ModelRecord
from tnvae.sweep import (
    BUILTIN_GRIDS,
    SweepSpec,
    correlation_report,
    expand_grid,
    load_records,
    pairwise_encoding_distances,
    read_manifest,
    run_id,
    run_sweep,
    select_model,
    series_hash,
    write_report,
    write_topk_encodings,
)

MINI_GRID = {
    "variant": ["time_neighbor"],
    "n_layers": [2],
    "hidden_width": [50],
    "latent_dim": [2],
    "beta": [1e-4, 1e-3],
    "batch_size": [128],
    "lr": [1e-3],
    "seeds": [1, 2],
    "epochs": 4,
    "val_fraction": 0.2,
    "test_fraction": 0.15,
}


@pytest.fixture(scope="module")
def mini_series():
    series, _ = data.gen_spiral(data.SpiralConfig(n_points=700, noise_sigma=0.2, seed=11))
    return series


@pytest.fixture(scope="module")
def mini_sweep(tmp_path_factory, mini_series):
    out = tmp_path_factory.mktemp("mini_sweep")
    spec = SweepSpec.from_config(MINI_GRID)
    result = run_sweep(mini_series, spec, out, jobs=1, dataset_path="mini.csv")
    return result


class TestExpandGrid:
    def test_product_arithmetic(self):
        axes = {
            "variant": ["standard"],
            "n_layers": [2, 3],
            "hidden_width": [50],
            "latent_dim": [2],
            "beta": [1e-4],
            "batch_size": [128],
            "lr": [1e-3],
        }
        grid = expand_grid(axes)
        assert len(grid) == 2
        assert grid[0].n_layers == 2 and grid[1].n_layers == 3

    def test_declaration_order_is_lexicographic(self):
        axes = {
            "variant": ["standard"],
            "n_layers": [2, 3],
            "hidden_width": [50, 100],
            "latent_dim": [2],
            "beta": [1e-4],
            "batch_size": [128],
            "lr": [1e-3],
        }
        grid = expand_grid(axes)
        combos = [(hp.n_layers, hp.hidden_width) for hp in grid]
        assert combos == [(2, 50), (2, 100), (3, 50), (3, 100)]

    def test_paper_scale_run_counts(self):
        spiral = SweepSpec.from_config(BUILTIN_GRIDS["paper-spiral"])
        per_variant = 1
        for axis, values in spiral.axes.items():
            if axis != "variant":
                per_variant *= len(values)
        assert per_variant == 144
        assert len(spiral.plan()) == 1440
        clusters = SweepSpec.from_config(BUILTIN_GRIDS["paper-clusters"])
        assert len(clusters.plan()) == 648

    def test_empty_axis_rejected(self):
        axes = dict(MINI_GRID)
        for key in ("seeds", "epochs", "val_fraction", "test_fraction"):
            axes.pop(key)
        axes["beta"] = []
        with pytest.raises(ConfigError, match="beta"):
            expand_grid(axes)

    def test_out_of_domain_names_axis(self):
        axes = {k: v for k, v in MINI_GRID.items() if k not in ("seeds", "epochs", "val_fraction", "test_fraction")}
        axes["lr"] = [0.5]
        with pytest.raises(ConfigError, match="lr"):
            expand_grid(axes)

    def test_missing_axis_rejected(self):
        with pytest.raises(ConfigError, match="hidden_width"):
            expand_grid({k: v for k, v in MINI_GRID.items() if k in ("variant", "n_layers")})

    def test_unknown_gridspec_key_rejected(self):
        cfg = dict(MINI_GRID, bogus=1)
        with pytest.raises(ConfigError, match="bogus"):
            SweepSpec.from_config(cfg)


class TestSelect:
    def make_records(self, values, criterion="val_loss"):
        out = []
        for i, v in enumerate(values):
            rec = ModelRecord(
                hyperparams=Hyperparams("standard", 2, 50, 2, 1e-4, 128, 1e-3),
                seed=i,
                epochs=1,
                run_id=f"r{i}",
            )
            rec.final_val_loss = v if criterion == "val_loss" else 1.0
            rec.val_nl = v if criterion == "neighbor_loss" else 1.0 + i
            out.append(rec)
        return out

    def test_argmin(self):
        records = self.make_records([0.5, 0.3, 0.9])
        top = select_model(records, "val_loss", 1)
        assert top[0].final_val_loss == 0.3

    def test_criteria_rank_independently(self):
        records = self.make_records([0.5, 0.3, 0.9])
        # val_nl was set to 1+i: ascending by construction, differs from val_loss order
        by_loss = select_model(records, "val_loss", 3)
        by_nl = select_model(records, "neighbor_loss", 3)
        assert [r.run_id for r in by_loss] == ["r1", "r0", "r2"]
        assert [r.run_id for r in by_nl] == ["r0", "r1", "r2"]

    def test_topk_monotone(self):
        records = self.make_records(list(np.linspace(2.0, 1.0, 25)))
        top = select_model(records, "val_loss", 20)
        vals = [r.final_val_loss for r in top]
        assert vals == sorted(vals)
        assert len(top) == 20

    def test_too_few_records_rejected(self):
        with pytest.raises(UsageError):
            select_model(self.make_records([1.0]), "val_loss", 2)

    def test_missing_criterion_is_data_error(self):
        records = self.make_records([1.0, 2.0, 3.0])
        records[1].val_nl = float("nan")
        with pytest.raises(DataError):
            select_model(records, "neighbor_loss", 1)

    def test_failed_records_excluded(self):
        records = self.make_records([1.0, 2.0, 3.0])
        records[0].failed = True
        top = select_model(records, "val_loss", 2)
        assert all(not r.failed for r in top)


class TestRunSweep:
    def test_all_records_written(self, mini_sweep):
        assert len(mini_sweep.records) == 4
        assert mini_sweep.n_failures == 0
        assert not mini_sweep.failed
        assert (mini_sweep.out_dir / "manifest.txt").exists()
        for rec in mini_sweep.records:
            assert (mini_sweep.out_dir / rec.checkpoint_ref).exists()

    def test_resume_skips_completed(self, mini_series, mini_sweep):
        out = mini_sweep.out_dir
        before = {p.name: p.stat().st_mtime_ns for p in (out / "records").glob("*.txt")}
        spec = SweepSpec.from_config(MINI_GRID)
        again = run_sweep(mini_series, spec, out, jobs=1, dataset_path="mini.csv")
        after = {p.name: p.stat().st_mtime_ns for p in (out / "records").glob("*.txt")}
        assert before == after
        assert len(again.records) == 4

    def test_deleted_record_retrained_identically(self, mini_series, mini_sweep, tmp_path):
        out = tmp_path / "copy"
        shutil.copytree(mini_sweep.out_dir, out)
        victim = sorted((out / "records").glob("*.txt"))[0]
        original = victim.read_text()
        victim.unlink()
        spec = SweepSpec.from_config(MINI_GRID)
        others_before = {p.name: p.stat().st_mtime_ns for p in (out / "records").glob("*.txt")}
        run_sweep(mini_series, spec, out, jobs=1, dataset_path="mini.csv")
        assert victim.read_text() == original
        others_after = {
            p.name: p.stat().st_mtime_ns
            for p in (out / "records").glob("*.txt")
            if p.name != victim.name
        }
        assert others_before == others_after

    def test_parallel_matches_serial(self, mini_series, mini_sweep, tmp_path):
        out = tmp_path / "par"
        spec = SweepSpec.from_config(MINI_GRID)
        result = run_sweep(mini_series, spec, out, jobs=2, dataset_path="mini.csv")
        for serial, parallel in zip(mini_sweep.records, result.records):
            assert serial.run_id == parallel.run_id
            assert serial.final_val_loss == parallel.final_val_loss
            assert serial.val_nl == parallel.val_nl
            assert np.array_equal(serial.loss_curves, parallel.loss_curves)

    def test_dataset_hash_mismatch_rejected(self, mini_series, mini_sweep):
        other, _ = data.gen_spiral(data.SpiralConfig(n_points=700, noise_sigma=0.2, seed=99))
        spec = SweepSpec.from_config(MINI_GRID)
        with pytest.raises(DataError, match="hash"):
            run_sweep(other, spec, mini_sweep.out_dir, jobs=1)

    def test_failure_tolerance_marks_sweep_failed(self, tmp_path):
        values = np.full((300, 4), 1e160)
        values[::2] *= -1.0
        series = data.SeriesMatrix(values, None, {})
        spec = SweepSpec.from_config(MINI_GRID)
        result = run_sweep(series, spec, tmp_path / "doomed", jobs=1)
        assert result.n_failures == 4
        assert result.failed

    def test_manifest_readable(self, mini_sweep, mini_series):
        info = read_manifest(mini_sweep.out_dir)
        assert info["dataset"] == "mini.csv"
        assert info["dataset_hash"] == series_hash(mini_series)
        assert info["seeds"] == [1, 2]
        assert info["test_fraction"] == 0.15
        assert len(expand_grid(info["axes"])) == 2

    def test_load_records_ordering(self, mini_sweep):
        records = load_records(mini_sweep.out_dir)
        keys = [(r.hyperparams.canonical(), r.seed) for r in records]
        assert keys == sorted(keys)


class TestPairwise:
    def test_single_record_zero_matrix(self, mini_sweep, mini_series):
        test = data.split_series(mini_series, 1, 0.2, 0.15).test_series()
        ids, matrix, rows = pairwise_encoding_distances(
            mini_sweep.records[:1], test, mini_sweep.out_dir
        )
        assert matrix.shape == (1, 1) and matrix[0, 0] == 0.0
        assert rows == []

    def test_symmetry_and_zero_diagonal(self, mini_sweep, mini_series):
        test = data.split_series(mini_series, 1, 0.2, 0.15).test_series()
        ids, matrix, rows = pairwise_encoding_distances(mini_sweep.records, test, mini_sweep.out_dir)
        assert np.max(np.abs(matrix - matrix.T)) < 1e-10
        assert np.all(np.diag(matrix) == 0.0)
        assert len(rows) == 6

    def test_duplicated_record_distance_zero(self, mini_sweep, mini_series, tmp_path):
        out = tmp_path / "dup"
        shutil.copytree(mini_sweep.out_dir, out)
        rec = mini_sweep.records[0]
        clone = ModelRecord.load(out / "records" / f"{rec.run_id}.txt")
        clone.run_id = "clone"
        test = data.split_series(mini_series, 1, 0.2, 0.15).test_series()
        ids, matrix, _ = pairwise_encoding_distances([rec, clone], test, out)
        assert matrix[0, 1] < 1e-12


class TestReport:
    def test_tables_and_correlations(self, mini_sweep, mini_series):
        test = data.split_series(mini_series, 1, 0.2, 0.15).test_series()
        tables = correlation_report(mini_sweep.records, test, mini_sweep.out_dir)
        assert len(tables.per_model) == 4
        assert len(tables.per_combination) == 2
        assert not tables.flags["labels_missing"]
        for row in tables.per_model:
            assert -1.0 <= row["silhouette"] <= 1.0
        for row in tables.per_combination:
            assert row["n_seeds"] == 2
            assert np.isfinite(row["mean_encoding_distance"])
        assert "val_nl_vs_encoding_distance" in tables.correlations

    def test_report_regeneration_byte_identical(self, mini_sweep, mini_series, tmp_path):
        test = data.split_series(mini_series, 1, 0.2, 0.15).test_series()
        tables = correlation_report(mini_sweep.records, test, mini_sweep.out_dir)
        dir_a, dir_b = tmp_path / "a", tmp_path / "b"
        write_report(tables, dir_a)
        write_report(correlation_report(mini_sweep.records, test, mini_sweep.out_dir), dir_b)
        for name in os.listdir(dir_a):
            assert (dir_a / name).read_bytes() == (dir_b / name).read_bytes()

    def test_fig4_one_row_per_combination(self, mini_sweep, mini_series, tmp_path):
        test = data.split_series(mini_series, 1, 0.2, 0.15).test_series()
        tables = correlation_report(mini_sweep.records, test, mini_sweep.out_dir)
        write_report(tables, tmp_path)
        lines = (tmp_path / "fig4.csv").read_text().splitlines()
        assert len(lines) == 1 + len(tables.per_combination)

    def test_unlabeled_test_series_omits_silhouette(self, mini_sweep, mini_series, tmp_path):
        test = data.split_series(mini_series, 1, 0.2, 0.15).test_series()
        unlabeled = data.SeriesMatrix(test.values, None, {})
        tables = correlation_report(mini_sweep.records, unlabeled, mini_sweep.out_dir)
        assert tables.flags["labels_missing"]
        assert "silhouette" not in tables.per_model[0]
        assert "val_loss_vs_silhouette" not in tables.correlations
        write_report(tables, tmp_path)
        assert not (tmp_path / "fig2c.csv").exists()
        header = (tmp_path / "per_model.csv").read_text().splitlines()[0]
        assert "silhouette" not in header

    def test_topk_encodings_written(self, mini_sweep, mini_series, tmp_path):
        test = data.split_series(mini_series, 1, 0.2, 0.15).test_series()
        names = write_topk_encodings(
            mini_sweep.records, test, mini_sweep.out_dir, tmp_path, k=2, criterion="neighbor_loss"
        )
        assert len(names) == 2
        for name in names:
            assert (tmp_path / name).exists()

    def test_run_id_depends_on_all_inputs(self, mini_series):
        h = series_hash(mini_series)
        hp = Hyperparams("standard", 2, 50, 2, 1e-4, 128, 1e-3)
        hp2 = Hyperparams("standard", 2, 50, 2, 1e-3, 128, 1e-3)
        assert run_id(h, hp, 1) != run_id(h, hp, 2)
        assert run_id(h, hp, 1) != run_id(h, hp2, 1)
        assert run_id(h, hp, 1) != run_id("other", hp, 1)
