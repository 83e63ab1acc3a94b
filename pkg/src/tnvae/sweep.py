"""Hyperparameter sweep harness: grid expansion, ensemble training across
seeds, model selection, pairwise encoding distances, and report tables.

Runs are identified by hash(dataset, hyperparams, seed), written as
standalone record + checkpoint files, and logged to an append-only manifest.
A sweep is resumable: existing valid records are never retrained, and the
results are independent of worker count because every run's randomness is
derived only from its own seed.
"""

from __future__ import annotations

import hashlib
import itertools
import multiprocessing
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .configfile import format_value, parse_value
from .data import SeriesMatrix, split_series
from .errors import ConfigError, DataError, UsageError
from .metrics import (
    CorrelationReport,
    align_encoding_labels,
    cluster_moments,
    correlations,
    encoding_distance,
    save_encoding_csv,
    silhouette,
)
from .models import Hyperparams, ModelRecord, TrainConfig, encode_series, load_model, train

GRID_AXES = ("variant", "n_layers", "hidden_width", "latent_dim", "beta", "batch_size", "lr")
SETTING_KEYS = ("seeds", "epochs", "val_fraction", "test_fraction")

FAILURE_TOLERANCE = 0.25


@dataclass
class SweepSpec:
    """Grid axes (in declaration order) plus the shared training settings."""

    axes: dict
    seeds: list
    epochs: int
    val_fraction: float = 0.2
    test_fraction: float = 0.15
    name: str = ""

    @staticmethod
    def from_config(cfg: dict, name="") -> "SweepSpec":
        known = set(GRID_AXES) | set(SETTING_KEYS) | {"name"}
        for key in cfg:
            if key not in known:
                raise ConfigError(f"unknown gridspec key {key!r}")
        axes = {}
        for axis in cfg:
            if axis not in GRID_AXES:
                continue
            vals = cfg[axis]
            axes[axis] = list(vals) if isinstance(vals, list) else [vals]
        for axis in GRID_AXES:
            if axis not in axes:
                raise ConfigError(f"gridspec missing axis {axis!r}")
        seeds = cfg.get("seeds")
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError("gridspec needs a non-empty 'seeds' list")
        if "epochs" not in cfg:
            raise ConfigError("gridspec needs 'epochs'")
        return SweepSpec(
            axes=axes,
            seeds=[int(s) for s in seeds],
            epochs=int(cfg["epochs"]),
            val_fraction=float(cfg.get("val_fraction", 0.2)),
            test_fraction=float(cfg.get("test_fraction", 0.15)),
            name=str(cfg.get("name", name)),
        )

    def grid(self) -> list:
        return expand_grid(self.axes)

    def plan(self) -> list:
        """All (grid_index, hyperparams, seed) runs in deterministic order."""
        return [(gi, hp, seed) for gi, hp in enumerate(self.grid()) for seed in self.seeds]


def expand_grid(axes: dict) -> list:
    """Cartesian product of the axes, ordered lexicographically by axis
    declaration; every value is validated against its domain."""
    for axis, values in axes.items():
        if axis not in GRID_AXES:
            raise ConfigError(f"unknown grid axis {axis!r}")
        if not isinstance(values, (list, tuple)) or len(values) == 0:
            raise ConfigError(f"axis '{axis}': must be a non-empty list")
    for axis in GRID_AXES:
        if axis not in axes:
            raise ConfigError(f"gridspec missing axis {axis!r}")
    names = list(axes)
    grid = []
    for combo in itertools.product(*(axes[n] for n in names)):
        grid.append(Hyperparams(**dict(zip(names, combo))).validate())
    return grid


def series_hash(series: SeriesMatrix) -> str:
    h = hashlib.sha256()
    h.update(repr(series.values.shape).encode())
    h.update(series.values.tobytes())
    if series.labels is not None:
        h.update(series.labels.tobytes())
    return h.hexdigest()


def run_id(dataset_hash: str, hp: Hyperparams, seed: int) -> str:
    key = f"{dataset_hash}|{hp.canonical()}|seed={seed}"
    return hashlib.sha256(key.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# sweep execution

_WORKER: dict = {}


def _init_worker(values, labels):
    _WORKER["series"] = SeriesMatrix(values, labels, {})


def _run_one(task):
    rid, hp, seed, epochs, val_fraction, test_fraction, records_dir, ckpt_dir = task
    series = _WORKER["series"]
    splits = split_series(series, seed, val_fraction, test_fraction)
    cfg = TrainConfig(
        epochs=epochs, batch_size=hp.batch_size, lr=hp.lr, seed=seed, val_fraction=val_fraction
    )
    ckpt_path = os.path.join(ckpt_dir, rid + ".ckpt")
    record = train(hp, splits, cfg, checkpoint_path=ckpt_path, run_id=rid)
    if record.checkpoint_ref:
        record.checkpoint_ref = f"checkpoints/{rid}.ckpt"
    final = os.path.join(records_dir, rid + ".txt")
    tmp = final + ".tmp"
    record.save(tmp)
    os.replace(tmp, final)
    return rid


@dataclass
class SweepResult:
    records: list
    plan: list  # (grid_index, hp, seed, run_id)
    n_failures: int
    failed: bool
    out_dir: Path


def _manifest_header(dataset_path, ds_hash, spec: SweepSpec) -> str:
    lines = ["tnvae-sweep v1"]
    lines.append(f"dataset = {dataset_path}")
    lines.append(f"dataset_hash = {ds_hash}")
    for axis, values in spec.axes.items():
        lines.append(f"axis {axis} = {format_value(list(values))}")
    lines.append(f"seeds = {format_value(list(spec.seeds))}")
    lines.append(f"epochs = {spec.epochs}")
    lines.append(f"val_fraction = {spec.val_fraction!r}")
    lines.append(f"test_fraction = {spec.test_fraction!r}")
    lines.append("note = grid axis values reconstruct the stated ranges; not a verbatim grid")
    lines.append("[runs]")
    return "\n".join(lines) + "\n"


def _check_manifest(path: Path, ds_hash: str) -> None:
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.startswith("dataset_hash = "):
            if line.split(" = ", 1)[1] != ds_hash:
                raise DataError(f"{path}: dataset hash changed; refusing to resume")
            return
    raise DataError(f"{path}: malformed sweep manifest")


def run_sweep(series: SeriesMatrix, spec: SweepSpec, out_dir, jobs=1, dataset_path="", progress=None) -> SweepResult:
    """Train every (grid point, seed) run that has no valid record yet.

    Results are keyed by run id, so reruns and crash recovery skip finished
    work; worker count only affects wall time.
    """
    out_dir = Path(out_dir)
    records_dir = out_dir / "records"
    ckpt_dir = out_dir / "checkpoints"
    records_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    ds_hash = series_hash(series)
    manifest = out_dir / "manifest.txt"
    if manifest.exists():
        _check_manifest(manifest, ds_hash)
    else:
        manifest.write_text(_manifest_header(dataset_path, ds_hash, spec), encoding="utf-8")

    plan = [(gi, hp, seed, run_id(ds_hash, hp, seed)) for gi, hp, seed in spec.plan()]
    todo = []
    for gi, hp, seed, rid in plan:
        path = records_dir / f"{rid}.txt"
        if path.exists():
            try:
                ModelRecord.load(path)
                continue  # resume: keep the finished run untouched
            except UsageError:
                pass  # partial write from a crash; retrain
        todo.append((rid, hp, seed, spec.epochs, spec.val_fraction, spec.test_fraction, str(records_dir), str(ckpt_dir)))

    if todo:
        if jobs <= 1:
            _init_worker(series.values, series.labels)
            done_iter = map(_run_one, todo)
        else:
            pool = multiprocessing.Pool(
                processes=jobs, initializer=_init_worker, initargs=(series.values, series.labels)
            )
            done_iter = pool.imap_unordered(_run_one, todo)
        fresh = set()
        for rid in done_iter:
            fresh.add(rid)
            if progress is not None:
                progress(ModelRecord.load(records_dir / f"{rid}.txt"))
        if jobs > 1:
            pool.close()
            pool.join()
        with open(manifest, "a", encoding="utf-8") as f:
            for gi, hp, seed, rid in plan:
                if rid in fresh:
                    rec = ModelRecord.load(records_dir / f"{rid}.txt")
                    status = "failed" if rec.failed else "completed"
                    f.write(
                        f"run {rid} grid={gi} seed={seed} status={status} "
                        f"val_loss={rec.final_val_loss!r} val_nl={rec.val_nl!r}\n"
                    )

    records = [ModelRecord.load(records_dir / f"{rid}.txt") for _, _, _, rid in plan]
    n_failures = sum(r.failed for r in records)
    sweep_failed = n_failures > FAILURE_TOLERANCE * len(plan)
    with open(manifest, "a", encoding="utf-8") as f:
        status = "failed" if sweep_failed else "completed"
        f.write(f"sweep status={status} runs={len(plan)} failures={n_failures}\n")
    return SweepResult(records, plan, n_failures, sweep_failed, out_dir)


def read_manifest(out_dir) -> dict:
    """Header fields of a sweep manifest: dataset, hash, axes, settings."""
    path = Path(out_dir) / "manifest.txt"
    if not path.exists():
        raise DataError(f"{path} does not exist")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "tnvae-sweep v1":
        raise DataError(f"{path}: not a sweep manifest")
    info = {"axes": {}}
    for line in lines[1:]:
        if line == "[runs]":
            break
        key, _, val = line.partition(" = ")
        if key.startswith("axis "):
            info["axes"][key[5:].strip()] = parse_value(val)
        elif key in ("seeds",):
            info[key] = parse_value(val)
        elif key in ("epochs",):
            info[key] = int(val)
        elif key in ("val_fraction", "test_fraction"):
            info[key] = float(val)
        else:
            info[key.strip()] = val
    for required in ("dataset", "dataset_hash", "seeds", "epochs", "test_fraction"):
        if required not in info:
            raise DataError(f"{path}: manifest missing {required!r}")
    return info


def load_records(out_dir) -> list:
    """All records under out_dir/records, ordered by (hyperparams, seed)."""
    records_dir = Path(out_dir) / "records"
    if not records_dir.is_dir():
        raise DataError(f"{records_dir} does not exist")
    records = [ModelRecord.load(p) for p in sorted(records_dir.glob("*.txt"))]
    if not records:
        raise DataError(f"no records in {records_dir}")
    records.sort(key=lambda r: (r.hyperparams.canonical(), r.seed))
    return records


# ---------------------------------------------------------------------------
# selection and pairwise distances


def select_model(records, criterion: str, k: int) -> list:
    """Top-k successful records, ascending by the criterion; ties break by
    (seed, hyperparams) so selection is deterministic."""
    ok = [r for r in records if not r.failed]
    if k < 1 or len(ok) < k:
        raise UsageError(f"need at least k={k} successful records, have {len(ok)}")
    for r in ok:
        if not np.isfinite(r.criterion_value(criterion)):
            raise DataError(f"record {r.run_id}: criterion {criterion!r} missing")
    ok.sort(key=lambda r: (r.criterion_value(criterion), r.seed, r.hyperparams.canonical()))
    return ok[:k]


def _load_encoding(record: ModelRecord, test_series: SeriesMatrix, out_dir):
    path = Path(out_dir) / record.checkpoint_ref
    if not path.exists():
        raise DataError(f"record {record.run_id}: checkpoint {path} missing")
    return encode_series(load_model(path), test_series, record.run_id)


def pairwise_encoding_distances(records, test_series: SeriesMatrix, out_dir):
    """Symmetric Procrustes-distance matrix between the test-set encodings of
    every pair of records (which must share variant and latent_dim)."""
    ok = [r for r in records if not r.failed]
    if not ok:
        raise UsageError("no successful records")
    if len({r.hyperparams.variant for r in ok}) > 1:
        raise UsageError("records mix encoder variants")
    if len({r.hyperparams.latent_dim for r in ok}) > 1:
        raise UsageError("records mix latent dimensions")
    encs = [_load_encoding(r, test_series, out_dir) for r in ok]
    n = len(ok)
    matrix = np.zeros((n, n))
    rows = []
    for i in range(n):
        for j in range(i + 1, n):
            d = encoding_distance(encs[i], encs[j])
            matrix[i, j] = matrix[j, i] = d
            rows.append((ok[i].run_id, ok[j].run_id, d))
    return [r.run_id for r in ok], matrix, rows


# ---------------------------------------------------------------------------
# report


@dataclass
class ReportTables:
    per_model: list = field(default_factory=list)
    per_combination: list = field(default_factory=list)
    correlations: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)


def _safe_correlations(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    keep = np.isfinite(x) & np.isfinite(y)
    try:
        return correlations(x[keep], y[keep])
    except (UsageError, DataError):
        return None


def correlation_report(records, test_series: SeriesMatrix, out_dir) -> ReportTables:
    """Per-model and per-combination metric tables plus the four headline
    correlations (val_loss / val_nl against silhouette and encoding distance).

    Failed runs are excluded explicitly; silhouette columns are omitted when
    the test series carries no ground-truth labels.
    """
    ok = sorted((r for r in records if not r.failed), key=lambda r: (r.hyperparams.canonical(), r.seed))
    if not ok:
        raise DataError("no successful records to report on")
    tables = ReportTables()
    tables.flags["n_records"] = len(records)
    tables.flags["n_failed_excluded"] = sum(r.failed for r in records)
    has_labels = test_series.labels is not None
    tables.flags["labels_missing"] = not has_labels

    encs = {r.run_id: _load_encoding(r, test_series, out_dir) for r in ok}
    for r in ok:
        hp = r.hyperparams
        row = {
            "run_id": r.run_id,
            "variant": hp.variant,
            "n_layers": hp.n_layers,
            "hidden_width": hp.hidden_width,
            "latent_dim": hp.latent_dim,
            "beta": hp.beta,
            "batch_size": hp.batch_size,
            "lr": hp.lr,
            "seed": r.seed,
            "val_loss": r.final_val_loss,
            "val_nl": r.val_nl,
        }
        if has_labels:
            z, lab = align_encoding_labels(encs[r.run_id], test_series.labels)
            row["silhouette"] = silhouette(z, lab)
            moments = cluster_moments(z, lab)
            row["mean_abs_skew"] = moments.mean_abs_skew
            row["mean_excess_kurtosis"] = moments.mean_excess_kurtosis
        tables.per_model.append(row)

    combos = {}
    for r in ok:
        combos.setdefault(r.hyperparams.canonical(), []).append(r)
    for ci, canon in enumerate(sorted(combos)):
        members = combos[canon]
        hp = members[0].hyperparams
        dists = [
            encoding_distance(encs[a.run_id], encs[b.run_id])
            for i, a in enumerate(members)
            for b in members[i + 1 :]
        ]
        tables.per_combination.append(
            {
                "combo_index": ci,
                "variant": hp.variant,
                "n_layers": hp.n_layers,
                "hidden_width": hp.hidden_width,
                "latent_dim": hp.latent_dim,
                "beta": hp.beta,
                "batch_size": hp.batch_size,
                "lr": hp.lr,
                "n_seeds": len(members),
                "mean_val_loss": float(np.mean([r.final_val_loss for r in members])),
                "mean_val_nl": float(np.mean([r.val_nl for r in members])),
                "mean_encoding_distance": float(np.mean(dists)) if dists else float("nan"),
            }
        )

    if has_labels:
        sil = [row["silhouette"] for row in tables.per_model]
        vls = [row["val_loss"] for row in tables.per_model]
        nls = [row["val_nl"] for row in tables.per_model]
        tables.correlations["val_loss_vs_silhouette"] = _safe_correlations(vls, sil)
        tables.correlations["val_nl_vs_silhouette"] = _safe_correlations(nls, sil)
    enc_d = [row["mean_encoding_distance"] for row in tables.per_combination]
    mvl = [row["mean_val_loss"] for row in tables.per_combination]
    mnl = [row["mean_val_nl"] for row in tables.per_combination]
    tables.correlations["val_loss_vs_encoding_distance"] = _safe_correlations(mvl, enc_d)
    tables.correlations["val_nl_vs_encoding_distance"] = _safe_correlations(mnl, enc_d)
    return tables


def _csv_cell(value) -> str:
    if isinstance(value, float):
        return repr(float(value))  # plain float repr even for numpy scalars
    return str(value)


def _write_table(path, rows, columns) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(",".join(columns) + "\n")
        for row in rows:
            f.write(",".join(_csv_cell(row[c]) for c in columns) + "\n")


PER_MODEL_COLUMNS = [
    "run_id", "variant", "n_layers", "hidden_width", "latent_dim", "beta",
    "batch_size", "lr", "seed", "val_loss", "val_nl",
]
PER_COMBINATION_COLUMNS = [
    "combo_index", "variant", "n_layers", "hidden_width", "latent_dim", "beta",
    "batch_size", "lr", "n_seeds", "mean_val_loss", "mean_val_nl",
    "mean_encoding_distance",
]


def write_report(tables: ReportTables, report_dir) -> list:
    """Emit the report tables and the per-figure scatter data files."""
    report_dir = Path(report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    with_labels = not tables.flags.get("labels_missing", False)
    written = []

    cols = PER_MODEL_COLUMNS + (
        ["silhouette", "mean_abs_skew", "mean_excess_kurtosis"] if with_labels else []
    )
    _write_table(report_dir / "per_model.csv", tables.per_model, cols)
    written.append("per_model.csv")

    _write_table(report_dir / "per_combination.csv", tables.per_combination, PER_COMBINATION_COLUMNS)
    written.append("per_combination.csv")

    with open(report_dir / "correlations.csv", "w", encoding="utf-8", newline="") as f:
        f.write("pair,pearson,spearman,n\n")
        for name in sorted(tables.correlations):
            rep = tables.correlations[name]
            if rep is None:
                f.write(f"{name},nan,nan,0\n")
            else:
                f.write(f"{name},{rep.pearson!r},{rep.spearman!r},{rep.n}\n")
    written.append("correlations.csv")

    if with_labels:
        fig2c = [
            {
                "val_loss": row["val_loss"],
                "silhouette": row["silhouette"],
                "mean_abs_skew": row["mean_abs_skew"],
                "mean_excess_kurtosis": row["mean_excess_kurtosis"],
                "color": row["variant"],
            }
            for row in tables.per_model
        ]
        _write_table(report_dir / "fig2c.csv", fig2c,
                     ["val_loss", "silhouette", "mean_abs_skew", "mean_excess_kurtosis", "color"])
        written.append("fig2c.csv")

        fig3 = [
            {
                "val_loss": row["val_loss"],
                "val_nl": row["val_nl"],
                "silhouette": row["silhouette"],
                "color": row["variant"],
            }
            for row in tables.per_model
        ]
        _write_table(report_dir / "fig3_row.csv", fig3, ["val_loss", "val_nl", "silhouette", "color"])
        written.append("fig3_row.csv")

    fig4 = [
        {
            "mean_val_loss": row["mean_val_loss"],
            "mean_val_nl": row["mean_val_nl"],
            "mean_encoding_distance": row["mean_encoding_distance"],
            "color": row["combo_index"],
        }
        for row in tables.per_combination
    ]
    _write_table(report_dir / "fig4.csv", fig4,
                 ["mean_val_loss", "mean_val_nl", "mean_encoding_distance", "color"])
    written.append("fig4.csv")

    info = [f"{k} = {format_value(v)}" for k, v in sorted(tables.flags.items())]
    (report_dir / "report_info.txt").write_text("\n".join(info) + "\n", encoding="utf-8")
    written.append("report_info.txt")
    return written


def write_topk_encodings(records, test_series: SeriesMatrix, out_dir, report_dir, k: int, criterion: str) -> list:
    """Encode the test segment with the k best models and write one CSV each."""
    chosen = select_model(records, criterion, k)
    report_dir = Path(report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for rank, record in enumerate(chosen, start=1):
        enc = _load_encoding(record, test_series, out_dir)
        name = f"top{rank:02d}_{record.run_id}.csv"
        save_encoding_csv(enc, report_dir / name)
        written.append(name)
    return written


# ---------------------------------------------------------------------------
# built-in grids

# desk grids finish in minutes on a laptop core; paper grids match the
# published ensemble sizes (axis values reconstruct the stated ranges)
BUILTIN_GRIDS = {
    "desk-spiral-tn": {
        "variant": ["time_neighbor"],
        "n_layers": [2],
        "hidden_width": [50, 200],
        "latent_dim": [2],
        "beta": [1e-4, 1e-3],
        "batch_size": [128],
        "lr": [1e-4, 1e-3],
        "seeds": [1, 2, 3],
        "epochs": 200,
        "val_fraction": 0.2,
        "test_fraction": 0.15,
    },
    "desk-clusters-tn": {
        "variant": ["time_neighbor"],
        "n_layers": [2],
        "hidden_width": [50, 200],
        "latent_dim": [2],
        "beta": [1e-4, 1e-3],
        "batch_size": [2048],
        "lr": [1e-4, 1e-3],
        "seeds": [1, 2, 3],
        "epochs": 200,
        "val_fraction": 0.2,
        "test_fraction": 0.15,
    },
    "paper-spiral": {
        "variant": ["standard", "time_neighbor"],
        "n_layers": [2, 3, 4],
        "hidden_width": [50, 100, 200, 400],
        "latent_dim": [2],
        "beta": [1e-4, 1e-3],
        "batch_size": [128, 1024],
        "lr": [1e-5, 1e-4, 1e-3],
        "seeds": [1, 2, 3, 4, 5],
        "epochs": 500,
        "val_fraction": 0.2,
        "test_fraction": 0.15,
    },
    "paper-clusters": {
        "variant": ["standard", "time_neighbor"],
        "n_layers": [2, 3, 4],
        "hidden_width": [50, 150, 400],
        "latent_dim": [2],
        "beta": [1e-4, 3e-4, 1e-3],
        "batch_size": [2048, 8192],
        "lr": [1e-5, 1e-3],
        "seeds": [1, 2, 3],
        "epochs": 500,
        "val_fraction": 0.2,
        "test_fraction": 0.15,
    },
}
BUILTIN_GRIDS["desk-spiral-std"] = dict(BUILTIN_GRIDS["desk-spiral-tn"], variant=["standard"])
BUILTIN_GRIDS["desk-clusters-std"] = dict(BUILTIN_GRIDS["desk-clusters-tn"], variant=["standard"])
