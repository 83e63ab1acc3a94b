"""Synthetic time-series generators and CSV ingestion.

All datasets travel as a SeriesMatrix: rows in time order, one feature per
column, optional integer ground-truth labels. Generators are pure functions
of their config, so identical configs reproduce identical matrices bit for
bit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, UsageError
from .rng import RngStream

# embedding weights come from their own seed so that noise-level studies
# share a single manifold
DEFAULT_EMBED_SEED = 7041776
# default HMM cluster geometry is drawn once from this fixed seed
_HMM_PARAM_SEED = 1861

SEGMENT_LABEL_SIZE = 100


@dataclass
class SeriesMatrix:
    """Time-ordered N x D feature matrix with optional per-row labels."""

    values: np.ndarray
    labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 2:
            raise DataError("series needs at least 2 rows of features")
        if not np.isfinite(self.values).all():
            bad = np.argwhere(~np.isfinite(self.values))[0]
            raise DataError(f"non-finite value at row {bad[0]}, column {bad[1]}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.values.shape[0],):
                raise DataError("labels must have one entry per row")

    @property
    def n_points(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# spiral generator


@dataclass
class SpiralConfig:
    n_points: int
    turns: float = 3.0
    noise_sigma: float = 0.2
    embed_dim: int = 31
    seed: int = 0
    embed_seed: int = DEFAULT_EMBED_SEED

    def validate(self):
        if self.n_points < 2 * SEGMENT_LABEL_SIZE:
            raise ConfigError(f"n_points must be at least {2 * SEGMENT_LABEL_SIZE}")
        if self.turns <= 0:
            raise ConfigError("turns must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if self.embed_dim < 2:
            raise ConfigError("embed_dim must be at least 2")


def spiral_arc_length(theta):
    """Arc length of the unit Archimedean spiral r = theta from 0 to theta."""
    theta = np.asarray(theta, dtype=np.float64)
    return 0.5 * (theta * np.sqrt(1.0 + theta**2) + np.arcsinh(theta))


def _invert_arc_length(s: np.ndarray, tol=1e-10, max_iter=100) -> np.ndarray:
    """Newton inversion of spiral_arc_length, vectorized over targets."""
    theta = np.sqrt(2.0 * s)  # s ~ theta^2 / 2 for large theta
    for _ in range(max_iter):
        resid = spiral_arc_length(theta) - s
        theta = theta - resid / np.sqrt(1.0 + theta**2)
        theta = np.maximum(theta, 0.0)
        if np.max(np.abs(resid)) < tol:
            break
    return theta


def spiral_embedding_map(cfg: SpiralConfig) -> dict:
    """Fixed nonlinear 2 -> embed_dim map: affine, tanh, affine."""
    rng = RngStream(cfg.embed_seed).substream("spiral-embed")
    d = cfg.embed_dim
    return {
        "w1": rng.standard_normal((d, 2)) / np.sqrt(2.0),
        "b1": 0.1 * rng.standard_normal(d),
        "w2": rng.standard_normal((d, d)) / np.sqrt(d),
        "b2": 0.1 * rng.standard_normal(d),
    }


def embed_spiral_coords(coords: np.ndarray, emb: dict) -> np.ndarray:
    """Apply the nonlinear embedding to standardized 2-D coordinates."""
    h = np.tanh(coords @ emb["w1"].T + emb["b1"])
    return h @ emb["w2"].T + emb["b2"]


def standardize_coords(coords: np.ndarray) -> np.ndarray:
    return (coords - coords.mean(axis=0)) / coords.std(axis=0)


def gen_spiral(cfg: SpiralConfig):
    """2-D spiral, sampled uniformly in arc length, embedded in embed_dim.

    Returns (series, ground_truth) where ground_truth holds the hidden 2-D
    coordinates. Labels group each 100 consecutive points into one segment.
    Noise std is noise_sigma times the per-coordinate std of the clean
    embedded cloud.
    """
    cfg.validate()
    theta_max = cfg.turns * 2.0 * math.pi
    s = np.linspace(0.0, float(spiral_arc_length(theta_max)), cfg.n_points)
    theta = _invert_arc_length(s)
    coords = np.stack([theta * np.cos(theta), theta * np.sin(theta)], axis=1)

    emb = spiral_embedding_map(cfg)
    clean = embed_spiral_coords(standardize_coords(coords), emb)

    values = clean
    if cfg.noise_sigma > 0:
        noise_rng = RngStream(cfg.seed).substream("spiral-noise")
        scale = cfg.noise_sigma * clean.std(axis=0)
        values = clean + noise_rng.standard_normal(clean.shape) * scale

    labels = np.arange(cfg.n_points) // SEGMENT_LABEL_SIZE
    meta = {
        "name": "spiral",
        "seed": cfg.seed,
        "noise_sigma": cfg.noise_sigma,
        "turns": cfg.turns,
        "embed_dim": cfg.embed_dim,
        "embed_seed": cfg.embed_seed,
    }
    return SeriesMatrix(values, labels, meta), coords


# ---------------------------------------------------------------------------
# HMM / Gaussian-cluster generator


@dataclass
class HmmConfig:
    n_points: int
    seed: int
    transition: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def validate(self):
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        if self.n_points < 2:
            raise ConfigError("n_points must be at least 2")
        n = self.transition.shape[0]
        if self.transition.shape != (n, n) or n < 1:
            raise ConfigError("transition matrix must be square")
        if np.any(self.transition < 0) or np.max(np.abs(self.transition.sum(axis=1) - 1.0)) > 1e-12:
            raise ConfigError("transition rows must be non-negative and sum to 1")
        if self.means.shape[0] != n or self.variances.shape != self.means.shape:
            raise ConfigError("means/variances must be (n_states, dim)")
        if np.any(self.variances <= 0):
            raise ConfigError("variances must be positive")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]


def default_hmm_config(n_points: int, seed: int, n_states=3, dim=31) -> HmmConfig:
    """Stand-in cluster geometry: well separated but overlapping.

    Cluster means are drawn once from a fixed seed and scaled so the minimum
    pairwise mean distance is 3x the average within-cluster std. Slow states
    self-transition at 0.98, the fast one at 0.95.
    """
    if n_states != 3:
        raise ConfigError("default transition matrix is defined for 3 states")
    rng = RngStream(_HMM_PARAM_SEED).substream("hmm-params")
    means = rng.standard_normal((n_states, dim))
    variances = rng.uniform(0.5, 1.5, (n_states, dim))
    avg_std = float(np.mean(np.sqrt(variances)))
    dists = [
        np.linalg.norm(means[i] - means[j])
        for i in range(n_states)
        for j in range(i + 1, n_states)
    ]
    means = means * (3.0 * avg_std / min(dists))
    transition = np.array(
        [
            [0.98, 0.01, 0.01],
            [0.025, 0.95, 0.025],
            [0.01, 0.01, 0.98],
        ]
    )
    return HmmConfig(n_points, seed, transition, means, variances)


def gen_hmm(cfg: HmmConfig) -> SeriesMatrix:
    """Markov state sequence (uniform initial state) with per-state diagonal
    Gaussian emissions; labels carry the hidden states."""
    cfg.validate()
    rng = RngStream(cfg.seed).substream("hmm")
    n, k = cfg.n_points, cfg.n_states
    cum = np.cumsum(cfg.transition, axis=1)
    states = np.empty(n, dtype=np.int64)
    states[0] = rng.integers(k)
    u = rng.uniform(size=n - 1)
    for t in range(1, n):
        states[t] = np.searchsorted(cum[states[t - 1]], u[t - 1], side="right")
    noise = rng.standard_normal((n, cfg.means.shape[1]))
    values = cfg.means[states] + np.sqrt(cfg.variances[states]) * noise
    meta = {"name": "hmm", "seed": cfg.seed, "n_states": k}
    return SeriesMatrix(values, states, meta)


def shuffle_permutation(n: int, seed: int) -> np.ndarray:
    return RngStream(seed).substream("shuffle").permutation(n)


def shuffle_series(series: SeriesMatrix, seed: int) -> SeriesMatrix:
    """Seeded row permutation; destroys temporal structure, keeps labels."""
    perm = shuffle_permutation(series.n_points, seed)
    labels = series.labels[perm] if series.labels is not None else None
    meta = dict(series.meta, shuffled_seed=seed)
    return SeriesMatrix(series.values[perm], labels, meta)


# ---------------------------------------------------------------------------
# CSV ingestion


def save_csv(series: SeriesMatrix, path) -> None:
    """Header + one row per time step; floats via repr (round-trip exact)."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        cols = [f"f{j}" for j in range(series.dim)]
        if series.labels is not None:
            cols.append("label")
        f.write(",".join(cols) + "\n")
        for i in range(series.n_points):
            row = [repr(v) for v in series.values[i].tolist()]
            if series.labels is not None:
                row.append(str(int(series.labels[i])))
            f.write(",".join(row) + "\n")


def load_csv(path, has_labels=None) -> SeriesMatrix:
    """Parse a feature CSV. has_labels: True/False, or None to autodetect a
    trailing 'label' column from the header."""
    try:
        handle = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with handle as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if has_labels is None:
            has_labels = bool(header) and header[-1].strip() == "label"
        elif has_labels and (not header or header[-1].strip() != "label"):
            raise DataError(f"{path}: labels requested but no trailing 'label' column")
        width = len(header)
        if width < (2 if has_labels else 1):
            raise DataError(f"{path}: too few columns")
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width:
                raise DataError(f"{path}: line {lineno}: expected {width} cells, got {len(row)}")
            try:
                vals = [float(c) for c in (row[:-1] if has_labels else row)]
                if has_labels:
                    labels.append(int(row[-1]))
            except ValueError:
                raise DataError(f"{path}: line {lineno}: non-numeric cell") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}: line {lineno}: non-finite value")
            rows.append(vals)
        if len(rows) < 2:
            raise DataError(f"{path}: need at least 2 data rows")
    return SeriesMatrix(
        np.array(rows, dtype=np.float64),
        np.array(labels, dtype=np.int64) if has_labels else None,
        {"name": str(path)},
    )


# ---------------------------------------------------------------------------
# splits


@dataclass
class Splits:
    """Pair-index splits plus the reserved contiguous tail segment.

    A pair index t denotes the adjacent rows (t, t+1). The tail segment is
    kept in time order for neighbor-loss evaluation and test metrics; no
    training pair straddles its boundary.
    """

    series: SeriesMatrix
    train_pairs: np.ndarray
    val_pairs: np.ndarray
    test_start: int

    def test_series(self) -> SeriesMatrix:
        labels = None
        if self.series.labels is not None:
            labels = self.series.labels[self.test_start :]
        meta = dict(self.series.meta, segment="test", test_start=self.test_start)
        return SeriesMatrix(self.series.values[self.test_start :], labels, meta)


def test_segment_start(n: int, test_fraction: float) -> int:
    """First row of the reserved tail segment: the last ceil(f * N) rows."""
    return n - math.ceil(test_fraction * n)


def split_series(series: SeriesMatrix, seed: int, val_fraction: float, test_fraction: float) -> Splits:
    """Reserve the last ceil(test_fraction * N) rows as the ordered test
    segment, then shuffle the remaining adjacent pairs into train/val."""
    if not (0 < val_fraction < 1 and 0 < test_fraction < 1 and val_fraction + test_fraction < 1):
        raise UsageError("fractions must be positive and sum to less than 1")
    n = series.n_points
    n_nontest = test_segment_start(n, test_fraction)
    n_test = n - n_nontest
    n_pairs = n_nontest - 1
    if n_test < 2 or n_pairs < 2:
        raise UsageError(f"series of {n} rows is too short for these fractions")
    perm = RngStream(seed).substream("split").permutation(n_pairs)
    n_val = int(round(val_fraction * n_pairs))
    n_val = min(max(n_val, 1), n_pairs - 1)
    val_pairs = np.sort(perm[:n_val])
    train_pairs = np.sort(perm[n_val:])
    return Splits(series, train_pairs, val_pairs, n_nontest)
