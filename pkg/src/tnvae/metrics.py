"""Representation-quality metrics for latent encodings.

Neighbor loss scores temporal smoothness of a latent trajectory; silhouette
scores separation of known clusters; the Procrustes encoding distance scores
agreement between two models' encodings of the same data. All functions are
pure and reentrant.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import stats
from scipy.spatial.distance import cdist

from .errors import DataError, DegenerateError, ShapeError, UsageError
from .rng import RngStream

SILHOUETTE_MAX_POINTS = 20000


@dataclass
class EncodingMatrix:
    """Latent rows z with their assigned (strictly increasing) time indices."""

    z: np.ndarray
    time_indices: np.ndarray
    source_model: str = ""

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        self.time_indices = np.asarray(self.time_indices, dtype=np.int64)
        if self.z.ndim != 2:
            raise ShapeError("encodings must be a 2-D matrix")
        if self.time_indices.shape != (self.z.shape[0],):
            raise ShapeError("need one time index per encoding row")
        if not np.isfinite(self.z).all():
            raise DataError("non-finite encoding values")
        if self.z.shape[0] > 1 and np.any(np.diff(self.time_indices) <= 0):
            raise UsageError("time indices must be strictly increasing")

    @property
    def n_points(self) -> int:
        return self.z.shape[0]

    @property
    def dim(self) -> int:
        return self.z.shape[1]


class NeighborLoss(NamedTuple):
    total: float
    per_pair: float
    n_pairs: int


def neighbor_loss(enc: EncodingMatrix) -> NeighborLoss:
    """Summed latent displacement across adjacent time steps, normalized by
    the mean latent norm.

    Pairs count only where time indices differ by exactly 1. `total` is the
    raw (length-dependent) sum used for model selection within one dataset;
    `per_pair` divides by the pair count for cross-dataset comparison.
    """
    if enc.n_points < 2:
        raise UsageError("need at least 2 encoding rows")
    adjacent = np.diff(enc.time_indices) == 1
    if not adjacent.any():
        raise UsageError("no temporally adjacent encoding pairs")
    z_bar = float(np.linalg.norm(enc.z, axis=1).mean())
    if z_bar == 0.0:
        raise DegenerateError("all encodings at the origin; neighbor loss undefined")
    steps = np.linalg.norm(np.diff(enc.z, axis=0), axis=1)[adjacent]
    total = float(steps.sum() / z_bar)
    return NeighborLoss(total, total / steps.size, int(steps.size))


def _mean_cluster_distances(points: np.ndarray, masks, chunk=4096) -> np.ndarray:
    """Mean Euclidean distance from every point to each cluster; distances
    via explicit differences (chunked) so translations cancel exactly."""
    n = points.shape[0]
    out = np.empty((n, len(masks)))
    for ci, m in enumerate(masks):
        members = points[m]
        for start in range(0, n, chunk):
            stop = min(start + chunk, n)
            out[start:stop, ci] = cdist(points[start:stop], members).mean(axis=1)
    return out


def silhouette_samples(points: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample silhouette values (b - a) / max(a, b), Euclidean metric.

    a: mean distance to own cluster (excluding self); b: mean distance to the
    nearest other cluster. Samples in singleton clusters get 0 by convention.
    """
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    if points.ndim != 2 or labels.shape != (points.shape[0],):
        raise ShapeError("points must be (n, d) with one label per row")
    uniq = np.unique(labels)
    if uniq.size < 2:
        raise UsageError("silhouette needs at least 2 clusters")
    n = points.shape[0]
    masks = [labels == u for u in uniq]
    sizes = np.array([m.sum() for m in masks])
    cluster_mean = _mean_cluster_distances(points, masks)
    s = np.zeros(n)
    for ci, m in enumerate(masks):
        if sizes[ci] < 2:
            continue  # singleton: s stays 0
        a = (cluster_mean[m, ci] * sizes[ci]) / (sizes[ci] - 1)  # exclude self
        other = np.delete(cluster_mean[m], ci, axis=1)
        b = other.min(axis=1)
        denom = np.maximum(a, b)
        vals = np.zeros_like(denom)
        np.divide(b - a, denom, out=vals, where=denom > 0)
        s[m] = vals
    return s


def silhouette(points: np.ndarray, labels: np.ndarray, max_points=SILHOUETTE_MAX_POINTS, seed=0) -> float:
    """Mean silhouette value. Above max_points rows, scores a seeded
    subsample (warned) to bound the O(N^2) distance matrix."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    if points.shape[0] > max_points:
        warnings.warn(
            f"silhouette subsampled to {max_points} of {points.shape[0]} rows",
            stacklevel=2,
        )
        keep = np.sort(RngStream(seed).substream("silhouette").permutation(points.shape[0])[:max_points])
        points, labels = points[keep], labels[keep]
    return float(silhouette_samples(points, labels).mean())


def procrustes_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Minimum squared Frobenius discrepancy between two point configurations
    over translation, uniform scaling, rotation, and reflection.

    Both matrices are centered and scaled to unit Frobenius norm; the optimal
    orthogonal map comes from the SVD of the cross-covariance, and with the
    optimal scale the disparity reduces to 1 - (sum of singular values)^2.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2 or a.shape[0] <= a.shape[1]:
        raise UsageError("need more rows than columns")
    a0 = a - a.mean(axis=0)
    b0 = b - b.mean(axis=0)
    na, nb = np.linalg.norm(a0), np.linalg.norm(b0)
    if na == 0.0 or nb == 0.0:
        raise DegenerateError("constant matrix has no shape to align")
    sv = np.linalg.svd((b0 / nb).T @ (a0 / na), compute_uv=False)
    return max(0.0, 1.0 - float(sv.sum()) ** 2)


def encoding_distance(enc_a: EncodingMatrix, enc_b: EncodingMatrix) -> float:
    """Procrustes disparity between two encodings of the same test rows."""
    if enc_a.dim != enc_b.dim:
        raise UsageError("encodings have different latent dimensions")
    if not np.array_equal(enc_a.time_indices, enc_b.time_indices):
        raise UsageError("encodings cover different time indices")
    return procrustes_distance(enc_a.z, enc_b.z)


@dataclass
class ClusterMoments:
    """Per-cluster standardized moments of a point cloud, per dimension."""

    skew: dict = field(default_factory=dict)
    excess_kurtosis: dict = field(default_factory=dict)
    mean_abs_skew: float = float("nan")
    mean_excess_kurtosis: float = float("nan")
    excluded: list = field(default_factory=list)


def cluster_moments(points: np.ndarray, labels: np.ndarray, min_cluster=8) -> ClusterMoments:
    """Skew and excess kurtosis per (cluster, dimension), plus dataset-level
    mean |skew| and mean excess kurtosis. Clusters smaller than min_cluster
    or with a degenerate variance are excluded and flagged."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    if points.ndim != 2 or labels.shape != (points.shape[0],):
        raise ShapeError("points must be (n, d) with one label per row")
    result = ClusterMoments()
    skews, kurts = [], []
    for u in np.unique(labels):
        pts = points[labels == u]
        if pts.shape[0] < min_cluster:
            result.excluded.append(u)
            continue
        centered = pts - pts.mean(axis=0)
        m2 = (centered**2).mean(axis=0)
        if np.any(m2 == 0.0):
            result.excluded.append(u)
            continue
        m3 = (centered**3).mean(axis=0)
        m4 = (centered**4).mean(axis=0)
        result.skew[u] = m3 / m2**1.5
        result.excess_kurtosis[u] = m4 / m2**2 - 3.0
        skews.append(result.skew[u])
        kurts.append(result.excess_kurtosis[u])
    if result.excluded:
        warnings.warn(f"clusters excluded from moments: {result.excluded}", stacklevel=2)
    if skews:
        result.mean_abs_skew = float(np.mean(np.abs(np.concatenate(skews))))
        result.mean_excess_kurtosis = float(np.mean(np.concatenate(kurts)))
    return result


def random_walk_loglik(enc: EncodingMatrix, sigma: float) -> float:
    """Log-likelihood of the latent trajectory under Gaussian steps of
    variance sigma:

        -(n/2) log(2 pi) - n log(sigma) - (1 / (2 sigma)) * sum ||z_{t+1} - z_t||^2

    over the n adjacent pairs. The constant terms follow the 2-D circular
    Gaussian convention for every latent dimension; only differences at
    fixed n and sigma are meaningful.
    """
    if sigma <= 0:
        raise UsageError("sigma must be positive")
    if enc.n_points < 2:
        raise UsageError("need at least 2 encoding rows")
    adjacent = np.diff(enc.time_indices) == 1
    if not adjacent.any():
        raise UsageError("no temporally adjacent encoding pairs")
    sq = np.sum(np.diff(enc.z, axis=0) ** 2, axis=1)[adjacent]
    n = sq.size
    return float(-(n / 2.0) * np.log(2.0 * np.pi) - n * np.log(sigma) - sq.sum() / (2.0 * sigma))


@dataclass
class CorrelationReport:
    pearson: float
    spearman: float
    n: int


def correlations(x, y) -> CorrelationReport:
    """Pearson on values and Spearman on average-ranked data (ties averaged).

    Without ties, Spearman uses the exact rank-difference formula, so perfect
    monotone relations report exactly +/-1.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError("x and y must be equal-length vectors")
    if x.size < 3:
        raise UsageError("need at least 3 samples")
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        raise DegenerateError("correlation undefined for a zero-variance vector")
    pearson = float(stats.pearsonr(x, y).statistic)
    n = x.size
    rx = stats.rankdata(x, method="average")
    ry = stats.rankdata(y, method="average")
    if np.unique(x).size == n and np.unique(y).size == n:
        d2 = float(np.sum((rx - ry) ** 2))
        spearman = 1.0 - 6.0 * d2 / (n * (n * n - 1))
    else:
        spearman = float(stats.pearsonr(rx, ry).statistic)
    return CorrelationReport(pearson, spearman, int(n))


def align_encoding_labels(enc: EncodingMatrix, labels: np.ndarray):
    """Match encoding rows to per-row labels of the encoded series.

    Rows whose assigned index falls outside the label range are dropped
    (the shifted final row of a next-step encoder has no source row).
    """
    labels = np.asarray(labels)
    keep = (enc.time_indices >= 0) & (enc.time_indices < labels.shape[0])
    if not keep.any():
        raise UsageError("no encoding rows align with the labeled range")
    return enc.z[keep], labels[enc.time_indices[keep]]


def save_encoding_csv(enc: EncodingMatrix, path) -> None:
    """time_index column plus one column per latent dimension."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(",".join(["time_index"] + [f"z{j}" for j in range(enc.dim)]) + "\n")
        for t, row in zip(enc.time_indices.tolist(), enc.z.tolist()):
            f.write(",".join([str(t)] + [repr(v) for v in row]) + "\n")


def load_encoding_csv(path, source_model="") -> EncodingMatrix:
    try:
        with open(path, encoding="utf-8", newline="") as f:
            lines = f.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not lines or not lines[0].startswith("time_index"):
        raise DataError(f"{path}: expected a time_index header")
    indices, rows = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        try:
            indices.append(int(cells[0]))
            rows.append([float(c) for c in cells[1:]])
        except ValueError:
            raise DataError(f"{path}: line {lineno}: non-numeric cell") from None
        if len(rows[-1]) != len(rows[0]):
            raise DataError(f"{path}: line {lineno}: ragged row")
    if not rows:
        raise DataError(f"{path}: no encoding rows")
    return EncodingMatrix(np.array(rows), np.array(indices), source_model)
