"""Feature-space metrics: Frechet distance, diversity, multimodality."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PSD_TOL = 1e-8


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if cov.shape != (mean.size, mean.size):
            raise MetricError(f"covariance shape {cov.shape} does not match mean {mean.shape}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise MetricError("covariance is not symmetric")
        if mean.size and np.linalg.eigvalsh(cov).min() < -PSD_TOL:
            raise MetricError("covariance is not positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def gaussian_stats(features) -> GaussianStats:
    """Mean and unbiased covariance of feature rows."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 2:
        raise MetricError("need a (n >= 2, d) feature matrix")
    cov = np.cov(f, rowvar=False, ddof=1).reshape(f.shape[1], f.shape[1])
    return GaussianStats(f.mean(axis=0), 0.5 * (cov + cov.T))


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def fid(a: GaussianStats, b: GaussianStats) -> float:
    """|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    tr (S_a S_b)^(1/2) is taken as the trace of the square root of the
    symmetric matrix S_a^(1/2) S_b S_a^(1/2), which has the same spectrum.
    """
    if a.dim != b.dim:
        raise MetricError(f"dimension mismatch: {a.dim} vs {b.dim}")
    ra = _psd_sqrt(a.cov)
    m = ra @ b.cov @ ra
    vals = np.linalg.eigvalsh(0.5 * (m + m.T))
    tr_sqrt = np.sum(np.sqrt(np.clip(vals, 0.0, None)))
    diff = a.mean - b.mean
    value = diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * tr_sqrt
    return float(max(value, 0.0))


def feature_fid(fa, fb) -> float:
    return fid(gaussian_stats(fa), gaussian_stats(fb))


def class_matched_fid(gen_features, gen_labels, real_features, real_labels) -> float:
    """Mean over classes of the FID between same-label generated and real features.

    Classes with fewer than two samples on either side are skipped.
    """
    gen_labels = np.asarray(gen_labels)
    real_labels = np.asarray(real_labels)
    classes = np.unique(real_labels)
    vals = []
    for c in classes:
        g = np.asarray(gen_features)[gen_labels == c]
        r = np.asarray(real_features)[real_labels == c]
        if len(g) >= 2 and len(r) >= 2:
            vals.append(feature_fid(g, r))
    if not vals:
        raise MetricError("no class has two or more samples on both sides")
    return float(np.mean(vals))


def _subset(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    # without replacement when the pool is big enough
    return rng.choice(n, size=size, replace=n < size)


def diversity(features, size: int, rng: np.random.Generator) -> float:
    """Mean distance between two independently drawn subsets, paired by position."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] == 0:
        raise MetricError("diversity of an empty feature set")
    if size < 1:
        raise MetricError("subset size must be positive")
    i = _subset(f.shape[0], size, rng)
    j = _subset(f.shape[0], size, rng)
    return float(np.mean(np.linalg.norm(f[i] - f[j], axis=1)))


def multimodality(features, labels, size: int, rng: np.random.Generator,
                  action_count: int | None = None) -> float:
    """Average within-class paired distance over classes."""
    f = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (f.shape[0],):
        raise MetricError("one label per feature row")
    C = action_count if action_count is not None else int(labels.max()) + 1
    if size < 1:
        raise MetricError("subset size must be positive")
    total = 0.0
    for c in range(C):
        pool = f[labels == c]
        if pool.shape[0] == 0:
            raise MetricError(f"class {c} has no samples")
        i = _subset(pool.shape[0], size, rng)
        j = _subset(pool.shape[0], size, rng)
        total += np.sum(np.linalg.norm(pool[i] - pool[j], axis=1))
    return float(total / (C * size))
