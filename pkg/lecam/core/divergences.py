"""Empirical divergences between sample sets and discrete distributions.

Sample sets are 2-d float arrays of shape ``(n, dim)``; 1-d input is read as
``n`` scalar points. Discrete distributions are 1-d probability vectors over a
shared finite support.
"""

import logging
from collections.abc import Callable, Sequence

import numpy as np
from scipy import integrate, stats
from scipy.spatial.distance import cdist, pdist

from lecam.errors import ValidationError

logger = logging.getLogger(__name__)

NORMALIZATION_TOL = 1e-9
MEDIAN_MAX_POINTS = 2000
# rows per Gram block; keeps n=5000 inputs well under a gigabyte
GRAM_BLOCK = 1024

ArrayLike = np.ndarray | Sequence[float] | Sequence[Sequence[float]]


def as_samples(points: ArrayLike, name: str = "sample set") -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be a list of vectors, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValidationError(f"{name} is empty")
    if arr.shape[1] == 0:
        raise ValidationError(f"{name} has zero-dimensional points")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def as_dist(probs: ArrayLike, name: str = "distribution") -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValidationError(f"{name} must be a non-empty probability vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValidationError(f"{name} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > NORMALIZATION_TOL:
        raise ValidationError(f"{name} sums to {p.sum():.12f}, expected 1")
    return p


def check_bandwidth(bw: float) -> float:
    bw = float(bw)
    if not np.isfinite(bw) or bw <= 0:
        raise ValidationError(f"Bandwidth must be positive, got {bw}")
    return bw


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[1] != b.shape[1]:
        raise ValidationError(f"Dimension mismatch: {a.shape[1]} vs {b.shape[1]}")


def tv_discrete(p: ArrayLike, q: ArrayLike) -> float:
    """Total variation as the supremum over events, i.e. half the L1 distance."""
    p = as_dist(p, "p")
    q = as_dist(q, "q")
    if p.shape != q.shape:
        raise ValidationError(f"Support sizes differ: {p.size} vs {q.size}")
    return float(min(1.0, 0.5 * np.abs(p - q).sum()))


def tv_continuous(p_pdf: Callable[[np.ndarray], np.ndarray], q_pdf: Callable[[np.ndarray], np.ndarray],
                  scale: float, points: int = 20001) -> float:
    """Half the integrated absolute density difference of two 1-d densities.

    Integrates on the grid [-12 scale, 12 scale] with the trapezoid rule.
    """
    if scale <= 0:
        raise ValidationError(f"Integration scale must be positive, got {scale}")
    if points < 20001:
        raise ValidationError(f"At least 20001 grid points are required, got {points}")
    grid = np.linspace(-12.0 * scale, 12.0 * scale, points)
    diff = np.abs(np.asarray(p_pdf(grid), dtype=float) - np.asarray(q_pdf(grid), dtype=float))
    return float(0.5 * integrate.trapezoid(diff, grid))


def gaussian_kernel(x: ArrayLike, y: ArrayLike, bw: float) -> float:
    bw = check_bandwidth(bw)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValidationError(f"Dimension mismatch: {x.shape} vs {y.shape}")
    return float(np.exp(-np.sum((x - y) ** 2) / (2.0 * bw**2)))


def gaussian_gram(a: np.ndarray, b: np.ndarray, bw: float) -> np.ndarray:
    return np.exp(-cdist(a, b, "sqeuclidean") / (2.0 * bw**2))


def _kernel_sum(a: np.ndarray, b: np.ndarray, bw: float, same: bool = False) -> float:
    # Row-major block accumulation so results do not depend on thread count.
    total = 0.0
    for start in range(0, a.shape[0], GRAM_BLOCK):
        block = gaussian_gram(a[start:start + GRAM_BLOCK], b, bw)
        if same:
            rows = np.arange(block.shape[0])
            block[rows, rows + start] = 0.0
        total += float(block.sum())
    return total


def _canonical_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if (a.shape[0], a.tobytes()) <= (b.shape[0], b.tobytes()):
        return a, b
    return b, a


def mmd2_unbiased(a: ArrayLike, b: ArrayLike, bw: float) -> float:
    """Unbiased U-statistic estimate of the squared MMD; may be slightly negative."""
    a = as_samples(a, "a")
    b = as_samples(b, "b")
    bw = check_bandwidth(bw)
    _check_dims(a, b)
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValidationError("mmd2_unbiased needs at least 2 points in each set")
    a, b = _canonical_pair(a, b)
    n, m = a.shape[0], b.shape[0]
    kaa = _kernel_sum(a, a, bw, same=True) / (n * (n - 1))
    kbb = _kernel_sum(b, b, bw, same=True) / (m * (m - 1))
    kab = _kernel_sum(a, b, bw) / (n * m)
    return kaa + kbb - 2.0 * kab


def mmd2_linear(a: ArrayLike, b: ArrayLike, bw: float) -> float:
    """Linear-time MMD² over consecutive pairs ``(a[2i], a[2i+1])`` and ``(b[2i], b[2i+1])``."""
    a = as_samples(a, "a")
    b = as_samples(b, "b")
    bw = check_bandwidth(bw)
    _check_dims(a, b)
    if a.shape[0] != b.shape[0] or a.shape[0] % 2:
        raise ValidationError(f"mmd2_linear needs equal even sizes, got {a.shape[0]} and {b.shape[0]}")
    return float(np.mean(linear_terms(a, b, bw)))


def linear_terms(a: np.ndarray, b: np.ndarray, bw: float) -> np.ndarray:
    x1, x2 = a[0::2], a[1::2]
    y1, y2 = b[0::2], b[1::2]

    def k(u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return np.exp(-np.sum((u - v) ** 2, axis=1) / (2.0 * bw**2))

    return k(x1, x2) + k(y1, y2) - k(x1, y2) - k(x2, y1)


def median_heuristic(a: ArrayLike, b: ArrayLike, max_points: int = MEDIAN_MAX_POINTS, seed: int = 0) -> float:
    """Median pairwise Euclidean distance over the pooled set, 1.0 when degenerate."""
    pooled = np.vstack([as_samples(a, "a"), as_samples(b, "b")])
    if pooled.shape[0] < 2:
        raise ValidationError("median_heuristic needs at least 2 pooled points")
    if pooled.shape[0] > max_points:
        idx = np.random.default_rng(seed).choice(pooled.shape[0], size=max_points, replace=False)
        pooled = pooled[np.sort(idx)]
    med = float(np.median(pdist(pooled, "euclidean")))
    if not med > 0:
        logger.debug("Median pairwise distance is 0; falling back to bandwidth 1.0")
        return 1.0
    return med


def _paired_vectors(x: ArrayLike, y: ArrayLike) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise ValidationError(f"Length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValidationError("Correlation needs at least 2 observations")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValidationError("Correlation inputs contain non-finite values")
    return x, y


def pearson_correlation(x: ArrayLike, y: ArrayLike) -> float:
    x, y = _paired_vectors(x, y)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValidationError("Correlation is undefined for zero-variance input")
    r = stats.pearsonr(x, y).statistic
    return float(np.clip(r, -1.0, 1.0))


def spearman_rank_correlation(x: ArrayLike, y: ArrayLike) -> float:
    """Pearson correlation of average ranks."""
    x, y = _paired_vectors(x, y)
    return pearson_correlation(stats.rankdata(x), stats.rankdata(y))
