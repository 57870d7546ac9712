"""
Statistical primitives: Pearson correlation and its t-test, a joint-resampling
bootstrap for comparing dependent absolute correlations, the Kruskal-Wallis
H test, and the covariance mean-absolute-error used as a fitting objective.

Tail probabilities go through the regularized incomplete gamma / beta
functions rather than distribution objects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special


class UndefinedCorrelationError(ValueError):
    pass


class BootstrapError(RuntimeError):
    pass


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D vectors of equal length")
    if x.size < 3:
        raise UndefinedCorrelationError("need at least 3 observations")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = xc @ xc
    syy = yc @ yc
    if sxx <= 0 or syy <= 0:
        raise UndefinedCorrelationError("zero variance")
    r = (xc @ yc) / np.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


def correlation_block(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pearson correlations between every column of ``a`` and every column of ``b``."""
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    na = np.sqrt(np.sum(a * a, axis=0))
    nb = np.sqrt(np.sum(b * b, axis=0))
    if np.any(na == 0) or np.any(nb == 0):
        raise UndefinedCorrelationError("zero variance column")
    return np.clip((a.T @ b) / np.outer(na, nb), -1.0, 1.0)


def t_two_sided_p(t: float, df: float) -> float:
    """Two-sided Student-t tail probability via the regularized incomplete beta."""
    if not np.isfinite(t):
        return 0.0
    return float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))


def chi2_sf(x: float, df: float) -> float:
    """Chi-square upper tail via the regularized upper incomplete gamma."""
    if x <= 0:
        return 1.0
    return float(special.gammaincc(df / 2.0, x / 2.0))


def pearson_t(r: float, n: int) -> float:
    if abs(r) >= 1.0:
        return np.inf
    return r * np.sqrt((n - 2) / (1.0 - r * r))


def pearson_p(r: float, n: int) -> float:
    return t_two_sided_p(pearson_t(r, n), n - 2)


def pearson_significant(x, y, alpha: float = 0.05) -> bool:
    """Two-tailed t-test of a Pearson correlation; |r| = 1 counts as significant."""
    x = np.asarray(x, dtype=float)
    if x.size < 4:
        raise ValueError("need at least 4 observations")
    r = pearson(x, y)
    return pearson_p(r, x.size) < alpha


@dataclass(frozen=True)
class ComparisonResult:
    significant: bool
    proportion_positive: float
    observed_difference: float


def resample_counts(rng: np.random.Generator, n: int, n_boot: int) -> np.ndarray:
    """``n_boot x n`` matrix of bootstrap multiplicities (rows sum to ``n``)."""
    idx = rng.integers(0, n, size=(n_boot, n))
    idx += (np.arange(n_boot) * n)[:, None]
    return np.bincount(idx.ravel(), minlength=n_boot * n).reshape(n_boot, n).astype(float)


def bootstrap_abs_correlations(a, b, counts, min_var=1e-12):
    """|r| between columns of ``a`` and ``b`` under each weighted resample.

    A resample is just a multiplicity vector over rows, so every moment needed
    for the correlations is one matrix product with ``counts``.

    Returns
    -------
    abs_r : ndarray, shape (n_boot, k, m)
    ok : bool ndarray, shape (n_boot,)
        False where some column had (near) zero variance in that resample.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n, k = a.shape
    m = b.shape[1]
    # centre on full-sample means and scale for numerical stability
    a = (a - a.mean(axis=0)) / np.where(a.std(axis=0) > 0, a.std(axis=0), 1.0)
    b = (b - b.mean(axis=0)) / np.where(b.std(axis=0) > 0, b.std(axis=0), 1.0)
    cross = (a[:, :, None] * b[:, None, :]).reshape(n, k * m)
    design = np.concatenate([a, b, a * a, b * b, cross], axis=1)
    moments = counts @ design / n
    sa = moments[:, :k]
    sb = moments[:, k:k + m]
    saa = moments[:, k + m:2 * k + m]
    sbb = moments[:, 2 * k + m:2 * k + 2 * m]
    sab = moments[:, 2 * k + 2 * m:].reshape(-1, k, m)
    va = saa - sa * sa
    vb = sbb - sb * sb
    ok = np.all(va > min_var, axis=1) & np.all(vb > min_var, axis=1)
    va = np.where(va > min_var, va, 1.0)
    vb = np.where(vb > min_var, vb, 1.0)
    cov = sab - sa[:, :, None] * sb[:, None, :]
    r = cov / np.sqrt(va[:, :, None] * vb[:, None, :])
    return np.minimum(np.abs(r), 1.0), ok


def draw_valid_counts(rng, a, b, n_boot, max_redraws=10):
    """Draw resamples, redrawing any resample in which a column is constant."""
    n = a.shape[0]
    counts = resample_counts(rng, n, n_boot)
    abs_r, ok = bootstrap_abs_correlations(a, b, counts)
    for _ in range(max_redraws):
        if ok.all():
            return abs_r
        bad = np.flatnonzero(~ok)
        fresh = resample_counts(rng, n, bad.size)
        counts[bad] = fresh
        abs_r[bad], ok[bad] = bootstrap_abs_correlations(a, b, fresh)
    if not ok.all():
        raise BootstrapError(f"{np.count_nonzero(~ok)} resamples still degenerate after {max_redraws} redraws")
    return abs_r


def compare_dependent_abs_correlations(u1, v1, u2, v2, n_boot=500, alpha=0.05, rng=None):
    """One-tailed bootstrap test that |r(u1, v1)| exceeds |r(u2, v2)|.

    Rows are resampled jointly across all four vectors; the difference is
    significant when at least ``1 - alpha`` of resampled differences are
    strictly positive.
    """
    vecs = [np.asarray(v, dtype=float) for v in (u1, v1, u2, v2)]
    n = vecs[0].size
    if any(v.shape != (n,) for v in vecs):
        raise ValueError("all four vectors must share one length")
    if n < 10:
        raise ValueError("need at least 10 observations")
    rng = np.random.default_rng(rng)
    observed = abs(pearson(vecs[0], vecs[1])) - abs(pearson(vecs[2], vecs[3]))

    a = np.column_stack([vecs[0], vecs[2]])
    b = np.column_stack([vecs[1], vecs[3]])
    abs_r = draw_valid_counts(rng, a, b, n_boot)
    d = abs_r[:, 0, 0] - abs_r[:, 1, 1]
    prop = float(np.count_nonzero(d > 0)) / n_boot
    return ComparisonResult(prop >= 1.0 - alpha, prop, float(observed))


def rankdata(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Average ranks (1-based) and the sizes of each tie group."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    boundaries = np.flatnonzero(np.diff(sorted_vals) != 0) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [values.size]])
    avg = (starts + ends + 1) / 2.0
    ranks = np.empty(values.size)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks, ends - starts


@dataclass(frozen=True)
class KruskalResult:
    H: float
    df: int
    p: float


def kruskal_wallis(groups) -> KruskalResult:
    """Kruskal-Wallis H with tie correction; p from the chi-square tail."""
    groups = [np.asarray(g, dtype=float).ravel() for g in groups]
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    if any(g.size == 0 for g in groups):
        raise ValueError("groups must be non-empty")
    sizes = np.array([g.size for g in groups])
    n_total = int(sizes.sum())
    if n_total < 3:
        raise ValueError("need at least 3 observations in total")
    df = len(groups) - 1
    ranks, ties = rankdata(np.concatenate(groups))
    correction = 1.0 - np.sum(ties**3 - ties) / (n_total**3 - n_total)
    if correction <= 0:
        return KruskalResult(0.0, df, 1.0)
    edges = np.concatenate([[0], np.cumsum(sizes)])
    rank_sums = np.array([ranks[edges[i]:edges[i + 1]].sum() for i in range(len(groups))])
    h = 12.0 / (n_total * (n_total + 1)) * np.sum(rank_sums**2 / sizes) - 3.0 * (n_total + 1)
    h = max(h / correction, 0.0)
    return KruskalResult(float(h), df, chi2_sf(h, df))


def covariance_mae(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))
