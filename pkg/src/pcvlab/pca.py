"""
Correlation-matrix PCA with Kaiser-Guttman retention and varimax/promax rotation.

Loadings follow the usual convention ``eigenvector * sqrt(eigenvalue)``, so the
unrotated loadings are correlations between standardized variables and
unit-variance component scores. Each eigenvector is sign-fixed so that its
largest-magnitude entry is positive.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .lvgen import Rotation


class DataError(ValueError):
    """Input matrix unsuitable for PCA (non-finite, constant column, too few rows)."""


class ZeroVarianceColumnError(DataError):
    def __init__(self, column: int):
        super().__init__(f"column {column} has zero variance")
        self.column = column


class RotationConvergenceError(RuntimeError):
    def __init__(self, iterations: int, delta: float):
        super().__init__(
            f"varimax did not converge after {iterations} iterations (relative criterion change {delta:.3g})"
        )
        self.iterations = iterations
        self.delta = delta


class NumericalDegeneracyError(RuntimeError):
    pass


@dataclass
class PcaModel:
    """A fitted PCA, optionally truncated and rotated.

    ``loadings`` holds the pattern matrix; for orthogonal solutions it is also
    the structure matrix. ``scores`` are unit-variance component scores.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    loadings: np.ndarray
    scores: np.ndarray
    variance_explained: np.ndarray
    k_retained: int
    rotation_applied: Rotation = Rotation.NONE
    structure: np.ndarray | None = None
    factor_correlation: np.ndarray | None = None
    # maps standardized data onto unit-variance scores: scores = z @ score_weights
    score_weights: np.ndarray | None = None
    mean: np.ndarray | None = field(default=None, repr=False)
    sd: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_components(self) -> int:
        return self.loadings.shape[1]

    @property
    def structure_loadings(self) -> np.ndarray:
        return self.loadings if self.structure is None else self.structure


def standardize(data: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Z-score columns (ddof=1). Returns ``(z, mean, sd)``."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise DataError(f"expected a 2-D matrix, got shape {data.shape}")
    if data.shape[0] < 3:
        raise DataError(f"need at least 3 rows, got {data.shape[0]}")
    if not np.all(np.isfinite(data)):
        r, c = np.argwhere(~np.isfinite(data))[0]
        raise DataError(f"non-finite entry at row {r}, column {c}")
    mean = data.mean(axis=0)
    centered = data - mean
    sd = centered.std(axis=0, ddof=1)
    scale = np.abs(data).max(axis=0)
    bad = np.flatnonzero(sd <= 1e-12 * np.maximum(scale, 1e-300))
    if bad.size:
        raise ZeroVarianceColumnError(int(bad[0]))
    return centered / sd, mean, sd


def correlation_matrix(data: np.ndarray) -> np.ndarray:
    z, _, _ = standardize(data)
    r = z.T @ z / (z.shape[0] - 1)
    r = (r + r.T) / 2
    np.fill_diagonal(r, 1.0)
    return r


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def eigen_correlation(r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Descending eigenvalues and sign-fixed eigenvectors of a correlation matrix."""
    values, vectors = np.linalg.eigh(r)
    order = np.argsort(values)[::-1]
    return values[order], _fix_signs(vectors[:, order])


def kaiser_guttman_count(eigenvalues, cap: int | None = None) -> int:
    """Number of eigenvalues strictly greater than 1, optionally capped."""
    k = int(np.count_nonzero(np.asarray(eigenvalues) > 1.0))
    return k if cap is None else min(k, int(cap))


def fit_pca(data: np.ndarray) -> PcaModel:
    """Unrotated PCA of the correlation matrix, all ``p`` components kept.

    ``k_retained`` records the Kaiser-Guttman count (eigenvalues strictly > 1)
    but nothing is truncated yet; see :func:`retain_kaiser_guttman`.
    """
    z, mean, sd = standardize(data)
    r = z.T @ z / (z.shape[0] - 1)
    r = (r + r.T) / 2
    np.fill_diagonal(r, 1.0)
    values, vectors = eigen_correlation(r)
    p = r.shape[0]
    root = np.sqrt(np.clip(values, 0.0, None))
    inv_root = np.divide(1.0, root, out=np.zeros_like(root), where=root > 1e-12)
    weights = vectors * inv_root
    return PcaModel(
        eigenvalues=values,
        eigenvectors=vectors,
        loadings=vectors * root,
        scores=z @ weights,
        variance_explained=np.clip(values, 0.0, None) / p,
        k_retained=kaiser_guttman_count(values),
        score_weights=weights,
        mean=mean,
        sd=sd,
    )


def _truncate(model: PcaModel, k: int) -> PcaModel:
    return dataclasses.replace(
        model,
        loadings=model.loadings[:, :k],
        scores=model.scores[:, :k],
        variance_explained=model.variance_explained[:k],
        score_weights=None if model.score_weights is None else model.score_weights[:, :k],
    )


def retain_kaiser_guttman(model: PcaModel, cap: int | None = None) -> PcaModel:
    """Keep the leading ``min(k_retained, cap)`` components (``cap=None`` means no cap)."""
    k = model.k_retained if cap is None else min(model.k_retained, int(cap))
    return _truncate(model, k)


def varimax_criterion(loadings: np.ndarray) -> float:
    """Raw varimax criterion: summed column variances of squared loadings."""
    sq = np.asarray(loadings) ** 2
    return float(np.sum(np.mean(sq**2, axis=0) - np.mean(sq, axis=0) ** 2))


def _varimax_value_grad(y):
    # negated raw varimax criterion and its gradient in the loadings
    p = y.shape[0]
    sq = y * y
    f = -float(np.sum(np.mean(sq * sq, axis=0) - np.mean(sq, axis=0) ** 2))
    return f, -(4.0 / p) * y * (sq - sq.mean(axis=0))


def _varimax_svd(x, tol, max_iter):
    # classic fixed-point iteration; returns (last rotation, relative change, converged)
    p, k = x.shape
    rot = np.eye(k)
    crit = 0.0
    delta = np.inf
    for _ in range(max_iter):
        y = x @ rot
        grad = x.T @ (y**3 - y * (np.sum(y**2, axis=0) / p))
        u, s, vt = np.linalg.svd(grad)
        rot = u @ vt
        new_crit = float(np.sum(s))
        delta = abs(new_crit - crit) / max(new_crit, 1e-300)
        crit = new_crit
        if delta < tol:
            return rot, delta, True
    return rot, delta, False


def _varimax_gpa(x, rot, tol, max_iter):
    # gradient projection with a backtracking line search (monotone)
    f, gq = _varimax_value_grad(x @ rot)
    grad = x.T @ gq
    step = 1.0
    delta = np.inf
    for it in range(1, max_iter + 1):
        m = rot.T @ grad
        proj = grad - rot @ ((m + m.T) / 2.0)
        norm = float(np.linalg.norm(proj))
        if norm < tol or (delta < tol and norm < 1e-5):
            return rot, delta, it
        step *= 2.0
        for _ in range(40):
            u, _, vt = np.linalg.svd(rot - step * proj)
            cand = u @ vt
            f_cand, gq_cand = _varimax_value_grad(x @ cand)
            if f_cand < f - 0.5 * norm * norm * step:
                break
            step /= 2.0
        else:
            # no representable improvement left
            return (rot if norm < 1e-5 else None), delta, it
        delta = abs(f_cand - f) / max(abs(f_cand), 1e-300)
        rot, f, grad = cand, f_cand, x.T @ gq_cand
    return None, delta, max_iter


def rotate_varimax(loadings, normalize=True, tol=1e-10, max_iter=10_000):
    """Varimax rotation with optional Kaiser row normalization.

    Uses the standard SVD fixed-point iteration. That iteration can lock into
    a slow two-cycle; when it has not converged after ``max_iter`` steps, a
    monotone gradient-projection search takes over from the last iterate.

    Returns ``(rotated_loadings, rotation_matrix)`` where
    ``rotated = loadings @ rotation_matrix``.
    """
    loadings = np.asarray(loadings, dtype=float)
    p, k = loadings.shape
    if k < 2:
        return loadings.copy(), np.eye(k)

    if normalize:
        h = np.sqrt(np.sum(loadings**2, axis=1))
        h_safe = np.where(h > 0, h, 1.0)
        x = loadings / h_safe[:, None]
    else:
        x = loadings

    rot, delta, converged = _varimax_svd(x, tol, max_iter)
    if not converged:
        rot, delta, used = _varimax_gpa(x, rot, tol, max_iter)
        if rot is None:
            raise RotationConvergenceError(max_iter + used, delta)

    return loadings @ rot, rot


def rotate_promax(loadings, power=4, normalize=True):
    """Promax oblique rotation.

    Returns ``(pattern, structure, factor_correlation, transform)`` with
    ``pattern = loadings @ transform`` and ``structure = pattern @ factor_correlation``.
    """
    loadings = np.asarray(loadings, dtype=float)
    k = loadings.shape[1]
    if k < 2:
        return loadings.copy(), loadings.copy(), np.eye(k), np.eye(k)

    vari, vrot = rotate_varimax(loadings, normalize=normalize)
    if normalize:
        h = np.sqrt(np.sum(vari**2, axis=1))
        h = np.where(h > 0, h, 1.0)
        x = vari / h[:, None]
    else:
        h = None
        x = vari
    target = x * np.abs(x) ** (power - 1)

    u, _, rank, _ = np.linalg.lstsq(x, target, rcond=None)
    if rank < k:
        raise NumericalDegeneracyError("varimax loadings are rank deficient; promax undefined")
    utu = u.T @ u
    if np.linalg.cond(utu) > 1e12:
        raise NumericalDegeneracyError("promax transformation is numerically singular")
    d = np.diag(np.linalg.inv(utu))
    u = u @ np.diag(np.sqrt(d))

    transform = vrot @ u
    pattern = loadings @ transform
    phi = np.linalg.inv(transform.T @ transform)
    phi = (phi + phi.T) / 2
    structure = pattern @ phi
    return pattern, structure, phi, transform


def rotate(model: PcaModel, method: Rotation | str, power: int = 4) -> PcaModel:
    """Rotate the retained loading block and recompute scores by the regression method."""
    method = Rotation(method)
    k = model.n_components
    if method is Rotation.NONE or k < 2:
        return dataclasses.replace(model, rotation_applied=method)

    p = model.loadings.shape[0]
    # standardized data -> unit-variance unrotated scores
    base_weights = model.score_weights[:, :k]
    if method is Rotation.VARIMAX:
        pattern, transform = rotate_varimax(model.loadings)
        structure, phi = pattern, np.eye(k)
    else:
        pattern, structure, phi, transform = rotate_promax(model.loadings, power=power)

    # regression scores z R^-1 S; with L = V sqrt(lambda), R^-1 L = V / sqrt(lambda)
    # and S = L T phi, so they follow from the unit-variance unrotated scores
    mix = transform @ phi
    raw = model.scores[:, :k] @ mix
    sd = raw.std(axis=0, ddof=1)
    sd = np.where(sd > 0, sd, 1.0)
    weights = base_weights @ mix / sd
    return dataclasses.replace(
        model,
        loadings=pattern,
        structure=None if method is Rotation.VARIMAX else structure,
        factor_correlation=phi,
        scores=raw / sd,
        score_weights=weights,
        variance_explained=np.sum(structure**2, axis=0) / p,
        rotation_applied=method,
    )



def component_scores(model: PcaModel, data: np.ndarray) -> np.ndarray:
    """Scores of ``data`` on the model's retained (possibly rotated) components.

    ``data`` is standardized with the fitting sample's means and SDs. On the
    fitting data this reproduces ``model.scores``.
    """
    data = np.asarray(data, dtype=float)
    p = model.loadings.shape[0]
    if data.ndim != 2 or data.shape[1] != p:
        raise ValueError(f"expected data with {p} columns, got shape {data.shape}")
    if model.score_weights is None or model.mean is None:
        raise ValueError("model carries no score weights")
    return (data - model.mean) / model.sd @ model.score_weights
