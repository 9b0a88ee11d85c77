"""Dense linear algebra, statistics and ranking metrics.

Everything here is a pure function of its inputs.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DomainError, NumericalError, ShapeError

ENTROPY_BINS = 16
ENTROPY_RANGE = (0.0, 1.0)


@dataclass(frozen=True)
class ScoredLabels:
    """Anomaly scores with parallel ground-truth tags (1 = anomaly, 0 = normal)."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64).ravel()
        labels = np.asarray(self.labels).ravel().astype(np.int64)
        if scores.shape != labels.shape:
            raise ShapeError(f"{scores.size} scores but {labels.size} labels")
        if not np.all(np.isin(labels, (0, 1))):
            raise DomainError("labels must be 0 (normal) or 1 (anomaly)")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.scores.size


def _as_scored(scores, labels=None):
    if isinstance(scores, ScoredLabels):
        s = scores
    else:
        s = ScoredLabels(scores, labels)
    n_pos = int(s.labels.sum())
    if n_pos == 0 or n_pos == len(s):
        raise DomainError("both normal and anomaly labels are required")
    if not np.all(np.isfinite(s.scores)):
        raise DomainError("scores must be finite")
    return s


def cosine_sim(a, b):
    """Cosine similarity of two vectors."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.size} vs {b.size}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DomainError("cosine similarity is undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def ridge_solve(A, b, eps=0.0):
    """Solve ``(A + eps*I) x = b`` for a symmetric PSD matrix ``A``."""
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"A must be square, got shape {A.shape}")
    if b.shape[0] != A.shape[0]:
        raise ShapeError(f"b has {b.shape[0]} rows, A has {A.shape[0]}")
    if eps < 0:
        raise DomainError("eps must be non-negative")
    reg = A + eps * np.eye(A.shape[0])
    try:
        x = np.linalg.solve(reg, b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"regularized solve failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise NumericalError("regularized solve produced non-finite values")
    return x


def histogram_entropy(values, bins=ENTROPY_BINS, range=ENTROPY_RANGE):
    """Shannon entropy in bits of the binned value distribution.

    Values outside ``range`` are clipped onto its edges.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise DomainError("entropy of an empty sample is undefined")
    if bins < 2:
        raise DomainError("bins must be at least 2")
    lo, hi = range
    if not lo < hi:
        raise DomainError("range must satisfy lo < hi")
    counts, _ = np.histogram(np.clip(values, lo, hi), bins=bins, range=(lo, hi))
    p = counts[counts > 0] / values.size
    return float(max(0.0, -np.sum(p * np.log2(p))))


def _double_centered(X):
    d = np.sqrt(np.maximum(
        np.sum(X * X, axis=1)[:, None] + np.sum(X * X, axis=1)[None, :] - 2.0 * X @ X.T,
        0.0,
    ))
    np.fill_diagonal(d, 0.0)
    return d - d.mean(axis=0)[None, :] - d.mean(axis=1)[:, None] + d.mean()


def distance_correlation(X, Y):
    """Sample distance correlation between paired observations.

    Rows are observations; ``X`` and ``Y`` may have different column counts.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    X = X.reshape(X.shape[0], -1)
    Y = Y.reshape(Y.shape[0], -1)
    if X.shape[0] != Y.shape[0]:
        raise ShapeError(f"row counts differ: {X.shape[0]} vs {Y.shape[0]}")
    if X.shape[0] < 4:
        raise DomainError("distance correlation needs at least 4 observations")
    # centering first keeps the Gram-based distances accurate
    A = _double_centered(X - X.mean(axis=0))
    B = _double_centered(Y - Y.mean(axis=0))
    dcov2_xy = np.mean(A * B)
    dvar_x = np.mean(A * A)
    dvar_y = np.mean(B * B)
    if dvar_x <= 0.0 or dvar_y <= 0.0:
        return 0.0
    r2 = max(dcov2_xy, 0.0) / np.sqrt(dvar_x * dvar_y)
    return float(np.clip(np.sqrt(r2), 0.0, 1.0))


def auroc(scores, labels=None):
    """Area under the ROC curve, anomaly as the positive class.

    Ties between an anomaly and a normal count one half (Mann-Whitney).
    """
    s = _as_scored(scores, labels)
    ranks = rankdata(s.scores, method="average")
    pos = s.labels == 1
    n_pos = int(pos.sum())
    n_neg = len(s) - n_pos
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(scores, labels=None):
    """Area under the precision-recall curve with step-wise interpolation.

    Equivalent to average precision: sum over distinct thresholds of
    ``(R_k - R_{k-1}) * P_k``, tied scores entering together.
    """
    s = _as_scored(scores, labels)
    order = np.argsort(-s.scores, kind="mergesort")
    sorted_scores = s.scores[order]
    sorted_labels = s.labels[order]
    tp = np.cumsum(sorted_labels)
    # last index of each block of tied scores
    ends = np.r_[np.flatnonzero(np.diff(sorted_scores)), sorted_scores.size - 1]
    tp = tp[ends]
    predicted = ends + 1
    precision = tp / predicted
    recall = tp / tp[-1]
    recall_prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - recall_prev) * precision))


def _inertia(points, assignments, centroids):
    diff = points - centroids[assignments]
    return float(np.sum(diff * diff))


def _plusplus_init(X, K, rng):
    chosen = [int(rng.integers(X.shape[0]))]
    d2 = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    for _ in range(1, K):
        weights = d2.copy()
        weights[chosen] = 0.0
        total = weights.sum()
        if total > 0:
            nxt = int(rng.choice(X.shape[0], p=weights / total))
        else:
            # duplicates only: any unused index keeps the points distinct by index
            nxt = int(rng.choice(np.setdiff1d(np.arange(X.shape[0]), chosen)))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((X - X[nxt]) ** 2, axis=1))
    return np.array(chosen)


def kmeans(points, K, seed=0, max_iter=100, *, return_inertia=False):
    """Seeded Lloyd's algorithm.

    Initial centroids are ``K`` distinct points drawn with ``seed`` by
    D²-weighted sampling (k-means++). A cluster that empties is re-seeded
    with the point farthest from its centroid.

    Returns
    -------
    assignments : ndarray of int, shape (n,)
    centroids : ndarray, shape (K, d)
    inertia : list of float
        Only when ``return_inertia``; within-cluster sum of squares after each
        iteration.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("points must be a 2-D matrix")
    n = X.shape[0]
    K = int(K)
    if K < 1:
        raise DomainError("K must be at least 1")
    if K > n:
        raise DomainError(f"K={K} exceeds the number of points ({n})")
    rng = np.random.default_rng(seed)
    centroids = X[_plusplus_init(X, K, rng)].copy()
    assignments = np.full(n, -1, dtype=np.int64)
    history = []
    x_sq = np.sum(X * X, axis=1)
    for _ in range(max(int(max_iter), 1)):
        d2 = x_sq[:, None] - 2.0 * X @ centroids.T + np.sum(centroids * centroids, axis=1)[None, :]
        new = np.argmin(d2, axis=1)
        counts = np.bincount(new, minlength=K)
        for k in np.flatnonzero(counts == 0):
            own = np.sum((X - centroids[new]) ** 2, axis=1)
            # only steal from clusters that keep at least one member
            own[counts[new] <= 1] = -1.0
            far = int(np.argmax(own))
            counts[new[far]] -= 1
            new[far] = k
            counts[k] = 1
        centroids = np.stack([X[new == k].mean(axis=0) for k in range(K)])
        history.append(_inertia(X, new, centroids))
        if np.array_equal(new, assignments):
            break
        assignments = new
    if return_inertia:
        return assignments, centroids, history
    return assignments, centroids
