"""Per-cluster Gaussian model of normal features and Mahalanobis anomaly score."""

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, solve_triangular
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import numerics
from .errors import DomainError, NumericalError, ParseError, ShapeError, VersionError

BANK_MAGIC = b"CMGB"
BANK_VERSION = 1
DEFAULT_SHRINK_EPS = 1e-3


def shrunk_covariance(X, shrink_eps=DEFAULT_SHRINK_EPS):
    """Sample covariance (``n - 1`` denominator) plus ``shrink_eps * trace/d`` on the diagonal.

    A single row has zero sample covariance. When the trace is zero the ridge
    falls back to ``shrink_eps * I`` so the result stays invertible.
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if n > 1:
        C = X - X.mean(axis=0)
        cov = C.T @ C / (n - 1)
    else:
        cov = np.zeros((d, d))
    cov = 0.5 * (cov + cov.T)
    trace = np.trace(cov)
    ridge = shrink_eps * trace / d if trace > 0 else shrink_eps
    return cov + ridge * np.eye(d)


@dataclass
class GaussianBank:
    means: np.ndarray
    covariances: np.ndarray
    sizes: np.ndarray
    _chol: list = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.covariances = np.asarray(self.covariances, dtype=np.float64)
        self.sizes = np.asarray(self.sizes, dtype=np.int64)
        m, d = self.means.shape
        if self.covariances.shape != (m, d, d) or self.sizes.shape != (m,):
            raise ShapeError("bank means, covariances and sizes disagree")
        self._chol = []
        for S in self.covariances:
            try:
                c, _ = cho_factor(S, lower=True)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"covariance is not positive definite: {exc}") from exc
            self._chol.append(np.tril(c))

    @property
    def m(self):
        return self.means.shape[0]

    @property
    def d(self):
        return self.means.shape[1]

    def distances(self, Z):
        """Squared Mahalanobis distance of each row of ``Z`` to each cluster, shape (n, m)."""
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        if Z.shape[1] != self.d:
            raise ShapeError(f"feature dim {Z.shape[1]} != bank dim {self.d}")
        out = np.empty((Z.shape[0], self.m))
        for k, (mu, L) in enumerate(zip(self.means, self._chol)):
            y = solve_triangular(L, (Z - mu).T, lower=True)
            out[:, k] = np.sum(y * y, axis=0)
        return out

    def __eq__(self, other):
        if not isinstance(other, GaussianBank):
            return NotImplemented
        return (np.array_equal(self.means, other.means)
                and np.array_equal(self.covariances, other.covariances)
                and np.array_equal(self.sizes, other.sizes))


def fit(features, m=1, seed=0, shrink_eps=DEFAULT_SHRINK_EPS):
    """Cluster ``features`` with seeded k-means and fit a shrunk Gaussian per cluster."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ShapeError("features must be an (n, d) matrix with d >= 1")
    if X.shape[0] < m or m < 1:
        raise DomainError(f"cannot fit {m} clusters to {X.shape[0]} rows")
    if m == 1:
        labels = np.zeros(X.shape[0], dtype=np.int64)
    else:
        labels, _ = numerics.kmeans(X, m, seed=seed)
    means, covs, sizes = [], [], []
    for k in range(m):
        rows = X[labels == k]
        means.append(rows.mean(axis=0))
        covs.append(shrunk_covariance(rows, shrink_eps))
        sizes.append(rows.shape[0])
    return GaussianBank(np.array(means), np.array(covs), np.array(sizes))


def score(bank, z):
    """Anomaly score: minimum squared Mahalanobis distance over the bank's clusters.

    Accepts one feature vector (returns a float) or a matrix of rows.
    """
    z = np.asarray(z, dtype=np.float64)
    d = bank.distances(z).min(axis=1)
    return float(d[0]) if z.ndim == 1 else d


def dumps_bank(bank):
    out = [struct.pack("<4sIII", BANK_MAGIC, BANK_VERSION, bank.m, bank.d)]
    for k in range(bank.m):
        out.append(struct.pack("<Q", bank.sizes[k]))
        out.append(bank.means[k].astype("<f8").tobytes())
        out.append(bank.covariances[k].astype("<f8").tobytes())
    return b"".join(out)


def loads_bank(blob):
    view = memoryview(blob)
    if len(view) < 16:
        raise ParseError("bank file too short", offset=len(view))
    magic, version, m, d = struct.unpack_from("<4sIII", view, 0)
    if magic != BANK_MAGIC:
        raise ParseError(f"bad magic {magic!r}", offset=0)
    if version != BANK_VERSION:
        raise VersionError(f"bank format version {version} is not supported")
    need = 16 + m * (8 + 8 * d + 8 * d * d)
    if len(view) != need:
        raise ParseError(f"expected {need} bytes, found {len(view)}", offset=min(len(view), need))
    pos = 16
    sizes, means, covs = [], [], []
    for _ in range(m):
        sizes.append(struct.unpack_from("<Q", view, pos)[0])
        pos += 8
        means.append(np.frombuffer(view, "<f8", d, pos))
        pos += 8 * d
        covs.append(np.frombuffer(view, "<f8", d * d, pos).reshape(d, d))
        pos += 8 * d * d
    return GaussianBank(np.array(means), np.array(covs), np.array(sizes))


class MahalanobisDetector(OutlierMixin, BaseEstimator):
    """Mahalanobis-distance outlier detector over one or more Gaussian clusters.

    Parameters
    ----------
    n_clusters : int, default=1
        Number of k-means clusters, each with its own mean and covariance.
    shrink_eps : float, default=1e-3
        Relative diagonal shrinkage of each covariance.
    random_state : int, default=0
        Seed of the k-means initialization.
    contamination : float, default=0.05
        Fraction of training rows flagged by :meth:`predict`; only sets the
        threshold ``offset_``.

    Attributes
    ----------
    bank_ : GaussianBank
    offset_ : float
        ``decision_function = score_samples - offset_``.
    """

    def __init__(self, n_clusters=1, shrink_eps=DEFAULT_SHRINK_EPS, random_state=0,
                 contamination=0.05):
        self.n_clusters = n_clusters
        self.shrink_eps = shrink_eps
        self.random_state = random_state
        self.contamination = contamination

    def fit(self, X, y=None):
        X = check_array(X)
        self.bank_ = fit(X, self.n_clusters, self.random_state, self.shrink_eps)
        self.n_features_in_ = X.shape[1]
        self.offset_ = float(np.percentile(self.score_samples(X), 100.0 * self.contamination))
        return self

    def anomaly_score(self, X):
        """Minimum squared Mahalanobis distance; larger is more anomalous."""
        check_is_fitted(self, "bank_")
        return score(self.bank_, check_array(X))

    def score_samples(self, X):
        """Negated :meth:`anomaly_score` (scikit-learn convention: lower is more abnormal)."""
        return -self.anomaly_score(X)

    def decision_function(self, X):
        return self.score_samples(X) - self.offset_

    def predict(self, X):
        return np.where(self.decision_function(X) < 0, -1, 1)
