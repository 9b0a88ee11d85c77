"""Text-derived local linear structure imposed on image features.

Text embeddings are clustered; inside each cluster every member is written as
an affine combination of its cluster-mates (weights summing to one, solved in
closed form from a ridge-regularized local Gram matrix). The image encoder is
then penalized for features that break those same reconstructions.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import numerics
from .errors import DegenerateGroupError, ParseError, ShapeError, VersionError

WEIGHTS_MAGIC = b"CMGW"
WEIGHTS_VERSION = 1
DEFAULT_RIDGE_EPS = 1e-3


@dataclass(frozen=True)
class ClusterAssignment:
    K: int
    labels: np.ndarray

    @property
    def members(self):
        return [np.flatnonzero(self.labels == k) for k in range(self.K)]


def cluster_texts(text_embeddings, K, seed=0, max_iter=100):
    """Seeded k-means over text embeddings."""
    labels, _ = numerics.kmeans(text_embeddings, K, seed=seed, max_iter=max_iter)
    return ClusterAssignment(int(K), labels)


def lle_weights(group, ridge_eps=DEFAULT_RIDGE_EPS):
    """Reconstruction weights of each group member from the other members.

    Row ``i`` minimizes ``||y_i - sum_{j != i} w_ij y_j||^2`` subject to
    ``sum_j w_ij = 1``: ``w = G^-1 1 / (1' G^-1 1)`` where ``G`` is the Gram
    matrix of the differences ``y_j - y_i``. ``G`` is regularized by
    ``ridge_eps * trace(G) / (N - 1)`` on its diagonal.

    Returns
    -------
    W : ndarray, shape (N, N)
        Zero diagonal, rows summing to one.
    """
    Y = np.asarray(group, dtype=np.float64)
    if Y.ndim != 2:
        raise ShapeError("group must be an (N, d) matrix")
    N = Y.shape[0]
    if N < 2:
        raise DegenerateGroupError("a group needs at least two members for reconstruction weights")
    W = np.zeros((N, N))
    ones = np.ones(N - 1)
    for i in range(N):
        others = np.r_[0:i, i + 1:N]
        D = Y[others] - Y[i]
        G = D @ D.T
        trace = np.trace(G)
        eps = ridge_eps * trace / (N - 1) if trace > 0 else ridge_eps
        w = numerics.ridge_solve(G, ones, eps)
        W[i, others] = w / w.sum()
    return W


def global_loss(features, W):
    """``sum_i ||f_i - sum_j W_ij f_j||^2`` and its gradient with respect to ``features``."""
    F = np.asarray(features, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if F.ndim != 2 or W.shape != (F.shape[0], F.shape[0]):
        raise ShapeError(f"weights {W.shape} do not align with {F.shape[0]} feature rows")
    R = F - W @ F
    return float(np.sum(R * R)), 2.0 * (R - W.T @ R)


@dataclass
class GroupWeights:
    """Per-cluster weight matrices; singleton clusters are omitted."""

    K: int
    members: list
    weights: list

    def __len__(self):
        return len(self.members)

    def __call__(self, features):
        """Summed :func:`global_loss` over groups of a full feature matrix."""
        F = np.asarray(features, dtype=np.float64)
        grad = np.zeros_like(F)
        total = 0.0
        for idx, W in zip(self.members, self.weights):
            if idx.max() >= F.shape[0]:
                raise ShapeError("group member index exceeds feature rows")
            loss, g = global_loss(F[idx], W)
            total += loss
            grad[idx] += g
        return total, grad

    def __eq__(self, other):
        if not isinstance(other, GroupWeights):
            return NotImplemented
        return (self.K == other.K and len(self) == len(other)
                and all(np.array_equal(a, b) for a, b in zip(self.members, other.members))
                and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights)))


def fit_group_weights(text_embeddings, assignment, ridge_eps=DEFAULT_RIDGE_EPS):
    Z = np.asarray(text_embeddings, dtype=np.float64)
    members, weights = [], []
    for idx in assignment.members:
        if idx.size < 2:
            continue
        members.append(idx)
        weights.append(lle_weights(Z[idx], ridge_eps))
    return GroupWeights(assignment.K, members, weights)


def dumps_weights(gw):
    out = [struct.pack("<4sIII", WEIGHTS_MAGIC, WEIGHTS_VERSION, gw.K, len(gw))]
    for idx, W in zip(gw.members, gw.weights):
        out.append(struct.pack("<Q", idx.size))
        out.append(idx.astype("<i8").tobytes())
        out.append(W.astype("<f8").tobytes())
    return b"".join(out)


def loads_weights(blob):
    view = memoryview(blob)
    if len(view) < 16:
        raise ParseError("weights file too short", offset=len(view))
    magic, version, K, n_groups = struct.unpack_from("<4sIII", view, 0)
    if magic != WEIGHTS_MAGIC:
        raise ParseError(f"bad magic {magic!r}", offset=0)
    if version != WEIGHTS_VERSION:
        raise VersionError(f"weights format version {version} is not supported")
    pos = 16
    members, weights = [], []
    for _ in range(n_groups):
        if pos + 8 > len(view):
            raise ParseError("truncated group header", offset=pos)
        (n,) = struct.unpack_from("<Q", view, pos)
        pos += 8
        if pos + 8 * (n + n * n) > len(view):
            raise ParseError("truncated group block", offset=pos)
        members.append(np.frombuffer(view, "<i8", n, pos).astype(np.int64))
        pos += 8 * n
        weights.append(np.frombuffer(view, "<f8", n * n, pos).reshape(n, n).copy())
        pos += 8 * n * n
    if pos != len(view):
        raise ParseError(f"{len(view) - pos} trailing bytes", offset=pos)
    return GroupWeights(K, members, weights)
