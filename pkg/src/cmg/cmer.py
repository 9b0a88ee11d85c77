"""Text-guided redundancy masking.

An image is split into ``grid x grid`` regions and each region is masked in
turn. With paired text available (training), the variant whose embedding
matches the text best is kept and its index becomes the training label of the
redundant-information detector (RID). Without text (testing), the RID scores
every variant and the top-scoring one is kept.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import numerics
from .encoders import MLP, _batches, _check_finite, dumps_network, loads_network, matching_scores, sgd_step
from .errors import ConfigError, DomainError, ShapeError

RID_MAGIC = b"CMGR"
RID_WIDTHS = (512, 256, 128)


@dataclass(frozen=True)
class MaskSpec:
    grid: int = 2
    mode: str = "soft"
    soft_constant: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "grid", int(self.grid))
        object.__setattr__(self, "soft_constant", float(self.soft_constant))
        if self.grid < 1:
            raise ConfigError("grid must be at least 1")
        if self.mode not in ("hard", "soft"):
            raise ConfigError(f"mask mode must be 'hard' or 'soft', got {self.mode!r}")
        if not 0.0 < self.soft_constant < 1.0:
            raise ConfigError("soft_constant must lie in (0, 1)")

    @property
    def n_regions(self):
        return self.grid * self.grid

    @property
    def fill_factor(self):
        return 0.0 if self.mode == "hard" else self.soft_constant


@dataclass
class MaskSet:
    """The masked variants of one image and the one-hot label of the chosen one."""

    variants: np.ndarray
    label: np.ndarray

    @property
    def region_ids(self):
        return np.arange(self.variants.shape[0])

    @property
    def best_index(self):
        return int(np.argmax(self.label))


def _check_side(side, grid):
    if side % grid:
        raise ShapeError(f"image side {side} is not divisible by grid {grid}")


def enumerate_masks(image, spec):
    """Return the ``M`` single-region masked variants of ``image``, shape (M, side, side)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ShapeError(f"expected a square image, got shape {image.shape}")
    return enumerate_masks_batch(image[None], spec)[0]


def enumerate_masks_batch(images, spec):
    """Vectorized :func:`enumerate_masks` over a stack; shape (n, M, side, side)."""
    images = np.asarray(images, dtype=np.float64)
    n, side = images.shape[0], images.shape[1]
    _check_side(side, spec.grid)
    p = side // spec.grid
    out = np.repeat(images[:, None], spec.n_regions, axis=1)
    for q in range(spec.n_regions):
        r, c = divmod(q, spec.grid)
        out[:, q, r * p:(r + 1) * p, c * p:(c + 1) * p] *= spec.fill_factor
    return out


def select_best_mask(text, variants, text_enc, image_enc):
    """Pick the variant that best matches ``text``; ties go to the lowest index.

    Returns
    -------
    best_index : int
    label : ndarray
        One-hot vector of length ``M``.
    """
    variants = np.asarray(variants, dtype=np.float64)
    zT = text_enc(np.asarray(text, dtype=np.float64))
    zI = image_enc(variants.reshape(variants.shape[0], -1))
    scores = _round_ties(matching_scores(zT, zI))
    best = int(np.argmax(scores))
    label = np.zeros(variants.shape[0])
    label[best] = 1.0
    return best, label


def _round_ties(scores):
    # variants that differ only by rounding noise count as tied
    return np.round(scores, 12)


def select_best_masks(texts, images, text_enc, image_enc, spec):
    """Batch CMER labelling.

    Returns
    -------
    variants : ndarray, shape (n, M, side, side)
    best : ndarray of int, shape (n,)
    """
    variants = enumerate_masks_batch(images, spec)
    n, M = variants.shape[:2]
    zT = text_enc(np.asarray(texts, dtype=np.float64))
    zI = image_enc(variants.reshape(n * M, -1)).reshape(n, M, -1)
    nt = np.linalg.norm(zT, axis=1)
    ni = np.linalg.norm(zI, axis=2)
    if np.any(nt == 0.0) or np.any(ni == 0.0):
        raise DomainError("matching score is undefined for a zero embedding")
    scores = np.einsum("nmd,nd->nm", zI, zT) / (ni * nt[:, None])
    best = np.argmax(_round_ties(scores), axis=1)
    return variants, best


def mask_sets(variants, best):
    out = []
    for v, b in zip(variants, best):
        label = np.zeros(v.shape[0])
        label[b] = 1.0
        out.append(MaskSet(v, label))
    return out


# --- redundant information detector ----------------------------------------

def make_rid(input_dim, seed, widths=RID_WIDTHS):
    return MLP.initialize([input_dim, *widths, 1], seed, kind="rid")


def rid_scores(rid, variants):
    """RID score per variant; ``variants`` shape (n, M, side, side) -> (n, M)."""
    variants = np.asarray(variants, dtype=np.float64)
    n, M = variants.shape[:2]
    return rid(variants.reshape(n * M, -1)).reshape(n, M)


def rid_cross_entropy(scores, labels):
    """Mean ``-log softmax(scores)[label]`` over samples and its gradient.

    ``labels`` holds the index of the chosen variant per sample.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = scores.shape[0]
    shifted = scores - scores.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted - log_z[:, None]
    loss = float(-np.mean(log_p[np.arange(n), labels]))
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


@dataclass
class RidHistory:
    loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)
    heldout_accuracy: list = field(default_factory=list)


def rid_accuracy(rid, variants, labels):
    return float(np.mean(np.argmax(_round_ties(rid_scores(rid, variants)), axis=1) == labels))


def train_rid(variants, labels, cfg, widths=RID_WIDTHS, heldout=None):
    """Fit the RID on masked variants and their CMER labels.

    Parameters
    ----------
    variants : ndarray, shape (n, M, side, side)
    labels : ndarray of int, shape (n,)
        Index of the text-selected variant for each sample. One-hot
        :class:`MaskSet` labels can be converted with ``argmax``.
    cfg : TrainConfig
        Uses ``learning_rate``, ``epochs``, ``batch_size``, ``seed`` and
        ``weight_decay``.
    heldout : tuple, optional
        ``(variants, labels)`` scored after each epoch.

    Returns
    -------
    rid : MLP
    history : RidHistory
    """
    variants = np.asarray(variants, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if variants.shape[0] == 0:
        raise DomainError("no mask sets to train on")
    n, M = variants.shape[:2]
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= M:
        raise DomainError("labels must index one of the M variants per sample")
    rng = np.random.default_rng(cfg.seed)
    rid = make_rid(int(np.prod(variants.shape[2:])), cfg.seed + 4, widths)
    flat = variants.reshape(n, M, -1)
    history = RidHistory()
    for epoch in range(cfg.epochs):
        losses = []
        for idx in _batches(rng, n, cfg.batch_size):
            scores, cache = rid(flat[idx].reshape(idx.size * M, -1), return_cache=True)
            loss, dscores = rid_cross_entropy(scores.reshape(idx.size, M), labels[idx])
            grads, _ = rid.backward(cache, dscores.reshape(-1, 1))
            sgd_step(rid.params, grads, cfg.learning_rate, cfg.weight_decay)
            losses.append(loss)
        mean_loss = float(np.mean(losses)) if losses else 0.0
        _check_finite(mean_loss, (rid,), epoch, "rid")
        history.loss.append(mean_loss)
        history.accuracy.append(rid_accuracy(rid, variants, labels))
        if heldout is not None:
            history.heldout_accuracy.append(rid_accuracy(rid, *heldout))
    return rid, history


def rid_mask(image, rid, spec):
    """Mask ``image`` with the RID's top-scoring variant (single pass)."""
    masked, _ = rid_mask_batch(np.asarray(image)[None], rid, spec)
    return masked[0]


def rid_mask_batch(images, rid, spec):
    """Returns the chosen variants, shape (n, side, side), and their region ids."""
    variants = enumerate_masks_batch(images, spec)
    chosen = np.argmax(_round_ties(rid_scores(rid, variants)), axis=1)
    return variants[np.arange(len(chosen)), chosen], chosen


def dumps_rid(rid):
    return dumps_network(rid, RID_MAGIC)


def loads_rid(blob):
    return loads_network(blob, RID_MAGIC)


# --- entropy audit ----------------------------------------------------------

@dataclass
class EntropyReport:
    raw: np.ndarray
    masked: np.ndarray

    @property
    def mean_H_raw(self):
        return float(np.mean(self.raw))

    @property
    def mean_H_masked(self):
        return float(np.mean(self.masked))


def entropy_audit(raw_images, masked_images, bins=numerics.ENTROPY_BINS, exclude_value=None):
    """Per-image histogram entropies of raw and masked images.

    With ``exclude_value`` set (hard masks use 0.0), masked-image pixels equal
    to it are left out of the masked histogram.
    """
    raw_images = np.asarray(raw_images, dtype=np.float64)
    masked_images = np.asarray(masked_images, dtype=np.float64)
    if raw_images.shape[0] == 0:
        raise DomainError("entropy audit needs at least one image")
    if raw_images.shape != masked_images.shape:
        raise ShapeError("raw and masked stacks differ in shape")
    h_raw = np.empty(raw_images.shape[0])
    h_masked = np.empty(raw_images.shape[0])
    for i, (r, m) in enumerate(zip(raw_images, masked_images)):
        h_raw[i] = numerics.histogram_entropy(r, bins)
        kept = m.ravel()
        if exclude_value is not None:
            kept = kept[kept != exclude_value]
        h_masked[i] = numerics.histogram_entropy(kept, bins) if kept.size else 0.0
    return EntropyReport(h_raw, h_masked)


class RedundancyMasker(TransformerMixin, BaseEstimator):
    """Scikit-learn transformer that masks the most redundant image region.

    ``fit`` trains the cross-modal matching encoders on image/text pairs,
    labels every training image with its best text-matching variant, and fits
    the RID on those labels. ``transform`` needs images only.

    Parameters
    ----------
    grid : int, default=2
        Regions per side; ``grid**2`` variants per image.
    mode : {'soft', 'hard'}, default='soft'
    soft_constant : float, default=0.1
    matching_config : TrainConfig, optional
    rid_config : TrainConfig, optional
    """

    def __init__(self, grid=2, mode="soft", soft_constant=0.1, matching_config=None,
                 rid_config=None):
        self.grid = grid
        self.mode = mode
        self.soft_constant = soft_constant
        self.matching_config = matching_config
        self.rid_config = rid_config

    def _spec(self):
        return MaskSpec(self.grid, self.mode, self.soft_constant)

    def fit(self, X, y):
        """``X`` images (n, side, side); ``y`` paired text vectors (n, text_dim)."""
        from .encoders import TrainConfig, train_matching
        from .synthdata import SampleSet

        X = _check_images(X)
        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 2 or y.shape[0] != X.shape[0]:
            raise ShapeError("texts must be a 2-D array aligned with the images")
        spec = self._spec()
        match_cfg = self.matching_config or TrainConfig()
        rid_cfg = self.rid_config or TrainConfig(learning_rate=0.05, epochs=40)
        n = X.shape[0]
        samples = SampleSet(X, y, np.arange(n), np.zeros(n, dtype=np.int64))
        self.image_encoder_, self.text_encoder_, self.matching_history_ = train_matching(samples, match_cfg)
        variants, best = select_best_masks(y, X, self.text_encoder_, self.image_encoder_, spec)
        self.labels_ = best
        self.rid_, self.rid_history_ = train_rid(variants, best, rid_cfg)
        return self

    def transform(self, X):
        check_is_fitted(self, "rid_")
        masked, _ = rid_mask_batch(_check_images(X), self.rid_, self._spec())
        return masked


def _check_images(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[1] != X.shape[2]:
        raise ShapeError(f"expected a stack of square images, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DomainError("images contain non-finite values")
    return X
