"""Trainable encoders and contrastive objectives.

Networks are plain numpy multilayer perceptrons with hand-written backprop so
every gradient can be checked against finite differences. All training is
mini-batch gradient descent with weight decay, seeded end to end.
"""

import struct
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError, DomainError, ParseError, ShapeError, TrainingDiverged, VersionError

ENCODER_MAGIC = b"CMGE"
CHECKPOINT_VERSION = 1
KINDS = ("affine", "mlp", "rid")


@dataclass(frozen=True)
class TrainConfig:
    temperature: float = 0.5
    learning_rate: float = 0.1
    epochs: int = 60
    batch_size: int = 64
    seed: int = 0
    weight_decay: float = 1e-4
    lambda_global: float = 1.0
    augment_noise_sigma: float = 0.05
    augment_region_dropout_prob: float = 0.25
    encoder_kind: str = "mlp"
    embed_dim: int = 32
    hidden_dim: int = 64

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            try:
                object.__setattr__(self, f.name, f.type(value))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{f.name}: cannot convert {value!r}") from exc
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.epochs < 0 or self.batch_size < 2:
            raise ConfigError("epochs must be >= 0 and batch_size >= 2")
        if self.weight_decay < 0 or self.lambda_global < 0 or self.augment_noise_sigma < 0:
            raise ConfigError("weight_decay, lambda_global and augment_noise_sigma must be >= 0")
        if not 0.0 <= self.augment_region_dropout_prob <= 1.0:
            raise ConfigError("augment_region_dropout_prob must lie in [0, 1]")
        if self.encoder_kind not in ("affine", "mlp"):
            raise ConfigError(f"unknown encoder_kind {self.encoder_kind!r}")
        if self.embed_dim < 1 or self.hidden_dim < 1:
            raise ConfigError("embed_dim and hidden_dim must be positive")

    def replace(self, **changes):
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return TrainConfig(**values)


class MLP:
    """Fully connected network ``x -> W_L relu(... relu(x W_1 + b_1) ...) + b_L``.

    ``kind`` is a tag only (``affine``, ``mlp`` or ``rid``); the layer sizes
    decide the architecture.
    """

    def __init__(self, weights, biases, kind="mlp"):
        if kind not in KINDS:
            raise ShapeError(f"unknown network kind {kind!r}")
        if len(weights) != len(biases) or not weights:
            raise ShapeError("need one bias per weight matrix")
        for W, b in zip(weights, biases):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ShapeError("bias length must match weight output width")
        for W_prev, W in zip(weights, weights[1:]):
            if W_prev.shape[1] != W.shape[0]:
                raise ShapeError("consecutive layer widths do not chain")
        self.weights = [np.asarray(W, dtype=np.float64) for W in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.kind = kind

    @classmethod
    def initialize(cls, sizes, seed, kind="mlp"):
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = 2.0 if i < len(sizes) - 2 else 1.0
            weights.append(rng.normal(scale=np.sqrt(gain / n_in), size=(n_in, n_out)))
            biases.append(np.zeros(n_out))
        return cls(weights, biases, kind)

    @property
    def sizes(self):
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def input_dim(self):
        return self.sizes[0]

    @property
    def output_dim(self):
        return self.sizes[-1]

    @property
    def params(self):
        """Parameter arrays in a fixed order (W_1, b_1, W_2, b_2, ...); views, not copies."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self):
        return MLP([W.copy() for W in self.weights], [b.copy() for b in self.biases], self.kind)

    def forward(self, X, return_cache=False):
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        X = X.reshape(X.shape[0], -1)
        if X.shape[1] != self.input_dim:
            raise ShapeError(f"input has {X.shape[1]} features, network expects {self.input_dim}")
        acts = [X]
        h = X
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        out = h[0] if single else h
        if return_cache:
            return out, acts
        return out

    __call__ = forward

    def backward(self, acts, dout):
        """Gradients of a scalar loss given ``dout = dloss/doutput``.

        Returns the parameter gradients in :attr:`params` order and the gradient
        with respect to the input batch.
        """
        grads = [None] * (2 * len(self.weights))
        g = np.asarray(dout, dtype=np.float64).reshape(acts[-1].shape)
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                g = g * (acts[i + 1] > 0.0)
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads, g

    def is_finite(self):
        return all(np.all(np.isfinite(p)) for p in self.params)

    def __eq__(self, other):
        if not isinstance(other, MLP):
            return NotImplemented
        return (self.kind == other.kind and self.sizes == other.sizes
                and all(np.array_equal(a, b) for a, b in zip(self.params, other.params)))


def make_encoder(input_dim, cfg, seed):
    if cfg.encoder_kind == "affine":
        sizes = [input_dim, cfg.embed_dim]
    else:
        sizes = [input_dim, cfg.hidden_dim, cfg.embed_dim]
    return MLP.initialize(sizes, seed, cfg.encoder_kind)


def sgd_step(params, grads, lr, weight_decay):
    for p, g in zip(params, grads):
        p -= lr * (g + weight_decay * p)


# --- objectives ------------------------------------------------------------

def _normalize_rows(Z):
    norms = np.linalg.norm(Z, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DomainError("cosine similarity is undefined for a zero embedding")
    return Z / norms, norms


def _normalize_backward(U, norms, dU):
    return (dU - U * np.sum(U * dU, axis=1, keepdims=True)) / norms


def contrastive_loss(zT, zI, temperature):
    """Cross-modal contrastive loss with the positive pair left out of the denominator.

    ``l_i = -sim(t_i, v_i)/tau + log sum_{j != i} exp(sim(t_i, v_j)/tau)``,
    averaged over the batch. Because the denominator omits the positive the
    loss can be negative.

    Returns
    -------
    loss : float
    dzT, dzI : ndarray
        Gradients with respect to the two embedding batches.
    """
    zT = np.asarray(zT, dtype=np.float64)
    zI = np.asarray(zI, dtype=np.float64)
    if zT.shape != zI.shape or zT.ndim != 2:
        raise ShapeError(f"embedding batches must share shape, got {zT.shape} and {zI.shape}")
    n = zT.shape[0]
    if n < 2:
        raise DomainError("contrastive loss needs at least two pairs")
    U, nu = _normalize_rows(zT)
    V, nv = _normalize_rows(zI)
    logits = (U @ V.T) / temperature
    off = logits.copy()
    np.fill_diagonal(off, -np.inf)
    row_max = off.max(axis=1, keepdims=True)
    expo = np.exp(off - row_max)
    denom = expo.sum(axis=1, keepdims=True)
    lse = np.log(denom[:, 0]) + row_max[:, 0]
    loss = float(np.mean(lse - np.diag(logits)))

    dlogits = expo / denom
    dlogits[np.diag_indices(n)] = -1.0
    dS = dlogits / (n * temperature)
    dU = dS @ V
    dV = dS.T @ U
    return loss, _normalize_backward(U, nu, dU), _normalize_backward(V, nv, dV)


def ssd_loss(zA, zB, temperature):
    """Self-supervised view-pair loss; same form as :func:`contrastive_loss`."""
    return contrastive_loss(zA, zB, temperature)


def matching_scores(zT, candidates):
    """Cosine similarity between one text embedding and each candidate image embedding."""
    zT = np.asarray(zT, dtype=np.float64).ravel()
    C = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    if C.shape[0] == 0:
        raise DomainError("no candidates to score")
    if C.shape[1] != zT.size:
        raise ShapeError(f"candidate dim {C.shape[1]} != text dim {zT.size}")
    nt = np.linalg.norm(zT)
    nc = np.linalg.norm(C, axis=1)
    if nt == 0.0 or np.any(nc == 0.0):
        raise DomainError("matching score is undefined for a zero embedding")
    return (C @ zT) / (nc * nt)


def augment(images, rng, noise_sigma, dropout_prob, grid):
    """Additive pixel noise plus random zeroing of whole grid regions."""
    X = np.array(images, dtype=np.float64, copy=True)
    n, side = X.shape[0], X.shape[1]
    p = side // grid
    if noise_sigma > 0:
        X += rng.normal(scale=noise_sigma, size=X.shape)
    if dropout_prob > 0:
        drop = rng.random((n, grid * grid)) < dropout_prob
        # keep at least one region so no view is blank
        full = np.flatnonzero(drop.all(axis=1))
        drop[full, rng.integers(grid * grid, size=full.size)] = False
        for q in range(grid * grid):
            r, c = divmod(q, grid)
            X[drop[:, q], r * p:(r + 1) * p, c * p:(c + 1) * p] = 0.0
    return X


def _batches(rng, n, batch_size):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if idx.size >= 2:
            yield idx


def _check_finite(loss, nets, epoch, stage):
    if not np.isfinite(loss) or not all(net.is_finite() for net in nets):
        raise TrainingDiverged("non-finite loss or parameters", epoch=epoch, stage=stage)


# --- cross-modal matching ---------------------------------------------------

@dataclass
class MatchingHistory:
    loss: list = field(default_factory=list)
    retrieval_accuracy: list = field(default_factory=list)


def retrieval_accuracy(image_enc, text_enc, images, texts, class_ids, pool=64):
    """Top-1 text-to-image retrieval accuracy within candidate pools of ``pool`` images.

    A retrieval counts as correct when the best-matching image shares the
    query's class; paired texts and images only share class content, so the
    exact instance is not identifiable.
    """
    zI = image_enc(np.asarray(images).reshape(len(images), -1))
    zT = text_enc(texts)
    U, _ = _normalize_rows(zT)
    V, _ = _normalize_rows(zI)
    hits = 0
    for start in range(0, len(images), pool):
        sl = slice(start, start + pool)
        best = np.argmax(U[sl] @ V[sl].T, axis=1)
        hits += int(np.sum(class_ids[sl][best] == class_ids[sl]))
    return hits / len(images)


def train_matching(samples, cfg, holdout_fraction=0.125):
    """Fit image and text encoders into a shared space with :func:`contrastive_loss`.

    A seeded slice of ``samples`` is held out and used only for the per-epoch
    retrieval accuracy.

    Returns
    -------
    image_enc, text_enc : MLP
    history : MatchingHistory
    """
    n = len(samples)
    if n == 0:
        raise DomainError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    n_hold = int(round(holdout_fraction * n)) if n >= 16 else 0
    hold, fit_idx = np.sort(perm[:n_hold]), np.sort(perm[n_hold:])
    X = samples.flat_images
    Y = samples.texts
    image_enc = make_encoder(X.shape[1], cfg, cfg.seed + 1)
    text_enc = make_encoder(Y.shape[1], cfg, cfg.seed + 2)
    history = MatchingHistory()
    for epoch in range(cfg.epochs):
        losses = []
        for idx in _batches(rng, fit_idx.size, cfg.batch_size):
            rows = fit_idx[idx]
            zI, cache_i = image_enc(X[rows], return_cache=True)
            zT, cache_t = text_enc(Y[rows], return_cache=True)
            loss, dT, dI = contrastive_loss(zT, zI, cfg.temperature)
            gi, _ = image_enc.backward(cache_i, dI)
            gt, _ = text_enc.backward(cache_t, dT)
            sgd_step(image_enc.params, gi, cfg.learning_rate, cfg.weight_decay)
            sgd_step(text_enc.params, gt, cfg.learning_rate, cfg.weight_decay)
            losses.append(loss)
        mean_loss = float(np.mean(losses)) if losses else 0.0
        _check_finite(mean_loss, (image_enc, text_enc), epoch, "matching")
        history.loss.append(mean_loss)
        if n_hold:
            history.retrieval_accuracy.append(retrieval_accuracy(
                image_enc, text_enc, X[hold], Y[hold], samples.class_ids[hold]))
    return image_enc, text_enc, history


# --- latent (detector feature) encoder -------------------------------------

def train_latent(images, cfg, grid, guidance=None, epoch_callback=None):
    """Train the detector feature encoder with the view-pair loss.

    Parameters
    ----------
    images : ndarray, shape (n, side, side)
        Training images (already masked when redundancy masking is on).
    cfg : TrainConfig
    grid : int
        Region grid used by the dropout augmentation.
    guidance : callable, optional
        ``guidance(features) -> (loss, dfeatures)`` evaluated on the
        un-augmented features of every training image; added to the objective
        as ``lambda_global * loss / n``.
    epoch_callback : callable, optional
        Called as ``epoch_callback(epoch, encoder)`` after each epoch.

    Returns
    -------
    encoder : MLP
    losses : list of float
        Mean objective per epoch.
    """
    images = np.asarray(images, dtype=np.float64)
    n = images.shape[0]
    if n < 2:
        raise DomainError("latent training needs at least two images")
    rng = np.random.default_rng(cfg.seed)
    flat = images.reshape(n, -1)
    enc = make_encoder(flat.shape[1], cfg, cfg.seed + 3)
    losses = []
    for epoch in range(cfg.epochs):
        epoch_loss = []
        for idx in _batches(rng, n, cfg.batch_size):
            a = augment(images[idx], rng, cfg.augment_noise_sigma,
                        cfg.augment_region_dropout_prob, grid).reshape(idx.size, -1)
            b = augment(images[idx], rng, cfg.augment_noise_sigma,
                        cfg.augment_region_dropout_prob, grid).reshape(idx.size, -1)
            zA, ca = enc(a, return_cache=True)
            zB, cb = enc(b, return_cache=True)
            loss, dA, dB = ssd_loss(zA, zB, cfg.temperature)
            grads, _ = enc.backward(ca, dA)
            grads_b, _ = enc.backward(cb, dB)
            grads = [g1 + g2 for g1, g2 in zip(grads, grads_b)]
            if guidance is not None and cfg.lambda_global > 0:
                F, cf = enc(flat, return_cache=True)
                U, norms = _normalize_rows(F)
                g_loss, dU = guidance(U)
                scale = cfg.lambda_global / n
                grads_g, _ = enc.backward(cf, scale * _normalize_backward(U, norms, dU))
                grads = [g1 + g2 for g1, g2 in zip(grads, grads_g)]
                loss += scale * g_loss
            sgd_step(enc.params, grads, cfg.learning_rate, cfg.weight_decay)
            epoch_loss.append(loss)
        mean_loss = float(np.mean(epoch_loss))
        _check_finite(mean_loss, (enc,), epoch, "latent")
        losses.append(mean_loss)
        if epoch_callback is not None:
            epoch_callback(epoch, enc)
    return enc, losses


# --- checkpoints -----------------------------------------------------------

def dumps_network(net, magic=ENCODER_MAGIC):
    sizes = net.sizes
    out = [struct.pack("<4sII", magic, CHECKPOINT_VERSION, KINDS.index(net.kind)),
           struct.pack("<I", len(sizes)), struct.pack(f"<{len(sizes)}Q", *sizes)]
    out += [p.astype("<f8").tobytes() for p in net.params]
    return b"".join(out)


def loads_network(blob, magic=ENCODER_MAGIC):
    view = memoryview(blob)
    if len(view) < 16:
        raise ParseError("checkpoint too short", offset=len(view))
    got, version, kind = struct.unpack_from("<4sII", view, 0)
    if got != magic:
        raise ParseError(f"bad magic {got!r}, expected {magic!r}", offset=0)
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"checkpoint version {version} is not supported")
    if kind >= len(KINDS):
        raise ParseError(f"unknown network kind code {kind}", offset=8)
    (n_sizes,) = struct.unpack_from("<I", view, 12)
    pos = 16
    if n_sizes < 2 or pos + 8 * n_sizes > len(view):
        raise ParseError("truncated or invalid layer sizes", offset=pos)
    sizes = struct.unpack_from(f"<{n_sizes}Q", view, pos)
    pos += 8 * n_sizes
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        need = 8 * (n_in * n_out + n_out)
        if pos + need > len(view):
            raise ParseError("truncated parameter block", offset=pos)
        weights.append(np.frombuffer(view, "<f8", n_in * n_out, pos).reshape(n_in, n_out).copy())
        pos += 8 * n_in * n_out
        biases.append(np.frombuffer(view, "<f8", n_out, pos).copy())
        pos += 8 * n_out
    if pos != len(view):
        raise ParseError(f"{len(view) - pos} trailing bytes", offset=pos)
    return MLP(weights, biases, KINDS[kind])


def save_network(net, path, magic=ENCODER_MAGIC):
    with open(path, "wb") as fh:
        fh.write(dumps_network(net, magic))


def load_network(path, magic=ENCODER_MAGIC):
    with open(path, "rb") as fh:
        return loads_network(fh.read(), magic)
