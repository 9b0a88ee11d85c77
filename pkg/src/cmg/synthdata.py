"""Synthetic paired image/text benchmark.

Each class owns a fixed prototype patch and a fixed text centroid. A sample
places its class prototype into one grid region picked at random; every other
region gets background clutter. Texts are the class centroid plus Gaussian
noise. Normal classes are split 80/20 into train/test; anomaly classes only
appear in the test split.
"""

import struct
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ConfigError, ParseError, VersionError
from .keyvalue import parse_keyvalue, read_keyvalue

MAGIC = b"CMGD"
VERSION = 1
TRAIN_FRACTION = 0.8


@dataclass(frozen=True)
class GenConfig:
    image_side: int = 12
    grid: int = 2
    text_dim: int = 16
    n_classes_normal: int = 6
    n_classes_anomaly: int = 4
    samples_per_class: int = 100
    signal_strength: float = 0.8
    clutter_strength: float = 0.6
    noise_sigma: float = 0.05
    seed: int = 0
    text_noise_sigma: float = 0.05

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            try:
                object.__setattr__(self, f.name, f.type(value) if f.type in (int, float) else value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{f.name}: cannot convert {value!r}") from exc
        self.validate()

    def validate(self):
        for name in ("image_side", "grid", "text_dim", "n_classes_normal",
                     "n_classes_anomaly", "samples_per_class"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.image_side % self.grid:
            raise ConfigError(f"image_side {self.image_side} is not divisible by grid {self.grid}")
        if not self.signal_strength > self.clutter_strength > 0:
            raise ConfigError("need signal_strength > clutter_strength > 0")
        if self.noise_sigma < 0 or self.text_noise_sigma < 0:
            raise ConfigError("noise_sigma and text_noise_sigma must be non-negative")
        if self.samples_per_class < 2:
            raise ConfigError("samples_per_class must be at least 2 to form both splits")

    @property
    def n_regions(self):
        return self.grid * self.grid

    @property
    def patch_side(self):
        return self.image_side // self.grid

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown generator keys: {sorted(unknown)}")
        return cls(**values)

    @classmethod
    def from_file(cls, path):
        return cls.from_dict(read_keyvalue(path))

    @classmethod
    def from_text(cls, text):
        return cls.from_dict(parse_keyvalue(text))


@dataclass(frozen=True)
class PairedSample:
    image: np.ndarray
    text: np.ndarray
    class_id: int
    signal_region: int


@dataclass(frozen=True)
class SampleSet:
    """Column-oriented store of paired samples."""

    images: np.ndarray
    texts: np.ndarray
    class_ids: np.ndarray
    signal_regions: np.ndarray

    def __len__(self):
        return self.images.shape[0]

    def __getitem__(self, i):
        return PairedSample(self.images[i], self.texts[i], int(self.class_ids[i]),
                            int(self.signal_regions[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __eq__(self, other):
        if not isinstance(other, SampleSet):
            return NotImplemented
        return all(np.array_equal(getattr(self, f.name), getattr(other, f.name))
                   for f in fields(self))

    @property
    def flat_images(self):
        return self.images.reshape(len(self), -1)

    def without_text(self):
        """Copy whose text block is NaN; used to prove a code path ignores text."""
        return SampleSet(self.images, np.full_like(self.texts, np.nan),
                         self.class_ids, self.signal_regions)

    @classmethod
    def concat(cls, *sets):
        return cls(*(np.concatenate([getattr(s, f.name) for s in sets])
                     for f in fields(cls)))


@dataclass(frozen=True)
class Dataset:
    train_normal: SampleSet
    test_normal: SampleSet
    test_anomaly: SampleSet
    config: GenConfig

    def test_set(self):
        """Test images with labels (1 = anomaly)."""
        samples = SampleSet.concat(self.test_normal, self.test_anomaly)
        labels = np.r_[np.zeros(len(self.test_normal), dtype=np.int64),
                       np.ones(len(self.test_anomaly), dtype=np.int64)]
        return samples, labels


def region_slices(image_side, grid):
    """Row/column slices of each grid region, in row-major region order."""
    p = image_side // grid
    return [(slice(r * p, (r + 1) * p), slice(c * p, (c + 1) * p))
            for r in range(grid) for c in range(grid)]


def _text_centroids(rng, n, dim, min_dist):
    centroids = rng.normal(size=(n, dim))
    if n > 1:
        d = np.sqrt(((centroids[:, None] - centroids[None]) ** 2).sum(-1))
        closest = d[~np.eye(n, dtype=bool)].min()
        if closest < min_dist:
            centroids *= min_dist / closest
    return centroids


def generate(config):
    """Draw a :class:`Dataset` from ``config``; identical seeds give identical data."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    n_classes = config.n_classes_normal + config.n_classes_anomaly
    p = config.patch_side
    side = config.image_side
    slices = region_slices(side, config.grid)

    prototypes = config.signal_strength * _part_prototypes(rng, n_classes, p)
    centroids = _text_centroids(rng, n_classes, config.text_dim,
                                6.0 * max(config.noise_sigma, config.text_noise_sigma, 1e-12))

    n_total = n_classes * config.samples_per_class
    images = np.empty((n_total, side, side))
    texts = np.empty((n_total, config.text_dim))
    class_ids = np.repeat(np.arange(n_classes), config.samples_per_class)
    regions = rng.integers(config.n_regions, size=n_total)
    for i in range(n_total):
        img = images[i]
        for q, (rs, cs) in enumerate(slices):
            if q == regions[i]:
                img[rs, cs] = prototypes[class_ids[i]]
            else:
                img[rs, cs] = _clutter(rng, p, config.clutter_strength)
        img += rng.normal(scale=config.noise_sigma, size=(side, side))
        np.clip(img, 0.0, 1.0, out=img)
        texts[i] = centroids[class_ids[i]] + rng.normal(scale=config.text_noise_sigma,
                                                         size=config.text_dim)

    n_train = int(round(TRAIN_FRACTION * config.samples_per_class))
    train_idx, test_idx, anomaly_idx = [], [], []
    for c in range(n_classes):
        members = np.flatnonzero(class_ids == c)
        if c < config.n_classes_normal:
            members = rng.permutation(members)
            train_idx.extend(sorted(members[:n_train]))
            test_idx.extend(sorted(members[n_train:]))
        else:
            anomaly_idx.extend(members)

    def take(idx):
        idx = np.asarray(idx, dtype=np.int64)
        return SampleSet(images[idx], texts[idx], class_ids[idx].astype(np.int64),
                         regions[idx].astype(np.int64))

    return Dataset(take(train_idx), take(test_idx), take(anomaly_idx), config)


def _part_prototypes(rng, n_classes, p):
    """Binary patches, each the union of two parts from a shared pool.

    Anomaly classes get part pairs no normal class uses, so they are novel
    compositions of familiar pieces rather than unrelated patterns.
    """
    n_parts = 2
    while n_parts * (n_parts - 1) // 2 < n_classes:
        n_parts += 1
    parts = rng.random((n_parts, p, p)) < 0.3
    pairs = [(a, b) for a in range(n_parts) for b in range(a + 1, n_parts)]
    order = rng.permutation(len(pairs))[:n_classes]
    return np.stack([parts[pairs[k][0]] | parts[pairs[k][1]] for k in order]).astype(np.float64)


def _clutter(rng, p, strength):
    # skewed per-region amplitude: usually one region carries most of the clutter
    return strength * rng.random() ** 2 * rng.random((p, p))


# --- serialization ---------------------------------------------------------

_INT_FIELDS = ("image_side", "grid", "text_dim", "n_classes_normal",
               "n_classes_anomaly", "samples_per_class", "seed")
_REAL_FIELDS = ("signal_strength", "clutter_strength", "noise_sigma", "text_noise_sigma")
_HEADER = struct.Struct("<4sI" + "q" * len(_INT_FIELDS) + "d" * len(_REAL_FIELDS))


def dumps(dataset):
    cfg = dataset.config
    out = [_HEADER.pack(MAGIC, VERSION, *(getattr(cfg, k) for k in _INT_FIELDS),
                        *(getattr(cfg, k) for k in _REAL_FIELDS))]
    for split in (dataset.train_normal, dataset.test_normal, dataset.test_anomaly):
        out.append(struct.pack("<Q", len(split)))
        for i in range(len(split)):
            out.append(struct.pack("<qq", split.class_ids[i], split.signal_regions[i]))
            out.append(split.images[i].astype("<f8").tobytes())
            out.append(split.texts[i].astype("<f8").tobytes())
    return b"".join(out)


def loads(blob):
    """Parse bytes written by :func:`dumps`; never returns a partial dataset."""
    view = memoryview(blob)
    if len(view) < 8:
        raise ParseError("file too short for header", offset=len(view))
    magic, version = struct.unpack_from("<4sI", view, 0)
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise VersionError(f"dataset format version {version} is not supported (expected {VERSION})")
    if len(view) < _HEADER.size:
        raise ParseError("file too short for header", offset=len(view))
    head = _HEADER.unpack_from(view, 0)[2:]
    values = dict(zip(_INT_FIELDS + _REAL_FIELDS, head))
    try:
        cfg = GenConfig(**values)
    except ConfigError as exc:
        raise ParseError(f"invalid generator config in header: {exc}", offset=8) from exc
    pos = _HEADER.size
    n_pix = cfg.image_side * cfg.image_side
    rec = struct.Struct("<qq")
    record_size = rec.size + 8 * (n_pix + cfg.text_dim)
    splits = []
    for _ in range(3):
        if pos + 8 > len(view):
            raise ParseError("truncated before split length", offset=pos)
        (count,) = struct.unpack_from("<Q", view, pos)
        pos += 8
        if pos + count * record_size > len(view):
            raise ParseError(f"truncated split: {count} records declared", offset=pos)
        images = np.empty((count, cfg.image_side, cfg.image_side))
        texts = np.empty((count, cfg.text_dim))
        cids = np.empty(count, dtype=np.int64)
        regs = np.empty(count, dtype=np.int64)
        for i in range(count):
            cids[i], regs[i] = rec.unpack_from(view, pos)
            if not 0 <= regs[i] < cfg.n_regions:
                raise ParseError(f"region index {regs[i]} out of range", offset=pos)
            pos += rec.size
            images[i] = np.frombuffer(view, "<f8", n_pix, pos).reshape(cfg.image_side, cfg.image_side)
            pos += 8 * n_pix
            texts[i] = np.frombuffer(view, "<f8", cfg.text_dim, pos)
            pos += 8 * cfg.text_dim
        splits.append(SampleSet(images, texts, cids, regs))
    if pos != len(view):
        raise ParseError(f"{len(view) - pos} trailing bytes", offset=pos)
    return Dataset(*splits, cfg)


def save(dataset, path):
    with open(path, "wb") as fh:
        fh.write(dumps(dataset))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())


def config_to_dict(config):
    return asdict(config)
