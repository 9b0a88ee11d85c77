"""End-to-end training, scoring, ablation and audits.

Training runs in stages: cross-modal matching, text-guided mask labelling,
RID fitting, text clustering with reconstruction weights, then the detector
feature encoder and its Gaussian bank. Each ablation variant switches stages
on or off. Scoring only ever touches images.
"""

import enum
import math
import os
from dataclasses import dataclass, field, fields

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_is_fitted

from . import cmer, cmle, detector, encoders, numerics
from .errors import CMGError, ConfigError, DataError, ParseError, ShapeError, TrainingDiverged
from .keyvalue import format_keyvalue, parse_keyvalue, read_keyvalue
from .report import Report
from .synthdata import Dataset, GenConfig, SampleSet
from .encoders import TrainConfig

BUNDLE_FILES = {
    "image_encoder": "matching_image.cmge",
    "text_encoder": "matching_text.cmge",
    "rid": "rid.cmgr",
    "weights": "weights.cmgw",
    "latent_encoder": "latent_image.cmge",
    "bank": "bank.cmgb",
}
AUDIT_NOISE_SEED = 12345


class Variant(enum.Enum):
    SSD = "SSD"
    SSD_ER = "SSD_ER"
    SSD_LE = "SSD_LE"
    CMG = "CMG"
    CMG_MSE = "CMG_MSE"

    @classmethod
    def parse(cls, name):
        key = str(name).upper().replace("+", "_").replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown variant {name!r}; choose from {[v.value for v in cls]}") from None

    @property
    def uses_matching(self):
        return self is not Variant.SSD

    @property
    def uses_masking(self):
        return self in (Variant.SSD_ER, Variant.CMG, Variant.CMG_MSE)

    @property
    def uses_structure(self):
        return self in (Variant.SSD_LE, Variant.CMG)

    @property
    def uses_mse(self):
        return self is Variant.CMG_MSE


def _default_matching():
    return TrainConfig(learning_rate=0.1, epochs=60)


def _default_rid():
    return TrainConfig(learning_rate=0.05, epochs=40)


def _default_latent():
    return TrainConfig(learning_rate=0.1, epochs=60)


@dataclass(frozen=True)
class RunConfig:
    gen: GenConfig = field(default_factory=GenConfig)
    matching: TrainConfig = field(default_factory=_default_matching)
    rid: TrainConfig = field(default_factory=_default_rid)
    latent: TrainConfig = field(default_factory=_default_latent)
    mask: cmer.MaskSpec = field(default_factory=cmer.MaskSpec)
    K: int = 6
    m: int = 1
    ridge_eps: float = cmle.DEFAULT_RIDGE_EPS
    shrink_eps: float = detector.DEFAULT_SHRINK_EPS
    seeds: tuple = (0, 1, 2, 3, 4)
    output_dir: str = "runs"

    def __post_init__(self):
        object.__setattr__(self, "K", int(self.K))
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "ridge_eps", float(self.ridge_eps))
        object.__setattr__(self, "shrink_eps", float(self.shrink_eps))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.K < 1 or self.m < 1:
            raise ConfigError("K and m must be at least 1")
        if self.m > self.K:
            raise ConfigError("m may not exceed K")
        if self.ridge_eps <= 0 or self.shrink_eps <= 0:
            raise ConfigError("ridge_eps and shrink_eps must be positive")
        if not self.seeds:
            raise ConfigError("at least one seed is required")

    _SECTIONS = {"gen": GenConfig, "matching": TrainConfig, "rid": TrainConfig,
                 "latent": TrainConfig, "mask": cmer.MaskSpec}

    @classmethod
    def from_dict(cls, values):
        """Build from flat keys such as ``latent.epochs`` or ``K``; missing keys keep defaults."""
        base = cls()
        sections = {name: {} for name in cls._SECTIONS}
        top = {}
        for key, value in values.items():
            head, _, rest = key.partition(".")
            if rest and head in sections:
                sections[head][rest] = value
            elif not rest and key in ("K", "m", "ridge_eps", "shrink_eps", "seeds", "output_dir"):
                top[key] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        kwargs = {}
        for name, kind in cls._SECTIONS.items():
            current = getattr(base, name)
            merged = {f.name: getattr(current, f.name) for f in fields(kind)}
            unknown = set(sections[name]) - set(merged)
            if unknown:
                raise ConfigError(f"unknown {name} keys: {sorted(unknown)}")
            merged.update(sections[name])
            kwargs[name] = kind(**merged)
        if "seeds" in top:
            raw = top["seeds"]
            try:
                top["seeds"] = tuple(int(s) for s in raw.split(",")) if isinstance(raw, str) else tuple(raw)
            except ValueError:
                raise ConfigError(f"seeds must be comma-separated integers, got {raw!r}") from None
        try:
            return cls(**kwargs, **top)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_text(cls, text):
        return cls.from_dict(parse_keyvalue(text))

    @classmethod
    def from_file(cls, path):
        return cls.from_dict(read_keyvalue(path))

    def items(self):
        for name in self._SECTIONS:
            section = getattr(self, name)
            for f in fields(section):
                yield f"{name}.{f.name}", getattr(section, f.name)
        for key in ("K", "m", "ridge_eps", "shrink_eps", "seeds", "output_dir"):
            yield key, getattr(self, key)

    def to_text(self):
        return format_keyvalue(self.items())

    def with_seed(self, seed):
        """Training configs re-seeded for one run; the generator seed is left alone."""
        return RunConfig(self.gen, self.matching.replace(seed=seed), self.rid.replace(seed=seed),
                         self.latent.replace(seed=seed), self.mask, self.K, self.m,
                         self.ridge_eps, self.shrink_eps, (seed,), self.output_dir)


# --- bundle ------------------------------------------------------------------

@dataclass
class Bundle:
    """Everything a trained variant needs at test time, plus its training curves."""

    variant: Variant
    seed: int
    mask: cmer.MaskSpec
    latent_encoder: encoders.MLP
    bank: detector.GaussianBank
    image_encoder: encoders.MLP = None
    text_encoder: encoders.MLP = None
    rid: encoders.MLP = None
    weights: cmle.GroupWeights = None
    curves: dict = field(default_factory=dict)

    def artifacts(self):
        return {name for name in BUNDLE_FILES if getattr(self, name) is not None}

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        manifest = [("variant", self.variant.value), ("seed", self.seed),
                    ("mask.grid", self.mask.grid), ("mask.mode", self.mask.mode),
                    ("mask.soft_constant", self.mask.soft_constant),
                    ("artifacts", sorted(self.artifacts()))]
        with open(os.path.join(directory, "manifest.txt"), "w", encoding="utf-8") as fh:
            fh.write(format_keyvalue(manifest))
        dumpers = {"image_encoder": encoders.dumps_network, "text_encoder": encoders.dumps_network,
                   "rid": cmer.dumps_rid, "weights": cmle.dumps_weights,
                   "latent_encoder": encoders.dumps_network, "bank": detector.dumps_bank}
        for name, fname in BUNDLE_FILES.items():
            path = os.path.join(directory, fname)
            obj = getattr(self, name)
            if obj is None:
                if os.path.exists(path):
                    os.remove(path)
                continue
            with open(path, "wb") as fh:
                fh.write(dumpers[name](obj))
        curves = Report({"variant": self.variant.value, "seed": self.seed})
        for name, values in self.curves.items():
            curves.add_table(name, ["epoch", "value"], list(enumerate(values)))
        curves.save(os.path.join(directory, "curves.txt"))

    @classmethod
    def load(cls, directory):
        try:
            manifest = read_keyvalue(os.path.join(directory, "manifest.txt"))
        except ConfigError as exc:
            raise DataError(f"cannot read bundle manifest: {exc}") from exc
        try:
            variant = Variant.parse(manifest["variant"])
            seed = int(manifest["seed"])
            mask = cmer.MaskSpec(manifest["mask.grid"], manifest["mask.mode"],
                                 manifest["mask.soft_constant"])
        except (KeyError, ValueError) as exc:
            raise ParseError(f"incomplete bundle manifest: {exc}") from exc
        loaders = {"image_encoder": encoders.loads_network, "text_encoder": encoders.loads_network,
                   "rid": cmer.loads_rid, "weights": cmle.loads_weights,
                   "latent_encoder": encoders.loads_network, "bank": detector.loads_bank}
        parts = {}
        listed = set(filter(None, manifest.get("artifacts", "").split(",")))
        for name in listed:
            if name not in BUNDLE_FILES:
                raise ParseError(f"unknown artifact {name!r} in manifest")
            path = os.path.join(directory, BUNDLE_FILES[name])
            try:
                with open(path, "rb") as fh:
                    parts[name] = loaders[name](fh.read())
            except OSError as exc:
                raise DataError(f"missing bundle artifact {path}: {exc}") from exc
        if "latent_encoder" not in parts or "bank" not in parts:
            raise ParseError("bundle lacks the latent encoder or Gaussian bank")
        curves = {}
        curves_path = os.path.join(directory, "curves.txt")
        if os.path.exists(curves_path):
            for name, (_, rows) in Report.load(curves_path).tables.items():
                curves[name] = [float(v) for _, v in rows]
        return cls(variant, seed, mask, curves=curves, **parts)


# --- training ------------------------------------------------------------------

def _stage(name, func, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except TrainingDiverged as exc:
        if exc.stage is None:
            exc.stage = name
        raise
    except CMGError as exc:
        raise type(exc)(f"stage {name}: {exc}") from exc


def _mse_guidance(text_embeddings, out_dim, seed):
    """Feature-matching penalty towards a frozen random orthonormal projection of the texts."""
    U, _ = encoders._normalize_rows(np.asarray(text_embeddings, dtype=np.float64))
    rng = np.random.default_rng(seed)
    d_in = U.shape[1]
    Q, _ = np.linalg.qr(rng.normal(size=(max(d_in, out_dim), max(d_in, out_dim))))
    target = U @ Q[:d_in, :out_dim]

    def guidance(F):
        R = F - target
        return float(np.sum(R * R)), 2.0 * R

    return guidance


def _shared_stages(dataset, cfg, variant, cache):
    """Stages 2-8, memoized per seed so variants of one seed share them."""
    seed = cfg.matching.seed
    train = dataset.train_normal
    out = {}
    if variant.uses_matching:
        key = ("matching", seed)
        if key not in cache:
            image_enc, text_enc, hist = _stage("matching", encoders.train_matching, train, cfg.matching)
            cache[key] = (image_enc, text_enc, hist)
        out["image_encoder"], out["text_encoder"], hist = cache[key]
        out["curves"] = {"matching_loss": hist.loss, "matching_retrieval": hist.retrieval_accuracy}
    if variant.uses_masking:
        key = ("masking", seed)
        if key not in cache:
            variants, best = _stage("masking", cmer.select_best_masks, train.texts, train.images,
                                    out["text_encoder"], out["image_encoder"], cfg.mask)
            held = dataset.test_normal
            heldout = None
            if len(held):
                heldout = _stage("masking", cmer.select_best_masks, held.texts, held.images,
                                 out["text_encoder"], out["image_encoder"], cfg.mask)
            rid, rhist = _stage("rid", cmer.train_rid, variants, best, cfg.rid, heldout=heldout)
            masked = variants[np.arange(len(best)), best]
            cache[key] = (rid, rhist, masked, best)
        rid, rhist, masked, best = cache[key]
        out["rid"] = rid
        out["masked_train"] = masked
        out["mask_labels"] = best
        out["curves"].update({"rid_loss": rhist.loss, "rid_accuracy": rhist.accuracy,
                              "rid_heldout_accuracy": rhist.heldout_accuracy})
    if variant.uses_structure or variant.uses_mse:
        key = ("texts", seed)
        if key not in cache:
            cache[key] = out["text_encoder"](train.texts)
        out["text_embeddings"] = cache[key]
    if variant.uses_structure:
        key = ("weights", seed)
        if key not in cache:
            zT = out["text_embeddings"]
            assignment = _stage("clustering", cmle.cluster_texts, zT, min(cfg.K, len(zT)), seed)
            cache[key] = _stage("weights", cmle.fit_group_weights, zT, assignment, cfg.ridge_eps)
        out["weights"] = cache[key]
    return out


def train_cmg(dataset, cfg, variant, cache=None, epoch_callback=None):
    """Train one variant on ``dataset.train_normal``.

    ``cfg`` should already carry the run seed (see :meth:`RunConfig.with_seed`).
    The RID's held-out accuracy curve is measured on ``dataset.test_normal``
    with its text; that curve is diagnostic only and never feeds training.

    Parameters
    ----------
    dataset : Dataset
    cfg : RunConfig
    variant : Variant or str
    cache : dict, optional
        Shared across calls to reuse matching/masking/weight stages.
    epoch_callback : callable, optional
        ``epoch_callback(epoch, latent_encoder, images)`` after each latent epoch.

    Returns
    -------
    Bundle
    """
    variant = Variant.parse(variant.value if isinstance(variant, Variant) else variant)
    if len(dataset.train_normal) < 2:
        raise ShapeError("need at least two training samples")
    cache = {} if cache is None else cache
    shared = _shared_stages(dataset, cfg, variant, cache)
    images = shared.get("masked_train", dataset.train_normal.images)

    guidance = None
    if variant.uses_structure:
        guidance = shared["weights"]
    elif variant.uses_mse:
        guidance = _mse_guidance(shared["text_embeddings"], cfg.latent.embed_dim, cfg.latent.seed)

    callback = None
    if epoch_callback is not None:
        def callback(epoch, enc):
            epoch_callback(epoch, enc, images)

    latent, losses = _stage("latent", encoders.train_latent, images, cfg.latent, cfg.mask.grid,
                            guidance=guidance, epoch_callback=callback)
    feats = latent(images.reshape(len(images), -1))
    bank = _stage("detector", detector.fit, feats, cfg.m, cfg.latent.seed, cfg.shrink_eps)
    curves = dict(shared.get("curves", {}))
    curves["latent_loss"] = losses
    return Bundle(variant, cfg.latent.seed, cfg.mask, latent, bank,
                  image_encoder=shared.get("image_encoder"),
                  text_encoder=shared.get("text_encoder"),
                  rid=shared.get("rid"), weights=shared.get("weights"), curves=curves)


def prepare_images(bundle, images):
    """Test-time input: RID-masked for masking variants, raw otherwise."""
    images = np.asarray(images, dtype=np.float64)
    if bundle.variant.uses_masking:
        images, _ = cmer.rid_mask_batch(images, bundle.rid, bundle.mask)
    return images


def anomaly_scores(bundle, images):
    x = prepare_images(bundle, images)
    return detector.score(bundle.bank, bundle.latent_encoder(x.reshape(len(x), -1)))


def test_scores(bundle, samples, labels):
    """Score test images; ``samples`` may be a :class:`SampleSet` (only images are read) or an array."""
    images = samples.images if isinstance(samples, SampleSet) else samples
    return numerics.ScoredLabels(anomaly_scores(bundle, images), labels)


# --- audits ----------------------------------------------------------------------

def cmer_masked(bundle, samples):
    """Training-time masking of paired samples with the bundle's matching encoders."""
    if bundle.image_encoder is None:
        raise ConfigError(f"variant {bundle.variant.value} has no matching encoders")
    variants, best = cmer.select_best_masks(samples.texts, samples.images, bundle.text_encoder,
                                            bundle.image_encoder, bundle.mask)
    return variants[np.arange(len(best)), best], best


def entropy_audit(bundle, samples):
    masked, _ = cmer_masked(bundle, samples)
    exclude = 0.0 if bundle.mask.mode == "hard" else None
    return cmer.entropy_audit(samples.images, masked, exclude_value=exclude)


def mask_region(images, regions, spec):
    """Apply the single-region mask ``regions[i]`` to ``images[i]``."""
    variants = cmer.enumerate_masks_batch(images, spec)
    return variants[np.arange(len(regions)), regions]


def redundancy_audit(dataset, bundle, noise_seed=AUDIT_NOISE_SEED, noise_sigma=None, masker=None):
    """Distance correlation of raw and CMER-masked images with injected Gaussian noise.

    A fixed seeded noise matrix is added to the flattened training images;
    the masked copy applies the text-selected region mask to the noisy image,
    so masking also suppresses the noise inside the discarded region.

    Parameters
    ----------
    masker : callable, optional
        ``masker(samples) -> region ids`` overriding the bundle's selection.

    Returns
    -------
    dcor_raw_noise, dcor_masked_noise : float
    """
    samples = dataset.train_normal
    if masker is None:
        _, regions = cmer_masked(bundle, samples)
    else:
        regions = np.asarray(masker(samples), dtype=np.int64)
    sigma = dataset.config.noise_sigma if noise_sigma is None else noise_sigma
    rng = np.random.default_rng(noise_seed)
    noise = rng.normal(scale=max(sigma, 1e-12), size=samples.images.shape)
    noisy = samples.images + noise
    masked = mask_region(noisy, regions, bundle.mask)
    flat_noise = noise.reshape(len(noise), -1)
    return (numerics.distance_correlation(noisy.reshape(len(noisy), -1), flat_noise),
            numerics.distance_correlation(masked.reshape(len(masked), -1), flat_noise))


# --- ablation ----------------------------------------------------------------------

def confidence_halfwidth(values):
    """Normal-approximation 95% half-width ``1.96 * sd / sqrt(s)``; None with fewer than 2 values."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return None
    return float(1.96 * values.std(ddof=1) / math.sqrt(values.size))


@dataclass
class MetricsReport:
    seeds: tuple
    results: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)
    audits: dict = field(default_factory=dict)

    def values(self, variant, metric="auroc"):
        col = 0 if metric == "auroc" else 1
        return [self.results[(variant, s)][col] for s in self.seeds if (variant, s) in self.results]

    def mean(self, variant, metric="auroc"):
        vals = self.values(variant, metric)
        return float(np.mean(vals)) if vals else float("nan")

    def ci95(self, variant, metric="auroc"):
        return confidence_halfwidth(self.values(variant, metric))

    def variants(self):
        seen = []
        for v, _ in self.results:
            if v not in seen:
                seen.append(v)
        return seen

    def to_report(self):
        rep = Report({"report": "ablation", "version": 1, "seeds": list(self.seeds)})
        for v in self.variants():
            for metric in ("auroc", "auprc"):
                rep.scalars[f"{metric}.{v}.mean"] = self.mean(v, metric)
                ci = self.ci95(v, metric)
                if ci is not None:
                    rep.scalars[f"{metric}.{v}.ci95"] = ci
        for v, msg in self.failures.items():
            rep.scalars[f"failure.{v}"] = msg.replace("\n", " ")
        for key, value in self.audits.items():
            rep.scalars[f"audit.{key}"] = value
        rep.add_table("per_seed", ["variant", "seed", "auroc", "auprc"],
                      [[v, s, a, p] for (v, s), (a, p) in self.results.items()])
        for name, values in self.curves.items():
            rep.add_table(f"curve.{name}", ["epoch", "value"], list(enumerate(values)))
        return rep

    def dumps(self):
        return self.to_report().dumps()

    @classmethod
    def loads(cls, text):
        rep = Report.loads(text)
        if rep.scalars.get("report") != "ablation":
            raise ParseError("not an ablation report")
        seeds = tuple(int(s) for s in rep.scalars["seeds"].split(","))
        out = cls(seeds)
        for key, value in rep.scalars.items():
            if key.startswith("failure."):
                out.failures[key[len("failure."):]] = value
            elif key.startswith("audit."):
                out.audits[key[len("audit."):]] = float(value)
        _, rows = rep.tables.get("per_seed", ([], []))
        for v, s, a, p in rows:
            out.results[(v, int(s))] = (float(a), float(p))
        for name, (_, rows) in rep.tables.items():
            if name.startswith("curve."):
                out.curves[name[len("curve."):]] = [float(val) for _, val in rows]
        return out

    def __eq__(self, other):
        if not isinstance(other, MetricsReport):
            return NotImplemented
        return (self.seeds == other.seeds and self.results == other.results
                and self.failures == other.failures and self.curves == other.curves
                and self.audits == other.audits)


def ablate(dataset, cfg, variants=tuple(Variant), log=None):
    """Train and score every variant for every seed in ``cfg.seeds``.

    A failing variant is recorded in ``failures`` and the rest continue.
    Per-epoch test AUROC is logged for SSD and CMG; entropy, redundancy and
    RID audits come from the CMG run of each seed.
    """
    test, labels = dataset.test_set()
    report = MetricsReport(tuple(cfg.seeds))
    entropy_raw, entropy_masked, dcor_raw, dcor_masked, rid_acc = [], [], [], [], []
    for seed in cfg.seeds:
        run_cfg = cfg.with_seed(seed)
        cache = {}
        for variant in variants:
            name = variant.value
            if name in report.failures:
                continue
            curve = []
            callback = None
            if variant in (Variant.SSD, Variant.CMG):
                def callback(epoch, enc, images, curve=curve, variant=variant):
                    feats = enc(images.reshape(len(images), -1))
                    bank = detector.fit(feats, run_cfg.m, seed, run_cfg.shrink_eps)
                    x = test.images
                    if variant.uses_masking:
                        x, _ = cmer.rid_mask_batch(x, cache[("masking", seed)][0], run_cfg.mask)
                    s = detector.score(bank, enc(x.reshape(len(x), -1)))
                    curve.append(numerics.auroc(s, labels))
            try:
                bundle = train_cmg(dataset, run_cfg, variant, cache=cache, epoch_callback=callback)
                scored = test_scores(bundle, test, labels)
                report.results[(name, seed)] = (numerics.auroc(scored), numerics.auprc(scored))
            except CMGError as exc:
                report.failures[name] = f"seed {seed}: {exc}"
                continue
            if curve:
                report.curves[f"auroc.{name}.seed{seed}"] = curve
            if variant is Variant.CMG:
                ent = entropy_audit(bundle, dataset.train_normal)
                entropy_raw.append(ent.mean_H_raw)
                entropy_masked.append(ent.mean_H_masked)
                dr, dm = redundancy_audit(dataset, bundle)
                dcor_raw.append(dr)
                dcor_masked.append(dm)
                report.curves[f"rid_heldout_accuracy.seed{seed}"] = bundle.curves["rid_heldout_accuracy"]
                rid_acc.append(bundle.curves["rid_heldout_accuracy"][-1])
            if log is not None:
                a, p = report.results[(name, seed)]
                log(f"seed {seed} {name}: auroc={a:.4f} auprc={p:.4f}")
    if entropy_raw:
        report.audits.update({
            "entropy_raw_mean": float(np.mean(entropy_raw)),
            "entropy_masked_mean": float(np.mean(entropy_masked)),
            "dcor_raw_noise_mean": float(np.mean(dcor_raw)),
            "dcor_masked_noise_mean": float(np.mean(dcor_masked)),
            "rid_heldout_accuracy_median": float(np.median(rid_acc)),
        })
        for seed, er, em, dr, dm in zip(cfg.seeds, entropy_raw, entropy_masked, dcor_raw, dcor_masked):
            report.audits[f"entropy_raw.seed{seed}"] = er
            report.audits[f"entropy_masked.seed{seed}"] = em
            report.audits[f"dcor_raw_noise.seed{seed}"] = dr
            report.audits[f"dcor_masked_noise.seed{seed}"] = dm
    return report


# --- estimator -----------------------------------------------------------------------

class CMGDetector(OutlierMixin, BaseEstimator):
    """Scikit-learn outlier detector trained on image/text pairs, applied to images alone.

    Parameters
    ----------
    variant : str, default='CMG'
        One of SSD, SSD_ER, SSD_LE, CMG, CMG_MSE.
    config : RunConfig, optional
        Stage hyperparameters; the generator section is ignored.
    random_state : int, default=0
    contamination : float, default=0.05
        Fraction of training images flagged by :meth:`predict`.

    Attributes
    ----------
    bundle_ : Bundle
    offset_ : float
    """

    def __init__(self, variant="CMG", config=None, random_state=0, contamination=0.05):
        self.variant = variant
        self.config = config
        self.random_state = random_state
        self.contamination = contamination

    def fit(self, X, y):
        """``X`` images (n, side, side); ``y`` paired text vectors (n, text_dim)."""
        X = cmer._check_images(X)
        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 2 or y.shape[0] != X.shape[0]:
            raise ShapeError("texts must be a 2-D array aligned with the images")
        cfg = (self.config or RunConfig()).with_seed(self.random_state)
        n = X.shape[0]
        train = SampleSet(X, y, np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64))
        empty = SampleSet(X[:0], y[:0], np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
        self.bundle_ = train_cmg(Dataset(train, empty, empty, cfg.gen), cfg, self.variant)
        self.offset_ = float(np.percentile(self.score_samples(X), 100.0 * self.contamination))
        return self

    def anomaly_score(self, X):
        check_is_fitted(self, "bundle_")
        return anomaly_scores(self.bundle_, cmer._check_images(X))

    def score_samples(self, X):
        return -self.anomaly_score(X)

    def decision_function(self, X):
        return self.score_samples(X) - self.offset_

    def predict(self, X):
        return np.where(self.decision_function(X) < 0, -1, 1)
