import struct

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from cmg import synthdata
from cmg.errors import ConfigError, ParseError, VersionError
from cmg.synthdata import GenConfig


def region_means(dataset_split, cfg):
    slices = synthdata.region_slices(cfg.image_side, cfg.grid)
    return np.stack([[img[rs, cs].mean() for rs, cs in slices] for img in dataset_split.images])


class TestConfig:
    def test_split_arithmetic(self):
        ds = synthdata.generate(GenConfig(n_classes_normal=6, samples_per_class=50))
        assert len(ds.train_normal) == 240
        assert len(ds.test_normal) == 60
        assert len(ds.test_anomaly) == 4 * 50

    @pytest.mark.parametrize("changes", [
        {"image_side": 13},
        {"grid": 0},
        {"signal_strength": 0.5, "clutter_strength": 0.6},
        {"clutter_strength": 0.0},
        {"noise_sigma": -1.0},
        {"samples_per_class": 1},
        {"text_dim": 0},
    ])
    def test_invalid(self, changes):
        with pytest.raises(ConfigError):
            GenConfig(**changes)

    def test_from_text(self):
        cfg = GenConfig.from_text("grid = 3\nimage_side = 12\n# comment\nseed = 4\n")
        assert cfg.grid == 3 and cfg.seed == 4 and cfg.n_regions == 9

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            GenConfig.from_text("colour = red\n")


class TestGenerate:
    def test_deterministic(self):
        a = synthdata.dumps(synthdata.generate(GenConfig(samples_per_class=10, seed=3)))
        b = synthdata.dumps(synthdata.generate(GenConfig(samples_per_class=10, seed=3)))
        assert a == b

    def test_seed_changes_data(self):
        a = synthdata.generate(GenConfig(samples_per_class=10, seed=1))
        b = synthdata.generate(GenConfig(samples_per_class=10, seed=2))
        assert a.train_normal != b.train_normal

    def test_invariants(self, default_dataset):
        ds = default_dataset
        cfg = ds.config
        train_cls = set(ds.train_normal.class_ids)
        assert train_cls.isdisjoint(ds.test_anomaly.class_ids)
        assert set(ds.test_normal.class_ids) <= train_cls
        for split in (ds.train_normal, ds.test_normal, ds.test_anomaly):
            assert split.images.min() >= 0.0 and split.images.max() <= 1.0
            assert np.all((split.signal_regions >= 0) & (split.signal_regions < cfg.n_regions))
            assert split.texts.shape[1] == cfg.text_dim

    def test_signal_region_is_brightest(self):
        cfg = GenConfig(signal_strength=0.8, clutter_strength=0.2, noise_sigma=0.05)
        ds = synthdata.generate(cfg)
        samples = synthdata.SampleSet.concat(ds.train_normal, ds.test_normal, ds.test_anomaly)
        means = region_means(samples, cfg)
        idx = np.arange(len(samples))
        inside = means[idx, samples.signal_regions]
        others = (means.sum(axis=1) - inside) / (cfg.n_regions - 1)
        assert np.mean(inside > others) >= 0.95

    def test_signal_region_separates_classes_linearly(self):
        cfg = GenConfig(signal_strength=0.8, clutter_strength=0.2)
        ds = synthdata.generate(cfg)
        slices = synthdata.region_slices(cfg.image_side, cfg.grid)

        def crops(split):
            return np.stack([img[slices[r][0], slices[r][1]].ravel()
                             for img, r in zip(split.images, split.signal_regions)])

        clf = LogisticRegression(max_iter=2000).fit(crops(ds.train_normal), ds.train_normal.class_ids)
        assert clf.score(crops(ds.test_normal), ds.test_normal.class_ids) >= 0.9

    def test_text_centroids_separated(self, default_dataset):
        ds = default_dataset
        samples = synthdata.SampleSet.concat(ds.train_normal, ds.test_normal, ds.test_anomaly)
        classes = np.unique(samples.class_ids)
        centroids = np.stack([samples.texts[samples.class_ids == c].mean(axis=0) for c in classes])
        d = np.linalg.norm(centroids[:, None] - centroids[None], axis=-1)
        assert d[~np.eye(len(classes), dtype=bool)].min() >= 6 * ds.config.noise_sigma

    def test_sample_access(self, default_dataset):
        s = default_dataset.train_normal[3]
        assert s.image.shape == (12, 12)
        assert isinstance(s.class_id, int)
        assert len(list(default_dataset.test_normal)) == len(default_dataset.test_normal)

    def test_test_set_labels(self, default_dataset):
        samples, labels = default_dataset.test_set()
        assert len(samples) == len(labels)
        assert labels.sum() == len(default_dataset.test_anomaly)
        assert np.all(labels[:len(default_dataset.test_normal)] == 0)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        ds = synthdata.generate(GenConfig(samples_per_class=12, seed=5, grid=3))
        path = tmp_path / "d.cmgd"
        synthdata.save(ds, path)
        back = synthdata.load(path)
        assert back.config == ds.config
        assert back.train_normal == ds.train_normal
        assert back.test_normal == ds.test_normal
        assert back.test_anomaly == ds.test_anomaly

    def test_header_layout(self):
        blob = synthdata.dumps(synthdata.generate(GenConfig(samples_per_class=4)))
        magic, version = struct.unpack_from("<4sI", blob, 0)
        assert magic == b"CMGD" and version == 1

    @pytest.mark.parametrize("cut", [0, 5, 40, 200, -1])
    def test_truncated(self, cut):
        blob = synthdata.dumps(synthdata.generate(GenConfig(samples_per_class=4)))
        with pytest.raises(ParseError) as info:
            synthdata.loads(blob[:cut])
        assert info.value.offset is not None

    def test_trailing_bytes(self):
        blob = synthdata.dumps(synthdata.generate(GenConfig(samples_per_class=4)))
        with pytest.raises(ParseError):
            synthdata.loads(blob + b"\0")

    def test_version_two(self):
        blob = bytearray(synthdata.dumps(synthdata.generate(GenConfig(samples_per_class=4))))
        struct.pack_into("<I", blob, 4, 2)
        with pytest.raises(VersionError):
            synthdata.loads(bytes(blob))

    def test_bad_magic(self):
        blob = synthdata.dumps(synthdata.generate(GenConfig(samples_per_class=4)))
        with pytest.raises(ParseError):
            synthdata.loads(b"XXXX" + blob[4:])

    def test_bad_region(self):
        ds = synthdata.generate(GenConfig(samples_per_class=4))
        blob = bytearray(synthdata.dumps(ds))
        # first record: split count then (class id, region)
        struct.pack_into("<q", blob, synthdata._HEADER.size + 8 + 8, 99)
        with pytest.raises(ParseError):
            synthdata.loads(bytes(blob))
