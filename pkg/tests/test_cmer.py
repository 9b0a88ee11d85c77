import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmg import cmer, encoders, pipeline
from cmg.cmer import MaskSpec, RedundancyMasker
from cmg.encoders import TrainConfig
from cmg.errors import ConfigError, DomainError, ParseError, ShapeError, VersionError


def zero_rid(input_dim, widths=(8, 4)):
    rid = cmer.make_rid(input_dim, 0, widths)
    for p in rid.params:
        p[...] = 0.0
    return rid


class TestMaskSpec:
    def test_regions(self):
        assert MaskSpec(grid=3).n_regions == 9

    @pytest.mark.parametrize("changes", [{"grid": 0}, {"mode": "blur"}, {"soft_constant": 1.0},
                                         {"soft_constant": 0.0}])
    def test_invalid(self, changes):
        with pytest.raises(ConfigError):
            MaskSpec(**changes)


class TestEnumerateMasks:
    def test_hard_top_left(self):
        v = cmer.enumerate_masks(np.ones((4, 4)), MaskSpec(grid=2, mode="hard"))
        assert v.shape == (4, 4, 4)
        assert np.all(v[0, :2, :2] == 0.0)
        assert v[0].sum() == 12

    def test_soft_block(self):
        v = cmer.enumerate_masks(np.ones((4, 4)), MaskSpec(grid=2, mode="soft", soft_constant=0.1))
        np.testing.assert_array_equal(v[0, :2, :2], np.full((2, 2), 0.1))
        assert np.all(v[0][2:, :] == 1.0)

    @given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 3, 4]))
    def test_partition(self, seed, grid):
        image = np.random.default_rng(seed).random((12, 12)) + 0.1
        v = cmer.enumerate_masks(image, MaskSpec(grid=grid, mode="hard"))
        removed = (image[None] - v) != 0
        np.testing.assert_array_equal(removed.sum(axis=0), np.ones((12, 12)))
        np.testing.assert_array_equal((image[None] - v).sum(axis=0), image)

    def test_variant_changes_only_its_region(self):
        image = np.random.default_rng(0).random((6, 6)) + 0.1
        v = cmer.enumerate_masks(image, MaskSpec(grid=3, mode="soft"))
        for m in range(9):
            r, c = divmod(m, 3)
            inside = np.zeros((6, 6), dtype=bool)
            inside[2 * r:2 * r + 2, 2 * c:2 * c + 2] = True
            assert np.array_equal(v[m][~inside], image[~inside])
            assert np.all(v[m][inside] != image[inside])

    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.99))
    def test_soft_preserves_order(self, seed, c):
        image = np.random.default_rng(seed).random((4, 4))
        v = cmer.enumerate_masks(image, MaskSpec(grid=2, mode="soft", soft_constant=c))
        block = image[:2, :2].ravel()
        masked = v[0, :2, :2].ravel()
        np.testing.assert_array_equal(np.argsort(block, kind="stable"), np.argsort(masked, kind="stable"))

    def test_indivisible(self):
        with pytest.raises(ShapeError):
            cmer.enumerate_masks(np.ones((5, 5)), MaskSpec(grid=2))

    def test_not_square(self):
        with pytest.raises(ShapeError):
            cmer.enumerate_masks(np.ones((4, 6)), MaskSpec(grid=2))

    def test_batch_agrees(self):
        images = np.random.default_rng(1).random((3, 6, 6))
        spec = MaskSpec(grid=3)
        batch = cmer.enumerate_masks_batch(images, spec)
        for i in range(3):
            np.testing.assert_array_equal(batch[i], cmer.enumerate_masks(images[i], spec))


class TestSelectBestMask:
    def encoders(self):
        cfg = TrainConfig(embed_dim=6, hidden_dim=10)
        return encoders.make_encoder(5, cfg, 0), encoders.make_encoder(16, cfg, 1)

    def test_uniform_image_ties_to_zero(self):
        text_enc, image_enc = self.encoders()
        variants = cmer.enumerate_masks(np.full((4, 4), 0.5), MaskSpec(grid=1))
        variants = np.repeat(variants, 4, axis=0)
        best, label = cmer.select_best_mask(np.ones(5), variants, text_enc, image_enc)
        assert best == 0
        np.testing.assert_array_equal(label, [1, 0, 0, 0])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_output_is_an_enumerated_variant(self, seed):
        rng = np.random.default_rng(seed)
        text_enc, image_enc = self.encoders()
        images = rng.random((5, 4, 4))
        texts = rng.normal(size=(5, 5))
        spec = MaskSpec(grid=2)
        variants, best = cmer.select_best_masks(texts, images, text_enc, image_enc, spec)
        for i in range(5):
            single, label = cmer.select_best_mask(texts[i], variants[i], text_enc, image_enc)
            assert single == best[i]
            assert label.sum() == 1.0 and label[single] == 1.0
        assert np.all((best >= 0) & (best < 4))

    def test_mask_sets(self):
        variants = np.zeros((2, 4, 4, 4))
        sets = cmer.mask_sets(variants, [3, 1])
        assert [s.best_index for s in sets] == [3, 1]
        np.testing.assert_array_equal(sets[0].region_ids, np.arange(4))

    def test_avoids_signal_region_on_default_data(self, default_dataset, default_cmg_bundle):
        train = default_dataset.train_normal
        _, best = pipeline.cmer_masked(default_cmg_bundle, train)
        assert np.mean(best != train.signal_regions) >= 0.9


class TestRidLoss:
    def test_uniform_scores(self):
        loss, grad = cmer.rid_cross_entropy(np.zeros((2, 4)), [0, 3])
        assert loss == pytest.approx(np.log(4))
        np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-15)

    def test_gradient(self):
        import oracles
        rng = np.random.default_rng(0)
        scores = rng.normal(size=(3, 4))
        labels = [1, 0, 2]
        _, grad = cmer.rid_cross_entropy(scores, labels)
        numeric = oracles.central_difference(lambda: cmer.rid_cross_entropy(scores, labels)[0], scores)
        assert oracles.relative_error(grad, numeric) <= 1e-6


class TestTrainRid:
    def random_task(self, seed, n=200, side=4):
        rng = np.random.default_rng(seed)
        variants = cmer.enumerate_masks_batch(rng.random((n, side, side)), MaskSpec(grid=2))
        return variants, rng.integers(0, 4, n)

    def test_zero_learning_rate(self):
        variants, labels = self.random_task(0, n=20)
        cfg = TrainConfig(learning_rate=0.0, epochs=3)
        rid, hist = cmer.train_rid(variants, labels, cfg, widths=(8, 4, 2))
        assert rid == cmer.make_rid(16, cfg.seed + 4, (8, 4, 2))
        assert hist.accuracy[0] == hist.accuracy[-1] == cmer.rid_accuracy(rid, variants, labels)

    def test_random_labels_at_chance(self):
        train = self.random_task(1, n=400)
        held = self.random_task(2, n=2000)
        _, hist = cmer.train_rid(*train, TrainConfig(learning_rate=0.05, epochs=10),
                                 widths=(32, 16, 8), heldout=held)
        assert abs(hist.heldout_accuracy[-1] - 0.25) <= 0.05

    def test_cmer_labels_learnable(self, default_cmg_bundle):
        acc = default_cmg_bundle.curves["rid_accuracy"]
        assert len(acc) <= 50
        assert acc[-1] >= 0.5

    def test_accuracy_non_decreasing_up_to_noise(self, default_cmg_bundle):
        acc = default_cmg_bundle.curves["rid_accuracy"]
        drops = sum(b < a for a, b in zip(acc, acc[1:]))
        assert drops <= 0.1 * (len(acc) - 1), f"accuracy per epoch {np.round(acc, 3).tolist()}"

    def test_bad_labels(self):
        variants, labels = self.random_task(0, n=5)
        with pytest.raises(DomainError):
            cmer.train_rid(variants, np.full(5, 4), TrainConfig(epochs=1))
        with pytest.raises(DomainError):
            cmer.train_rid(variants[:0], labels[:0], TrainConfig(epochs=1))

    def test_deterministic(self):
        variants, labels = self.random_task(3, n=30)
        cfg = TrainConfig(epochs=2, learning_rate=0.05)
        a = cmer.train_rid(variants, labels, cfg, widths=(8, 4, 2))
        b = cmer.train_rid(variants, labels, cfg, widths=(8, 4, 2))
        assert a[0] == b[0] and a[1].loss == b[1].loss

    def test_default_widths(self):
        rid = cmer.make_rid(144, 0)
        assert [W.shape[1] for W in rid.weights] == [512, 256, 128, 1]


class TestRidMask:
    def test_zero_rid_uniform_image(self):
        spec = MaskSpec(grid=2)
        image = np.full((4, 4), 0.5)
        out = cmer.rid_mask(image, zero_rid(16), spec)
        np.testing.assert_array_equal(out, cmer.enumerate_masks(image, spec)[0])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_output_is_an_enumerated_variant(self, seed):
        rng = np.random.default_rng(seed)
        spec = MaskSpec(grid=2)
        rid = cmer.make_rid(16, seed % 1000, (8, 4))
        images = rng.random((4, 4, 4))
        masked, chosen = cmer.rid_mask_batch(images, rid, spec)
        variants = cmer.enumerate_masks_batch(images, spec)
        for i in range(4):
            assert np.array_equal(masked[i], variants[i, chosen[i]])
            scores = cmer.rid_scores(rid, variants[i:i + 1])[0]
            assert chosen[i] == int(np.argmax(np.round(scores, 12)))

    def test_single_pass(self):
        rng = np.random.default_rng(0)
        rid = cmer.make_rid(16, 1, (8, 4))
        image = rng.random((4, 4))
        out = cmer.rid_mask(image, rid, MaskSpec(grid=2))
        # exactly one region differs from the raw image
        changed = [np.any(out[r:r + 2, c:c + 2] != image[r:r + 2, c:c + 2]) for r in (0, 2) for c in (0, 2)]
        assert sum(changed) == 1

    def test_avoids_signal_region_on_held_out(self, default_dataset, default_cmg_bundle):
        held = default_dataset.test_normal
        _, chosen = cmer.rid_mask_batch(held.images, default_cmg_bundle.rid, default_cmg_bundle.mask)
        assert np.mean(chosen != held.signal_regions) >= 0.8


class TestEntropyAudit:
    def test_identity(self):
        images = np.random.default_rng(0).random((5, 8, 8))
        rep = cmer.entropy_audit(images, images.copy())
        assert rep.mean_H_raw == rep.mean_H_masked
        assert len(rep.raw) == len(rep.masked) == 5

    def test_hard_exclusion(self):
        # the masked region holds a permutation of values present elsewhere, so removing it
        # keeps the pixel distribution and therefore the entropy
        rng = np.random.default_rng(1)
        block = rng.random((4, 4)) * 0.9 + 0.05
        raw = np.tile(block, (2, 2))
        masked = cmer.enumerate_masks(raw, MaskSpec(grid=2, mode="hard"))[0]
        rep = cmer.entropy_audit(raw[None], masked[None], exclude_value=0.0)
        assert rep.mean_H_masked == pytest.approx(rep.mean_H_raw, abs=1e-9)

    def test_empty(self):
        with pytest.raises(DomainError):
            cmer.entropy_audit(np.zeros((0, 4, 4)), np.zeros((0, 4, 4)))

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            cmer.entropy_audit(np.zeros((2, 4, 4)), np.zeros((3, 4, 4)))

    def test_cmer_masking_lowers_entropy(self, default_dataset, default_cmg_bundle):
        rep = pipeline.entropy_audit(default_cmg_bundle, default_dataset.train_normal)
        assert rep.mean_H_masked < rep.mean_H_raw


class TestRedundancyMasker:
    def test_fit_transform(self, tiny_dataset):
        train = tiny_dataset.train_normal
        fast = TrainConfig(epochs=3)
        masker = RedundancyMasker(matching_config=fast, rid_config=fast)
        out = masker.fit(train.images, train.texts).transform(tiny_dataset.test_normal.images)
        assert out.shape == tiny_dataset.test_normal.images.shape
        assert masker.labels_.shape == (len(train),)
        assert masker.get_params()["mode"] == "soft"

    def test_unfitted(self):
        from sklearn.exceptions import NotFittedError
        with pytest.raises(NotFittedError):
            RedundancyMasker().transform(np.zeros((1, 4, 4)))

    def test_misaligned_texts(self):
        with pytest.raises(ShapeError):
            RedundancyMasker().fit(np.zeros((3, 4, 4)), np.zeros((2, 5)))

    def test_non_finite(self):
        X = np.zeros((2, 4, 4))
        X[0, 0, 0] = np.nan
        with pytest.raises(DomainError):
            RedundancyMasker().fit(X, np.zeros((2, 5)))


class TestRidCheckpoint:
    def test_round_trip(self):
        rid = cmer.make_rid(16, 3, (8, 4, 2))
        blob = cmer.dumps_rid(rid)
        assert blob[:4] == b"CMGR"
        assert cmer.loads_rid(blob) == rid

    def test_version(self):
        blob = bytearray(cmer.dumps_rid(cmer.make_rid(16, 3, (8, 4))))
        struct.pack_into("<I", blob, 4, 9)
        with pytest.raises(VersionError):
            cmer.loads_rid(bytes(blob))

    def test_truncated(self):
        blob = cmer.dumps_rid(cmer.make_rid(16, 3, (8, 4)))
        with pytest.raises(ParseError):
            cmer.loads_rid(blob[:20])

    def test_encoder_file_rejected(self):
        blob = encoders.dumps_network(cmer.make_rid(16, 3, (8, 4)))
        with pytest.raises(ParseError):
            cmer.loads_rid(blob)
