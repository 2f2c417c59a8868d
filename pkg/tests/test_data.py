"""Dataset tests: ring sampler, IDX parsing, preprocessing, glyph fallback."""

import gzip
import struct

import numpy as np
import pytest

from memdiff import data
from memdiff.data import DataError, RingSpec


class TestRingSampler:
    def test_statistics(self):
        rng = np.random.default_rng(0)
        pts = data.ring_sampler(RingSpec(n=20000), rng)
        r = np.linalg.norm(pts, axis=1)
        assert abs(r.mean() - 1.0) < 0.005
        assert abs(r.std() - 0.05) < 0.005
        theta = np.arctan2(pts[:, 1], pts[:, 0])
        # uniform angles: all four quadrants roughly equally populated
        counts = np.histogram(theta, bins=4, range=(-np.pi, np.pi))[0]
        assert counts.min() > 0.8 * counts.max()

    def test_invalid_spec(self):
        with pytest.raises(DataError):
            RingSpec(radius=0.0)
        with pytest.raises(DataError):
            RingSpec(radial_sigma=-0.1)

    def test_seeded_reproducible(self):
        a = data.ring_sampler(RingSpec(n=10), np.random.default_rng(1))
        b = data.ring_sampler(RingSpec(n=10), np.random.default_rng(1))
        assert np.array_equal(a, b)


class TestPreprocess:
    def test_all_zero(self):
        out = data.preprocess(np.zeros((28, 28)))
        assert out.shape == (12, 12)
        assert np.allclose(out, -1.0)

    def test_all_255(self):
        assert np.allclose(data.preprocess(np.full((28, 28), 255)), 1.0)

    def test_checkerboard_pools_to_zero(self):
        img = np.zeros((28, 28))
        img[::2, 1::2] = 255
        img[1::2, ::2] = 255
        assert np.allclose(data.preprocess(img), 0.0)

    def test_shape_guard(self):
        with pytest.raises(DataError):
            data.preprocess(np.zeros((14, 14)))


class TestIdxFiles:
    def test_image_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        imgs = rng.integers(0, 256, (5, 28, 28)).astype(np.uint8)
        path = tmp_path / "imgs.idx"
        data.save_idx_images(imgs, path)
        back = data.load_idx_images(path)
        assert np.array_equal(imgs, back)

    def test_label_round_trip(self, tmp_path):
        labels = np.array([8, 11, 21, 8], np.uint8)
        path = tmp_path / "labels.idx"
        data.save_idx_labels(labels, path)
        assert np.array_equal(data.load_idx_labels(path), labels)

    def test_gzip_supported(self, tmp_path):
        rng = np.random.default_rng(3)
        imgs = rng.integers(0, 256, (2, 28, 28)).astype(np.uint8)
        plain = tmp_path / "im.idx"
        data.save_idx_images(imgs, plain)
        gz = tmp_path / "im.idx.gz"
        gz.write_bytes(gzip.compress(plain.read_bytes()))
        assert np.array_equal(data.load_idx_images(gz), imgs)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.idx"
        path.write_bytes(struct.pack(">iiii", 0xdead, 1, 28, 28) + b"\0" * 784)
        with pytest.raises(DataError, match="magic"):
            data.load_idx_images(path)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "trunc.idx"
        path.write_bytes(struct.pack(">iiii", data.IMAGE_MAGIC, 2, 28, 28)
                         + b"\0" * 100)
        with pytest.raises(DataError, match="truncated"):
            data.load_idx_images(path)

    def test_missing_file_message_mentions_synthetic(self, tmp_path):
        with pytest.raises(DataError, match="synthetic"):
            data.load_idx_images(tmp_path / "nope.idx")

    def test_count_mismatch_rejected(self, tmp_path):
        rng = np.random.default_rng(4)
        imgs = rng.integers(0, 256, (3, 28, 28)).astype(np.uint8)
        data.save_idx_images(imgs, tmp_path / "im.idx")
        data.save_idx_labels(np.array([1, 2], np.uint8), tmp_path / "lb.idx")
        with pytest.raises(DataError, match="mismatch"):
            data.load_emnist(tmp_path / "im.idx", tmp_path / "lb.idx")


class TestEmnistFilter:
    def test_keeps_only_hku(self, tmp_path):
        rng = np.random.default_rng(5)
        imgs = rng.integers(0, 256, (6, 28, 28)).astype(np.uint8)
        labels = np.array([8, 1, 11, 21, 2, 8], np.uint8)  # H, -, K, U, -, H
        data.save_idx_images(imgs, tmp_path / "im.idx")
        data.save_idx_labels(labels, tmp_path / "lb.idx")
        ds = data.emnist_letter_dataset(tmp_path / "im.idx",
                                        tmp_path / "lb.idx")
        assert len(ds.images) == 4
        assert list(ds.labels) == [0, 1, 2, 0]
        assert ds.images.shape[1:] == (12, 12)
        assert np.all(ds.images >= -1.0) and np.all(ds.images <= 1.0)


class TestSyntheticGlyphs:
    def test_schema(self):
        ds = data.synthetic_glyphs(10, np.random.default_rng(6))
        assert ds.images.shape == (30, 12, 12)
        assert np.all(np.bincount(ds.labels) == 10)
        assert np.all(ds.images >= -1.0) and np.all(ds.images <= 1.0)

    def test_class_means_distinguishable(self):
        ds = data.synthetic_glyphs(50, np.random.default_rng(7))
        means = data.class_means(ds)
        assert means.shape == (3, 12, 12)
        for a in range(3):
            for b in range(a + 1, 3):
                assert np.mean((means[a] - means[b])**2) > 0.01


class TestCsvCache:
    def test_round_trip(self, tmp_path):
        ds = data.synthetic_glyphs(3, np.random.default_rng(8))
        path = tmp_path / "ds.csv"
        data.save_dataset_csv(ds, path)
        back = data.load_dataset_csv(path)
        assert np.allclose(back.images, ds.images, atol=1e-12)
        assert np.array_equal(back.labels, ds.labels)
