import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anchor_loss import data as D
from anchor_loss.numerics import seeded_rng


def cifar_records(n, seed=0, labels=None):
    rng = seeded_rng(seed)
    arr = rng.integers(0, 256, size=(n, D.CIFAR_RECORD), dtype=np.uint8)
    arr[:, 0] = rng.integers(0, 10, size=n) if labels is None else labels
    return arr.tobytes()


class TestConfusableBlobs:
    def test_deterministic(self):
        a = D.gen_confusable_blobs(3, n_per_class=20)
        b = D.gen_confusable_blobs(3, n_per_class=20)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_shapes_and_balance(self):
        ds = D.gen_confusable_blobs(0, n_per_class=15, pairs=4)
        assert ds.features.shape == (120, 5)
        np.testing.assert_array_equal(np.bincount(ds.labels), 15)

    def test_pairs_closer_than_other_classes(self):
        c = np.array(D.gen_confusable_blobs(0, pairs=3, confusion_overlap=0.5).meta["centers"])
        d = np.linalg.norm(c[:, None] - c[None], axis=-1)
        assert d[0, 1] == pytest.approx(3.0)
        assert d[0, 2] >= 18.0 - 1e-12

    def test_overlap_zero_is_separable_by_nearest_centroid(self):
        ds = D.gen_confusable_blobs(1, n_per_class=100, confusion_overlap=0.0)
        c = np.array(ds.meta["centers"])
        pred = np.argmin(np.linalg.norm(ds.features[:, None] - c[None], axis=-1), axis=1)
        assert np.mean(pred == ds.labels) >= 0.99

    def test_high_overlap_has_bayes_error(self):
        ds = D.gen_confusable_blobs(1, n_per_class=500, confusion_overlap=0.9)
        c = np.array(ds.meta["centers"])
        pred = np.argmin(np.linalg.norm(ds.features[:, None] - c[None], axis=-1), axis=1)
        assert np.mean(pred != ds.labels) > 0.1

    @pytest.mark.parametrize("kw", [{"separation": 0}, {"confusion_overlap": 1.0}, {"pairs": 0}, {"dim": 2}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            D.gen_confusable_blobs(0, **kw)


class TestSymmetricKeypoints:
    def test_deterministic(self):
        a, b = D.gen_symmetric_keypoints(4, n=10), D.gen_symmetric_keypoints(4, n=10)
        np.testing.assert_array_equal(a.images, b.images)
        np.testing.assert_array_equal(a.keypoints, b.keypoints)

    def test_geometry(self):
        ds = D.gen_symmetric_keypoints(0, n=50)
        d = np.linalg.norm(ds.keypoints[:, 0] - ds.keypoints[:, 1], axis=1)
        np.testing.assert_allclose(d, 12.0, rtol=1e-12)
        assert np.all(ds.keypoints[:, 0, 0] < ds.keypoints[:, 1, 0])
        margin = 3 * 1.5
        assert ds.keypoints.min() >= margin and ds.keypoints.max() <= 31 - margin

    def test_blobs_drawn_at_keypoints(self):
        ds = D.gen_symmetric_keypoints(2, n=5)
        for i in range(5):
            for k in range(2):
                x, y = np.rint(ds.keypoints[i, k]).astype(int)
                assert ds.images[i, y, x] > 0.75

    def test_impossible_geometry(self):
        with pytest.raises(ValueError, match="after 100 draws"):
            D.gen_symmetric_keypoints(0, n=1, height=12, width=12, pair_distance=10, sigma=1.5)

    def test_hflip_swaps_parts(self):
        ds = D.gen_symmetric_keypoints(1, n=4)
        f = D.hflip_pose(ds)
        np.testing.assert_array_equal(f.images, ds.images[:, :, ::-1])
        np.testing.assert_allclose(f.keypoints[:, 0, 0], 31 - ds.keypoints[:, 1, 0])
        assert np.all(f.keypoints[:, 0, 0] < f.keypoints[:, 1, 0])


class TestSplit:
    def test_disjoint_exhaustive(self):
        ds = D.ClassificationDataset(np.arange(50.0)[:, None], np.zeros(50, int), 1)
        tr, va = D.split(ds, 0.1, 0)
        assert (len(tr), len(va)) == (45, 5)
        ids = np.concatenate([tr.features[:, 0], va.features[:, 0]])
        np.testing.assert_array_equal(np.sort(ids), np.arange(50.0))

    def test_cifar_scale(self):
        ds = D.ClassificationDataset(np.zeros((50000, 1)), np.zeros(50000, int), 1)
        tr, va = D.split(ds, 0.1, 0)
        assert (len(tr), len(va)) == (45000, 5000)

    def test_seeded(self):
        ds = D.gen_confusable_blobs(0, n_per_class=10)
        a, b = D.split(ds, 0.3, 7), D.split(ds, 0.3, 7)
        np.testing.assert_array_equal(a[1].features, b[1].features)

    @pytest.mark.parametrize("frac", [0.0, 1.0, 0.001])
    def test_degenerate(self, frac):
        ds = D.ClassificationDataset(np.zeros((10, 1)), np.zeros(10, int), 1)
        with pytest.raises(ValueError):
            D.split(ds, frac, 0)


class TestCifar10:
    def test_single_record(self, tmp_path):
        raw = cifar_records(1, labels=[7])
        (tmp_path / "one.bin").write_bytes(raw)
        ds = D.parse_cifar10_binary(tmp_path / "one.bin")
        assert len(ds) == 1 and ds.labels[0] == 7
        assert D.cifar10_to_bytes(ds) == raw

    def test_all_255(self):
        raw = bytes([3]) + bytes([255]) * D.CIFAR_PIXELS
        np.testing.assert_array_equal(D.parse_cifar10_bytes(raw).features, 1.0)

    def test_ten_thousand_records(self, tmp_path):
        raw = cifar_records(10000, seed=1)
        path = tmp_path / "test_batch.bin"
        path.write_bytes(raw)
        ds = D.parse_cifar10_binary(path)
        assert len(ds) == 10000
        D.write_cifar10_binary(ds, tmp_path / "copy.bin")
        assert (tmp_path / "copy.bin").read_bytes() == raw

    def test_truncated(self):
        raw = cifar_records(2)[:-5]
        with pytest.raises(D.ParseError) as exc:
            D.parse_cifar10_bytes(raw)
        assert exc.value.offset == D.CIFAR_RECORD
        assert "truncated" in str(exc.value)

    def test_bad_label(self):
        raw = cifar_records(3, labels=[1, 2, 10])
        with pytest.raises(D.ParseError) as exc:
            D.parse_cifar10_bytes(raw)
        assert exc.value.offset == 2 * D.CIFAR_RECORD
        assert "label byte 10" in str(exc.value)

    @settings(max_examples=25)
    @given(st.integers(1, 4), st.integers(0, 2**32 - 1))
    def test_round_trip(self, n, seed):
        raw = cifar_records(n, seed)
        assert D.cifar10_to_bytes(D.parse_cifar10_bytes(raw)) == raw


class TestIdx:
    def test_vector(self):
        raw = bytes.fromhex("00000801") + (3).to_bytes(4, "big") + bytes([1, 2, 3])
        np.testing.assert_array_equal(D.parse_idx_bytes(raw), [1, 2, 3])

    def test_images(self, tmp_path):
        raw = bytes.fromhex("00000803") + b"".join((2).to_bytes(4, "big") for _ in range(3)) + bytes(range(8))
        (tmp_path / "x.idx").write_bytes(raw)
        out = D.parse_idx(tmp_path / "x.idx")
        assert out.shape == (2, 2, 2)
        np.testing.assert_array_equal(out.ravel(), np.arange(8))

    def test_truncated_payload(self):
        raw = bytes.fromhex("00000801") + (5).to_bytes(4, "big") + bytes([1, 2, 3])
        with pytest.raises(D.ParseError, match="expected 5 bytes, got 3"):
            D.parse_idx_bytes(raw)

    @pytest.mark.parametrize("magic", ["01000801", "00000d01"])
    def test_bad_magic(self, magic):
        raw = bytes.fromhex(magic) + (1).to_bytes(4, "big") + b"\x00"
        with pytest.raises(D.ParseError):
            D.parse_idx_bytes(raw)

    def test_round_trip(self, tmp_path):
        arr = seeded_rng(0).integers(0, 256, size=(4, 3, 2), dtype=np.uint8)
        D.write_idx(arr, tmp_path / "a.idx")
        np.testing.assert_array_equal(D.parse_idx(tmp_path / "a.idx"), arr)


class TestDatasetFiles:
    def test_classification_round_trip(self, tmp_path):
        ds = D.gen_confusable_blobs(0, n_per_class=5)
        D.save_dataset(ds, tmp_path / "blobs")
        back = D.load_dataset(tmp_path / "blobs")
        np.testing.assert_array_equal(back.features, ds.features)
        assert back.meta["seed"] == 0

    def test_pose_round_trip(self, tmp_path):
        ds = D.gen_symmetric_keypoints(0, n=3)
        D.save_dataset(ds, tmp_path / "pose")
        back = D.load_dataset(tmp_path / "pose")
        np.testing.assert_array_equal(back.keypoints, ds.keypoints)
        assert back.sigma == ds.sigma


class TestStandardize:
    def test_zero_mean_unit_std(self):
        ds, mean, std = D.standardize(D.gen_confusable_blobs(0, n_per_class=30))
        np.testing.assert_allclose(ds.features.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(ds.features.std(axis=0), 1.0, rtol=1e-12)
