import numpy as np
import pytest

from conftest import write_idx
from specnet.data import load_cifar_bin, load_idx, synthetic_shapes
from specnet.errors import ConsistencyError, FormatError, LabelValueError, LengthError


class TestIdx:
    def test_two_images(self, mnist_pair):
        img, lab, raw, labels = mnist_pair
        data = load_idx(img, lab)
        assert len(data) == 2 and data.images.shape == (2, 1, 28, 28)
        np.testing.assert_array_equal(data.labels, labels)

    def test_standardized(self, mnist_pair):
        data = load_idx(*mnist_pair[:2])
        assert abs(data.images.mean()) < 1e-12
        assert data.images.std() == pytest.approx(1.0)

    def test_wrong_magic(self, mnist_pair, tmp_path):
        bad = write_idx(tmp_path / "imgs", 0x00000801, np.zeros((2, 28, 28)))
        with pytest.raises(FormatError):
            load_idx(bad, mnist_pair[1])

    def test_truncated_payload(self, mnist_pair):
        img = mnist_pair[0]
        img.write_bytes(img.read_bytes()[:-1])
        with pytest.raises(LengthError):
            load_idx(img, mnist_pair[1])

    def test_count_mismatch(self, mnist_pair, tmp_path):
        lab = write_idx(tmp_path / "labs", 0x00000801, np.array([1, 2, 3]))
        with pytest.raises(ConsistencyError):
            load_idx(mnist_pair[0], lab)

    def test_raw_bytes_round_trip(self, mnist_pair):
        data = load_idx(*mnist_pair[:2])
        np.testing.assert_array_equal(data.to_bytes()[:, 0], mnist_pair[2])

    def test_same_file_same_set(self, mnist_pair):
        a, b = load_idx(*mnist_pair[:2]), load_idx(*mnist_pair[:2])
        np.testing.assert_array_equal(a.images, b.images)

    def test_external_stats(self, mnist_pair):
        data = load_idx(*mnist_pair[:2], stats=(np.array([0.5]), np.array([0.25])))
        raw = mnist_pair[2].astype(float) / 255.0
        np.testing.assert_allclose(data.images[:, 0], (raw - 0.5) / 0.25)


class TestCifar:
    def test_two_records(self, cifar_file):
        data = load_cifar_bin(cifar_file[0])
        assert data.images.shape == (2, 3, 32, 32)
        np.testing.assert_array_equal(data.labels, [4, 9])
        np.testing.assert_array_equal(data.to_bytes().reshape(2, -1), cifar_file[1][:, 1:])

    def test_one_byte_short(self, tmp_path):
        path = tmp_path / "short.bin"
        path.write_bytes(bytes(3072))
        with pytest.raises(FormatError):
            load_cifar_bin(path)

    def test_bad_label(self, cifar_file):
        path, records = cifar_file
        records = records.copy()
        records[1, 0] = 11
        path.write_bytes(records.tobytes())
        with pytest.raises(LabelValueError):
            load_cifar_bin(path)


class TestSynthetic:
    def test_deterministic(self):
        a, b = synthetic_shapes(40, seed=5), synthetic_shapes(40, seed=5)
        np.testing.assert_array_equal(a.to_bytes(), b.to_bytes())
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_seed_changes_data(self):
        assert not np.array_equal(synthetic_shapes(10, seed=0).images,
                                  synthetic_shapes(10, seed=1).images)

    def test_balanced_pair(self):
        assert list(synthetic_shapes(2).labels) == [0, 1]

    def test_too_few(self):
        with pytest.raises(ValueError):
            synthetic_shapes(1)

    def test_brightness_separates_classes(self):
        data = synthetic_shapes(200, seed=2)
        mass = data.to_bytes().reshape(200, -1).astype(float).sum(axis=1)
        assert mass[data.labels == 0].max() < mass[data.labels == 1].min()
