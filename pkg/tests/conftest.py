import struct

import numpy as np
import pytest


def write_idx(path, magic, array):
    array = np.asarray(array, dtype=np.uint8)
    header = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    path.write_bytes(header + array.tobytes())
    return path


@pytest.fixture
def mnist_pair(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(2, 28, 28), dtype=np.uint8)
    labels = np.array([3, 7], dtype=np.uint8)
    img = write_idx(tmp_path / "train-images-idx3-ubyte", 0x00000803, images)
    lab = write_idx(tmp_path / "train-labels-idx1-ubyte", 0x00000801, labels)
    return img, lab, images, labels


@pytest.fixture
def cifar_file(tmp_path):
    rng = np.random.default_rng(1)
    records = rng.integers(0, 256, size=(2, 3073), dtype=np.uint8)
    records[:, 0] = [4, 9]
    path = tmp_path / "data_batch_1.bin"
    path.write_bytes(records.tobytes())
    return path, records
