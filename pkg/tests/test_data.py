import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memtrain.harness.data import (CIFAR_RECORD, DataError, Dataset, FormatError, encode_cifar10,
                                   load_cifar10, load_mnist, load_split, synthetic_cifar10)

from conftest import DATA_ROOT


def write_idx(tmp_path, images, labels, magic_img=0x803, magic_lab=0x801):
    n = len(labels)
    ip, lp = tmp_path / "img", tmp_path / "lab"
    ip.write_bytes(struct.pack(">IIII", magic_img, n, 28, 28) + images.astype(np.uint8).tobytes())
    lp.write_bytes(struct.pack(">II", magic_lab, n) + np.asarray(labels, np.uint8).tobytes())
    return ip, lp


def test_idx_roundtrip(tmp_path, rng):
    imgs = rng.integers(0, 256, size=(3, 28, 28))
    ds = load_mnist(*write_idx(tmp_path, imgs, [1, 2, 9]))
    assert ds.images.shape == (3, 1, 28, 28)
    np.testing.assert_array_equal(ds.images[:, 0], imgs)
    np.testing.assert_array_equal(ds.labels, [1, 2, 9])


def test_idx_truncated(tmp_path, rng):
    ip, lp = write_idx(tmp_path, rng.integers(0, 256, size=(3, 28, 28)), [1, 2, 3])
    ip.write_bytes(ip.read_bytes()[:-10])
    with pytest.raises(FormatError, match=r"expected 2368 bytes .* available 2358"):
        load_mnist(ip, lp)


def test_idx_bad_magic_and_label(tmp_path, rng):
    imgs = rng.integers(0, 256, size=(2, 28, 28))
    with pytest.raises(FormatError, match="magic"):
        load_mnist(*write_idx(tmp_path, imgs, [1, 2], magic_img=0x801))
    with pytest.raises(FormatError, match="label 11"):
        load_mnist(*write_idx(tmp_path, imgs, [1, 11]))


def test_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_mnist(tmp_path / "nope", tmp_path / "nope2")
    with pytest.raises(DataError):
        load_split("mnist", "train", tmp_path)


def test_official_mnist(mnist):
    train, test = mnist
    assert train.images.shape == (60000, 1, 28, 28)
    assert len(test) == 10000
    # independent reader: the first label byte follows the 8-byte header
    raw = (DATA_ROOT / "mnist" / "train-labels-idx1-ubyte").read_bytes()
    assert struct.unpack(">II", raw[:8]) == (0x801, 60000)
    assert raw[8] == 5 == train.labels[0]


def test_cifar_plane_order(tmp_path):
    rec = np.zeros(CIFAR_RECORD, np.uint8)
    rec[0] = 7
    rec[1 : 1 + 1024] = 10  # red plane
    rec[1025 : 1025 + 1024] = 20
    rec[2049:] = 30
    rec[1 + 5] = 99  # red, row 0, column 5
    (tmp_path / "b.bin").write_bytes(rec.tobytes())
    ds = load_cifar10(tmp_path / "b.bin")
    assert ds.labels[0] == 7
    assert ds.images[0, 0, 0, 5] == 99 and ds.images[0, 0, 1, 5] == 10
    assert ds.images[0, 1].max() == 20 and ds.images[0, 2].min() == 30


def test_cifar_bad_length(tmp_path):
    (tmp_path / "b.bin").write_bytes(bytes(3 * CIFAR_RECORD + 1))
    with pytest.raises(FormatError, match="3073"):
        load_cifar10(tmp_path / "b.bin")


def test_cifar_bad_label(tmp_path):
    rec = np.zeros((2, CIFAR_RECORD), np.uint8)
    rec[1, 0] = 10
    (tmp_path / "b.bin").write_bytes(rec.tobytes())
    with pytest.raises(FormatError, match=f"byte {CIFAR_RECORD}"):
        load_cifar10(tmp_path / "b.bin")


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 20), st.integers(0, 1000))
def test_cifar_encode_roundtrip(n, seed):
    import tempfile
    from pathlib import Path
    ds = synthetic_cifar10(n, seed)
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "b.bin"
        p.write_bytes(encode_cifar10(ds))
        back = load_cifar10(p)
    np.testing.assert_array_equal(back.images, ds.images)
    np.testing.assert_array_equal(back.labels, ds.labels)


def test_synthetic_splits_share_classes():
    a, b = synthetic_cifar10(200, 0, 0), synthetic_cifar10(200, 0, 1)
    assert not np.array_equal(a.images, b.images)
    mean_a = a.images[a.labels == 3].mean(axis=0)
    mean_b = b.images[b.labels == 3].mean(axis=0)
    assert np.abs(mean_a - mean_b).mean() < 15


def test_dataset_guards():
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 1, 4, 4), np.uint8), np.array([0, 10]))
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 1, 4, 4), np.float32), np.array([0, 1]))
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 4, 4), np.uint8), np.array([0, 1]))
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 1, 4, 4), np.uint8), np.array([0]))
