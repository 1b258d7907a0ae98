import gzip
import struct

import numpy as np
import pytest

from pclab import dataio
from pclab.dataio import (AugmentConfig, Dataset, FormatError, augment, batches, load_cifar10, load_mnist,
                          normalize, one_hot, parse_cifar_records, parse_idx, split_holdout, subset)


def _idx(arr, magic):
    return struct.pack(">I", magic) + struct.pack(f">{arr.ndim}I", *arr.shape) + arr.tobytes()


def _write_mnist(d, n=12, split="train", gz=False, seed=0):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 256, (n, 28, 28), dtype=np.uint8)
    lbl = (np.arange(n) % 10).astype(np.uint8)
    names = dataio.MNIST_FILES[split]
    for name, arr, magic in ((names[0], img, 2051), (names[1], lbl, 2049)):
        data = _idx(arr, magic)
        if gz:
            with gzip.open(d / (name + ".gz"), "wb") as f:
                f.write(data)
        else:
            (d / name).write_bytes(data)
    return img, lbl


@pytest.mark.parametrize("gz", [False, True])
def test_load_mnist(tmp_path, gz):
    img, lbl = _write_mnist(tmp_path, gz=gz)
    ds = load_mnist(tmp_path)
    assert ds.images.shape == (12, 1, 28, 28) and ds.images.dtype == np.float32
    np.testing.assert_array_equal(ds.images[:, 0] * 255, img.astype(np.float32))
    np.testing.assert_array_equal(ds.labels, lbl)
    assert ds.split == "train" and ds.num_classes == 10


def test_idx_bad_magic():
    buf = _idx(np.zeros(3, np.uint8), 2049)
    with pytest.raises(FormatError, match="offset 0"):
        parse_idx(buf, 2051, "x")


def test_idx_truncated_payload():
    buf = _idx(np.zeros((2, 28, 28), np.uint8), 2051)[:-5]
    with pytest.raises(FormatError, match="offset 16"):
        parse_idx(buf, 2051)
    with pytest.raises(FormatError, match="offset 0"):
        parse_idx(b"\x00\x00", 2051)


def test_idx_full_mnist_header_arithmetic():
    header = struct.pack(">IIII", 2051, 60000, 28, 28)
    with pytest.raises(FormatError, match="header implies 47040000"):
        parse_idx(header + b"\x00" * 100, 2051)
    assert 16 + 60000 * 28 * 28 == 47040016


def test_cifar_records(tmp_path):
    rng = np.random.default_rng(0)
    for name in dataio.CIFAR10_FILES["train"] + dataio.CIFAR10_FILES["test"]:
        rec = rng.integers(0, 256, (4, dataio.CIFAR_RECORD), dtype=np.uint8)
        rec[:, 0] = np.arange(4)
        (tmp_path / name).write_bytes(rec.tobytes())
    ds = load_cifar10(tmp_path)
    assert ds.images.shape == (20, 3, 32, 32) and list(ds.labels[:4]) == [0, 1, 2, 3]
    assert len(load_cifar10(tmp_path, "test")) == 4
    assert dataio.CIFAR_RECORD == 3073 and 10000 * 3073 == 30730000


def test_cifar_truncated_record():
    with pytest.raises(FormatError, match="offset 3073"):
        parse_cifar_records(b"\x00" * (3073 + 100))


def test_dataset_validation():
    with pytest.raises(FormatError):
        Dataset(np.zeros((2, 1, 2, 2)), np.zeros(3, np.int64))
    with pytest.raises(FormatError):
        Dataset(np.zeros((1, 1, 2, 2)), np.array([10]))


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_mnist(tmp_path)


def test_normalize():
    ds = Dataset(np.full((2, 1, 2, 2), 0.5, np.float32), np.zeros(2, np.int64))
    out = normalize(ds, (0.25,), (0.5,))
    np.testing.assert_allclose(out.images, 0.5)
    with pytest.raises(ValueError):
        normalize(ds, (0.1, 0.2), (1.0, 1.0))
    with pytest.raises(ValueError):
        normalize(ds, (0.1,), (0.0,))


def test_augment_shapes_and_determinism():
    x = np.random.default_rng(0).random((6, 3, 8, 8)).astype(np.float32)
    a = augment(x, AugmentConfig(), np.random.default_rng(5))
    b = augment(x, AugmentConfig(), np.random.default_rng(5))
    assert a.shape == x.shape and np.array_equal(a, b)
    flipped = augment(x, AugmentConfig(hflip_prob=1.0, crop_pad=0), np.random.default_rng(0))
    np.testing.assert_array_equal(flipped, x[..., ::-1])
    same = augment(x, AugmentConfig(hflip_prob=0.0, crop_pad=0), np.random.default_rng(0))
    np.testing.assert_array_equal(same, x)
    with pytest.raises(ValueError):
        AugmentConfig(crop_pad=-1)


def test_batches_cover_each_example_once():
    ds = Dataset(np.arange(10, dtype=np.float32).reshape(10, 1, 1, 1), np.arange(10) % 10)
    seen = np.concatenate([y for _, y in batches(ds, 3, shuffle_seed=4)])
    assert sorted(seen) == list(range(10))
    again = np.concatenate([y for _, y in batches(ds, 3, shuffle_seed=4)])
    np.testing.assert_array_equal(seen, again)
    plain = np.concatenate([y for _, y in batches(ds, 4)])
    np.testing.assert_array_equal(plain, np.arange(10))


def test_augment_only_on_train_split():
    x = np.random.default_rng(0).random((4, 1, 4, 4)).astype(np.float32)
    ds = Dataset(x, np.zeros(4, np.int64), split="test")
    out = np.concatenate([b for b, _ in batches(ds, 4, augment_cfg=AugmentConfig(1.0, 0))])
    np.testing.assert_array_equal(out, x)


def test_subset_and_holdout():
    ds = Dataset(np.zeros((30, 1, 1, 1), np.float32), np.arange(30) % 10)
    assert len(subset(ds, n=7)) == 7
    per = subset(ds, per_class=2)
    assert len(per) == 20 and np.bincount(per.labels).tolist() == [2] * 10
    tr, te = split_holdout(ds, 5)
    assert len(tr) == 25 and len(te) == 5 and te.split == "test"
    np.testing.assert_array_equal(te.labels, ds.labels[-5:])
    with pytest.raises(ValueError):
        split_holdout(ds, 30)


def test_one_hot():
    np.testing.assert_array_equal(one_hot(np.array([2, 0]), 3), [[0, 0, 1], [1, 0, 0]])


def test_digits_split():
    tr = dataio.load_digits_dataset("train")
    te = dataio.load_digits_dataset("test")
    assert len(tr) + len(te) == 1797 and tr.shape == (1, 8, 8)
    assert float(tr.images.max()) == 1.0
