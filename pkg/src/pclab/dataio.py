"""MNIST / CIFAR-10 readers, normalisation, augmentation and batching.

Expected layout (gzip-compressed IDX files are accepted too)::

    <dir>/train-images-idx3-ubyte   <dir>/train-labels-idx1-ubyte
    <dir>/t10k-images-idx3-ubyte    <dir>/t10k-labels-idx1-ubyte

    <dir>/data_batch_1.bin .. data_batch_5.bin   <dir>/test_batch.bin

Images are returned as float32 NCHW in [0, 1].
"""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import FormatError

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
CIFAR_RECORD = 1 + 3 * 32 * 32

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR10_FILES = {
    "train": [f"data_batch_{i}.bin" for i in range(1, 6)],
    "test": ["test_batch.bin"],
}

NORMALIZATION = {
    "mnist": ((0.1307,), (0.3081,)),
    "cifar10": ((0.4914, 0.4822, 0.4465), (0.2023, 0.1994, 0.2010)),
    "cifar100": ((0.5071, 0.4867, 0.4408), (0.2675, 0.2565, 0.2761)),
    "tinyimagenet": ((0.485, 0.456, 0.406), (0.229, 0.224, 0.225)),
}


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    split: str = "train"
    num_classes: int = 10
    name: str = ""

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise FormatError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise FormatError("labels outside [0, num_classes)")

    def __len__(self):
        return len(self.labels)

    @property
    def shape(self):
        return self.images.shape[1:]


@dataclass(frozen=True)
class AugmentConfig:
    hflip_prob: float = 0.5
    crop_pad: int = 4

    def __post_init__(self):
        if self.crop_pad < 0:
            raise ValueError("crop padding must be non-negative")


def _read(path):
    for p in (path, path + ".gz"):
        if os.path.exists(p):
            opener = gzip.open if p.endswith(".gz") else open
            with opener(p, "rb") as f:
                return f.read(), p
    raise FileNotFoundError(path)


def parse_idx(buf: bytes, expected_magic: int, where: str = "<bytes>") -> np.ndarray:
    """IDX unsigned-byte array (big-endian header)."""
    if len(buf) < 8:
        raise FormatError(f"{where}: truncated header at offset 0")
    magic, = struct.unpack_from(">I", buf, 0)
    if magic != expected_magic:
        raise FormatError(f"{where}: bad magic {magic} at offset 0 (expected {expected_magic})")
    ndim = magic & 0xFF
    if len(buf) < 4 + 4 * ndim:
        raise FormatError(f"{where}: truncated dimension block at offset 4")
    dims = struct.unpack_from(f">{ndim}I", buf, 4)
    start = 4 + 4 * ndim
    need = int(np.prod(dims))
    if len(buf) - start != need:
        raise FormatError(
            f"{where}: payload at offset {start} has {len(buf) - start} bytes, header implies {need}"
        )
    return np.frombuffer(buf, dtype=np.uint8, offset=start).reshape(dims)


def load_mnist(directory, split="train") -> Dataset:
    img_name, lbl_name = MNIST_FILES[split]
    ibuf, ipath = _read(os.path.join(directory, img_name))
    lbuf, lpath = _read(os.path.join(directory, lbl_name))
    images = parse_idx(ibuf, IDX_IMAGES_MAGIC, ipath)
    labels = parse_idx(lbuf, IDX_LABELS_MAGIC, lpath)
    if len(images) != len(labels):
        raise FormatError(f"{ipath}: {len(images)} images vs {len(labels)} labels in {lpath}")
    x = (images.astype(np.float32) / 255.0)[:, None, :, :]
    return Dataset(x, labels.astype(np.int64), split, 10, "mnist")


def parse_cifar_records(buf: bytes, where="<bytes>", label_bytes=1):
    rec = label_bytes + 3 * 32 * 32
    if len(buf) % rec:
        raise FormatError(
            f"{where}: length {len(buf)} is not a multiple of {rec}; "
            f"trailing record starts at offset {len(buf) - len(buf) % rec}"
        )
    arr = np.frombuffer(buf, dtype=np.uint8).reshape(-1, rec)
    labels = arr[:, label_bytes - 1].astype(np.int64)
    images = arr[:, label_bytes:].reshape(-1, 3, 32, 32)
    return images, labels


def load_cifar10(directory, split="train") -> Dataset:
    imgs, lbls = [], []
    for name in CIFAR10_FILES[split]:
        buf, path = _read(os.path.join(directory, name))
        i, l = parse_cifar_records(buf, path)
        imgs.append(i)
        lbls.append(l)
    x = np.concatenate(imgs).astype(np.float32) / 255.0
    return Dataset(x, np.concatenate(lbls), split, 10, "cifar10")


def load_dataset(name, directory, split="train") -> Dataset:
    if name == "mnist":
        return load_mnist(directory, split)
    if name == "cifar10":
        return load_cifar10(directory, split)
    raise KeyError(f"unknown dataset {name!r}")


def load_digits_dataset(split="train", test_fraction=0.25, seed=0) -> Dataset:
    """scikit-learn's bundled 8x8 digits (values scaled to [0, 1]); a small
    offline stand-in when MNIST files are not available."""
    from sklearn.datasets import load_digits

    d = load_digits()
    x = (d.images.astype(np.float32) / 16.0)[:, None]
    y = d.target.astype(np.int64)
    order = np.random.Generator(np.random.PCG64(seed)).permutation(len(y))
    n_test = int(round(test_fraction * len(y)))
    idx = order[n_test:] if split == "train" else order[:n_test]
    return Dataset(x[idx], y[idx], split, 10, "digits")


def subset(ds: Dataset, n=None, per_class=None) -> Dataset:
    """First ``n`` examples, or the first ``per_class`` examples of each class."""
    if per_class is not None:
        keep = np.zeros(len(ds), dtype=bool)
        for c in range(ds.num_classes):
            keep[np.flatnonzero(ds.labels == c)[:per_class]] = True
        idx = np.flatnonzero(keep)
    else:
        idx = np.arange(min(n, len(ds)))
    return replace(ds, images=ds.images[idx], labels=ds.labels[idx])


def split_holdout(ds: Dataset, n: int):
    """``(train, test)`` with the last ``n`` examples as a test split."""
    if not 0 < n < len(ds):
        raise ValueError(f"holdout {n} out of range for {len(ds)} examples")
    return (replace(ds, images=ds.images[:-n], labels=ds.labels[:-n]),
            replace(ds, images=ds.images[-n:], labels=ds.labels[-n:], split="test"))


def normalize(ds: Dataset, mean, std) -> Dataset:
    mean = np.asarray(mean, dtype=np.float32)
    std = np.asarray(std, dtype=np.float32)
    c = ds.images.shape[1]
    if mean.shape != (c,) or std.shape != (c,):
        raise ValueError(f"need {c} channel means/stds")
    if np.any(std == 0):
        raise ValueError("std must be non-zero")
    x = (ds.images - mean[None, :, None, None]) / std[None, :, None, None]
    return replace(ds, images=x.astype(np.float32))


def augment(batch: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Random horizontal flip and zero-padded random crop back to native size."""
    out = batch.copy()
    n, _, h, w = out.shape
    flip = rng.random(n) < cfg.hflip_prob
    out[flip] = out[flip, :, :, ::-1]
    p = cfg.crop_pad
    if p:
        padded = np.pad(out, ((0, 0), (0, 0), (p, p), (p, p)))
        dy = rng.integers(0, 2 * p + 1, n)
        dx = rng.integers(0, 2 * p + 1, n)
        for i in range(n):
            out[i] = padded[i, :, dy[i]:dy[i] + h, dx[i]:dx[i] + w]
    return out


def one_hot(labels, n_classes, dtype=np.float32):
    return np.eye(n_classes, dtype=dtype)[labels]


def batches(ds: Dataset, batch_size: int, shuffle_seed=None, augment_cfg=None, rng=None):
    """Yield ``(images, labels)``; every example appears once per pass.

    ``shuffle_seed=None`` keeps file order.  Augmentation, if configured,
    is applied to training splits only.
    """
    n = len(ds)
    order = np.arange(n) if shuffle_seed is None else np.random.Generator(
        np.random.PCG64(shuffle_seed)).permutation(n)
    if augment_cfg is not None and ds.split == "train" and rng is None:
        rng = np.random.Generator(np.random.PCG64(0 if shuffle_seed is None else shuffle_seed + 1))
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        x = ds.images[idx]
        if augment_cfg is not None and ds.split == "train":
            x = augment(x, augment_cfg, rng)
        yield x, ds.labels[idx]
