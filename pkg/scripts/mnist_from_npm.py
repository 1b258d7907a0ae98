#!/usr/bin/env python3
"""Write IDX files from the 10,000 MNIST digits bundled in the npm
``mnist`` package (https://www.npmjs.com/package/mnist).

    npm pack mnist                      # -> mnist-1.1.0.tgz
    python scripts/mnist_from_npm.py mnist-1.1.0.tgz data/mnist

The package stores pixels as 3-decimal floats grouped by class; they are
rounded back to bytes and shuffled with a fixed seed so that any prefix is
class-balanced.  Only the ``train`` split is written.
"""
import argparse
import json
import os
import struct
import tarfile

import numpy as np


def read_package(path):
    images, labels = [], []
    with tarfile.open(path) as tar:
        for d in range(10):
            member = tar.extractfile(f"package/src/digits/{d}.json")
            data = np.asarray(json.load(member)["data"], dtype=np.float64).reshape(-1, 28, 28)
            images.append(np.clip(np.rint(data * 255.0), 0, 255).astype(np.uint8))
            labels.append(np.full(len(data), d, dtype=np.uint8))
    return np.concatenate(images), np.concatenate(labels)


def write_idx(path, arr, magic):
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("tarball")
    ap.add_argument("out_dir")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    x, y = read_package(args.tarball)
    order = np.random.Generator(np.random.PCG64(args.seed)).permutation(len(y))
    x, y = x[order], y[order]
    os.makedirs(args.out_dir, exist_ok=True)
    write_idx(os.path.join(args.out_dir, "train-images-idx3-ubyte"), x, 2051)
    write_idx(os.path.join(args.out_dir, "train-labels-idx1-ubyte"), y, 2049)
    print(f"wrote {len(y)} images to {args.out_dir}")


if __name__ == "__main__":
    main()
