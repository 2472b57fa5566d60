#!/usr/bin/env python3
"""Assemble a desk-scale MNIST subset in IDX format.

The canonical MNIST mirrors are not always reachable, so this script pulls
the two MNIST subsets that ship inside ordinary package registries:

  * npm ``mnist`` (10,000 digits, grayscale stored as byte/255 floats)
  * PyPI ``mlxtend`` (5,000 digits, raw bytes, ``mnist_5k.csv.gz``)

The two subsets share no images. The npm subset becomes the training split
and the mlxtend subset the test split. Both are class-sorted upstream, so
each split is shuffled with a fixed seed before writing.

Output (in --out, default $FIMGUARD_DATA_DIR or ./data/mnist):
  train-images-idx3-ubyte  train-labels-idx1-ubyte
  t10k-images-idx3-ubyte   t10k-labels-idx1-ubyte
"""

import argparse
import glob
import gzip
import io
import json
import os
import struct
import subprocess
import sys
import tarfile
import tempfile
import zipfile

import numpy as np

SHUFFLE_SEED = 20200607


def write_idx_images(path, images):
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 2051, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def fetch_npm_digits(workdir):
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=workdir, check=True,
                   stdout=subprocess.DEVNULL)
    tgz = glob.glob(os.path.join(workdir, "mnist-*.tgz"))[0]
    images, labels = [], []
    with tarfile.open(tgz) as tar:
        for digit in range(10):
            member = tar.extractfile(f"package/src/digits/{digit}.json")
            data = np.asarray(json.load(member)["data"], dtype=np.float64)
            rows = np.rint(data * 255.0).reshape(-1, 784)
            images.append(rows)
            labels.append(np.full(len(rows), digit))
    return np.concatenate(images), np.concatenate(labels)


def fetch_mlxtend_digits(workdir):
    subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps",
                    "mlxtend==0.24.0", "-d", workdir], check=True,
                   stdout=subprocess.DEVNULL)
    wheel = glob.glob(os.path.join(workdir, "mlxtend-*.whl"))[0]
    with zipfile.ZipFile(wheel) as z:
        raw = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz"))
    table = np.loadtxt(io.StringIO(raw.decode()), delimiter=",")
    table = table.astype(np.int64)
    return table[:, :784], table[:, 784]


def shuffled(images, labels, seed):
    order = np.random.default_rng(seed).permutation(len(labels))
    return images[order].reshape(-1, 28, 28), labels[order]


def main():
    default_out = os.environ.get("FIMGUARD_DATA_DIR", os.path.join("data", "mnist"))
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default=default_out)
    args = parser.parse_args()
    os.makedirs(args.out, exist_ok=True)

    with tempfile.TemporaryDirectory() as work:
        train_x, train_y = shuffled(*fetch_npm_digits(work), SHUFFLE_SEED)
        test_x, test_y = shuffled(*fetch_mlxtend_digits(work), SHUFFLE_SEED + 1)

    assert train_x.min() >= 0 and train_x.max() <= 255
    assert test_x.min() >= 0 and test_x.max() <= 255

    write_idx_images(os.path.join(args.out, "train-images-idx3-ubyte"), train_x)
    write_idx_labels(os.path.join(args.out, "train-labels-idx1-ubyte"), train_y)
    write_idx_images(os.path.join(args.out, "t10k-images-idx3-ubyte"), test_x)
    write_idx_labels(os.path.join(args.out, "t10k-labels-idx1-ubyte"), test_y)
    print(f"wrote {len(train_y)} train / {len(test_y)} test samples to {args.out}")


if __name__ == "__main__":
    main()
