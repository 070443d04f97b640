#!/usr/bin/env python3
"""Convert the digits shipped in the `mnist` npm package into gzip'd IDX files.

The npm package (https://www.npmjs.com/package/mnist, v1.1.0) bundles 10,000
MNIST digits as JSON arrays of pixel intensities rounded to three decimals.
Rounding is coarse enough that round(v * 255) recovers the original byte.

Usage:
    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python3 scripts/mnist_from_npm.py package/src/digits data/mnist
"""

import gzip
import json
import random
import struct
import sys
from pathlib import Path

TRAIN = 8000
SEED = 20250101


def write_idx_images(path, images):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_idx_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main(src, dst):
    src, dst = Path(src), Path(dst)
    samples = []
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(data) % 784 == 0
        for k in range(len(data) // 784):
            pixels = [int(round(v * 255)) for v in data[k * 784:(k + 1) * 784]]
            assert all(0 <= p <= 255 for p in pixels)
            samples.append((pixels, digit))
    random.Random(SEED).shuffle(samples)
    train, test = samples[:TRAIN], samples[TRAIN:]
    dst.mkdir(parents=True, exist_ok=True)
    write_idx_images(dst / "train-images-idx3-ubyte.gz", [s[0] for s in train])
    write_idx_labels(dst / "train-labels-idx1-ubyte.gz", [s[1] for s in train])
    write_idx_images(dst / "t10k-images-idx3-ubyte.gz", [s[0] for s in test])
    write_idx_labels(dst / "t10k-labels-idx1-ubyte.gz", [s[1] for s in test])
    print(f"wrote {len(train)} train / {len(test)} test images to {dst}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
