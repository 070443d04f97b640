#!/usr/bin/env python3
"""Convert a prefix of the CIFAR-10 batches shipped in the `tfjs-cifar10` npm
package into the official CIFAR-10 binary record format, gzip'd.

The npm package (https://www.npmjs.com/package/tfjs-cifar10, v1.1.1) stores
each batch as a 1024 x 10000 RGB PNG (one image per row, pixels in raster
order) plus a JSON label list. Records written here are 1 label byte followed
by the R, G and B planes, 1024 bytes each.

Usage:
    npm pack tfjs-cifar10 && tar xzf tfjs-cifar10-1.1.1.tgz
    python3 scripts/cifar10_from_npm.py package data/cifar10 TRAIN_COUNT TEST_COUNT
"""

import gzip
import json
import sys
from pathlib import Path

from PIL import Image


def convert(png, labels, count, out):
    im = Image.open(png).convert("RGB")
    width, height = im.size
    assert width == 1024 and height >= count
    labels = json.loads(Path(labels).read_text())
    raw = im.tobytes()
    with gzip.GzipFile(out, "wb", mtime=0) as f:
        for row in range(count):
            pixels = raw[row * 3072:(row + 1) * 3072]
            f.write(bytes([labels[row]]))
            for channel in range(3):
                f.write(pixels[channel::3])


def main(src, dst, train, test):
    src, dst = Path(src), Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    convert(src / "data_batch_1.png", src / "train_lables.json", train, dst / "data_batch_1.bin.gz")
    convert(src / "test_batch.png", src / "test_lables.json", test, dst / "test_batch.bin.gz")
    print(f"wrote {train} train / {test} test records to {dst}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2], int(sys.argv[3]), int(sys.argv[4]))
