#!/usr/bin/env python3
"""Build IDX files from the digit JSON shipped in the npm `mnist` package.

usage: mnist_from_npm.py <unpacked npm package dir> <output dir>

Pixels in the package are stored as value/255 rounded to three decimals, so
round(255 * value) recovers the original byte. Samples are written class by
class in package order.
"""
import json
import os
import struct
import sys


def main():
    src, out = sys.argv[1], sys.argv[2]
    images, labels = bytearray(), bytearray()
    count = 0
    for digit in range(10):
        with open(os.path.join(src, "src", "digits", f"{digit}.json")) as fh:
            data = json.load(fh)["data"]
        assert len(data) % 784 == 0
        images.extend(min(255, max(0, round(255 * v))) for v in data)
        n = len(data) // 784
        labels.extend([digit] * n)
        count += n
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "train-images-idx3-ubyte"), "wb") as fh:
        fh.write(struct.pack(">IIII", 0x803, count, 28, 28))
        fh.write(images)
    with open(os.path.join(out, "train-labels-idx1-ubyte"), "wb") as fh:
        fh.write(struct.pack(">II", 0x801, count))
        fh.write(labels)
    print(f"wrote {count} samples to {out}")


if __name__ == "__main__":
    main()
