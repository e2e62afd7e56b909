#!/usr/bin/env python3
"""Convert the digit JSON files shipped in the `mnist` npm package (v1.1.0)
into IDX files with the standard MNIST names.

Each digit's samples are split in file order: the first 70% go to the
training files, the remainder to the t10k files. Pixels are stored in the
package as value/255 rounded to three decimals, so rounding back recovers
the original bytes.

usage: npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
       python3 npm_mnist_to_idx.py package/src/digits data/mnist-npm
"""
import json
import struct
import sys
from pathlib import Path

TRAIN_FRACTION = 0.7


def write_idx(out_dir, prefix, images, labels):
    n = len(labels)
    with open(out_dir / f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        for img in images:
            f.write(bytes(img))
    with open(out_dir / f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(labels))


def main(src, dst):
    src, dst = Path(src), Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    split = {"train": ([], []), "t10k": ([], [])}
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(flat) % 784 == 0
        count = len(flat) // 784
        n_train = int(round(count * TRAIN_FRACTION))
        for i in range(count):
            pixels = [int(round(v * 255)) for v in flat[i * 784:(i + 1) * 784]]
            images, labels = split["train" if i < n_train else "t10k"]
            images.append(pixels)
            labels.append(digit)
    for prefix, (images, labels) in split.items():
        write_idx(dst, prefix, images, labels)
        print(prefix, len(labels))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
