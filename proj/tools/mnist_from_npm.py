#!/usr/bin/env python3
"""Convert the digit JSON files shipped in the npm ``mnist`` package to IDX.

The package stores 10000 MNIST digits as 784 floats in [0,1] rounded to three
decimals. Multiplying by 255 and rounding recovers the original bytes.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/mnist_from_npm.py package/src/digits data/mnist10k
"""
import gzip
import json
import struct
import sys
from pathlib import Path


def main(src: Path, dst: Path) -> None:
    images, labels = [], []
    for digit in range(10):
        raw = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(raw) % 784 == 0
        for start in range(0, len(raw), 784):
            px = bytes(int(round(v * 255.0)) for v in raw[start:start + 784])
            images.append(px)
            labels.append(digit)
    # Interleave classes so that a prefix is roughly balanced.
    order = sorted(range(len(labels)), key=lambda i: (i - labels.index(labels[i]), labels[i]))
    dst.mkdir(parents=True, exist_ok=True)
    n = len(order)
    with gzip.GzipFile(dst / "train-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        for i in order:
            f.write(images[i])
    with gzip.GzipFile(dst / "train-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(labels[i] for i in order))
    print(f"wrote {n} samples to {dst}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
