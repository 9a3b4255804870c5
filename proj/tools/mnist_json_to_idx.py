#!/usr/bin/env python3
"""Convert the digit arrays shipped in the `mnist` npm package into IDX files.

The npm package stores 10,000 MNIST digits as per-class JSON arrays of pixel
intensities divided by 255 and rounded to three decimals. Multiplying by 255
and rounding recovers the original bytes exactly. Digits are interleaved with a
fixed permutation so any prefix of the output is roughly class balanced.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/mnist_json_to_idx.py package/src/digits data/mnist
"""

import argparse
import gzip
import json
import pathlib
import random
import struct


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir", type=pathlib.Path)
    ap.add_argument("out_dir", type=pathlib.Path)
    ap.add_argument("--seed", type=int, default=20151119)
    args = ap.parse_args()

    samples = []
    for label in range(10):
        data = json.loads((args.digits_dir / f"{label}.json").read_text())["data"]
        assert len(data) % 784 == 0
        for i in range(len(data) // 784):
            pixels = bytes(round(v * 255) for v in data[i * 784:(i + 1) * 784])
            samples.append((pixels, label))

    random.Random(args.seed).shuffle(samples)
    n = len(samples)
    args.out_dir.mkdir(parents=True, exist_ok=True)

    with gzip.GzipFile(args.out_dir / "mnist-10k-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        for pixels, _ in samples:
            f.write(pixels)
    with gzip.GzipFile(args.out_dir / "mnist-10k-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(bytes(label for _, label in samples))
    print(f"wrote {n} digits to {args.out_dir}")


if __name__ == "__main__":
    main()
