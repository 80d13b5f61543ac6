#!/usr/bin/env python3
"""Convert the digit JSON files shipped in the npm `mnist` package to IDX.

Usage: mnist_from_npm.py <package-dir> <out-dir>

The npm package stores 10,000 MNIST digits grouped by class, one flattened
28x28 grey-value array (floats in [0, 1]) per class file. The output is a
class-interleaved, seeded shuffle written as gzipped IDX files.
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

SIDE = 28


def main() -> None:
    pkg, out = Path(sys.argv[1]), Path(sys.argv[2])
    samples = []
    for label in range(10):
        raw = json.loads((pkg / "src" / "digits" / f"{label}.json").read_text())["data"]
        n = len(raw) // (SIDE * SIDE)
        for k in range(n):
            px = raw[k * SIDE * SIDE:(k + 1) * SIDE * SIDE]
            samples.append((label, bytes(min(255, max(0, round(v * 255))) for v in px)))
    random.Random(20180101).shuffle(samples)
    out.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(out / "images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(samples), SIDE, SIDE))
        for _, px in samples:
            f.write(px)
    with gzip.GzipFile(out / "labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(samples)))
        f.write(bytes(label for label, _ in samples))
    print(f"wrote {len(samples)} samples to {out}")


if __name__ == "__main__":
    main()
