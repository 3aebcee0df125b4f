#!/usr/bin/env python3
"""Write a class-interleaved MNIST subset as big-endian IDX files.

The source is the 5000-digit excerpt of the MNIST training set that ships with
mlxtend (``mlxtend/data/data/mnist_5k.csv.gz``: 784 pixel columns followed by
the digit). That file is sorted by digit, so rows are permuted with a fixed
seed before writing; any prefix of the output is then roughly class balanced.

    pip download --no-deps mlxtend -d /tmp/mlx
    python3 tools/mnist_subset_to_idx.py --wheel /tmp/mlx/mlxtend-*.whl --out data/mnist
"""
import argparse
import gzip
import io
import struct
import zipfile
from pathlib import Path

import numpy as np

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_rows(args):
    if args.csv:
        raw = Path(args.csv).read_bytes()
    else:
        with zipfile.ZipFile(args.wheel) as whl:
            raw = whl.read(CSV_MEMBER)
    table = np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",")
    pixels = table[:, :-1].astype(np.uint8)
    digits = table[:, -1].astype(np.uint8)
    assert pixels.shape[1] == 784
    assert np.array_equal(table[:, :-1], pixels)
    return pixels, digits


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    src = parser.add_mutually_exclusive_group(required=True)
    src.add_argument("--wheel", help="mlxtend wheel containing the csv")
    src.add_argument("--csv", help="mnist_5k.csv.gz extracted from mlxtend")
    parser.add_argument("--out", required=True)
    parser.add_argument("--seed", type=int, default=20240516)
    args = parser.parse_args()

    pixels, digits = read_rows(args)
    order = np.random.default_rng(args.seed).permutation(len(digits))
    pixels, digits = pixels[order], digits[order]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "train-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(digits), 28, 28))
        f.write(pixels.tobytes())
    with open(out / "train-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(digits)))
        f.write(digits.tobytes())
    print(f"wrote {len(digits)} samples to {out}")


if __name__ == "__main__":
    main()
