#!/usr/bin/env python3
"""Write a 5000-digit MNIST subset as IDX files.

The mlxtend wheel bundles 500 official MNIST digits per class as a gzipped
CSV (784 pixel columns followed by the label). This script fetches the wheel
with pip if it is not given one and converts the CSV to the standard IDX
layout read by `dropattack::data::load_mnist_idx`.

    python3 scripts/make_mnist_subset.py [--wheel PATH] [--out data/mnist]
"""
import argparse
import glob
import gzip
import os
import struct
import subprocess
import sys
import tempfile
import zipfile


def fetch_wheel(tmp):
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "-d", tmp, "mlxtend==0.24.0"],
        check=True,
    )
    return glob.glob(os.path.join(tmp, "mlxtend-*.whl"))[0]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--wheel")
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data", "mnist"))
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel or fetch_wheel(tmp)
        raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    rows = gzip.decompress(raw).decode().splitlines()

    images = bytearray()
    labels = bytearray()
    for row in rows:
        cols = row.split(",")
        images.extend(int(float(v)) for v in cols[:784])
        labels.append(int(float(cols[784])))

    os.makedirs(args.out, exist_ok=True)
    n = len(rows)
    with open(os.path.join(args.out, "subset-images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        f.write(images)
    with open(os.path.join(args.out, "subset-labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels)
    print(f"wrote {n} digits to {args.out}")


if __name__ == "__main__":
    main()
