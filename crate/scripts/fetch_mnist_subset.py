#!/usr/bin/env python3
"""Rebuild a 10,000-image MNIST sample as gzipped IDX files.

The npm package `mnist` ships the first 10,000 images of the MNIST training
set as per-digit JSON arrays (pixels rounded to three decimals). Rounding
back to u8 recovers the original bytes exactly because 0.0005 < 1/510.
Images are written class-interleaved (0,1,...,9,0,1,...) since the package
does not keep the original ordering.

Usage: scripts/fetch_mnist_subset.py [OUT_DIR]   (default: data/mnist)
"""
import gzip
import json
import os
import struct
import subprocess
import sys
import tarfile
import tempfile

out_dir = sys.argv[1] if len(sys.argv) > 1 else os.path.join(
    os.path.dirname(__file__), "..", "data", "mnist")
os.makedirs(out_dir, exist_ok=True)

with tempfile.TemporaryDirectory() as tmp:
    subprocess.run(["npm", "pack", "mnist@1.1.0", "--silent"], cwd=tmp,
                   check=True, stdout=subprocess.DEVNULL)
    with tarfile.open(os.path.join(tmp, "mnist-1.1.0.tgz")) as tar:
        tar.extractall(tmp)
    digits = []
    for d in range(10):
        path = os.path.join(tmp, "package", "src", "digits", f"{d}.json")
        with open(path) as fh:
            flat = json.load(fh)["data"]
        images = [flat[i:i + 784] for i in range(0, len(flat), 784)]
        digits.append(images)

order = []
cursor = [0] * 10
while any(cursor[d] < len(digits[d]) for d in range(10)):
    for d in range(10):
        if cursor[d] < len(digits[d]):
            order.append((d, cursor[d]))
            cursor[d] += 1

pixels = bytearray()
labels = bytearray()
for d, i in order:
    img = digits[d][i]
    pixels.extend(min(255, max(0, round(v * 255))) for v in img)
    labels.append(d)

n = len(order)
with gzip.GzipFile(os.path.join(out_dir, "train-images-idx3-ubyte.gz"), "wb", mtime=0) as fh:
    fh.write(struct.pack(">IIII", 2051, n, 28, 28))
    fh.write(bytes(pixels))
with gzip.GzipFile(os.path.join(out_dir, "train-labels-idx1-ubyte.gz"), "wb", mtime=0) as fh:
    fh.write(struct.pack(">II", 2049, n))
    fh.write(bytes(labels))
print(f"wrote {n} images to {out_dir}")
