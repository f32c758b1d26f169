"""Convert the 5,000-sample MNIST subset shipped with mlxtend into gzipped IDX files.

Usage: pip download mlxtend --no-deps -d /tmp/mlx && python3 scripts/make_mnist5k.py /tmp/mlx/mlxtend-*.whl
"""
import gzip
import struct
import sys
import zipfile
from pathlib import Path

wheel = sys.argv[1]
out = Path(__file__).resolve().parent.parent / "data" / "mnist-5k"
out.mkdir(parents=True, exist_ok=True)

raw = gzip.decompress(zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")).decode()
rows = [list(map(int, line.split(","))) for line in raw.strip().splitlines()]
pixels = bytes(v for row in rows for v in row[:-1])
labels = bytes(row[-1] for row in rows)
n = len(rows)
assert len(pixels) == n * 784

with gzip.GzipFile(out / "train-images-idx3-ubyte.gz", "wb", mtime=0) as f:
    f.write(struct.pack(">IIII", 0x803, n, 28, 28) + pixels)
with gzip.GzipFile(out / "train-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
    f.write(struct.pack(">II", 0x801, n) + labels)
print(f"wrote {n} samples to {out}")
