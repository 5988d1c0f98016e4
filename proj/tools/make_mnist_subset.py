#!/usr/bin/env python3
"""Writes a 5000-digit MNIST sample as IDX files.

The digits come from the ``mnist_5k.csv.gz`` table shipped inside the
mlxtend wheel (pixels 0..255 followed by the label, 500 digits per class,
sorted by class). Per class the first 400 digits go to the training pool
and the last 100 to the evaluation pool; both pools interleave the classes
round-robin.

    python3 tools/make_mnist_subset.py data/mnist5k
"""
import gzip
import pathlib
import struct
import subprocess
import sys
import tempfile
import zipfile


def fetch_rows():
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps",
                        "mlxtend==0.24.0", "-d", tmp, "-q"], check=True)
        wheel = next(pathlib.Path(tmp).glob("mlxtend-*.whl"))
        with zipfile.ZipFile(wheel) as z:
            text = gzip.decompress(
                z.read("mlxtend/data/data/mnist_5k.csv.gz")).decode()
    rows = []
    for line in text.strip().splitlines():
        vals = [int(float(v)) for v in line.split(",")]
        rows.append((bytes(vals[:784]), vals[784]))
    return rows


def write_idx(out, prefix, rows):
    with open(out / f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(rows), 28, 28))
        for pixels, _ in rows:
            f.write(pixels)
    with open(out / f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(rows)))
        f.write(bytes(label for _, label in rows))


def main():
    out = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "data/mnist5k")
    out.mkdir(parents=True, exist_ok=True)
    rows = fetch_rows()
    if len(rows) != 5000:
        sys.exit(f"expected 5000 rows, got {len(rows)}")
    by_class = [[r for r in rows if r[1] == c] for c in range(10)]
    train = [by_class[c][i] for i in range(400) for c in range(10)]
    test = [by_class[c][400 + i] for i in range(100) for c in range(10)]
    write_idx(out, "train", train)
    write_idx(out, "test", test)


if __name__ == "__main__":
    main()
