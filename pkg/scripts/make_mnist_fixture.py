"""Convert the 5000-digit MNIST sample shipped in the mlxtend wheel to IDX files.

Usage: python scripts/make_mnist_fixture.py path/to/mlxtend-*.whl tests/data
"""
import gzip
import io
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np


def main(wheel, outdir):
    with zipfile.ZipFile(wheel) as zf:
        raw = gzip.decompress(zf.read("mlxtend/data/data/mnist_5k.csv.gz"))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",").astype(np.uint8)
    pixels, labels = table[:, :-1], table[:, -1]
    n = len(labels)
    outdir = Path(outdir)
    images = struct.pack(">4B3I", 0, 0, 8, 3, n, 28, 28) + pixels.tobytes()
    lbls = struct.pack(">4BI", 0, 0, 8, 1, n) + labels.tobytes()
    # mtime=0 keeps the gzip bytes reproducible
    (outdir / "mnist5k-images.idx3-ubyte.gz").write_bytes(gzip.compress(images, mtime=0))
    (outdir / "mnist5k-labels.idx1-ubyte.gz").write_bytes(gzip.compress(lbls, mtime=0))


if __name__ == "__main__":
    main(*sys.argv[1:3])
