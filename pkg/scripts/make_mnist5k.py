"""Rebuild data/mnist5k/ from the 5000-sample MNIST subset bundled with mlxtend.

Usage: python scripts/make_mnist5k.py [path/to/mlxtend-*.whl]

Without an argument the installed ``mlxtend`` package is used.
"""

import gzip
import io
import sys
import zipfile
from pathlib import Path

import numpy as np

from bnit.data import Dataset, write_idx

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_csv_gz(argv) -> bytes:
    if len(argv) > 1:
        with zipfile.ZipFile(argv[1]) as whl:
            return whl.read(MEMBER)
    import mlxtend.data
    return (Path(mlxtend.data.__file__).parent / "data" / "mnist_5k.csv.gz").read_bytes()


def main(argv):
    table = np.loadtxt(io.StringIO(gzip.decompress(read_csv_gz(argv)).decode()), delimiter=",")
    pixels, labels = table[:, :-1], table[:, -1].astype(np.int64)
    assert pixels.shape == (5000, 784) and pixels.max() <= 255
    ds = Dataset(np.ascontiguousarray(pixels.T) / 255.0, labels, 10)
    out = Path(__file__).resolve().parents[1] / "data" / "mnist5k"
    out.mkdir(parents=True, exist_ok=True)
    write_idx(ds, out / "images-idx3-ubyte.gz", out / "labels-idx1-ubyte.gz", (28, 28))
    print(f"wrote {len(ds)} samples to {out}")


if __name__ == "__main__":
    main(sys.argv)
