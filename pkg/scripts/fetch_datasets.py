"""Fetch MNIST and Fashion-MNIST through the npm registry and write IDX files.

MNIST comes as raw IDX files inside the ``mnist-data`` package.  Fashion-MNIST
comes as one JSON file per class inside the ``fashion-mnist`` package; those
are re-packed into IDX (first 6000 images of each class -> train split, the
remaining 1000 -> t10k split, matching the usual 60k/10k layout).

Usage: python scripts/fetch_datasets.py [DATA_DIR]
"""

import gzip
import json
import shutil
import struct
import subprocess
import sys
import tarfile
import tempfile
from pathlib import Path

import numpy as np

TRAIN_PER_CLASS = 6000


def _npm_pack(name, workdir):
    out = subprocess.run(
        ["npm", "pack", name, "--silent"], cwd=workdir, check=True, capture_output=True, text=True
    )
    tgz = Path(workdir) / out.stdout.strip().splitlines()[-1]
    dest = Path(workdir) / name
    with tarfile.open(tgz) as tar:
        tar.extractall(dest)
    return dest / "package"



def fetch_mnist(root, workdir):
    pkg = _npm_pack("mnist-data", workdir)
    out = root / "mnist"
    out.mkdir(parents=True, exist_ok=True)
    for stem in ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                 "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"):
        with open(pkg / "data" / stem, "rb") as src, gzip.open(out / f"{stem}.gz", "wb") as dst:
            shutil.copyfileobj(src, dst)


def fetch_fashion(root, workdir):
    pkg = _npm_pack("fashion-mnist", workdir)
    out = root / "fashion"
    out.mkdir(parents=True, exist_ok=True)
    splits = {"train": ([], []), "t10k": ([], [])}
    for cls in range(10):
        rows = json.loads((pkg / "src" / "clothes" / f"{cls}.json").read_text())["data"]
        rows = np.array([r for r in rows if len(r) == 784], dtype=np.uint8)
        for name, part in (("train", rows[:TRAIN_PER_CLASS]), ("t10k", rows[TRAIN_PER_CLASS:])):
            splits[name][0].append(part)
            splits[name][1].append(np.full(len(part), cls, dtype=np.uint8))
    for name, (imgs, labs) in splits.items():
        images = np.concatenate(imgs)
        labels = np.concatenate(labs)
        # interleave classes deterministically so prefixes are not single-class
        order = np.random.default_rng(0).permutation(len(labels))
        with gzip.open(out / f"{name}-images-idx3-ubyte.gz", "wb") as f:
            f.write(struct.pack(">IIII", 0x803, len(order), 28, 28))
            f.write(images[order].tobytes())
        with gzip.open(out / f"{name}-labels-idx1-ubyte.gz", "wb") as f:
            f.write(struct.pack(">II", 0x801, len(order)))
            f.write(labels[order].tobytes())


def main(argv):
    root = Path(argv[1] if len(argv) > 1 else "data").resolve()
    with tempfile.TemporaryDirectory() as tmp:
        fetch_mnist(root, tmp)
        fetch_fashion(root, tmp)
    print(f"wrote IDX files under {root}")


if __name__ == "__main__":
    main(sys.argv)
