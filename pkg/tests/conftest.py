import gzip
import struct

import numpy as np
import pytest


def random_unitary(rng, d):
    q, r = np.linalg.qr(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_state(rng, n):
    psi = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    return psi / np.linalg.norm(psi)


def idx_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype=np.uint8)
    magic = 0x0800 | arr.ndim
    return struct.pack(">I", magic) + struct.pack(f">{arr.ndim}I", *arr.shape) + arr.tobytes()


def write_fake_datasets(root, seed=0, train_per_class=60, test_per_class=20, side=8):
    """Tiny MNIST-shaped gzip IDX files: one noisy template per class.

    The first mnist test image of class 0 is also planted in the mnist
    training split, so leakage checks have something to catch.
    """
    rng = np.random.default_rng(seed)
    for dataset in ("mnist", "fashion"):
        templates = rng.uniform(0, 255, (10, side, side))
        splits = {}
        for split, per in (("train", train_per_class), ("t10k", test_per_class)):
            labels = np.repeat(np.arange(10), per)
            noise = rng.normal(0, 40, (len(labels), side, side))
            images = np.clip(templates[labels] + noise, 0, 255).astype(np.uint8)
            splits[split] = [images, labels]
        if dataset == "mnist":
            splits["train"][0][0] = splits["t10k"][0][0]
        base = root / dataset
        base.mkdir(parents=True, exist_ok=True)
        for split, (images, labels) in splits.items():
            with gzip.open(base / f"{split}-images-idx3-ubyte.gz", "wb") as f:
                f.write(idx_bytes(images))
            with gzip.open(base / f"{split}-labels-idx1-ubyte.gz", "wb") as f:
                f.write(idx_bytes(labels))
    return root


@pytest.fixture(scope="session")
def fake_data(tmp_path_factory):
    return write_fake_datasets(tmp_path_factory.mktemp("data"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
