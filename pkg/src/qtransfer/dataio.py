"""IDX ingestion, class filtering, PCA reduction to qubit angles, feature caches."""

from __future__ import annotations

import gzip
import hashlib
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
ANGLE_MAX = np.pi
DATA_DIR_ENV = "QTRANSFER_DATA"
CACHE_MAGIC = b"QTRF"


class FormatError(ValueError):
    """Malformed IDX or cache file.  ``offset`` is the byte position at fault."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (at byte {offset})")
        self.offset = offset


@dataclass(frozen=True, eq=False)
class RawDataset:
    images: np.ndarray  # (count, rows, cols) uint8
    labels: np.ndarray  # (count,) int

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise FormatError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def flat(self) -> np.ndarray:
        return self.images.reshape(len(self.images), -1).astype(float)

    def subset(self, idx) -> RawDataset:
        return RawDataset(self.images[idx], self.labels[idx])


def _read_bytes(path) -> bytes:
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(2)
    opener = gzip.open if head == b"\x1f\x8b" else open
    with opener(path, "rb") as f:
        return f.read()


def parse_idx(buf: bytes) -> np.ndarray:
    """Decode an unsigned-byte IDX payload (labels or images)."""
    if len(buf) < 8:
        raise FormatError(f"file too short for an IDX header: {len(buf)} bytes", 0)
    magic = struct.unpack(">I", buf[:4])[0]
    if magic not in (IMAGE_MAGIC, LABEL_MAGIC):
        raise FormatError(f"bad magic 0x{magic:08x}", 0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise FormatError(f"header needs {header} bytes, file has {len(buf)}", len(buf))
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    expected = int(np.prod(dims))
    actual = len(buf) - header
    if actual != expected:
        raise FormatError(
            f"payload length mismatch: expected {expected} bytes, got {actual}", header + min(actual, expected)
        )
    return np.frombuffer(buf, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(image_path, label_path) -> RawDataset:
    images = parse_idx(_read_bytes(image_path))
    labels = parse_idx(_read_bytes(label_path))
    if images.ndim != 3:
        raise FormatError(f"{image_path}: expected a 3-d image array, got {images.ndim}-d", 0)
    if labels.ndim != 1:
        raise FormatError(f"{label_path}: expected a 1-d label array", 0)
    if len(images) != len(labels):
        raise FormatError(f"count mismatch: {len(images)} images vs {len(labels)} labels", 4)
    return RawDataset(images, labels.astype(int))


def data_dir(override=None) -> Path:
    return Path(override or os.environ.get(DATA_DIR_ENV, "data"))


def _find(root: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        if (root / name).exists():
            return root / name
    raise FileNotFoundError(str(root / stem) + "[.gz]")


def load_split(dataset: str, split: str, root=None) -> RawDataset:
    """``dataset`` is ``mnist`` or ``fashion``; ``split`` is ``train`` or ``t10k``."""
    base = data_dir(root) / dataset
    return load_idx(
        _find(base, f"{split}-images-idx3-ubyte"), _find(base, f"{split}-labels-idx1-ubyte")
    )


def select_classes(ds: RawDataset, classes, relabel: dict[int, int] | None = None) -> RawDataset:
    """Keep only ``classes``; map labels through ``relabel`` (default: position in ``classes``)."""
    classes = list(classes)
    if not classes:
        raise ValueError("no classes given")
    if any(not 0 <= c <= 9 for c in classes):
        raise ValueError(f"unknown class in {classes}")
    relabel = {c: i for i, c in enumerate(classes)} if relabel is None else relabel
    keep = np.isin(ds.labels, classes)
    lut = np.full(10, -1)
    for c, new in relabel.items():
        lut[c] = new
    return RawDataset(ds.images[keep], lut[ds.labels[keep]])


def image_hashes(images) -> list[str]:
    return [hashlib.sha1(np.ascontiguousarray(im).tobytes()).hexdigest() for im in images]


@dataclass(frozen=True, eq=False)
class Reducer:
    mean: np.ndarray  # (pixels,)
    basis: np.ndarray  # (dim, pixels), orthonormal rows
    lo: np.ndarray  # (dim,) per-feature minimum on the fitting set
    hi: np.ndarray
    explained_variance: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.basis)


def fit_reducer(train: RawDataset | np.ndarray, dim: int) -> Reducer:
    """PCA onto the top ``dim`` components plus a min-max map onto ``[0, pi]``.

    Each component's sign is fixed so its largest-magnitude entry is positive.
    """
    x = train.flat if isinstance(train, RawDataset) else np.asarray(train, dtype=float)
    if len(x) == 0:
        raise ValueError("cannot fit a reducer on an empty set")
    if dim > x.shape[1]:
        raise ValueError(f"dim {dim} exceeds the {x.shape[1]} input features")
    mean = x.mean(axis=0)
    xc = x - mean
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    rank = int(np.sum(s > s[0] * 1e-10)) if s.size else 0
    if dim > rank:
        raise ValueError(f"dim {dim} exceeds the data rank {rank}")
    basis = vt[:dim]
    signs = np.sign(basis[np.arange(dim), np.argmax(np.abs(basis), axis=1)])
    basis = basis * signs[:, None]
    proj = xc @ basis.T
    return Reducer(mean, basis, proj.min(axis=0), proj.max(axis=0), s[:dim] ** 2 / max(len(x) - 1, 1))


def reduce(r: Reducer, data: RawDataset | np.ndarray) -> np.ndarray:
    """Project and rescale to ``[0, pi]``; values outside the fitting range are clamped."""
    x = data.flat if isinstance(data, RawDataset) else np.asarray(data, dtype=float)
    proj = (x - r.mean) @ r.basis.T
    span = np.where(r.hi > r.lo, r.hi - r.lo, 1.0)
    return np.clip((proj - r.lo) / span * ANGLE_MAX, 0.0, ANGLE_MAX)


def angle_encode(features) -> np.ndarray:
    """``Ry(x_i)|0>`` on each qubit; features must lie in ``[0, pi]``."""
    from .ansatz import encode

    x = np.asarray(features, dtype=float)
    if np.any(x < 0) or np.any(x > ANGLE_MAX):
        raise ValueError("features must lie in [0, pi]")
    return encode(x)


def save_features(path, features, labels) -> None:
    """Little-endian container: magic, dim, count, float64 features, int32 labels."""
    features = np.asarray(features, dtype="<f8")
    labels = np.asarray(labels, dtype="<i4")
    count, dim = features.shape
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC + struct.pack("<II", dim, count))
        f.write(features.tobytes())
        f.write(labels.tobytes())


def load_features(path) -> tuple[np.ndarray, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != CACHE_MAGIC:
        raise FormatError("bad feature-cache magic", 0)
    if len(buf) < 12:
        raise FormatError("truncated feature-cache header", len(buf))
    dim, count = struct.unpack("<II", buf[4:12])
    need = 12 + count * dim * 8 + count * 4
    if len(buf) != need:
        raise FormatError(f"feature cache should be {need} bytes, found {len(buf)}", min(len(buf), need))
    feats = np.frombuffer(buf, dtype="<f8", count=count * dim, offset=12).reshape(count, dim)
    labels = np.frombuffer(buf, dtype="<i4", count=count, offset=12 + count * dim * 8)
    return feats.astype(float), labels.astype(int)
