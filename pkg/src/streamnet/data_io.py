"""Dataset ingestion, checkpoint persistence, and image previews.

Three dataset sources are supported:
  - CIFAR-10 in its public binary layout (one label byte + 3072 planar RGB
    bytes per record),
  - a raw tensor dump format for externally converted datasets (see
    ``save_raw_dataset`` for the exact layout),
  - a deterministic synthetic generator whose classes carry their signal in
    class-specific intensity bands, so intensity slicing is informative by
    construction.

All file writes go through a temp-file-plus-rename so interrupted runs never
leave a truncated checkpoint behind.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .networks import Network, NetworkSpec, build_network
from .optim import Adam


class DataFormatError(ValueError):
    """A dataset or checkpoint file does not match its documented layout."""


@dataclass
class Dataset:
    """Images (n, c, h, w) with values in [0, 1] plus integer class labels."""

    images: np.ndarray
    labels: np.ndarray
    n_classes: int
    split: str = ""

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (n, c, h, w), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError("one label per image required")
        if self.labels.size:
            if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
                raise ValueError(f"labels must lie in [0, {self.n_classes})")
            lo, hi = self.images.min(), self.images.max()
            if lo < 0.0 or hi > 1.0:
                raise ValueError(f"pixel values must lie in [0, 1], got [{lo}, {hi}]")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple:
        return tuple(self.images.shape[1:])


def subset_stratified(ds: Dataset, total: int, seed: int = 0) -> Dataset:
    """Class-balanced subset of ``total`` images (total must divide evenly)."""
    per_class, rem = divmod(total, ds.n_classes)
    if rem:
        raise ValueError(f"subset size {total} not divisible by {ds.n_classes} classes")
    rng = np.random.default_rng(seed)
    picks = []
    for k in range(ds.n_classes):
        idx = np.flatnonzero(ds.labels == k)
        if idx.size < per_class:
            raise ValueError(f"class {k} has only {idx.size} images, need {per_class}")
        picks.append(rng.permutation(idx)[:per_class])
    order = np.sort(np.concatenate(picks))
    return Dataset(ds.images[order], ds.labels[order], ds.n_classes, ds.split)


# ---------------------------------------------------------------------------
# CIFAR-10 binary
# ---------------------------------------------------------------------------

_CIFAR_RECORD = 1 + 3 * 32 * 32  # label byte + planar RGB pixels
_CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
_CIFAR_TEST_FILE = "test_batch.bin"


def _read_cifar_file(path: str) -> tuple:
    if not os.path.exists(path):
        raise DataFormatError(f"missing CIFAR-10 batch file: {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % _CIFAR_RECORD != 0:
        raise DataFormatError(
            f"{path}: size {raw.size} is not a multiple of the {_CIFAR_RECORD}-byte "
            f"record; trailing bytes start at offset {raw.size - raw.size % _CIFAR_RECORD}")
    records = raw.reshape(-1, _CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.max(initial=0) > 9:
        raise DataFormatError(f"{path}: label {labels.max()} out of range [0, 9]")
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return images, labels


def load_cifar10(directory: str) -> tuple:
    """Load the binary CIFAR-10 batches; returns (train, test) Datasets."""
    train_parts = [_read_cifar_file(os.path.join(directory, f))
                   for f in _CIFAR_TRAIN_FILES]
    test_images, test_labels = _read_cifar_file(
        os.path.join(directory, _CIFAR_TEST_FILE))
    images = np.concatenate([p[0] for p in train_parts])
    labels = np.concatenate([p[1] for p in train_parts])
    return (Dataset(images, labels, 10, "train"),
            Dataset(test_images, test_labels, 10, "test"))


# ---------------------------------------------------------------------------
# Raw tensor dump (external converters write this; no image codecs here)
# ---------------------------------------------------------------------------

_RAW_MAGIC = b"SNRD"
_RAW_VERSION = 1


def save_raw_dataset(path: str, ds: Dataset) -> None:
    """Write the raw dump: magic, version, counts, labels, planar float64 pixels.

    Layout (little endian):
      magic "SNRD" | u32 version | u32 n | u32 c | u32 h | u32 w |
      u32 n_classes | i64 labels[n] | f64 pixels[n*c*h*w]
    """
    n, c, h, w = ds.images.shape
    header = _RAW_MAGIC + struct.pack("<6I", _RAW_VERSION, n, c, h, w, ds.n_classes)
    payload = (header
               + ds.labels.astype("<i8").tobytes()
               + ds.images.astype("<f8").tobytes())
    atomic_write(path, payload)


def load_raw_dataset(path: str, split: str = "") -> Dataset:
    if not os.path.exists(path):
        raise DataFormatError(f"missing raw dataset file: {path}")
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _RAW_MAGIC:
        raise DataFormatError(f"{path}: bad magic {blob[:4]!r}, expected {_RAW_MAGIC!r}")
    version, n, c, h, w, n_classes = struct.unpack_from("<6I", blob, 4)
    if version != _RAW_VERSION:
        raise DataFormatError(f"{path}: unsupported raw dump version {version}")
    offset = 4 + 24
    expected = offset + 8 * n + 8 * n * c * h * w
    if len(blob) != expected:
        raise DataFormatError(f"{path}: expected {expected} bytes, found {len(blob)} "
                              f"(payload truncated at offset {len(blob)})")
    labels = np.frombuffer(blob, dtype="<i8", count=n, offset=offset)
    pixels = np.frombuffer(blob, dtype="<f8", count=n * c * h * w,
                           offset=offset + 8 * n)
    return Dataset(pixels.reshape(n, c, h, w).copy(), labels.copy(),
                   n_classes, split)


# ---------------------------------------------------------------------------
# Synthetic dataset
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Desk-scale dataset whose classes live in distinct intensity bands.

    Class k draws its discriminative texture from the k-th band of
    [band_lo, band_hi], at class-specific pixel positions, over a sparse
    uniform background.
    """

    n_classes: int = 10
    train_per_class: int = 150
    test_per_class: int = 50
    channels: int = 3
    size: int = 16
    seed: int = 7
    pattern_density: float = 0.25
    background_density: float = 0.3
    band_lo: float = 0.2
    band_hi: float = 1.0


def generate_synthetic(spec: SyntheticSpec) -> tuple:
    """Deterministic (train, test) pair; same spec and seed give equal data."""
    rng = np.random.default_rng(spec.seed)
    shape = (spec.channels, spec.size, spec.size)
    protos = [rng.random(shape) < spec.pattern_density
              for _ in range(spec.n_classes)]
    band_width = (spec.band_hi - spec.band_lo) / spec.n_classes

    def make_split(per_class: int, split: str) -> Dataset:
        count = spec.n_classes * per_class
        images = np.zeros((count, *shape))
        labels = np.empty(count, dtype=np.int64)
        i = 0
        for k in range(spec.n_classes):
            lo = spec.band_lo + k * band_width
            for _ in range(per_class):
                img = np.zeros(shape)
                background = rng.random(shape) < spec.background_density
                img[background] = rng.random(int(background.sum()))
                active = protos[k] & (rng.random(shape) < 0.85)
                img[active] = lo + band_width * (0.05 + 0.9 * rng.random(int(active.sum())))
                images[i] = img
                labels[i] = k
                i += 1
        return Dataset(images, labels, spec.n_classes, split)

    return make_split(spec.train_per_class, "train"), \
        make_split(spec.test_per_class, "test")


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"SNCK"
_CKPT_VERSION = 1


def atomic_write(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path: str, net: Network, optimizer: Adam | None = None,
                    extra: dict | None = None) -> None:
    """Serialize spec + parameters (+ optimizer state) with a content checksum.

    Layout: magic | u32 version | u64 header length | JSON header |
    little-endian float64 blobs in header order | sha256 of all prior bytes.
    """
    blobs = [(pid, p.value) for pid, p in net.params.items()]
    if optimizer is not None:
        blobs.extend(sorted(optimizer.state_arrays().items()))
    header = {
        "spec": net.spec.to_dict(),
        "arrays": [{"id": pid, "shape": list(a.shape)} for pid, a in blobs],
        "adam": None if optimizer is None else optimizer.hyperparams(),
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in blobs)
    payload = _CKPT_MAGIC + struct.pack("<IQ", _CKPT_VERSION, len(head)) + head + body
    payload += hashlib.sha256(payload).digest()
    atomic_write(path, payload)


def load_checkpoint(path: str) -> tuple:
    """Rebuild (net, optimizer_or_None, extra) from a checkpoint file."""
    if not os.path.exists(path):
        raise DataFormatError(f"missing checkpoint file: {path}")
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 48 or blob[:4] != _CKPT_MAGIC:
        raise DataFormatError(f"{path}: not a checkpoint file")
    digest = blob[-32:]
    if hashlib.sha256(blob[:-32]).digest() != digest:
        raise DataFormatError(f"{path}: checksum mismatch, file is corrupt")
    version, head_len = struct.unpack_from("<IQ", blob, 4)
    if version != _CKPT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[16:16 + head_len].decode())
    offset = 16 + head_len
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        arrays[entry["id"]] = arr.reshape(shape).copy()
        offset += 8 * count
    net = build_network(NetworkSpec.from_dict(header["spec"]))
    for pid, p in net.params.items():
        p.value[...] = arrays[pid]
    optimizer = None
    if header["adam"] is not None:
        optimizer = Adam.restore(net, header["adam"], arrays)
    return net, optimizer, header.get("extra", {})


# ---------------------------------------------------------------------------
# PPM previews
# ---------------------------------------------------------------------------

def write_ppm(path: str, image: np.ndarray) -> None:
    """Write a (c, h, w) image with values in [0, 1] as binary 8-bit PPM (P6)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ValueError(f"expected (c, h, w) image, got shape {image.shape}")
    c, h, w = image.shape
    if c == 1:
        image = np.repeat(image, 3, axis=0)
    elif c != 3:
        raise ValueError(f"PPM preview needs 1 or 3 channels, got {c}")
    pixels = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    payload = f"P6\n{w} {h}\n255\n".encode() + pixels.transpose(1, 2, 0).tobytes()
    atomic_write(path, payload)


def read_ppm(path: str) -> np.ndarray:
    """Read a binary 8-bit PPM into a (3, h, w) float64 image in [0, 1]."""
    if not os.path.exists(path):
        raise DataFormatError(f"missing image file: {path}")
    with open(path, "rb") as fh:
        blob = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    if fields[0] != b"P6":
        raise DataFormatError(f"{path}: expected binary PPM (P6), got {fields[0]!r}")
    w, h, maxval = (int(v) for v in fields[1:])
    if maxval != 255:
        raise DataFormatError(f"{path}: only 8-bit PPM supported, maxval {maxval}")
    pos += 1  # single whitespace byte after the header
    data = np.frombuffer(blob, dtype=np.uint8, count=3 * h * w, offset=pos)
    if data.size != 3 * h * w:
        raise DataFormatError(f"{path}: truncated pixel payload")
    return data.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0
