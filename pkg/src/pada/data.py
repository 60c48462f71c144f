"""Datasets: seeded Gaussian blobs, IDX (MNIST-style) files, and npz persistence."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError
from .rng import stream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: str = "train"
    n_classes: int | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or len(self.inputs) != len(self.labels):
            raise ConfigError(f"inputs {self.inputs.shape} do not match {len(self.labels)} labels")
        if len(self.labels) < 1:
            raise ConfigError("a dataset needs at least one sample")
        if self.n_classes is None:
            self.n_classes = int(self.labels.max()) + 1
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ConfigError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def d_in(self) -> int:
        return self.inputs.shape[1]

    def subset(self, n: int | None) -> "Dataset":
        if not n or n >= len(self):
            return self
        return Dataset(self.inputs[:n], self.labels[:n], self.split, self.n_classes, dict(self.provenance))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.inputs.shape, dtype="<u8").tobytes())
        h.update(self.inputs.astype("<f8").tobytes())
        h.update(self.labels.astype("<i8").tobytes())
        return h.hexdigest()


def generate_synthetic(
    n_per_class: int,
    n_classes: int,
    d_in: int,
    separation: float,
    noise: float,
    seed: int,
    split: str = "train",
) -> Dataset:
    """Gaussian blobs around seeded class means.

    Class means depend only on ``seed``; the samples come from a stream keyed
    by ``split`` so train and eval draws never coincide.
    """
    if min(n_per_class, n_classes, d_in) <= 0 or separation < 0 or noise < 0:
        raise ConfigError("synthetic dataset sizes must be positive and scales nonnegative")
    means = stream(seed, "data-means").standard_normal((n_classes, d_in)) * separation
    rng = stream(seed, f"data-{split}")
    labels = np.repeat(np.arange(n_classes), n_per_class)
    rng.shuffle(labels)
    inputs = means[labels] + noise * rng.standard_normal((len(labels), d_in))
    prov = {
        "kind": "synthetic",
        "n_per_class": n_per_class,
        "n_classes": n_classes,
        "d_in": d_in,
        "separation": separation,
        "noise": noise,
        "seed": seed,
    }
    return Dataset(inputs, labels, split, n_classes, prov)


# --- IDX --------------------------------------------------------------------

def _read_header(buf: bytes, magic: int, what: str) -> tuple[list[int], int]:
    if len(buf) < 8:
        raise ParseError(f"{what}: truncated header at byte 0 (file has {len(buf)} bytes)")
    (got,) = struct.unpack_from(">I", buf, 0)
    if got != magic:
        raise ParseError(f"{what}: bad magic 0x{got:08x} at byte 0, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    end = 4 + 4 * ndim
    if len(buf) < end:
        raise ParseError(f"{what}: truncated dimension fields at byte {len(buf)}, need {end}")
    dims = list(struct.unpack_from(f">{ndim}I", buf, 4))
    return dims, end


def load_idx(images_path, labels_path, limit: int | None = None, normalize: bool = True, split: str = "train") -> Dataset:
    img_buf = Path(images_path).read_bytes()
    lbl_buf = Path(labels_path).read_bytes()
    img_dims, img_off = _read_header(img_buf, IDX_IMAGES_MAGIC, str(images_path))
    lbl_dims, lbl_off = _read_header(lbl_buf, IDX_LABELS_MAGIC, str(labels_path))
    n_img, n_lbl = img_dims[0], lbl_dims[0]
    if n_img != n_lbl:
        raise ParseError(f"image count {n_img} (byte 4 of {images_path}) != label count {n_lbl} (byte 4 of {labels_path})")
    row = int(np.prod(img_dims[1:]))
    need = img_off + n_img * row
    if len(img_buf) < need:
        raise ParseError(f"{images_path}: truncated pixel data, file ends at byte {len(img_buf)}, expected {need}")
    if len(lbl_buf) < lbl_off + n_lbl:
        raise ParseError(f"{labels_path}: truncated label data, file ends at byte {len(lbl_buf)}, expected {lbl_off + n_lbl}")
    n = n_img if limit is None else min(limit, n_img)
    pixels = np.frombuffer(img_buf, dtype=np.uint8, count=n * row, offset=img_off).reshape(n, row)
    labels = np.frombuffer(lbl_buf, dtype=np.uint8, count=n, offset=lbl_off)
    inputs = pixels.astype(np.float64)
    if normalize:
        inputs /= 255.0
    prov = {"kind": "idx", "images": str(images_path), "labels": str(labels_path), "limit": limit}
    return Dataset(inputs, labels.astype(np.int64), split, max(10, int(labels.max()) + 1), prov)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    header = struct.pack(">I", IDX_IMAGES_MAGIC) + struct.pack(f">{images.ndim}I", *images.shape)
    Path(images_path).write_bytes(header + images.tobytes())
    labels = np.asarray(labels, dtype=np.uint8)
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


# --- npz --------------------------------------------------------------------

def save_dataset(path, ds: Dataset) -> None:
    with open(path, "wb") as fh:
        np.savez(
            fh,
            inputs=ds.inputs,
            labels=ds.labels,
            meta=np.array(json.dumps({"split": ds.split, "n_classes": ds.n_classes, "provenance": ds.provenance})),
        )


def load_dataset(path) -> Dataset:
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            return Dataset(z["inputs"], z["labels"], meta["split"], meta["n_classes"], meta["provenance"])
    except (OSError, KeyError, ValueError) as exc:
        raise ParseError(f"cannot read dataset {path}: {exc}") from exc
