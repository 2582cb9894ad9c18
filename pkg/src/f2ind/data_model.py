"""Dataset model, binary embedding interchange, synthetic data, splits, batches.

The interchange format ("F2EMB1") is little-endian binary: an 18-byte header
(6-byte magic, u32 sample count, u32 text dim, u32 image dim) followed by one
variable-length record per sample: u64 sample id, u8 label, u8 image flag,
f32 x text_dim, and f32 x image_dim only when the flag is set. Embeddings are
stored as float32 and round-trip bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, CorruptError, FormatError, IoError, TruncatedError

MAGIC = b"F2EMB1"
DEFAULT_TEXT_DIM = 768
DEFAULT_IMAGE_DIM = 2048

_HEADER = struct.Struct("<6sIII")
_RECORD_HEAD = struct.Struct("<QBB")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass
class Sample:
    """One labeled example: a text embedding plus an optional image embedding."""

    sample_id: int
    label: int  # 0 = true news, 1 = fake news
    text_emb: np.ndarray  # float32, shape (text_dim,)
    image_emb: np.ndarray | None = None  # float32, shape (image_dim,) iff has_image
    has_image: bool = False


@dataclass
class Dataset:
    """Ordered collection of samples sharing embedding dimensions."""

    samples: list[Sample] = field(default_factory=list)
    text_dim: int = DEFAULT_TEXT_DIM
    image_dim: int = DEFAULT_IMAGE_DIM

    def __len__(self) -> int:
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def validate(self) -> None:
        """Check structural invariants, raising ConfigError on the first violation."""
        if self.text_dim <= 0 or self.image_dim <= 0:
            raise ConfigError("embedding dimensions must be positive")
        seen: set[int] = set()
        for s in self.samples:
            if s.label not in (0, 1):
                raise ConfigError(f"sample {s.sample_id}: label must be 0 or 1, got {s.label!r}")
            if not 0 <= s.sample_id < 2**64:
                raise ConfigError(f"sample_id {s.sample_id} outside u64 range")
            if s.sample_id in seen:
                raise ConfigError(f"duplicate sample_id {s.sample_id}")
            seen.add(s.sample_id)
            if s.text_emb.shape != (self.text_dim,):
                raise ConfigError(
                    f"sample {s.sample_id}: text_emb shape {s.text_emb.shape} != ({self.text_dim},)"
                )
            if s.has_image != (s.image_emb is not None):
                raise ConfigError(f"sample {s.sample_id}: image_emb present iff has_image")
            if s.has_image and s.image_emb.shape != (self.image_dim,):
                raise ConfigError(
                    f"sample {s.sample_id}: image_emb shape {s.image_emb.shape} != ({self.image_dim},)"
                )
            if not np.isfinite(s.text_emb).all():
                raise ConfigError(f"sample {s.sample_id}: non-finite text embedding")
            if s.has_image and not np.isfinite(s.image_emb).all():
                raise ConfigError(f"sample {s.sample_id}: non-finite image embedding")

    def gather(self, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Assemble (text, image, has_image, labels) float64 batch arrays.

        Missing-image rows are zero-filled in the image array; the boolean
        mask tells the fusion layer to ignore them.
        """
        idx = np.asarray(indices, dtype=np.int64)
        text = np.zeros((len(idx), self.text_dim), dtype=np.float64)
        image = np.zeros((len(idx), self.image_dim), dtype=np.float64)
        mask = np.zeros(len(idx), dtype=bool)
        labels = np.zeros(len(idx), dtype=np.int64)
        for row, i in enumerate(idx):
            s = self.samples[i]
            text[row] = s.text_emb
            labels[row] = s.label
            if s.has_image:
                image[row] = s.image_emb
                mask[row] = True
        return text, image, mask, labels


@dataclass
class FoldSplit:
    """Disjoint train/validation index lists into a Dataset."""

    train_indices: np.ndarray
    val_indices: np.ndarray


def write_embeddings(dataset: Dataset, path) -> None:
    """Serialize a dataset to the F2EMB1 binary format (little-endian)."""
    dataset.validate()
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, len(dataset.samples), dataset.text_dim, dataset.image_dim))
            for s in dataset.samples:
                fh.write(_RECORD_HEAD.pack(s.sample_id, s.label, 1 if s.has_image else 0))
                fh.write(np.ascontiguousarray(s.text_emb, dtype="<f4").tobytes())
                if s.has_image:
                    fh.write(np.ascontiguousarray(s.image_emb, dtype="<f4").tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_embeddings(path) -> Dataset:
    """Parse an F2EMB1 file back into a Dataset; inverse of write_embeddings."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    if len(buf) < len(MAGIC):
        raise TruncatedError(f"{path}: {len(buf)} bytes, too short for magic")
    if buf[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:len(MAGIC)]!r}, expected {MAGIC!r}")
    if len(buf) < _HEADER.size:
        raise TruncatedError(f"{path}: incomplete header ({len(buf)} bytes)")

    _, n_samples, text_dim, image_dim = _HEADER.unpack_from(buf, 0)
    if text_dim == 0 or image_dim == 0:
        raise CorruptError(f"{path}: zero embedding dimension in header")

    samples: list[Sample] = []
    off = _HEADER.size
    text_bytes = 4 * text_dim
    image_bytes = 4 * image_dim
    for rec in range(n_samples):
        if off + _RECORD_HEAD.size > len(buf):
            raise TruncatedError(f"{path}: record {rec} of {n_samples} cut off at byte {off}")
        sample_id, label, flag = _RECORD_HEAD.unpack_from(buf, off)
        off += _RECORD_HEAD.size
        if label not in (0, 1):
            raise CorruptError(f"{path}: record {rec}: label byte {label}")
        if flag not in (0, 1):
            raise CorruptError(f"{path}: record {rec}: image flag byte {flag}")
        need = text_bytes + (image_bytes if flag else 0)
        if off + need > len(buf):
            raise TruncatedError(f"{path}: record {rec} payload cut off at byte {off}")
        text_emb = _frozen(np.frombuffer(buf, dtype="<f4", count=text_dim, offset=off).copy())
        off += text_bytes
        image_emb = None
        if flag:
            image_emb = _frozen(np.frombuffer(buf, dtype="<f4", count=image_dim, offset=off).copy())
            off += image_bytes
        if not np.isfinite(text_emb).all() or (flag and not np.isfinite(image_emb).all()):
            raise CorruptError(f"{path}: record {rec}: non-finite embedding values")
        samples.append(Sample(sample_id, label, text_emb, image_emb, bool(flag)))

    if off != len(buf):
        raise CorruptError(f"{path}: {len(buf) - off} trailing bytes after {n_samples} records")

    ds = Dataset(samples, text_dim=text_dim, image_dim=image_dim)
    try:
        ds.validate()
    except ConfigError as exc:
        raise CorruptError(f"{path}: {exc}") from exc
    return ds


def generate_synthetic(
    n: int,
    fake_fraction: float,
    missing_image_fraction: float,
    separation: float,
    seed: int,
    text_dim: int = DEFAULT_TEXT_DIM,
    image_dim: int = DEFAULT_IMAGE_DIM,
) -> Dataset:
    """Two-Gaussian synthetic dataset with a controllable class gap.

    True-news embeddings are standard normal; fake-news embeddings are shifted
    by `separation` along one fixed random unit direction per modality, so a
    single scalar controls separability. Deterministic per seed.
    """
    if n < 2:
        raise ConfigError(f"n must be >= 2, got {n}")
    if not 0.0 < fake_fraction < 1.0:
        raise ConfigError(f"fake_fraction must lie in (0,1), got {fake_fraction}")
    if not 0.0 <= missing_image_fraction <= 1.0:
        raise ConfigError(f"missing_image_fraction must lie in [0,1], got {missing_image_fraction}")
    if separation < 0.0:
        raise ConfigError(f"separation must be >= 0, got {separation}")
    n_fake = int(round(n * fake_fraction))
    if n_fake == 0 or n_fake == n:
        raise ConfigError(f"fake_fraction={fake_fraction} leaves a class empty for n={n}")

    rng = np.random.default_rng(seed)
    dir_text = rng.standard_normal(text_dim)
    dir_text /= np.linalg.norm(dir_text)
    dir_image = rng.standard_normal(image_dim)
    dir_image /= np.linalg.norm(dir_image)

    labels = rng.permutation(np.array([1] * n_fake + [0] * (n - n_fake), dtype=np.int64))
    n_missing = int(round(n * missing_image_fraction))
    missing = np.zeros(n, dtype=bool)
    if n_missing:
        missing[rng.choice(n, size=n_missing, replace=False)] = True

    text = rng.standard_normal((n, text_dim)) + separation * np.outer(labels, dir_text)
    image = rng.standard_normal((n, image_dim)) + separation * np.outer(labels, dir_image)
    text32 = text.astype(np.float32)
    image32 = image.astype(np.float32)

    samples = [
        Sample(
            sample_id=i,
            label=int(labels[i]),
            text_emb=_frozen(text32[i].copy()),
            image_emb=None if missing[i] else _frozen(image32[i].copy()),
            has_image=not missing[i],
        )
        for i in range(n)
    ]
    ds = Dataset(samples, text_dim=text_dim, image_dim=image_dim)
    ds.validate()
    return ds


def stratified_kfold(dataset: Dataset, k: int, seed: int) -> list[FoldSplit]:
    """Class-ratio-preserving k-fold splits, deterministic per seed.

    Fold sizes are balanced by dealing the sorted labels round-robin into k
    folds, which pins the per-fold class allocation; the concrete samples
    filling each allocation slot are drawn from a seeded per-class shuffle.
    """
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    labels = dataset.labels()
    counts = [int((labels == c).sum()) for c in (0, 1)]
    if min(counts) == 0:
        raise ConfigError("stratified splitting needs both classes present")
    if len(dataset) < k:
        raise ConfigError(f"cannot form k={k} folds from {len(dataset)} samples")

    y_order = np.sort(labels)
    allocation = np.stack([np.bincount(y_order[i::k], minlength=2) for i in range(k)])

    rng = np.random.default_rng(seed)
    val_lists: list[list[int]] = [[] for _ in range(k)]
    for c in (0, 1):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        start = 0
        for fold in range(k):
            take = int(allocation[fold, c])
            val_lists[fold].extend(int(i) for i in idx[start : start + take])
            start += take

    splits: list[FoldSplit] = []
    all_idx = np.arange(len(dataset), dtype=np.int64)
    for fold in range(k):
        val = np.array(sorted(val_lists[fold]), dtype=np.int64)
        train = np.setdiff1d(all_idx, val, assume_unique=True)
        splits.append(FoldSplit(train_indices=train, val_indices=val))
    return splits


def make_batches(
    dataset: Dataset,
    indices,
    batch_size: int,
    shuffle: bool,
    seed: int = 0,
) -> list[np.ndarray]:
    """Partition an index list into ordered batches; last batch may be short."""
    if batch_size <= 0:
        raise ConfigError(f"batch_size must be positive, got {batch_size}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= len(dataset)):
        raise ConfigError("batch indices out of dataset range")
    order = np.random.default_rng(seed).permutation(idx) if shuffle else idx.copy()
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
