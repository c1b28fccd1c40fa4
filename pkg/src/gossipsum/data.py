"""Datasets, Dirichlet label-skew partitioning, and seeded minibatches.

Workers never see the raw dataset directly: each owns a shard (an index
set into the dataset) produced by a per-class Dirichlet split, and draws
minibatches with replacement from its own shard only. All sampling is
driven by explicitly derived generators, so a (seed, concentration,
workers) triple reproduces the same partition on any platform.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, StateError


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix plus integer labels in [0, num_classes)."""

    features: np.ndarray      # (m, d) float64
    labels: np.ndarray        # (m,) int64
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError(f"features must be a nonempty 2-D array, got {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must be one per sample")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError("labels must lie in [0, num_classes)")
        self.features.setflags(write=False)
        self.labels.setflags(write=False)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True, eq=False)
class Shard:
    """One worker's slice of a dataset, as indices into it."""

    owner: int
    indices: np.ndarray       # (k,) int64, unique

    def __post_init__(self):
        self.indices.setflags(write=False)

    def __len__(self):
        return int(self.indices.shape[0])


def synthetic_blobs(classes: int, dim: int, samples: int, blob_stddev: float,
                    rng: np.random.Generator, name: str = "synthetic",
                    means: np.ndarray | None = None) -> Dataset:
    """Gaussian blobs: one standard-normal mean per class, round-robin labels.

    Draw order is fixed (means first, then all noise) so a given generator
    state always produces the identical dataset. Pass ``means`` to sample a
    second split (a test set) from the same class centers.
    """
    if classes < 1 or dim < 1 or samples < 1:
        raise ValueError("classes, dim and samples must all be >= 1")
    if blob_stddev < 0:
        raise ValueError("blob_stddev must be non-negative")
    if means is None:
        means = rng.normal(0.0, 1.0, size=(classes, dim))
    elif means.shape != (classes, dim):
        raise ValueError(f"means must have shape ({classes}, {dim}), got {means.shape}")
    labels = (np.arange(samples) % classes).astype(np.int64)
    feats = means[labels] + blob_stddev * rng.normal(0.0, 1.0, size=(samples, dim))
    return Dataset(features=feats, labels=labels, num_classes=classes, name=name)


def load_dataset(path: str, fmt: str) -> Dataset:
    """Load a dataset file.

    ``fmt == "csv"``: rows of ``label,feat0,feat1,...``.
    ``fmt == "idx"``: ``path`` is a prefix; reads the big-endian IDX pair
    ``<path>-images-idx3-ubyte`` / ``<path>-labels-idx1-ubyte``.
    """
    if fmt == "csv":
        return _load_csv(path)
    if fmt == "idx":
        return _load_idx_pair(path)
    raise ValueError(f"unknown dataset format {fmt!r}")


def _load_csv(path: str) -> Dataset:
    labels, rows = [], []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) < 2:
                raise DataFormatError(f"{path}:{lineno}: need label plus at least one feature")
            try:
                label = int(parts[0])
                feats = [float(p) for p in parts[1:]]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
            if width is None:
                width = len(feats)
            elif len(feats) != width:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {width} features, got {len(feats)}")
            labels.append(label)
            rows.append(feats)
    if not rows:
        raise DataFormatError(f"{path}:1: file contains no samples")
    labels_arr = np.array(labels, dtype=np.int64)
    if labels_arr.min() < 0:
        raise DataFormatError(f"{path}: labels must be non-negative")
    return Dataset(features=np.array(rows, dtype=np.float64), labels=labels_arr,
                   num_classes=int(labels_arr.max()) + 1, name=path)


def _read_exact(fh, count: int, path: str, what: str) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise DataFormatError(
            f"{path}: truncated while reading {what} "
            f"(wanted {count} bytes at offset {fh.tell() - len(buf)}, got {len(buf)})")
    return buf


def _load_idx_pair(prefix: str) -> Dataset:
    images_path = prefix + "-images-idx3-ubyte"
    labels_path = prefix + "-labels-idx1-ubyte"

    with open(images_path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, images_path, "header"))
        if magic != 2051:
            raise DataFormatError(f"{images_path}: bad magic {magic:#x}, expected 0x803")
        raw = _read_exact(fh, count * rows * cols, images_path, "pixel data")
    feats = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
    feats = feats.reshape(count, rows * cols)

    with open(labels_path, "rb") as fh:
        magic, lcount = struct.unpack(">II", _read_exact(fh, 8, labels_path, "header"))
        if magic != 2049:
            raise DataFormatError(f"{labels_path}: bad magic {magic:#x}, expected 0x801")
        if lcount != count:
            raise DataFormatError(
                f"{labels_path}: label count {lcount} != image count {count}")
        labels = np.frombuffer(_read_exact(fh, lcount, labels_path, "labels"), dtype=np.uint8)

    labels_arr = labels.astype(np.int64)
    return Dataset(features=feats, labels=labels_arr,
                   num_classes=int(labels_arr.max()) + 1, name=prefix)


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to ``total`` proportional to ``weights``.

    Floors the quotas and hands the remainder out by largest fractional
    part, ties going to the lower index, so the rounding is deterministic.
    """
    s = float(weights.sum())
    if s <= 0.0 or not np.isfinite(s):
        quotas = np.full(len(weights), total / len(weights))
    else:
        quotas = weights / s * total
    counts = np.floor(quotas).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        frac = quotas - np.floor(quotas)
        for idx in np.argsort(-frac, kind="stable")[:short]:
            counts[idx] += 1
    return counts


def dirichlet_partition(ds: Dataset, n: int, conc: float,
                        rng: np.random.Generator) -> list[Shard]:
    """Split a dataset across ``n`` workers with Dirichlet(conc) label skew.

    For each class (ascending), per-worker proportions are drawn from a
    symmetric Dirichlet via gamma draws (one vector per class, workers in
    index order), and that class's samples are dealt out by
    largest-remainder rounding. Smaller ``conc`` means heavier skew. Any
    worker left empty is repaired with one sample taken from the currently
    largest shard, so every local objective stays defined.
    """
    if n < 1:
        raise ValueError(f"worker count must be >= 1, got {n}")
    if conc <= 0:
        raise ValueError(f"concentration must be positive, got {conc}")
    if n > ds.n_samples:
        raise ValueError(f"cannot split {ds.n_samples} samples across {n} workers")
    if n == 1:
        return [Shard(owner=0, indices=np.arange(ds.n_samples, dtype=np.int64))]

    per_worker: list[list[np.ndarray]] = [[] for _ in range(n)]
    for c in range(ds.num_classes):
        class_idx = np.flatnonzero(ds.labels == c).astype(np.int64)
        if class_idx.size == 0:
            continue
        shuffled = class_idx[rng.permutation(class_idx.size)]
        props = rng.gamma(conc, 1.0, size=n)
        counts = _largest_remainder(props, class_idx.size)
        offset = 0
        for i in range(n):
            per_worker[i].append(shuffled[offset:offset + counts[i]])
            offset += counts[i]

    piles = [list(np.concatenate(parts)) if parts else [] for parts in per_worker]
    # Empty-shard repair: move one sample from the largest pile, in worker order.
    for i in range(n):
        if not piles[i]:
            donor = max(range(n), key=lambda k: (len(piles[k]), -k))
            piles[i].append(piles[donor].pop())
    shards = [Shard(owner=i, indices=np.array(sorted(p), dtype=np.int64))
              for i, p in enumerate(piles)]
    assert sum(len(s) for s in shards) == ds.n_samples
    return shards


def sample_minibatch(shard: Shard, batch: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``batch`` indices uniformly with replacement from the shard."""
    if batch < 1:
        raise ValueError(f"batch size must be >= 1, got {batch}")
    if len(shard) == 0:
        raise StateError(f"worker {shard.owner} has an empty shard")
    picks = rng.integers(0, len(shard), size=batch)
    return shard.indices[picks]
