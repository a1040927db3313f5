"""Dataset ingestion, synthetic generation, splitting and normalization.

The on-disk format is plain CSV: UTF-8, comma separated, mandatory header,
float64 feature columns and a final integer column named ``label``. Values
are written with shortest round-trip formatting so a save/load cycle
reproduces the floats exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Malformed or unusable dataset input."""


@dataclass
class Dataset:
    """Feature matrix, integer labels and a display name."""

    features: np.ndarray  # (n, d) float64
    labels: np.ndarray    # (n,) int64
    name: str = "dataset"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DataError("features must be a 2-D array")
        if self.labels.shape != (self.features.shape[0],):
            raise DataError("labels length must equal the number of feature rows")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain non-finite values")
        if self.labels.size and self.labels.min() < 0:
            raise DataError("labels must be non-negative class indices")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def subset(self, indices: np.ndarray, name: str | None = None) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices],
                       name=name or self.name)


@dataclass(frozen=True)
class SplitSpec:
    """Train/val/test fractions; defaults to 0.6 / 0.2 / 0.2."""

    train: float = 0.6
    val: float = 0.2
    test: float = 0.2

    def __post_init__(self):
        if min(self.train, self.val, self.test) <= 0:
            raise ValueError("split fractions must be positive")
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")


@dataclass(frozen=True)
class SyntheticSpec:
    """Two-Gaussian blob generator parameters."""

    n_samples: int = 10_000
    n_features: int = 20
    class_separation: float = 6.0
    noise_std: float = 1.0

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if self.n_features < 1:
            raise ValueError("n_features must be >= 1")
        if not (self.noise_std > 0):
            raise ValueError("noise_std must be positive")


def load_csv(path: str | Path) -> Dataset:
    """Read a dataset; the final header column must be the integer label."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2:
            raise DataError(f"{path}: need at least one feature column and a label column")
        n_cols = len(header)
        feats: list[list[float]] = []
        labels: list[int] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_cols:
                raise DataError(f"{path}:{lineno}: expected {n_cols} columns, got {len(row)}")
            try:
                values = [float(v) for v in row[:-1]]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad feature value ({exc})") from None
            if not all(math.isfinite(v) for v in values):
                raise DataError(f"{path}:{lineno}: non-finite feature value")
            try:
                labels.append(int(row[-1]))
            except ValueError:
                raise DataError(f"{path}:{lineno}: label {row[-1]!r} is not an integer") from None
            feats.append(values)
    if not feats:
        raise DataError(f"{path}: no data rows")
    return Dataset(np.array(feats, dtype=np.float64), np.array(labels, dtype=np.int64),
                   name=path.stem)


def save_csv(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset with exact float64 round-trip formatting."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(dataset.n_features)] + ["label"])
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def split(dataset: Dataset, spec: SplitSpec = SplitSpec(), seed: int = 0
          ) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded shuffle then contiguous cut into train / val / test."""
    n = len(dataset)
    if n < 5:
        raise DataError(f"dataset too small to split (n={n})")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(spec.train * n)
    n_val = int(spec.val * n)
    idx_train = perm[:n_train]
    idx_val = perm[n_train : n_train + n_val]
    idx_test = perm[n_train + n_val :]
    return (dataset.subset(idx_train, f"{dataset.name}/train"),
            dataset.subset(idx_val, f"{dataset.name}/val"),
            dataset.subset(idx_test, f"{dataset.name}/test"))


def synth_blobs(spec: SyntheticSpec, seed: int = 0) -> Dataset:
    """Two isotropic Gaussian classes separated along the first feature axis.

    Class means sit at -sep/2 and +sep/2 on axis 0, so the Bayes error is
    Phi(-sep / (2 * noise_std)). Labels are balanced to within one sample.
    """
    rng = np.random.default_rng(seed)
    n = spec.n_samples
    n0 = n // 2
    labels = np.concatenate([np.zeros(n0, dtype=np.int64),
                             np.ones(n - n0, dtype=np.int64)])
    features = rng.normal(0.0, spec.noise_std, size=(n, spec.n_features))
    features[:, 0] += np.where(labels == 0, -0.5, 0.5) * spec.class_separation
    perm = rng.permutation(n)
    return Dataset(features[perm], labels[perm], name="synth-blobs")


@dataclass(frozen=True)
class Normalizer:
    """Per-feature z-score parameters fitted on the training split."""

    mean: np.ndarray
    scale: np.ndarray  # 1.0 where the training column was constant


def normalize_fit(train: Dataset) -> Normalizer:
    if len(train) == 0:
        raise DataError("cannot fit a normalizer on an empty dataset")
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0)
    scale = np.where(std > 0, std, 1.0)
    mean = np.where(std > 0, mean, 0.0)  # constant columns pass through
    return Normalizer(mean=mean, scale=scale)


def normalize_apply(norm: Normalizer, dataset: Dataset) -> Dataset:
    feats = (dataset.features - norm.mean) / norm.scale
    return Dataset(feats, dataset.labels.copy(), name=dataset.name)
