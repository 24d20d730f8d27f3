"""Dataset container and desk-scale data sources.

Three sources feed the benchmark: a Gaussian class mixture for tabular
experiments, a synthetic multi-channel signal generator with per-subject
bias for sensor-style experiments, and a CSV ingestor for external data.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError


@dataclass
class Dataset:
    features: np.ndarray  # (n, d) or (n, channels, length), float32
    labels: np.ndarray  # (n,), int64 codes in [0, num_classes)
    num_classes: int
    group_ids: np.ndarray | None = None  # (n,), int64; used by real-world partitioning
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.features.shape[0]
        if self.labels.shape != (n,):
            raise DataError(f"labels shape {self.labels.shape} does not match {n} samples")
        if n == 0:
            raise DataError("dataset is empty")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise DataError(
                f"labels must lie in [0, {self.num_classes}), "
                f"found range [{self.labels.min()}, {self.labels.max()}]"
            )
        if self.group_ids is not None:
            self.group_ids = np.asarray(self.group_ids, dtype=np.int64)
            if self.group_ids.shape != (n,):
                raise DataError("group_ids shape does not match sample count")

    @property
    def n_samples(self) -> int:
        return int(self.features.shape[0])

    @property
    def sample_shape(self) -> tuple:
        return tuple(self.features.shape[1:])


def _balanced_labels(n: int, num_classes: int) -> np.ndarray:
    """Class counts equal up to +-1; the first n % C classes get the extras."""
    base = n // num_classes
    rem = n % num_classes
    counts = [base + (1 if c < rem else 0) for c in range(num_classes)]
    return np.repeat(np.arange(num_classes, dtype=np.int64), counts)


def gen_gaussian_mixture(
    num_classes: int, n_samples: int, dims: int, separation: float, seed: int
) -> Dataset:
    """Unit-variance Gaussian blobs with minimum pairwise mean distance == separation.

    Means are random directions rescaled so the closest pair sits exactly
    ``separation`` apart; separation 0 collapses every class onto the origin.
    """
    if num_classes < 2:
        raise DataError(f"need at least 2 classes, got {num_classes}")
    if n_samples < num_classes:
        raise DataError(f"need at least {num_classes} samples, got {n_samples}")
    if separation < 0:
        raise DataError(f"separation must be non-negative, got {separation}")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((num_classes, dims))
    dists = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=2)
    min_dist = dists[np.triu_indices(num_classes, k=1)].min()
    if min_dist <= 0:
        raise DataError("degenerate class means drawn; change the seed")
    means *= separation / min_dist
    labels = _balanced_labels(n_samples, num_classes)
    feats = means[labels] + rng.standard_normal((n_samples, dims))
    order = rng.permutation(n_samples)
    return Dataset(
        features=feats[order],
        labels=labels[order],
        num_classes=num_classes,
        meta={"source": "gaussian", "separation": separation, "class_means": means},
    )


def gen_har_like(
    num_classes: int,
    subjects: int,
    n_samples: int,
    channels: int = 9,
    length: int = 128,
    subject_bias: float = 1.0,
    seed: int = 0,
) -> Dataset:
    """Synthetic activity-recognition style signals.

    Each class has a sinusoidal template per channel; each subject adds a
    fixed per-channel offset scaled by ``subject_bias``; unit noise on top.
    ``group_ids`` records the subject of every sample.
    """
    if num_classes < 2 or subjects < 1:
        raise DataError("need >= 2 classes and >= 1 subject")
    if n_samples < max(num_classes, subjects):
        raise DataError("need at least one sample per class and per subject")
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 2.0 * np.pi, length)
    templates = np.empty((num_classes, channels, length))
    for c in range(num_classes):
        freqs = rng.uniform(1.0, 4.0, size=channels)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=channels)
        amps = rng.uniform(1.0, 3.0, size=channels)
        templates[c] = amps[:, None] * np.sin(freqs[:, None] * t[None, :] + phases[:, None])
    offsets = rng.standard_normal((subjects, channels)) * subject_bias
    labels = _balanced_labels(n_samples, num_classes)
    group = np.arange(n_samples, dtype=np.int64) % subjects
    feats = (
        templates[labels]
        + offsets[group][:, :, None]
        + rng.standard_normal((n_samples, channels, length))
    )
    order = rng.permutation(n_samples)
    return Dataset(
        features=feats[order],
        labels=labels[order],
        num_classes=num_classes,
        group_ids=group[order],
        meta={"source": "har", "subjects": subjects},
    )


@dataclass(frozen=True)
class CsvSchema:
    label_col: str
    group_col: str | None = None
    feature_cols: tuple[str, ...] | None = None  # None = every remaining column
    channels: int | None = None  # with length: reshape channel-major sequences
    length: int | None = None
    standardize: bool = True


def ingest_csv(path: str | Path, schema: CsvSchema) -> Dataset:
    """Load a headered CSV into a Dataset.

    Sequence layouts declare (channels, length); feature column j then maps
    to channel j // length, position j % length. Ragged or non-numeric rows
    are rejected with their 1-based row number.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"csv file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        if schema.label_col not in header:
            raise DataError(f"{path}: label column '{schema.label_col}' not in header")
        if schema.group_col is not None and schema.group_col not in header:
            raise DataError(f"{path}: group column '{schema.group_col}' not in header")
        if schema.feature_cols is not None:
            missing = [c for c in schema.feature_cols if c not in header]
            if missing:
                raise DataError(f"{path}: unknown feature columns {missing}")
            feat_names = list(schema.feature_cols)
        else:
            skip = {schema.label_col, schema.group_col}
            feat_names = [h for h in header if h not in skip]
        if not feat_names:
            raise DataError(f"{path}: no feature columns")
        col_idx = {h: i for i, h in enumerate(header)}
        feat_idx = [col_idx[c] for c in feat_names]
        label_idx = col_idx[schema.label_col]
        group_idx = col_idx[schema.group_col] if schema.group_col else None

        rows, labels_raw, groups_raw = [], [], []
        for rownum, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {rownum} has {len(row)} fields, expected {len(header)}"
                )
            try:
                rows.append([float(row[i]) for i in feat_idx])
            except ValueError:
                raise DataError(f"{path}: row {rownum} has a non-numeric feature") from None
            try:
                labels_raw.append(int(float(row[label_idx])))
            except ValueError:
                raise DataError(f"{path}: row {rownum} has a non-integer label") from None
            if group_idx is not None:
                try:
                    groups_raw.append(int(float(row[group_idx])))
                except ValueError:
                    raise DataError(f"{path}: row {rownum} has a non-integer group id") from None

    if not rows:
        raise DataError(f"{path}: no data rows")
    feats = np.asarray(rows, dtype=np.float64)
    if schema.standardize:
        mu = feats.mean(axis=0)
        sd = feats.std(axis=0)
        sd[sd == 0.0] = 1.0
        feats = (feats - mu) / sd
    if (schema.channels is None) != (schema.length is None):
        raise DataError("channels and length must be declared together")
    if schema.channels is not None:
        want = schema.channels * schema.length
        if feats.shape[1] != want:
            raise DataError(
                f"{path}: {feats.shape[1]} feature columns cannot form "
                f"({schema.channels}, {schema.length}) sequences"
            )
        feats = feats.reshape(-1, schema.channels, schema.length)

    distinct = sorted(set(labels_raw))
    code = {v: i for i, v in enumerate(distinct)}
    labels = np.asarray([code[v] for v in labels_raw], dtype=np.int64)
    groups = np.asarray(groups_raw, dtype=np.int64) if groups_raw else None
    return Dataset(
        features=feats,
        labels=labels,
        num_classes=len(distinct),
        group_ids=groups,
        meta={"source": str(path), "label_values": distinct},
    )
