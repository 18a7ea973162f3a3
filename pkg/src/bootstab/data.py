"""Datasets: simulation, CSV ingestion, splits, standardisation, bootstraps.

The CSV dialect is UTF-8, comma-separated, header row, "." decimal point,
missing values written as an empty field or "NA". Exported datasets carry a
JSON sidecar (same path, ".json" suffix) recording standardisation parameters
and provenance.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import make_rng

MISSING_TOKENS = ("", "NA")


class DataError(ValueError):
    """Raised for contract violations on dataset construction or ingestion."""


@dataclass(frozen=True)
class Standardisation:
    """Per-column z-scoring transform: (x - mean) / scale.

    ``scale`` is the training-column stddev, replaced by 1.0 where the column
    had zero variance; those columns are flagged in ``zero_variance``.
    """

    mean: np.ndarray
    scale: np.ndarray
    zero_variance: np.ndarray

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.scale

    def to_dict(self) -> dict:
        return {
            "mean": [float(v) for v in self.mean],
            "scale": [float(v) for v in self.scale],
            "zero_variance": [bool(v) for v in self.zero_variance],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Standardisation":
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            scale=np.asarray(d["scale"], dtype=np.float64),
            zero_variance=np.asarray(d["zero_variance"], dtype=bool),
        )


def _frozen_array(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Immutable feature matrix with binary labels.

    features: (N, P) float64, row-major.
    labels: (N,) integers in {0, 1}.
    feature_names: P unique names.
    standardisation: transform already applied to ``features``, if any.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    standardisation: Standardisation | None = None

    def __post_init__(self):
        feats = _frozen_array(np.asarray(self.features, dtype=np.float64))
        labels = _frozen_array(np.asarray(self.labels, dtype=np.int64))
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise DataError(f"features must be a non-empty 2-D matrix, got shape {feats.shape}")
        if labels.shape != (feats.shape[0],):
            raise DataError(f"labels length {labels.shape} does not match N={feats.shape[0]}")
        if not np.isin(labels, (0, 1)).all():
            raise DataError("labels must all be 0 or 1")
        if len(self.feature_names) != feats.shape[1]:
            raise DataError("feature_names count does not match P")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise DataError("feature_names must be unique")
        if not np.isfinite(feats).all():
            raise DataError("features contain non-finite values")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def take(self, indices: np.ndarray) -> "Dataset":
        """Row subset (used by splits and bootstrap resampling)."""
        return Dataset(
            features=self.features[indices],
            labels=self.labels[indices],
            feature_names=self.feature_names,
            standardisation=self.standardisation,
        )


@dataclass(frozen=True)
class SimConfig:
    """Synthetic-data generator settings.

    Columns come out ordered [binary | informative | noise]. Binary features
    are Bernoulli(0.5), informative features standard normal, noise features
    Uniform(-1, 1). Only informative columns enter the outcome logit, with one
    coefficient vector drawn Uniform(beta_low, beta_high) per dataset.
    """

    n: int = 4000
    p_binary: int = 2
    p_informative: int = 10
    p_noise: int = 3
    beta_low: float = 3.0
    beta_high: float = 6.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise DataError(f"n must be >= 2, got {self.n}")
        if min(self.p_binary, self.p_informative, self.p_noise) < 0:
            raise DataError("feature counts must be >= 0")
        if self.p_binary + self.p_informative + self.p_noise < 1:
            raise DataError("at least one feature column is required")
        if self.beta_low > self.beta_high:
            raise DataError(f"beta_low {self.beta_low} > beta_high {self.beta_high}")

    @property
    def p(self) -> int:
        return self.p_binary + self.p_informative + self.p_noise


@dataclass(frozen=True)
class BootstrapIndex:
    """N row indices drawn uniformly with replacement, plus the seed used."""

    indices: np.ndarray
    seed: int

    def __post_init__(self):
        idx = _frozen_array(np.asarray(self.indices, dtype=np.int64))
        object.__setattr__(self, "indices", idx)
        if idx.ndim != 1 or idx.size < 1:
            raise DataError("bootstrap indices must be a non-empty vector")
        if idx.min() < 0:
            raise DataError("bootstrap indices must be non-negative")


def simulate_dataset(cfg: SimConfig) -> Dataset:
    """Generate the synthetic benchmark dataset.

    Labels are Bernoulli(sigmoid(X_informative @ beta)); binary and noise
    columns never enter the logit. Deterministic for a fixed ``cfg.seed``.
    """
    rng = make_rng(cfg.seed)
    # draw order is part of the reproducibility contract: beta, binary,
    # informative, noise, labels
    beta = rng.uniform(cfg.beta_low, cfg.beta_high, size=cfg.p_informative)
    x_bin = rng.binomial(1, 0.5, size=(cfg.n, cfg.p_binary)).astype(np.float64)
    x_imp = rng.standard_normal((cfg.n, cfg.p_informative))
    x_noise = rng.uniform(-1.0, 1.0, size=(cfg.n, cfg.p_noise))
    logit = x_imp @ beta if cfg.p_informative else np.zeros(cfg.n)
    prob = 1.0 / (1.0 + np.exp(-logit))
    labels = (rng.random(cfg.n) < prob).astype(np.int64)

    names = (
        [f"bin_{i + 1}" for i in range(cfg.p_binary)]
        + [f"imp_{i + 1}" for i in range(cfg.p_informative)]
        + [f"noise_{i + 1}" for i in range(cfg.p_noise)]
    )
    return Dataset(
        features=np.hstack([x_bin, x_imp, x_noise]),
        labels=labels,
        feature_names=tuple(names),
    )


def load_csv(
    path,
    label_column: str,
    feature_columns: list[str] | None = None,
) -> tuple[Dataset, int]:
    """Read a dataset from CSV; returns (dataset, number of rows dropped).

    Rows with a missing value in any used column are dropped (complete-case).
    The label column must parse to {0, 1}.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"empty CSV: {path}") from None
        rows = list(reader)

    if label_column not in header:
        raise DataError(f"missing column: {label_column!r} not in header")
    if feature_columns is None:
        feature_columns = [c for c in header if c != label_column]
    for c in feature_columns:
        if c not in header:
            raise DataError(f"missing column: {c!r} not in header")
    if not feature_columns:
        raise DataError("no feature columns")

    col_idx = [header.index(c) for c in feature_columns]
    label_idx = header.index(label_column)

    features, labels = [], []
    n_dropped = 0
    for row_num, row in enumerate(rows, start=2):
        cells = [row[i].strip() if i < len(row) else "" for i in col_idx + [label_idx]]
        if any(c in MISSING_TOKENS for c in cells):
            n_dropped += 1
            continue
        try:
            values = [float(c) for c in cells[:-1]]
        except ValueError as exc:
            raise DataError(f"non-numeric feature value at line {row_num}: {exc}") from None
        if cells[-1] not in ("0", "1"):
            raise DataError(f"non-binary label {cells[-1]!r} at line {row_num}")
        features.append(values)
        labels.append(int(cells[-1]))

    if not features:
        raise DataError(f"all rows dropped while reading {path}")
    ds = Dataset(
        features=np.asarray(features, dtype=np.float64),
        labels=np.asarray(labels, dtype=np.int64),
        feature_names=tuple(feature_columns),
    )
    return ds, n_dropped


def standardise(train_features: np.ndarray) -> Standardisation:
    """Fit per-column z-scoring on training rows only.

    Zero-variance columns keep scale 1.0 and are flagged rather than producing
    NaNs on degenerate real data.
    """
    mean = train_features.mean(axis=0)
    std = train_features.std(axis=0)
    zero_var = std < 1e-12
    scale = np.where(zero_var, 1.0, std)
    return Standardisation(mean=mean, scale=scale, zero_variance=zero_var)


def split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle split into (train, test); disjoint and exhaustive.

    Standardisation is fit on the train side only and applied to both sides.
    A single-class train side is a warning, not an error.
    """
    if not 0.0 < test_fraction < 1.0:
        raise DataError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n_test = math.floor(ds.n * test_fraction)
    n_train = ds.n - n_test
    if n_test < 1 or n_train < 2:
        raise DataError(
            f"degenerate split: N={ds.n}, fraction={test_fraction} "
            f"gives train={n_train}, test={n_test}"
        )
    perm = make_rng(seed).permutation(ds.n)
    train_idx, test_idx = perm[:n_train], perm[n_train:]

    stdz = standardise(ds.features[train_idx])
    if len(np.unique(ds.labels[train_idx])) < 2:
        warnings.warn("train side contains a single class", stacklevel=2)

    def _side(idx):
        return Dataset(
            features=stdz.apply(ds.features[idx]),
            labels=ds.labels[idx],
            feature_names=ds.feature_names,
            standardisation=stdz,
        )

    return _side(train_idx), _side(test_idx)


def draw_bootstrap(ds: Dataset, seed: int) -> BootstrapIndex:
    """N indices drawn uniformly with replacement; deterministic per seed."""
    idx = make_rng(seed).integers(0, ds.n, size=ds.n)
    return BootstrapIndex(indices=idx, seed=int(seed))


def save_dataset(ds: Dataset, path, *, seed: int | None = None, source: str | None = None) -> None:
    """Write the dataset CSV plus its JSON sidecar (standardisation, provenance)."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(ds.feature_names) + ["label"])
        for i in range(ds.n):
            writer.writerow([repr(float(v)) for v in ds.features[i]] + [int(ds.labels[i])])
    sidecar = {
        "schema_version": 1,
        "n": ds.n,
        "p": ds.p,
        "feature_names": list(ds.feature_names),
        "standardisation": ds.standardisation.to_dict() if ds.standardisation else None,
        "provenance": {"seed": seed, "source": source},
    }
    with open(path.with_suffix(path.suffix + ".json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")


def load_dataset(path) -> Dataset:
    """Read back a dataset written by :func:`save_dataset` (sidecar included)."""
    path = Path(path)
    ds, n_dropped = load_csv(path, label_column="label")
    if n_dropped:
        raise DataError(f"exported dataset {path} has missing cells")
    sidecar_path = path.with_suffix(path.suffix + ".json")
    if sidecar_path.exists():
        with open(sidecar_path, encoding="utf-8") as fh:
            sidecar = json.load(fh)
        stdz = sidecar.get("standardisation")
        if stdz is not None:
            ds = Dataset(
                features=ds.features,
                labels=ds.labels,
                feature_names=ds.feature_names,
                standardisation=Standardisation.from_dict(stdz),
            )
    return ds
