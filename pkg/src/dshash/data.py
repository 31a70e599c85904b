"""Paired multimodal datasets: file I/O, splitting and a synthetic generator.

On disk, samples are rows (CSV or the DSM1 container). In memory every
modality is a ``(d, n)`` matrix and labels are a ``(c, n)`` 0/1 matrix.

DSM1 layout (little-endian)::

    b"DSM1" | u64 rows | u64 cols | f64[rows, cols] row-major

A dataset directory holds ``modality0.<ext>``, ``modality1.<ext>``, ... and
``labels.csv``.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError, InvalidDataError, ModelFormatError

DSM_MAGIC = b"DSM1"


@dataclass
class PairedDataset:
    modalities: list
    labels: np.ndarray
    names: Optional[list] = None

    def __post_init__(self):
        self.modalities = [np.asarray(X, dtype=np.float64) for X in self.modalities]
        self.labels = np.asarray(self.labels, dtype=np.float64)
        n = self.labels.shape[1]
        for m, X in enumerate(self.modalities):
            if X.ndim != 2 or X.shape[1] != n:
                raise InvalidDataError(
                    f"modality {m} has shape {X.shape}; expected (d, {n}) to match labels"
                )
        if self.names is not None and len(self.names) != n:
            raise InvalidDataError("names must have one entry per sample")

    @property
    def n(self) -> int:
        return self.labels.shape[1]

    @property
    def n_classes(self) -> int:
        return self.labels.shape[0]

    def subset(self, idx) -> "PairedDataset":
        idx = np.asarray(idx)
        names = None if self.names is None else [self.names[i] for i in idx]
        return PairedDataset([X[:, idx] for X in self.modalities], self.labels[:, idx], names)


@dataclass(frozen=True)
class SplitSpec:
    train_count: int
    seed: int = 0


# -- matrix files -----------------------------------------------------------


def read_dsm(path) -> np.ndarray:
    """Read a DSM1 container as a ``(rows, cols)`` array (rows are samples)."""
    data = Path(path).read_bytes()
    if data[:4] != DSM_MAGIC:
        raise ModelFormatError(f"{path}: bad magic, not a DSM1 file")
    if len(data) < 20:
        raise ModelFormatError(f"{path}: truncated header")
    rows, cols = struct.unpack("<2Q", data[4:20])
    expected = 20 + 8 * rows * cols
    if len(data) != expected:
        raise ModelFormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f8", offset=20).astype(np.float64).reshape(rows, cols)


def write_dsm(path, A) -> None:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise InvalidArgumentError("DSM1 stores 2-D matrices only")
    with open(path, "wb") as fh:
        fh.write(DSM_MAGIC)
        fh.write(struct.pack("<2Q", *A.shape))
        fh.write(np.ascontiguousarray(A, dtype="<f8").tobytes())


def read_csv_matrix(path) -> np.ndarray:
    """Numeric CSV with an optional header row; samples as rows."""
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, fields in enumerate(csv.reader(fh), start=1):
            if not fields or all(not f.strip() for f in fields):
                continue
            try:
                values = [float(f) for f in fields]
            except ValueError:
                if not rows and lineno == 1:
                    continue  # header
                raise InvalidDataError(f"{path}:{lineno}: non-numeric field in {fields!r}") from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise InvalidDataError(
                    f"{path}:{lineno}: expected {width} fields, found {len(values)}"
                )
            rows.append(values)
    if not rows:
        raise InvalidDataError(f"{path}: no data rows")
    A = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(A)):
        bad = int(np.argwhere(~np.isfinite(A))[0][0])
        raise InvalidDataError(f"{path}: non-finite value in data row {bad + 1}")
    return A


def write_csv_matrix(path, A) -> None:
    A = np.asarray(A, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in A:
            writer.writerow([repr(float(x)) for x in row])


def _format_of(path, fmt: Optional[str]) -> str:
    if fmt in ("csv", "dsm"):
        return fmt
    if fmt not in (None, "auto"):
        raise InvalidArgumentError(f"unknown data format {fmt!r}")
    return "dsm" if Path(path).suffix.lower() in (".dsm", ".dsm1", ".bin") else "csv"


def read_matrix(path, fmt: Optional[str] = None) -> np.ndarray:
    return read_dsm(path) if _format_of(path, fmt) == "dsm" else read_csv_matrix(path)


def labels_from_table(table: np.ndarray, source="labels") -> np.ndarray:
    """Turn a samples-as-rows label table into a ``(c, n)`` one-hot/multi-hot matrix.

    A single column holds 0-based category indices; several columns are 0/1 flags.
    """
    if table.shape[1] == 1:
        idx = table[:, 0]
        if np.any(idx < 0) or np.any(idx != np.round(idx)):
            bad = int(np.flatnonzero((idx < 0) | (idx != np.round(idx)))[0])
            raise InvalidDataError(f"{source}: row {bad + 1} is not a category index")
        idx = idx.astype(np.int64)
        L = np.zeros((int(idx.max()) + 1, idx.size))
        L[idx, np.arange(idx.size)] = 1.0
        return L
    bad = np.argwhere((table != 0) & (table != 1))
    if bad.size:
        raise InvalidDataError(f"{source}: non-binary label entry in row {bad[0][0] + 1}")
    empty = np.flatnonzero(table.sum(axis=1) == 0)
    if empty.size:
        raise InvalidDataError(f"{source}: row {empty[0] + 1} has no active label")
    return table.T.copy()


def load_dataset(feature_paths: Sequence, label_path, fmt: Optional[str] = None) -> PairedDataset:
    """Load one feature file per modality plus a label CSV."""
    if not feature_paths:
        raise InvalidArgumentError("at least one feature file is required")
    tables = [read_matrix(p, fmt) for p in feature_paths]
    labels = labels_from_table(read_csv_matrix(label_path), str(label_path))
    n = labels.shape[1]
    for path, T in zip(feature_paths, tables):
        if T.shape[0] != n:
            raise InvalidDataError(
                f"{path} has {T.shape[0]} samples but {label_path} has {n}"
            )
    first = tables[0].shape[0]
    for path, T in zip(feature_paths[1:], tables[1:]):
        if T.shape[0] != first:
            raise InvalidDataError(
                f"{feature_paths[0]} has {first} samples but {path} has {T.shape[0]}"
            )
    return PairedDataset([T.T for T in tables], labels)


def save_dataset(ds: PairedDataset, directory, fmt: str = "csv") -> list:
    """Write ``ds`` in the directory convention; returns the feature paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ext = "dsm" if fmt == "dsm" else "csv"
    paths = []
    for m, X in enumerate(ds.modalities):
        path = directory / f"modality{m}.{ext}"
        (write_dsm if ext == "dsm" else write_csv_matrix)(path, X.T)
        paths.append(path)
    write_csv_matrix(directory / "labels.csv", ds.labels.T)
    return paths


def load_dir(directory) -> PairedDataset:
    directory = Path(directory)
    paths = []
    m = 0
    while True:
        found = [p for p in (directory / f"modality{m}.dsm", directory / f"modality{m}.csv") if p.exists()]
        if not found:
            break
        paths.append(found[0])
        m += 1
    if not paths:
        raise InvalidArgumentError(f"{directory}: no modality0.csv or modality0.dsm found")
    return load_dataset(paths, directory / "labels.csv")


# -- splitting and synthesis ------------------------------------------------


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    if not 1 <= spec.train_count < n:
        raise InvalidArgumentError(f"train_count={spec.train_count} must lie in [1, {n - 1}]")
    perm = np.random.default_rng(spec.seed).permutation(n)
    return np.sort(perm[:spec.train_count]), np.sort(perm[spec.train_count:])


def split(ds: PairedDataset, spec: SplitSpec) -> tuple[PairedDataset, PairedDataset]:
    train_idx, query_idx = split_indices(ds.n, spec)
    return ds.subset(train_idx), ds.subset(query_idx)


def synth_multimodal(classes: int, per_class: int, dims: Sequence[int], noise: float = 0.2,
                     cross_noise: float = 0.0, seed: int = 0) -> PairedDataset:
    """Gaussian-cluster data: one standard-normal center per class and modality.

    Each sample is its class center plus ``noise * N(0, I)`` in every modality.
    With ``cross_noise > 0`` that fraction of samples gets a random wrong label.
    """
    if classes < 1 or per_class < 1 or not dims or any(d < 1 for d in dims):
        raise InvalidArgumentError("classes, per_class and every dim must be positive")
    if noise < 0 or not 0 <= cross_noise <= 1:
        raise InvalidArgumentError("noise must be >= 0 and cross_noise in [0, 1]")
    rng = np.random.default_rng(seed)
    n = classes * per_class
    y = rng.permutation(np.repeat(np.arange(classes), per_class))
    modalities = []
    for d in dims:
        centers = rng.standard_normal((d, classes))
        modalities.append(centers[:, y] + noise * rng.standard_normal((d, n)))
    labels_y = y.copy()
    if cross_noise > 0 and classes > 1:
        flip = np.flatnonzero(rng.random(n) < cross_noise)
        shift = rng.integers(1, classes, size=flip.size)
        labels_y[flip] = (labels_y[flip] + shift) % classes
    L = np.zeros((classes, n))
    L[labels_y, np.arange(n)] = 1.0
    return PairedDataset(modalities, L)
