"""Sparse instances and the LIBSVM text loader.

Dense vectors are plain 1-D float64 numpy arrays throughout; the reference
path is 64-bit everywhere so determinism tests can compare trajectories bit
for bit.  Datasets are immutable after construction and safe to share
read-only across worker threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import IO, Iterable

import numpy as np
import scipy.sparse as sp


class LibsvmError(ValueError):
    """Malformed LIBSVM text; ``lineno`` is 1-based."""

    def __init__(self, lineno: int, message: str) -> None:
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass
class SparseVector:
    """Feature vector stored as strictly increasing 0-based indices."""

    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __post_init__(self) -> None:
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.indices.ndim != 1 or self.values.ndim != 1:
            raise ValueError("indices and values must be 1-D")
        if self.indices.shape != self.values.shape:
            raise ValueError("indices and values must have the same length")
        if self.dim < 0:
            raise ValueError("dim must be non-negative")
        if self.indices.size:
            if np.any(np.diff(self.indices) <= 0):
                raise ValueError("indices must be strictly increasing")
            if self.indices[0] < 0 or self.indices[-1] >= self.dim:
                raise ValueError("index out of range for dim")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]], dim: int) -> "SparseVector":
        """Canonicalize unordered (index, value) pairs; duplicates are rejected."""
        items = sorted(pairs)
        idx = np.array([i for i, _ in items], dtype=np.int64)
        if idx.size and np.any(np.diff(idx) == 0):
            raise ValueError("duplicate index")
        vals = np.array([v for _, v in items], dtype=np.float64)
        return cls(idx, vals, dim)

    @property
    def nnz(self) -> int:
        return int(self.indices.size)


@dataclass
class Dataset:
    """Labeled sparse instances with contiguous class ids in [0, num_classes)."""

    instances: list[SparseVector]
    labels: np.ndarray
    dim: int
    num_classes: int

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.instances) == 0:
            raise ValueError("empty dataset")
        if self.labels.shape != (len(self.instances),):
            raise ValueError("instances and labels must have the same length")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label out of range")
        for inst in self.instances:
            if inst.nnz and inst.indices[-1] >= self.dim:
                raise ValueError("instance index exceeds dataset dim")

    @property
    def n(self) -> int:
        return len(self.instances)

    @cached_property
    def feature_matrix(self) -> sp.csr_matrix:
        """CSR view of all instances, built once; rows follow instance order."""
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        for i, inst in enumerate(self.instances):
            indptr[i + 1] = indptr[i] + inst.nnz
        indices = np.concatenate([inst.indices for inst in self.instances]) if indptr[-1] else np.zeros(0, np.int64)
        values = np.concatenate([inst.values for inst in self.instances]) if indptr[-1] else np.zeros(0)
        return sp.csr_matrix((values, indices, indptr), shape=(self.n, self.dim))

    @cached_property
    def dense_matrix(self) -> np.ndarray:
        """Dense row matrix; fine at desk scale, avoids sparse matvec overhead."""
        X = np.zeros((self.n, self.dim))
        for i, inst in enumerate(self.instances):
            if inst.nnz:
                X[i, inst.indices] = inst.values
        return X

    @cached_property
    def row_norms_sq(self) -> np.ndarray:
        return np.array([float(inst.values @ inst.values) for inst in self.instances])

    @cached_property
    def signed_labels(self) -> np.ndarray:
        """Labels mapped {0, 1} -> {-1.0, +1.0}; only meaningful for binary data."""
        return 2.0 * self.labels - 1.0

    @classmethod
    def from_dense(cls, X: np.ndarray, labels: np.ndarray, num_classes: int) -> "Dataset":
        """Build from a dense matrix, dropping stored zeros."""
        X = np.asarray(X, dtype=np.float64)
        instances = []
        for row in X:
            idx = np.flatnonzero(row)
            instances.append(SparseVector(idx, row[idx], X.shape[1]))
        return cls(instances, np.asarray(labels), X.shape[1], num_classes)


def parse_libsvm(source: str | bytes | IO, binary_relabel: bool = False) -> Dataset:
    """Parse LIBSVM text: ``label idx:val ...`` with 1-based increasing indices.

    ``#`` starts a comment.  File labels are remapped to contiguous class ids
    0..K-1 by sorted distinct original value; with ``binary_relabel`` the file
    must use {-1,+1}, mapped to {0,1} with num_classes fixed at 2.
    """
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode("utf-8")

    raw_labels: list[int] = []
    rows: list[tuple[np.ndarray, np.ndarray]] = []
    max_index = 0
    for lineno, line in enumerate(source.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label_f = float(tokens[0])
        except ValueError:
            raise LibsvmError(lineno, f"non-numeric label {tokens[0]!r}") from None
        if label_f != int(label_f):
            raise LibsvmError(lineno, f"non-integer label {tokens[0]!r}")
        indices: list[int] = []
        values: list[float] = []
        prev = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise LibsvmError(lineno, f"malformed feature {tok!r}")
            try:
                idx = int(idx_s)
            except ValueError:
                raise LibsvmError(lineno, f"non-numeric index {idx_s!r}") from None
            if idx < 1:
                raise LibsvmError(lineno, f"index {idx} must be >= 1")
            if idx <= prev:
                raise LibsvmError(lineno, f"non-increasing index {idx}")
            try:
                val = float(val_s)
            except ValueError:
                raise LibsvmError(lineno, f"non-numeric value {val_s!r}") from None
            indices.append(idx - 1)
            values.append(val)
            prev = idx
        max_index = max(max_index, prev)
        raw_labels.append(int(label_f))
        rows.append((np.array(indices, dtype=np.int64), np.array(values)))

    if not rows:
        raise ValueError("empty dataset")

    if binary_relabel:
        distinct = set(raw_labels)
        if not distinct <= {-1, 1}:
            raise ValueError(f"binary_relabel requires labels in {{-1,+1}}, found {sorted(distinct)}")
        mapping = {-1: 0, 1: 1}
        num_classes = 2
    else:
        distinct_sorted = sorted(set(raw_labels))
        mapping = {orig: k for k, orig in enumerate(distinct_sorted)}
        num_classes = len(distinct_sorted)

    dim = max_index
    instances = [SparseVector(idx, vals, dim) for idx, vals in rows]
    labels = np.array([mapping[l] for l in raw_labels], dtype=np.int64)
    return Dataset(instances, labels, dim, num_classes)


def serialize_libsvm(data: Dataset) -> str:
    """Canonical LIBSVM text (1-based indices, 17 significant digits)."""
    lines = []
    for inst, label in zip(data.instances, data.labels):
        feats = " ".join(f"{i + 1}:{v:.17g}" for i, v in zip(inst.indices, inst.values))
        lines.append(f"{label} {feats}".rstrip())
    return "\n".join(lines) + "\n"


def dot(a: SparseVector, b: np.ndarray) -> float:
    """Sparse-dense inner product."""
    if a.dim > b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.dim} > {b.shape[0]}")
    if a.nnz == 0:
        return 0.0
    return float(b[a.indices] @ a.values)


def l2_norm_sq(v: np.ndarray) -> float:
    return float(v @ v)


def max_abs_scale(data: Dataset) -> Dataset:
    """Per-feature max-abs scaling; features that never appear are untouched."""
    scales = np.zeros(data.dim)
    for inst in data.instances:
        if inst.nnz:
            np.maximum.at(scales, inst.indices, np.abs(inst.values))
    scales[scales == 0.0] = 1.0
    scaled = [
        SparseVector(inst.indices.copy(), inst.values / scales[inst.indices], data.dim)
        if inst.nnz
        else SparseVector(inst.indices.copy(), inst.values.copy(), data.dim)
        for inst in data.instances
    ]
    return Dataset(scaled, data.labels.copy(), data.dim, data.num_classes)
