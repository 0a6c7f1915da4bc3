"""Datasets: LIBSVM ingestion, synthetic generators, row normalization, sharding."""
from __future__ import annotations

import bz2
import csv
import gzip
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, TextIO

import numpy as np
from scipy import sparse


class ParseError(ValueError):
    """Malformed LIBSVM input; ``lineno`` is 1-based (0 when not line specific)."""

    def __init__(self, message: str, lineno: int = 0):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno else message)


def euclidean_norm(values: np.ndarray) -> float:
    """Euclidean norm that neither underflows nor overflows for extreme magnitudes."""
    if values.size == 0:
        return 0.0
    scale = float(np.max(np.abs(values)))
    if scale == 0.0 or not math.isfinite(scale):
        return scale
    r = values / scale
    return scale * math.sqrt(float(np.dot(r, r)))


@dataclass(frozen=True, eq=False)
class SparseVec:
    """Canonical sparse vector: strictly increasing indices, no stored zeros."""

    dim: int
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if idx.ndim != 1 or idx.shape != val.shape:
            raise ValueError("indices and values must be 1-D of equal length")
        if idx.size:
            if idx[0] < 0 or idx[-1] >= self.dim:
                raise ValueError("index out of range")
            if np.any(np.diff(idx) <= 0):
                raise ValueError("indices must be strictly increasing")
            if np.any(val == 0):
                raise ValueError("stored zero value")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @classmethod
    def _trusted(cls, dim: int, indices: np.ndarray, values: np.ndarray) -> "SparseVec":
        # skip validation for arrays already known to be canonical
        obj = object.__new__(cls)
        object.__setattr__(obj, "dim", dim)
        object.__setattr__(obj, "indices", indices)
        object.__setattr__(obj, "values", values)
        return obj

    @classmethod
    def from_dense(cls, x: np.ndarray) -> "SparseVec":
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1 or x.size < 1:
            raise ValueError("expected a nonempty 1-D array")
        idx = np.flatnonzero(x).astype(np.int64)
        return cls._trusted(x.size, idx, x[idx])

    @classmethod
    def zeros(cls, dim: int) -> "SparseVec":
        return cls(dim, np.empty(0, np.int64), np.empty(0))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def support(self) -> frozenset[int]:
        return frozenset(self.indices.tolist())

    def norm(self) -> float:
        return euclidean_norm(self.values)

    def __eq__(self, other):
        if not isinstance(other, SparseVec):
            return NotImplemented
        return (
            self.dim == other.dim
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        pairs = ", ".join(f"{i}:{v!r}" for i, v in zip(self.indices.tolist(), self.values.tolist()))
        return f"SparseVec(dim={self.dim}, {{{pairs}}})"


def _csr(indptr, indices, data, shape) -> sparse.csr_matrix:
    mat = sparse.csr_matrix(
        (np.asarray(data, np.float64), np.asarray(indices, np.int64), np.asarray(indptr, np.int64)),
        shape=shape,
    )
    # keep int64 index arrays; scipy may downcast on construction
    mat.indices = np.asarray(mat.indices, np.int64)
    mat.indptr = np.asarray(mat.indptr, np.int64)
    return mat


@dataclass(frozen=True, eq=False)
class Dataset:
    """Samples ``(a_i, b_i)`` stored row-wise as a CSR matrix."""

    features: sparse.csr_matrix
    labels: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        if self.features.shape[0] < 1:
            raise ValueError("dataset needs at least one sample")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("one label per row required")

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    def row(self, i: int) -> SparseVec:
        lo, hi = self.features.indptr[i], self.features.indptr[i + 1]
        return SparseVec(self.dim, self.features.indices[lo:hi], self.features.data[lo:hi])

    @property
    def samples(self) -> list[tuple[SparseVec, float]]:
        return [(self.row(i), float(self.labels[i])) for i in range(self.n)]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        a, b = self.features, other.features
        return (
            a.shape == b.shape
            and np.array_equal(a.indptr, b.indptr)
            and np.array_equal(a.indices, b.indices)
            and np.array_equal(a.data, b.data)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True, eq=False)
class WorkerShard:
    """Contiguous block of rows held by one worker."""

    worker_id: int
    features: sparse.csr_matrix
    labels: np.ndarray
    support: np.ndarray = field(init=False)

    def __post_init__(self):
        sup = np.unique(self.features.indices).astype(np.int64)
        object.__setattr__(self, "support", sup)

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def n_rows(self) -> int:
        return int(self.features.shape[0])

    @property
    def rows(self) -> list[tuple[SparseVec, float]]:
        out = []
        for i in range(self.n_rows):
            lo, hi = self.features.indptr[i], self.features.indptr[i + 1]
            out.append(
                (SparseVec(self.dim, self.features.indices[lo:hi], self.features.data[lo:hi]),
                 float(self.labels[i]))
            )
        return out


# -- LIBSVM ---------------------------------------------------------------


def _lines(source) -> Iterator[str]:
    if isinstance(source, str):
        yield from io.StringIO(source)
    else:
        yield from source


def parse_libsvm(source: str | TextIO | Iterable[str], dim: int | None = None,
                 name: str = "libsvm") -> Dataset:
    """Parse LIBSVM text (``<label> <idx>:<val> ...``, 1-based indices).

    ``#`` starts a comment. Explicit zero values are dropped so rows stay
    canonical. ``dim`` overrides the inferred dimension (max index seen) and
    must not be smaller than it.
    """
    indptr = [0]
    indices: list[int] = []
    values: list[float] = []
    labels: list[float] = []
    max_index = 0
    for lineno, raw in enumerate(_lines(source), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label = float(tokens[0])
        except ValueError:
            raise ParseError(f"bad label {tokens[0]!r}", lineno) from None
        prev = 0
        for tok in tokens[1:]:
            head, sep, tail = tok.partition(":")
            if not sep:
                raise ParseError(f"expected <index>:<value>, got {tok!r}", lineno)
            try:
                idx = int(head)
                val = float(tail)
            except ValueError:
                raise ParseError(f"bad feature {tok!r}", lineno) from None
            if idx < 1:
                raise ParseError(f"index {idx} is not 1-based", lineno)
            if idx <= prev:
                raise ParseError(f"indices not increasing at {tok!r}", lineno)
            if not math.isfinite(val):
                raise ParseError(f"non-finite value in {tok!r}", lineno)
            prev = idx
            if val != 0.0:
                indices.append(idx - 1)
                values.append(val)
        max_index = max(max_index, prev)
        labels.append(label)
        indptr.append(len(indices))
    if not labels:
        raise ParseError("no samples")
    if dim is None:
        dim = max(max_index, 1)
    elif dim < max_index:
        raise ParseError(f"dim={dim} smaller than max index {max_index}")
    feats = _csr(indptr, indices, values, (len(labels), dim))
    return Dataset(feats, np.asarray(labels, dtype=np.float64), name)


def _open_text(path: Path):
    if path.suffix == ".bz2":
        return bz2.open(path, "rt", encoding="utf-8")
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def load_libsvm(path: str | Path, dim: int | None = None) -> Dataset:
    path = Path(path)
    with _open_text(path) as fh:
        return parse_libsvm(fh, dim=dim, name=path.name.split(".")[0])


def serialize_libsvm(ds: Dataset) -> str:
    out = io.StringIO()
    f = ds.features
    for i in range(ds.n):
        lo, hi = f.indptr[i], f.indptr[i + 1]
        feats = " ".join(f"{j + 1}:{v!r}" for j, v in zip(f.indices[lo:hi].tolist(), f.data[lo:hi].tolist()))
        out.write(f"{float(ds.labels[i])!r} {feats}".rstrip() + "\n")
    return out.getvalue()


# -- canonical CSV dump (round-trip tests) ------------------------------------


def dump_csv(ds: Dataset, directory: str | Path) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    feat_path = directory / "features.csv"
    label_path = directory / "labels.csv"
    f = ds.features
    with open(feat_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "index", "value"])
        for i in range(ds.n):
            for k in range(f.indptr[i], f.indptr[i + 1]):
                w.writerow([i, int(f.indices[k]), repr(float(f.data[k]))])
    with open(label_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "label", "dim"])
        for i in range(ds.n):
            w.writerow([i, repr(float(ds.labels[i])), ds.dim])
    return feat_path, label_path


def load_csv(directory: str | Path, name: str = "dataset") -> Dataset:
    directory = Path(directory)
    with open(directory / "labels.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    labels = np.array([float(r["label"]) for r in rows])
    dim = int(rows[0]["dim"]) if rows else 1
    counts = np.zeros(len(rows), dtype=np.int64)
    indices, values = [], []
    with open(directory / "features.csv", newline="") as fh:
        for r in csv.DictReader(fh):
            counts[int(r["row"])] += 1
            indices.append(int(r["index"]))
            values.append(float(r["value"]))
    indptr = np.concatenate([[0], np.cumsum(counts)])
    return Dataset(_csr(indptr, indices, values, (len(rows), dim)), labels, name)


# -- synthetic data ------------------------------------------------------------


def _sign_labels(rng: np.random.Generator, n: int) -> np.ndarray:
    labels = np.sign(rng.standard_normal(n))
    labels[labels == 0] = 1.0
    return labels


def gen_dense(n: int, d: int, seed: int) -> Dataset:
    """Dense features uniform on [0, 1), labels = sign of a standard normal."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    rng = np.random.default_rng(seed)
    feats = rng.random((n, d))
    labels = _sign_labels(rng, n)
    return Dataset(_from_dense(feats), labels, "gendense")


def gen_sparse(n: int, d: int, nnz_per_row: int, seed: int) -> Dataset:
    """Rows with ``nnz_per_row`` uniformly placed entries, values uniform on (0, 1]."""
    if not 1 <= nnz_per_row <= d:
        raise ValueError("need 1 <= nnz_per_row <= d")
    rng = np.random.default_rng(seed)
    idx = np.empty((n, nnz_per_row), dtype=np.int64)
    for i in range(n):
        idx[i] = np.sort(rng.choice(d, size=nnz_per_row, replace=False))
    vals = 1.0 - rng.random((n, nnz_per_row))
    labels = _sign_labels(rng, n)
    indptr = np.arange(0, n * nnz_per_row + 1, nnz_per_row)
    return Dataset(_csr(indptr, idx.ravel(), vals.ravel(), (n, d)), labels, "gensparse")


def gen_regression(n: int, d: int, seed: int, *, noise: float = 0.0,
                   col_decay: float = 1.0) -> Dataset:
    """Gaussian regression data with unit-norm rows.

    Column ``j`` is scaled by ``col_decay ** (j / (d - 1))`` before the rows are
    normalized, which spreads the spectrum of ``A^T A``. Labels are
    ``A x_true + noise * N(0, 1)``; ``noise=0`` gives an interpolation instance
    (every residual ``A_i x_true - b_i`` is zero).
    """
    rng = np.random.default_rng(seed)
    scales = col_decay ** (np.arange(d) / max(d - 1, 1))
    feats = rng.standard_normal((n, d)) * scales
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    x_true = rng.standard_normal(d)
    labels = feats @ x_true
    if noise:
        labels = labels + noise * rng.standard_normal(n)
    return Dataset(_from_dense(feats), labels, "regression")


def _from_dense(feats: np.ndarray) -> sparse.csr_matrix:
    mat = sparse.csr_matrix(feats)
    mat.eliminate_zeros()
    return _csr(mat.indptr, mat.indices, mat.data, feats.shape)


# -- transforms -------------------------------------------------------------------


def normalize_rows(ds: Dataset) -> Dataset:
    """Scale each nonzero row to unit Euclidean norm; zero rows are left as is."""
    f = ds.features
    counts = np.diff(f.indptr)
    row_of = np.repeat(np.arange(ds.n), counts)
    peak = np.zeros(ds.n)
    np.maximum.at(peak, row_of, np.abs(f.data))
    peak = np.where(peak > 0, peak, 1.0)
    # divide by the row peak first so tiny or huge rows do not under/overflow
    data = f.data / peak[row_of]
    norms = np.sqrt(np.bincount(row_of, weights=data ** 2, minlength=ds.n))
    data = data / np.where(norms > 0, norms, 1.0)[row_of]
    return Dataset(_csr(f.indptr.copy(), f.indices.copy(), data, f.shape), ds.labels.copy(), ds.name)


def shard(ds: Dataset, m: int) -> list[WorkerShard]:
    """Split into ``m`` contiguous blocks; the first ``n mod m`` get one extra row."""
    if not 1 <= m <= ds.n:
        raise ValueError(f"need 1 <= m <= n (m={m}, n={ds.n})")
    base, extra = divmod(ds.n, m)
    shards = []
    start = 0
    for w in range(m):
        stop = start + base + (1 if w < extra else 0)
        block = ds.features[start:stop]
        feats = _csr(block.indptr, block.indices, block.data, block.shape)
        shards.append(WorkerShard(w, feats, ds.labels[start:stop].copy()))
        start = stop
    return shards
