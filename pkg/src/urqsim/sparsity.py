"""Conflict-graph sparsity measures.

Two supports conflict when they share a coordinate. For ``m`` supports the
conflict degrees give

    sigma = min(sqrt(m (1 + delta_ave)), 1 + delta_max)

which bounds ``||sum_i v_i||^2 <= sigma * sum_i ||v_i||^2`` for vectors with
those supports, and the aggregate Lipschitz constant ``L sqrt(m (1 + delta))``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from ._backend import kernels
from .data import SparseVec, WorkerShard

DATA = "data"
GRADIENT = "gradient"


@dataclass(frozen=True)
class SparsityReport:
    delta_ave: float
    delta_max: int
    delta: float
    sigma: float
    m: int

    def to_dict(self) -> dict:
        return asdict(self)


def _as_csr(supports: Sequence[Iterable[int]]) -> tuple[np.ndarray, np.ndarray, int]:
    arrays = [np.unique(np.fromiter(s, dtype=np.int64)) if not isinstance(s, np.ndarray)
              else np.unique(s.astype(np.int64)) for s in supports]
    counts = np.array([a.size for a in arrays], dtype=np.int64)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    indices = np.concatenate(arrays).astype(np.int64) if arrays else np.empty(0, np.int64)
    if indices.size and indices.min() < 0:
        raise ValueError("negative index in support")
    dim = int(indices.max()) + 1 if indices.size else 1
    return indptr, indices, dim


def degrees(supports: Sequence[Iterable[int]]) -> np.ndarray:
    """Conflict-graph degree of each support."""
    indptr, indices, dim = _as_csr(supports)
    return np.asarray(kernels.conflict_degrees(indptr, indices, dim), dtype=np.int64)


def report_from_degrees(deg: np.ndarray) -> SparsityReport:
    m = int(deg.size)
    if m < 1:
        raise ValueError("need at least one support")
    delta_ave = float(deg.sum()) / m
    delta_max = int(deg.max())
    sigma = min(math.sqrt(m * (1.0 + delta_ave)), 1.0 + delta_max)
    return SparsityReport(delta_ave, delta_max, min(delta_ave, float(delta_max)), sigma, m)


def conflict_degrees(supports: Sequence[Iterable[int]]) -> SparsityReport:
    return report_from_degrees(degrees(supports))


def sigma_realized(payloads: Sequence[SparseVec]) -> float:
    """Sparsity factor of the realized supports of one round of messages.

    Accepts ``SparseVec`` payloads or objects with a ``payload`` attribute.
    """
    vecs = [getattr(p, "payload", p) for p in payloads]
    dims = {v.dim for v in vecs}
    if len(dims) > 1:
        raise ValueError("payload dimensions differ")
    return conflict_degrees([v.indices for v in vecs]).sigma


def lipschitz_bar(L: float, m: int, delta: float) -> float:
    if L <= 0 or m < 1 or not 0 <= delta <= m - 1:
        raise ValueError("need L > 0, m >= 1 and 0 <= delta <= m - 1")
    return L * math.sqrt(m * (1.0 + delta))


def sampled_smoothness_terms(payloads: Sequence[SparseVec]) -> tuple[float, float]:
    """``(||sum_i v_i||^2, sum_i ||v_i||^2)`` for one round of sparse vectors."""
    vecs = [getattr(p, "payload", p) for p in payloads]
    total = np.zeros(vecs[0].dim)
    sq = 0.0
    for v in vecs:
        total[v.indices] += v.values
        sq += float(np.dot(v.values, v.values))
    return float(np.dot(total, total)), sq


def shard_supports(shards: Sequence[WorkerShard], source: str = DATA,
                   reg_sigma: float = 0.0) -> list[np.ndarray]:
    """Per-worker supports used for sigma.

    ``data`` is the union of row supports. ``gradient`` is the support the
    component gradient can actually have: the data support, or every
    coordinate once an l2 regularizer is present.
    """
    if source == DATA or (source == GRADIENT and reg_sigma == 0):
        return [sh.support for sh in shards]
    if source == GRADIENT:
        return [np.arange(sh.dim, dtype=np.int64) for sh in shards]
    raise ValueError(f"unknown sparsity source {source!r}")


def sample_supports(features) -> list[np.ndarray]:
    """Row supports of a CSR matrix, one per sample."""
    return [features.indices[features.indptr[i]:features.indptr[i + 1]]
            for i in range(features.shape[0])]


def sample_report(features) -> SparsityReport:
    """Sparsity report treating every sample as its own component."""
    deg = kernels.conflict_degrees(np.asarray(features.indptr, np.int64),
                                   np.asarray(features.indices, np.int64),
                                   int(features.shape[1]))
    return report_from_degrees(np.asarray(deg, dtype=np.int64))
