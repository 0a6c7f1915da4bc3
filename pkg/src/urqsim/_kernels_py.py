"""Numpy implementation of the hot kernels.

Every function here has a twin in ``_kernels.pyx`` with the same signature and
the same floating-point operation order, so both backends produce bit-identical
results for identical inputs.

Quantizer kernels take the nonzero values of a vector (``vals``), a 2-D array of
uniforms with one row per independent draw, and write the quantized values into
``out`` (same shape as the uniforms). Entries dropped by the quantizer are set
to 0.0.
"""
from __future__ import annotations

import numpy as np

NAME = "python"

# pairwise intersection below this many sets, blocked sparse products above
_PAIRWISE_MAX = 64
_BLOCK_ENTRIES = 20_000_000


def sparsify(vals, probs, u, out):
    keep = u < probs
    np.copyto(out, np.where(keep, vals / probs, 0.0))
    return out


def ternary(vals, norm, u, out):
    a = np.abs(vals) / norm
    q = np.where(vals > 0, norm, -norm)
    np.copyto(out, np.where(u < a, q, 0.0))
    return out


def lowprec(vals, norm, s, u, out):
    a = np.abs(vals) / norm
    scaled = a * s
    low = np.floor(scaled)
    low = np.minimum(low, s - 1)
    p = scaled - low
    level = np.where(u < p, low + 1.0, low)
    mag = norm * (level / s)
    np.copyto(out, np.where(level > 0, np.where(vals > 0, mag, -mag), 0.0))
    return out


def conflict_degrees(indptr, indices, dim):
    """Degree of every set in the conflict graph.

    Set ``i`` is ``indices[indptr[i]:indptr[i+1]]`` (sorted, unique, < dim).
    The degree is the number of other sets sharing at least one element.
    """
    indptr = np.asarray(indptr, dtype=np.int64)
    indices = np.asarray(indices, dtype=np.int64)
    n = indptr.size - 1
    deg = np.zeros(n, dtype=np.int64)
    if n <= 1:
        return deg
    if n <= _PAIRWISE_MAX:
        sets = [indices[indptr[i]:indptr[i + 1]] for i in range(n)]
        for i in range(n):
            for j in range(i + 1, n):
                if sets[i].size and sets[j].size and np.intersect1d(
                    sets[i], sets[j], assume_unique=True
                ).size:
                    deg[i] += 1
                    deg[j] += 1
        return deg

    from scipy import sparse

    ones = np.ones(indices.size, dtype=np.int32)
    inc = sparse.csr_matrix((ones, indices, indptr), shape=(n, dim))
    inc_t = inc.T.tocsc()
    nonempty = np.diff(indptr) > 0
    block = max(1, _BLOCK_ENTRIES // n)
    for start in range(0, n, block):
        stop = min(n, start + block)
        prod = inc[start:stop] @ inc_t
        prod.eliminate_zeros()
        deg[start:stop] = np.diff(prod.indptr)
    # self-overlap is counted once for every nonempty set
    deg[nonempty] -= 1
    return deg


def csr_grad(indptr, indices, data, labels, x, rho, reg, out):
    """``out = A^T (A x - b) / rho + reg * x`` for a CSR block ``A``."""
    from scipy import sparse

    n_rows = labels.size
    a = sparse.csr_matrix((data, indices, indptr), shape=(n_rows, x.size))
    r = a @ x - labels
    g = a.T @ r
    np.copyto(out, g / rho + reg * x)
    return out
