# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; see ``_kernels_py`` for the contract of each function.

Floating-point expressions mirror the numpy fallback term by term so the two
backends agree bit for bit. Do not build with -ffast-math.
"""
import numpy as np

from libc.math cimport floor, fabs
from libc.stdint cimport uint64_t, int64_t
from libc.stdlib cimport calloc, free, malloc

cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil

NAME = "compiled"

# cap on the bitset table, in 64-bit words (~64 MiB)
cdef Py_ssize_t _MAX_TABLE_WORDS = 8 * 1024 * 1024
# above this many sets the sparse-product route is faster
_BITSET_MAX_SETS = 8192


cdef void _select(const double[:, ::1] u, const double* thresh, const double* pair,
                  double[:, ::1] out) noexcept nogil:
    """``out[b, i] = pair[2i + 1] if u[b, i] < thresh[i] else pair[2i]``, without branches."""
    cdef Py_ssize_t b, i, nb = u.shape[0], n = u.shape[1]
    for b in range(nb):
        for i in range(n):
            out[b, i] = pair[2 * i + <Py_ssize_t>(u[b, i] < thresh[i])]


cdef double* _alloc(Py_ssize_t n) except NULL:
    cdef double* buf = <double*> malloc(3 * max(n, 1) * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    return buf


def sparsify(const double[::1] vals, const double[::1] probs,
             const double[:, ::1] u, double[:, ::1] out):
    cdef Py_ssize_t i, n = vals.shape[0]
    cdef double* buf = _alloc(n)
    cdef double* th = buf
    cdef double* pair = buf + n
    try:
        with nogil:
            for i in range(n):
                th[i] = probs[i]
                pair[2 * i] = 0.0
                pair[2 * i + 1] = vals[i] / probs[i]
            _select(u, th, pair, out)
    finally:
        free(buf)
    return np.asarray(out)


def ternary(const double[::1] vals, double norm,
            const double[:, ::1] u, double[:, ::1] out):
    cdef Py_ssize_t i, n = vals.shape[0]
    cdef double* buf = _alloc(n)
    cdef double* th = buf
    cdef double* pair = buf + n
    try:
        with nogil:
            for i in range(n):
                th[i] = fabs(vals[i]) / norm
                pair[2 * i] = 0.0
                pair[2 * i + 1] = norm if vals[i] > 0 else -norm
            _select(u, th, pair, out)
    finally:
        free(buf)
    return np.asarray(out)


cdef inline double _level_value(double v, double norm, double level, double ds) noexcept nogil:
    cdef double mag
    if level > 0:
        mag = norm * (level / ds)
        return mag if v > 0 else -mag
    return 0.0


def lowprec(const double[::1] vals, double norm, long s,
            const double[:, ::1] u, double[:, ::1] out):
    cdef Py_ssize_t i, n = vals.shape[0]
    cdef double scaled, low
    cdef double ds = <double>s
    cdef double* buf = _alloc(n)
    cdef double* th = buf
    cdef double* pair = buf + n
    try:
        with nogil:
            for i in range(n):
                scaled = (fabs(vals[i]) / norm) * ds
                low = floor(scaled)
                if low > ds - 1:
                    low = ds - 1
                th[i] = scaled - low
                pair[2 * i] = _level_value(vals[i], norm, low, ds)
                pair[2 * i + 1] = _level_value(vals[i], norm, low + 1.0, ds)
            _select(u, th, pair, out)
    finally:
        free(buf)
    return np.asarray(out)


def conflict_degrees(indptr, indices, Py_ssize_t dim):
    """Conflict-graph degrees via per-element bitsets of set membership.

    Sets are processed in column blocks of 64*W sets so the element table
    stays below ``_MAX_TABLE_WORDS`` words.
    """
    if len(indptr) - 1 > _BITSET_MAX_SETS:
        # bitset work grows with n^2 / 64; the sparse product wins beyond this size
        from . import _kernels_py
        return _kernels_py.conflict_degrees(indptr, indices, dim)
    cdef const int64_t[::1] ptr = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef const int64_t[::1] idx = np.ascontiguousarray(indices, dtype=np.int64)
    cdef Py_ssize_t n = ptr.shape[0] - 1
    deg_arr = np.zeros(max(n, 0), dtype=np.int64)
    cdef int64_t[::1] deg = deg_arr
    if n <= 1:
        return deg_arr

    cdef Py_ssize_t total_words = (n + 63) // 64
    cdef Py_ssize_t wblock = total_words
    if dim > 0 and wblock * dim > _MAX_TABLE_WORDS:
        wblock = max(1, _MAX_TABLE_WORDS // dim)

    cdef uint64_t* table = <uint64_t*> calloc(wblock * max(dim, 1), sizeof(uint64_t))
    cdef uint64_t* acc = <uint64_t*> calloc(wblock, sizeof(uint64_t))
    if table == NULL or acc == NULL:
        free(table)
        free(acc)
        raise MemoryError()

    cdef Py_ssize_t w0, w1, nw, lo, hi, i, k, w, f
    cdef int64_t cnt
    try:
        with nogil:
            w0 = 0
            while w0 < total_words:
                w1 = min(total_words, w0 + wblock)
                nw = w1 - w0
                lo = w0 * 64
                hi = min(n, w1 * 64)
                for k in range(dim * wblock):
                    table[k] = 0
                for i in range(lo, hi):
                    for k in range(ptr[i], ptr[i + 1]):
                        f = idx[k]
                        table[f * wblock + (i // 64 - w0)] |= (<uint64_t>1) << (i % 64)
                for i in range(n):
                    if ptr[i] == ptr[i + 1]:
                        continue
                    for w in range(nw):
                        acc[w] = 0
                    for k in range(ptr[i], ptr[i + 1]):
                        f = idx[k]
                        for w in range(nw):
                            acc[w] |= table[f * wblock + w]
                    cnt = 0
                    for w in range(nw):
                        cnt += __builtin_popcountll(acc[w])
                    # the set itself is in this block when lo <= i < hi
                    if lo <= i < hi:
                        cnt -= 1
                    deg[i] += cnt
                w0 = w1
    finally:
        free(table)
        free(acc)
    return deg_arr


def csr_grad(const int64_t[::1] indptr, const int64_t[::1] indices,
             const double[::1] data, const double[::1] labels,
             const double[::1] x, double rho, double reg, double[::1] out):
    cdef Py_ssize_t i, k, j, n_rows = labels.shape[0], d = x.shape[0]
    cdef double acc, r
    with nogil:
        for j in range(d):
            out[j] = 0.0
        for i in range(n_rows):
            acc = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                acc = acc + data[k] * x[indices[k]]
            r = acc - labels[i]
            for k in range(indptr[i], indptr[i + 1]):
                out[indices[k]] = out[indices[k]] + data[k] * r
        for j in range(d):
            out[j] = out[j] / rho + reg * x[j]
    return np.asarray(out)
