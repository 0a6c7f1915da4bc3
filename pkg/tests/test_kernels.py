import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from urqsim import _backend
from urqsim.data import euclidean_norm

from oracles import dense_conflict_degrees, lsq_gradient

BACKENDS = _backend.available()
needs_both = pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled extension not built")


def test_python_backend_always_available():
    assert "python" in BACKENDS


def test_unknown_backend():
    with pytest.raises(ValueError):
        _backend.load("gpu")


def _run(name, fn, *args, out_shape):
    out = np.empty(out_shape)
    getattr(_backend.load(name), fn)(*args, out)
    return out


@st.composite
def quant_inputs(draw):
    nnz = draw(st.integers(1, 30))
    vals = np.array(draw(st.lists(st.floats(-1e6, 1e6, allow_nan=False).filter(lambda x: x != 0),
                                  min_size=nnz, max_size=nnz)))
    seed = draw(st.integers(0, 2**32 - 1))
    u = np.random.default_rng(seed).random((draw(st.integers(1, 5)), nnz))
    return vals, u


@needs_both
@settings(max_examples=150, deadline=None)
@given(quant_inputs(), st.integers(1, 16))
def test_quantizer_kernels_bit_identical(inp, s):
    vals, u = inp
    norm = euclidean_norm(vals)
    probs = np.random.default_rng(int(u.size)).uniform(0.05, 1.0, vals.size)
    for fn, args in (("sparsify", (vals, probs, u)), ("ternary", (vals, norm, u)),
                     ("lowprec", (vals, norm, s, u))):
        a = _run("compiled", fn, *args, out_shape=u.shape)
        b = _run("python", fn, *args, out_shape=u.shape)
        assert a.tobytes() == b.tobytes(), fn


@st.composite
def set_families(draw, max_sets=90, max_dim=40):
    dim = draw(st.integers(1, max_dim))
    n = draw(st.integers(0, max_sets))
    return [sorted(draw(st.sets(st.integers(0, dim - 1), max_size=min(dim, 6)))) for _ in range(n)], dim


def _csr(sets):
    indptr = np.concatenate([[0], np.cumsum([len(s) for s in sets])]).astype(np.int64)
    indices = np.array([x for s in sets for x in s], dtype=np.int64)
    return indptr, indices


@pytest.mark.parametrize("name", BACKENDS)
@settings(max_examples=120, deadline=None)
@given(fam=set_families())
def test_conflict_degrees_brute_force(name, fam):
    sets, dim = fam
    indptr, indices = _csr(sets)
    got = _backend.load(name).conflict_degrees(indptr, indices, dim)
    assert list(got) == dense_conflict_degrees(sets)


def test_conflict_degrees_examples():
    for name in BACKENDS:
        k = _backend.load(name)
        indptr, indices = _csr([[0, 1], [2, 3], [4, 5]])
        assert list(k.conflict_degrees(indptr, indices, 6)) == [0, 0, 0]
        indptr, indices = _csr([[0, 1], [1, 2], [0, 2]])
        assert list(k.conflict_degrees(indptr, indices, 3)) == [2, 2, 2]


@needs_both
def test_conflict_degrees_blocked_path():
    # large enough that the compiled bitset table is split into column blocks
    gen = np.random.default_rng(5)
    n, dim = 3000, 200_000
    sets = [np.unique(gen.integers(0, dim, 40)) for _ in range(n)]
    sets[7] = np.array([], dtype=np.int64)
    indptr, indices = _csr([s.tolist() for s in sets])
    a = _backend.load("compiled").conflict_degrees(indptr, indices, dim)
    b = _backend.load("python").conflict_degrees(indptr, indices, dim)
    np.testing.assert_array_equal(a, b)
    assert a[7] == 0 and a.sum() > 0


@pytest.mark.parametrize("name", BACKENDS)
@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(1, 8), st.integers(0, 2**32 - 1),
       st.floats(0.1, 100), st.floats(0, 2))
def test_csr_grad_matches_dense(name, n, d, seed, rho, reg):
    from scipy import sparse
    gen = np.random.default_rng(seed)
    A = gen.normal(size=(n, d)) * (gen.random((n, d)) < 0.5)
    b = gen.normal(size=n)
    x = gen.normal(size=d)
    csr = sparse.csr_matrix(A)
    out = np.empty(d)
    _backend.load(name).csr_grad(csr.indptr.astype(np.int64), csr.indices.astype(np.int64),
                                 csr.data, b, x, rho, reg, out)
    np.testing.assert_allclose(out, lsq_gradient(A, b, rho, reg, x), rtol=1e-10, atol=1e-10)
