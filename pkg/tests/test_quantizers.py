import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from urqsim.data import SparseVec
from urqsim.quantizers import (QuantizerSpec, bounds, compress, compress_batch, decode, encode,
                               entry_bits, keep_probability, message_bits, quantize_values)

from oracles import FRACTION_GRID, coordinate_outcomes, grid_vectors, moments

Q = QuantizerSpec


class FixedUniforms:
    """Stand-in generator returning preset uniforms."""

    def __init__(self, u):
        self.u = np.asarray(u, dtype=float)

    def random(self, size=None):
        assert size == self.u.size
        return self.u.copy()


def sv(values, dim=None):
    x = np.asarray(values, dtype=float)
    return SparseVec.from_dense(x if dim is None else np.pad(x, (0, dim - x.size)))


class TestExamples:
    def test_ternary_three_four_enumeration(self):
        coords = coordinate_outcomes("ternary", [3, 4])
        outcomes = {}
        from oracles import enumerate_outcomes
        for prob, vec in enumerate_outcomes(coords):
            outcomes[tuple(round(x, 12) for x in vec)] = prob
        expected = {(5, 5): 0.48, (5, 0): 0.12, (0, 5): 0.32, (0, 0): 0.08}
        assert set(outcomes) == set(expected)
        for key, p in expected.items():
            assert outcomes[key] == pytest.approx(p, abs=1e-12)
        mean, second, _ = moments(coords)
        assert mean == pytest.approx([3, 4], abs=1e-12)
        assert second == pytest.approx(35, abs=1e-12)

    @pytest.mark.parametrize("u, out", [
        ([0.5, 0.7], [5, 5]), ([0.5, 0.9], [5, 0]), ([0.7, 0.7], [0, 5]), ([0.99, 0.99], [0, 0])])
    def test_ternary_replay(self, u, out):
        msg = compress(Q.ternary(), sv([3, 4]), FixedUniforms(u))
        np.testing.assert_array_equal(msg.payload.to_dense(), out)
        assert msg.norm == 5.0

    def test_sparsifier_all_ones_is_identity(self):
        v = sv([2, -4])
        msg = compress(Q.sparsifier([1.0, 1.0]), v, np.random.default_rng(0))
        assert msg.payload == v

    def test_lowprec_on_grid_is_exact(self):
        gen = np.random.default_rng(3)
        for _ in range(20):
            msg = compress(Q.lowprec(5), sv([3, 4]), gen)
            np.testing.assert_array_equal(msg.payload.to_dense(), [3, 4])

    def test_identity_consumes_no_randomness(self):
        v = sv([1.5, 0, -2])
        msg = compress(Q.identity(), v, None)
        assert msg.payload == v and msg.bits == 2 * (2 + 64)


class TestBounds:
    def test_sparsifier(self):
        b = bounds(Q.sparsifier([0.5, 0.25]), 2)
        assert (b.alpha, b.c, b.beta) == (4.0, 0.75, 3.0)

    def test_lowprec(self):
        assert bounds(Q.lowprec(2), 4).alpha == 2.0

    def test_identity(self):
        b = bounds(Q.identity(), 17)
        assert (b.alpha, b.beta, b.c) == (1.0, 0.0, 17.0)

    def test_ternary_matches_lowprec_one(self):
        for d in (1, 5, 100):
            assert bounds(Q.ternary(), d) == bounds(Q.lowprec(1), d)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 5000), st.integers(1, 64))
    def test_invariants(self, d, s):
        for spec in (Q.lowprec(s), Q.ternary(), Q.sparsifier(1.0 / s), Q.identity()):
            b = bounds(spec, d)
            assert b.alpha >= 1 and b.beta == b.alpha - 1 and b.c <= d


class TestBitCosts:
    def test_entry_bits(self):
        assert entry_bits(Q.lowprec(4)) == 3
        assert entry_bits(Q.sparsifier(0.5)) == 64
        assert entry_bits(Q.identity()) == 64
        assert entry_bits(Q.ternary()) == 1
        assert entry_bits(Q.lowprec(5)) == 4

    def test_message_bits(self):
        assert message_bits(5, 1024, Q.lowprec(4)) == 129
        assert message_bits(0, 1024, Q.lowprec(4)) == 64
        assert message_bits(0, 1024, Q.sparsifier(0.5)) == 0
        assert message_bits(8, 8, Q.sparsifier(0.5)) == 536

    def test_message_bits_range(self):
        with pytest.raises(ValueError):
            message_bits(9, 8, Q.ternary())

    def test_zero_vector_short_circuit(self):
        z = SparseVec.zeros(16)
        for spec, bits in ((Q.ternary(), 64), (Q.lowprec(3), 64), (Q.sparsifier(0.3), 0)):
            msg = compress(spec, z, FixedUniforms([]))
            assert msg.nnz == 0 and msg.bits == bits


class TestSpecValidation:
    @pytest.mark.parametrize("kw", [dict(kind="sparsifier", p=0.0), dict(kind="sparsifier", p=1.5),
                                    dict(kind="sparsifier"), dict(kind="lowprec", s=0),
                                    dict(kind="lowprec", s=2.5), dict(kind="topk")])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            QuantizerSpec(**kw)

    def test_probability_vector_length(self):
        with pytest.raises(ValueError):
            compress(Q.sparsifier([0.5, 0.5]), sv([1, 2, 3]), np.random.default_rng(0))


SPECS = [Q.sparsifier(0.5), Q.sparsifier(0.1), Q.ternary(), Q.lowprec(1), Q.lowprec(2),
         Q.lowprec(4), Q.lowprec(7), Q.identity()]


@st.composite
def vectors(draw, max_dim=20):
    d = draw(st.integers(1, max_dim))
    vals = draw(st.lists(st.one_of(st.just(0.0), st.floats(-1e3, 1e3, allow_nan=False)),
                         min_size=d, max_size=d))
    return np.array(vals)


@settings(max_examples=200, deadline=None)
@given(vectors(), st.sampled_from(SPECS), st.integers(0, 2**32 - 1))
def test_support_and_sign(x, spec, seed):
    v = SparseVec.from_dense(x)
    msg = compress(spec, v, np.random.default_rng(seed))
    assert msg.payload.support() <= v.support()
    q = msg.payload.to_dense()
    assert np.all(q * x >= 0)
    assert msg.nnz == msg.payload.nnz
    assert msg.bits == message_bits(msg.nnz, v.dim, spec)


@settings(max_examples=100, deadline=None)
@given(vectors(), st.integers(0, 2**32 - 1))
def test_lowprec_one_equals_ternary(x, seed):
    v = SparseVec.from_dense(x)
    a = compress(Q.ternary(), v, np.random.default_rng(seed))
    b = compress(Q.lowprec(1), v, np.random.default_rng(seed))
    assert a.payload == b.payload


@settings(max_examples=100, deadline=None)
@given(vectors(), st.sampled_from(SPECS), st.integers(0, 2**32 - 1))
def test_keep_probability_matches_kernel(x, spec, seed):
    v = SparseVec.from_dense(x)
    u = np.random.default_rng(seed).random((4, v.nnz))
    q = quantize_values(spec, v, u)
    keep = u < keep_probability(spec, v.values, v.norm(), v.indices, v.dim)
    np.testing.assert_array_equal(q != 0, keep)


@settings(max_examples=150, deadline=None)
@given(vectors(40), st.sampled_from(SPECS), st.integers(0, 2**32 - 1))
def test_wire_round_trip(x, spec, seed):
    v = SparseVec.from_dense(x)
    msg = compress(spec, v, np.random.default_rng(seed))
    data, nbits = encode(msg, spec)
    assert nbits == 32 + msg.bits
    assert len(data) == math.ceil(nbits / 8)
    back = decode(data, nbits, v.dim, spec)
    assert back.payload == msg.payload
    assert back.bits == msg.bits


def test_wire_rejects_off_grid():
    msg = compress(Q.identity(), sv([0.3, 0.4]), None)
    with pytest.raises(ValueError):
        encode(msg.__class__(msg.payload, msg.nnz, msg.bits, True, 0.5), Q.lowprec(3))


def _replay_distribution(spec, x):
    """Check the package realizes the oracle's two-point law for each coordinate."""
    kind = spec.kind
    coords = coordinate_outcomes(kind, x, p=[spec.p] * len(x) if kind == "sparsifier" else None, s=spec.s)
    v = SparseVec.from_dense(np.array([float(t) for t in x]))
    pos = {j: k for k, j in enumerate(v.indices.tolist())}
    for j, (lo, hi, ph) in enumerate(coords):
        if j not in pos:
            continue
        ph = float(ph)
        below = np.full((1, v.nnz), 0.5)
        above = np.full((1, v.nnz), 0.5)
        below[0, pos[j]] = ph * (1 - 1e-9)
        above[0, pos[j]] = min(ph * (1 + 1e-9) + 1e-12, 1 - 1e-16)
        if ph > 0:
            assert quantize_values(spec, v, below)[0, pos[j]] == pytest.approx(float(hi), rel=1e-12)
        if ph < 1:
            assert quantize_values(spec, v, above)[0, pos[j]] == pytest.approx(float(lo), rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("spec", [Q.sparsifier(0.5), Q.ternary(), Q.lowprec(2), Q.lowprec(4)])
def test_package_matches_oracle_law(spec):
    for d in (1, 2, 3):
        for x in grid_vectors([-2, -1, 0, 1, 2], d):
            _replay_distribution(spec, x)


def test_enumeration_sparsifier_exact():
    p = [Fraction(1, 2), Fraction(1, 3), Fraction(3, 4)]
    for d in (1, 2, 3):
        for x in grid_vectors(FRACTION_GRID, d):
            mean, second, nnz = moments(coordinate_outcomes("sparsifier", x, p=p[:d]))
            assert mean == x
            assert second <= (1 / min(p[:d])) * sum(t * t for t in x)
            assert nnz == sum(pi for pi, t in zip(p, x) if t != 0)


def test_monte_carlo_small():
    gen = np.random.default_rng(7)
    v = sv([1.0, -2.0, 0.0, 0.5])
    for spec in (Q.ternary(), Q.lowprec(3), Q.sparsifier(0.4)):
        draws = compress_batch(spec, v, gen, 200_000)
        se = draws.std(axis=0) / math.sqrt(draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - v.to_dense()) <= 5 * se + 1e-12)
        assert np.all(draws[:, 2] == 0)
