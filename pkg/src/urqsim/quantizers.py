"""Unbiased random quantizers (URQs), their moment bounds and bit costs.

A URQ ``Q`` maps a vector to a random vector with ``supp(Q(v)) ⊆ supp(v)``,
``E[Q(v)] = v`` and ``E[||Q(v)||^2] <= alpha ||v||^2``. Three are provided:

* ``sparsifier``: keep coordinate ``i`` with probability ``p_i``, scaled by ``1/p_i``
* ``ternary``: send ``||v|| sign(v_i)`` with probability ``|v_i| / ||v||``
* ``lowprec``: stochastic rounding of ``|v_i| / ||v||`` onto ``s`` levels

plus ``identity`` for exact transmission.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._backend import kernels
from .data import SparseVec, euclidean_norm

IDENTITY = "identity"
SPARSIFIER = "sparsifier"
TERNARY = "ternary"
LOWPREC = "lowprec"
KINDS = (IDENTITY, SPARSIFIER, TERNARY, LOWPREC)

FLOAT_BITS = 64
NORM_BITS = 64
HEADER_BITS = 32


@dataclass(frozen=True, eq=False)
class QuantizerSpec:
    """Which quantizer, with its parameters.

    ``p`` is a scalar or a per-coordinate array in (0, 1] (sparsifier only);
    ``s`` is the number of levels (lowprec only).
    """

    kind: str
    p: Optional[float | np.ndarray] = None
    s: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown quantizer kind {self.kind!r}")
        if self.kind == SPARSIFIER:
            if self.p is None:
                raise ValueError("sparsifier needs p")
            p = np.asarray(self.p, dtype=np.float64)
            if p.ndim > 1 or p.size == 0 or np.any(~(p > 0)) or np.any(p > 1):
                raise ValueError("sparsifier probabilities must lie in (0, 1]")
            object.__setattr__(self, "p", float(p) if p.ndim == 0 else p)
        if self.kind == LOWPREC:
            if self.s is None or int(self.s) != self.s or self.s < 1:
                raise ValueError("lowprec needs an integer s >= 1")
            object.__setattr__(self, "s", int(self.s))

    @classmethod
    def identity(cls) -> "QuantizerSpec":
        return cls(IDENTITY)

    @classmethod
    def sparsifier(cls, p) -> "QuantizerSpec":
        return cls(SPARSIFIER, p=p)

    @classmethod
    def ternary(cls) -> "QuantizerSpec":
        return cls(TERNARY)

    @classmethod
    def lowprec(cls, s: int) -> "QuantizerSpec":
        return cls(LOWPREC, s=s)

    @property
    def carries_norm(self) -> bool:
        return self.kind in (TERNARY, LOWPREC)

    @property
    def label(self) -> str:
        if self.kind == SPARSIFIER:
            p = self.p if np.ndim(self.p) == 0 else "vec"
            return f"GS(p={p})"
        if self.kind == LOWPREC:
            return f"LP(s={self.s})"
        return {IDENTITY: "FP", TERNARY: "TQ"}[self.kind]

    def probs(self, dim: int) -> np.ndarray:
        """Per-coordinate keep probabilities of a sparsifier, broadcast to ``dim``."""
        if self.kind != SPARSIFIER:
            raise ValueError("only the sparsifier has keep probabilities")
        if np.ndim(self.p) == 0:
            return np.full(dim, float(self.p))
        if self.p.size != dim:
            raise ValueError(f"probability vector has length {self.p.size}, expected {dim}")
        return self.p

    def __eq__(self, other):
        if not isinstance(other, QuantizerSpec):
            return NotImplemented
        return (self.kind == other.kind and self.s == other.s
                and np.array_equal(np.asarray(self.p), np.asarray(other.p)))

    def __hash__(self):
        return hash((self.kind, self.s, np.asarray(self.p, dtype=float).tobytes()))

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.p is not None:
            out["p"] = self.p if np.ndim(self.p) == 0 else list(map(float, self.p))
        if self.s is not None:
            out["s"] = self.s
        return out


@dataclass(frozen=True)
class QuantizedMsg:
    """One compressed vector plus its wire cost in bits."""

    payload: SparseVec
    nnz: int
    bits: int
    carries_norm: bool
    norm: Optional[float] = None


@dataclass(frozen=True)
class UrqBounds:
    alpha: float
    beta: float
    c: float


def index_bits(d: int) -> int:
    """``ceil(log2 d)``, the bits needed to address one of ``d`` coordinates."""
    if d < 1:
        raise ValueError("d must be positive")
    return (d - 1).bit_length()


def entry_bits(spec: QuantizerSpec) -> int:
    """Bits per transmitted entry, excluding its index and the norm surcharge."""
    if spec.kind in (IDENTITY, SPARSIFIER):
        return FLOAT_BITS
    if spec.kind == TERNARY:
        return 1
    return 1 + index_bits(spec.s)


def message_bits(nnz: int, d: int, spec: QuantizerSpec) -> int:
    if not 0 <= nnz <= d:
        raise ValueError("need 0 <= nnz <= d")
    surcharge = NORM_BITS if spec.carries_norm else 0
    return nnz * (index_bits(d) + entry_bits(spec)) + surcharge


def bounds(spec: QuantizerSpec, d: int) -> UrqBounds:
    """Second-moment factor alpha, variance factor beta = alpha - 1, nnz bound c."""
    if d < 1:
        raise ValueError("d must be positive")
    if spec.kind == IDENTITY:
        alpha, c = 1.0, float(d)
    elif spec.kind == SPARSIFIER:
        p = spec.probs(d)
        alpha, c = 1.0 / float(p.min()), float(p.sum())
    else:
        s = 1 if spec.kind == TERNARY else spec.s
        alpha = 1.0 + min(d / s**2, math.sqrt(d) / s)
        c = min(s * (s + math.sqrt(d)), float(d))
    return UrqBounds(alpha, alpha - 1.0, c)


def _norm(values: np.ndarray) -> float:
    return euclidean_norm(values)


def quantize_values(spec: QuantizerSpec, v: SparseVec, u: np.ndarray) -> np.ndarray:
    """Apply ``spec`` to the nonzeros of ``v`` given uniforms ``u`` of shape (draws, nnz).

    Returns an array of the same shape with the quantized value of each stored
    coordinate (0.0 where the quantizer dropped it).
    """
    u = np.ascontiguousarray(u, dtype=np.float64)
    if u.ndim != 2 or u.shape[1] != v.nnz:
        raise ValueError("uniforms must have shape (draws, nnz)")
    vals = np.ascontiguousarray(v.values)
    out = np.empty_like(u)
    if spec.kind == IDENTITY:
        out[:] = vals
    elif spec.kind == SPARSIFIER:
        probs = np.ascontiguousarray(spec.probs(v.dim)[v.indices])
        kernels.sparsify(vals, probs, u, out)
    elif v.nnz == 0:
        pass
    elif spec.kind == TERNARY:
        kernels.ternary(vals, _norm(vals), u, out)
    else:
        kernels.lowprec(vals, _norm(vals), spec.s, u, out)
    return out


def keep_probability(spec: QuantizerSpec, values: np.ndarray, norms, indices=None,
                     dim: Optional[int] = None) -> np.ndarray:
    """Probability that each stored coordinate survives quantization.

    ``norms`` is the Euclidean norm of the vector each value belongs to
    (scalar or per value). A coordinate is kept exactly when its uniform draw
    is below this probability, matching :func:`quantize_values` draw for draw.
    """
    values = np.asarray(values, dtype=np.float64)
    if spec.kind == IDENTITY:
        return np.ones_like(values)
    if spec.kind == SPARSIFIER:
        if np.ndim(spec.p) == 0:
            return np.full_like(values, float(spec.p))
        return spec.probs(dim)[indices]
    a = np.abs(values) / norms
    if spec.kind == TERNARY:
        return a
    scaled = a * spec.s
    # level 0 is the only zero outcome; reachable only when a*s < 1
    return np.where(np.floor(scaled) >= 1, 1.0, scaled)


def compress(spec: QuantizerSpec, v: SparseVec, rng: np.random.Generator) -> QuantizedMsg:
    """Quantize ``v`` with one draw per stored coordinate from ``rng``.

    Identity consumes no randomness. A zero vector short-circuits to an empty
    message (norm 0.0 for the norm-carrying quantizers).
    """
    norm = _norm(v.values) if spec.carries_norm else None
    if spec.kind == IDENTITY or v.nnz == 0:
        payload = v
    else:
        u = rng.random(v.nnz).reshape(1, -1)
        q = quantize_values(spec, v, u)[0]
        keep = q != 0.0
        payload = SparseVec._trusted(v.dim, v.indices[keep], q[keep])
    return QuantizedMsg(payload, payload.nnz, message_bits(payload.nnz, v.dim, spec),
                        spec.carries_norm, norm)


def compress_dense(spec: QuantizerSpec, x: np.ndarray, rng: np.random.Generator) -> QuantizedMsg:
    return compress(spec, SparseVec.from_dense(x), rng)


def compress_batch(spec: QuantizerSpec, v: SparseVec, rng: np.random.Generator,
                   draws: int) -> np.ndarray:
    """``draws`` independent quantizations of ``v`` as a dense (draws, dim) array."""
    u = rng.random((draws, v.nnz))
    q = quantize_values(spec, v, u)
    out = np.zeros((draws, v.dim))
    out[:, v.indices] = q
    return out


# -- wire format -----------------------------------------------------------------
#
# [u32 nnz][f64 norm if carried][nnz x (index, entry)], bit-packed MSB first.
# Entries: f64 bit pattern (identity, sparsifier); sign bit (ternary);
# sign bit + (level - 1) in ceil(log2 s) bits (lowprec). The header is framing
# and is not part of message_bits.


class _BitWriter:
    def __init__(self):
        self.acc = 0
        self.n = 0

    def put(self, value: int, width: int):
        if width:
            self.acc = (self.acc << width) | (value & ((1 << width) - 1))
            self.n += width

    def to_bytes(self) -> bytes:
        pad = (-self.n) % 8
        return (self.acc << pad).to_bytes((self.n + pad) // 8, "big")


class _BitReader:
    def __init__(self, data: bytes, nbits: int):
        self.acc = int.from_bytes(data, "big") >> ((-nbits) % 8)
        self.left = nbits

    def get(self, width: int) -> int:
        if width > self.left:
            raise ValueError("truncated message")
        self.left -= width
        return (self.acc >> self.left) & ((1 << width) - 1)


def _f64_bits(x: float) -> int:
    return struct.unpack(">Q", struct.pack(">d", x))[0]


def _bits_f64(b: int) -> float:
    return struct.unpack(">d", struct.pack(">Q", b))[0]


def encode(msg: QuantizedMsg, spec: QuantizerSpec) -> tuple[bytes, int]:
    """Serialize ``msg``; returns the byte string and its exact length in bits."""
    d = msg.payload.dim
    ib = index_bits(d)
    w = _BitWriter()
    w.put(msg.nnz, HEADER_BITS)
    if spec.carries_norm:
        w.put(_f64_bits(msg.norm), NORM_BITS)
    for idx, val in zip(msg.payload.indices.tolist(), msg.payload.values.tolist()):
        w.put(idx, ib)
        if spec.kind in (IDENTITY, SPARSIFIER):
            w.put(_f64_bits(val), FLOAT_BITS)
            continue
        w.put(1 if val < 0 else 0, 1)
        if spec.kind == LOWPREC:
            level = round(abs(val) * spec.s / msg.norm)
            if not 1 <= level <= spec.s or msg.norm * (level / spec.s) != abs(val):
                raise ValueError(f"value {val!r} is not on the quantization grid")
            w.put(level - 1, index_bits(spec.s))
        elif abs(val) != msg.norm:
            raise ValueError(f"ternary value {val!r} differs from the norm")
    return w.to_bytes(), w.n


def decode(data: bytes, nbits: int, d: int, spec: QuantizerSpec) -> QuantizedMsg:
    r = _BitReader(data, nbits)
    nnz = r.get(HEADER_BITS)
    norm = _bits_f64(r.get(NORM_BITS)) if spec.carries_norm else None
    ib = index_bits(d)
    idx = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz)
    for k in range(nnz):
        idx[k] = r.get(ib)
        if spec.kind in (IDENTITY, SPARSIFIER):
            vals[k] = _bits_f64(r.get(FLOAT_BITS))
            continue
        neg = r.get(1)
        if spec.kind == LOWPREC:
            level = r.get(index_bits(spec.s)) + 1
            mag = norm * (level / spec.s)
        else:
            mag = norm
        vals[k] = -mag if neg else mag
    if r.left:
        raise ValueError(f"{r.left} trailing bits")
    payload = SparseVec(d, idx, vals)
    return QuantizedMsg(payload, nnz, message_bits(nnz, d, spec), spec.carries_norm, norm)
