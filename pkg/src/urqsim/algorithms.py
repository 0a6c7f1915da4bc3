"""Simulated master/worker loop for compressed and stale gradient methods.

Four schemes share one driver:

* ``qgd``:  x+ = x - g Q(sum_i grad f_i(x))
* ``ciag``: x+ = x - g Q(sum_i grad f_i(x_{k - tau_i}))
* ``dqgd``: x+ = x - g sum_i Q(grad f_i(x))
* ``qiag``: x+ = x - g sum_i Q(grad f_i(x_{k - tau_i}))

Randomness for a quantization is drawn from a stream keyed by the run seed,
the iterate index the quantized gradient belongs to and the sending worker
(worker 0 for central compression), so runs that should coincide do so bit for
bit. Summation is always in ascending worker order.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import rng as rngmod
from . import theory
from .data import WorkerShard
from .loss import (CurvatureReport, LossConfig, Reference, component_grads, curvature,
                   f_gap, solve_reference)
from .quantizers import QuantizedMsg, QuantizerSpec, bounds, compress_dense, entry_bits
from .schedule import ZERO, DelaySchedule, staleness
from .sparsity import DATA, SparsityReport, conflict_degrees, sampled_smoothness_terms, shard_supports

QGD = "qgd"
CIAG = "ciag"
DQGD = "dqgd"
QIAG = "qiag"
ALGORITHMS = (QGD, CIAG, DQGD, QIAG)
CENTRAL = (QGD, CIAG)

DIVERGENCE_NORM = 1e12
TRACE_COLUMNS = ("k", "f_gap", "dist2", "grad_norm2", "bits_cum", "sigma_k")


class ConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, k: int, norm: float, trace: "Trace"):
        self.k = k
        self.norm = norm
        self.trace = trace
        super().__init__(f"iterate norm {norm:.3e} exceeded {DIVERGENCE_NORM:.0e} at k={k}")


@dataclass(frozen=True)
class AutoStep:
    """Step size taken from a convergence guarantee (see :data:`theory.RULES`)."""

    rule: str
    theta: float = 1.0
    fraction: Optional[float] = None

    def __post_init__(self):
        if self.rule not in theory.RULES:
            raise ConfigError(f"unknown step rule {self.rule!r}")
        if not self.theta > 0:
            raise ConfigError("theta must be positive")
        if self.fraction is not None and not 0 < self.fraction < 1:
            raise ConfigError("fraction must lie in (0, 1)")


@dataclass(frozen=True)
class RunConfig:
    algorithm: str
    quantizer: QuantizerSpec = field(default_factory=QuantizerSpec.identity)
    gamma: float | AutoStep = 1.0
    schedule: DelaySchedule = field(default_factory=DelaySchedule)
    max_iters: int = 100
    seed: int = 0
    record_sigma_k: bool = False
    record_smoothness: bool = False
    record_iterates: bool = False
    name: str = ""

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.algorithm in (QGD, DQGD) and self.schedule.kind != ZERO:
            raise ConfigError(f"{self.algorithm} needs the zero delay schedule")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be nonnegative")
        if not isinstance(self.gamma, AutoStep) and not self.gamma > 0:
            raise ConfigError("gamma must be positive")

    @property
    def label(self) -> str:
        return self.name or f"{self.algorithm}_{self.quantizer.label}"

    def to_dict(self) -> dict:
        g = self.gamma
        gamma = ({"auto": g.rule, "theta": g.theta, "fraction": g.fraction}
                 if isinstance(g, AutoStep) else g)
        return {
            "name": self.label, "algorithm": self.algorithm, "quantizer": self.quantizer.to_dict(),
            "gamma": gamma, "schedule": self.schedule.to_dict(), "max_iters": self.max_iters,
            "seed": self.seed, "record_sigma_k": self.record_sigma_k,
        }


class Problem:
    """Sharded least-squares problem with lazily computed reference quantities."""

    def __init__(self, shards: Sequence[WorkerShard], loss: LossConfig, *,
                 sparsity_source: str = DATA, x0: Optional[np.ndarray] = None,
                 ref_tol: float = 1e-12):
        self.shards = list(shards)
        self.loss = loss
        self.sparsity_source = sparsity_source
        self.ref_tol = ref_tol
        self.x0 = np.zeros(self.dim) if x0 is None else np.asarray(x0, dtype=np.float64).copy()

    @property
    def m(self) -> int:
        return len(self.shards)

    @property
    def dim(self) -> int:
        return self.shards[0].dim

    @cached_property
    def sparsity(self) -> SparsityReport:
        return conflict_degrees(shard_supports(self.shards, self.sparsity_source,
                                               self.loss.reg_sigma))

    @cached_property
    def curvature(self) -> CurvatureReport:
        return curvature(self.shards, self.loss, delta=self.sparsity.delta)

    @cached_property
    def reference(self) -> Reference:
        return solve_reference(self.shards, self.loss, self.ref_tol)

    def theory_inputs(self, quantizer: QuantizerSpec, tau: int = 0, theta: float = 1.0,
                      **extra) -> theory.TheoryInputs:
        b = bounds(quantizer, self.dim)
        cur = self.curvature
        return theory.TheoryInputs(
            mu=cur.mu, L=cur.L_component, L_bar=cur.L_bar, m=self.m, d=self.dim,
            alpha=b.alpha, beta=b.beta, c=b.c, B=entry_bits(quantizer),
            sigma=self.sparsity.sigma, tau=tau, theta=theta, C=cur.C,
            grad_star_sq=self.reference.grad_star_sq, **extra)

    def resolve_gamma(self, cfg: RunConfig) -> tuple[float, Optional[theory.TheoryReport]]:
        if not isinstance(cfg.gamma, AutoStep):
            return float(cfg.gamma), None
        auto = cfg.gamma
        inp = self.theory_inputs(cfg.quantizer, cfg.schedule.tau, auto.theta)
        rep = theory.evaluate(auto.rule, inp, fraction=auto.fraction)
        if not rep.applicable or rep.gamma is None:
            raise ConfigError(f"step rule {auto.rule} not applicable: {rep.reason}")
        return rep.gamma, rep


@dataclass
class Trace:
    """Per-iteration metrics of one run.

    Row ``k`` describes the iterate ``x_k`` (``f_gap``, ``dist2``,
    ``grad_norm2``), the messages used to step from ``x_k`` to ``x_{k+1}``
    (``sigma_k``, NaN when not recorded) and the bits sent up to and including
    iteration ``k``.
    """

    k: np.ndarray
    f_gap: np.ndarray
    dist2: np.ndarray
    grad_norm2: np.ndarray
    bits_cum: np.ndarray
    sigma_k: np.ndarray
    x_final: Optional[np.ndarray] = None
    config: dict = field(default_factory=dict)
    messages: list[tuple[int, int, int, int]] = field(default_factory=list)
    smoothness_lhs: Optional[np.ndarray] = None
    smoothness_rhs: Optional[np.ndarray] = None
    iterates: Optional[np.ndarray] = None
    gamma: Optional[float] = None

    def __len__(self) -> int:
        return int(self.k.size)

    @property
    def bits_before(self) -> np.ndarray:
        """Bits sent before ``x_k`` existed (0 for ``x_0``)."""
        return np.concatenate([[0], self.bits_cum[:-1]]).astype(np.int64)

    def bits_to_reach(self, threshold: float) -> Optional[int]:
        """Bits sent until the first iterate with ``f_gap <= threshold``."""
        hit = np.flatnonzero(self.f_gap <= threshold)
        return int(self.bits_before[hit[0]]) if hit.size else None

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in zip(self.k.tolist(), self.f_gap.tolist(), self.dist2.tolist(),
                       self.grad_norm2.tolist(), self.bits_cum.tolist(), self.sigma_k.tolist()):
            k, fg, d2, gn, bc, sk = row
            w.writerow([k, repr(fg), repr(d2), repr(gn), bc, "" if math.isnan(sk) else repr(sk)])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str, config: Optional[dict] = None) -> "Trace":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != TRACE_COLUMNS:
            raise ValueError(f"trace header must be {','.join(TRACE_COLUMNS)}")
        body = rows[1:]
        col = lambda j, typ: np.array([typ(r[j]) for r in body], dtype=typ)  # noqa: E731
        sig = np.array([float(r[5]) if r[5] else math.nan for r in body])
        return cls(col(0, np.int64), col(1, float), col(2, float), col(3, float),
                   col(4, np.int64), sig, config=config or {})

    def write(self, path: str | Path) -> None:
        path = Path(path)
        path.write_text(self.to_csv())
        path.with_suffix(".json").write_text(json.dumps(self.config, indent=2, sort_keys=True))

    @classmethod
    def read(cls, path: str | Path) -> "Trace":
        path = Path(path)
        side = path.with_suffix(".json")
        config = json.loads(side.read_text()) if side.exists() else {}
        return cls.from_csv(path.read_text(), config)


@dataclass
class _Entry:
    index: int
    grad: np.ndarray
    msg: Optional[QuantizedMsg] = None


class GradientTable:
    """Latest gradient each worker has delivered and the iterate it belongs to."""

    def __init__(self, m: int):
        self.entries: list[Optional[_Entry]] = [None] * m

    def get(self, i: int) -> Optional[_Entry]:
        return self.entries[i]

    def put(self, i: int, entry: _Entry) -> None:
        self.entries[i] = entry

    def ages(self, k: int) -> list[int]:
        return [k - e.index for e in self.entries if e is not None]


def _check_finite(x: np.ndarray, k: int, trace_fn) -> None:
    nrm = float(np.linalg.norm(x))
    if not math.isfinite(nrm) or nrm > DIVERGENCE_NORM:
        raise DivergenceError(k, nrm, trace_fn())


def run(problem: Problem, cfg: RunConfig) -> Trace:
    """Execute ``cfg`` on ``problem`` and return the trace."""
    gamma, rep = problem.resolve_gamma(cfg)
    ref = problem.reference
    shards, loss = problem.shards, problem.loss
    m = problem.m
    alg = cfg.algorithm
    sched = cfg.schedule
    if sched.m != m and sched.kind != ZERO:
        raise ConfigError(f"schedule built for m={sched.m}, problem has m={m}")
    central = alg in CENTRAL
    spec = cfg.quantizer
    n = cfg.max_iters

    ks = np.arange(n, dtype=np.int64)
    fg = np.empty(n)
    d2 = np.empty(n)
    gn = np.empty(n)
    bits = np.zeros(n, dtype=np.int64)
    sig = np.full(n, math.nan)
    sm_lhs = np.full(n, math.nan) if cfg.record_smoothness else None
    sm_rhs = np.full(n, math.nan) if cfg.record_smoothness else None
    iters = np.empty((n, problem.dim)) if cfg.record_iterates else None
    messages: list[tuple[int, int, int, int]] = []

    config = cfg.to_dict()
    config["gamma_value"] = gamma
    if rep is not None:
        config["gamma_report"] = rep.to_dict()

    def partial(upto: int, x_last: np.ndarray) -> Trace:
        return Trace(ks[:upto], fg[:upto], d2[:upto], gn[:upto], bits[:upto], sig[:upto],
                     x_last.copy(), config, messages,
                     None if sm_lhs is None else sm_lhs[:upto],
                     None if sm_rhs is None else sm_rhs[:upto],
                     None if iters is None else iters[:upto], gamma)

    x = problem.x0.copy()
    # component gradients of the last tau+1 iterates, keyed by iterate index
    history: dict[int, list[np.ndarray]] = {}
    keep = max(sched.tau, sched.effective_tau)
    table = GradientTable(m)
    total_bits = 0

    for k in range(n):
        comps = component_grads(shards, loss, x)
        history[k] = comps
        history.pop(k - keep - 1, None)
        full = np.zeros(problem.dim)
        for g in comps:
            full += g
        e = x - ref.x_star
        fg[k] = f_gap(ref, x, full)
        d2[k] = float(np.dot(e, e))
        gn[k] = float(np.dot(full, full))
        if iters is not None:
            iters[k] = x

        # refresh the gradient table per the delay schedule
        for i in range(m):
            age = 0 if sched.kind == ZERO else staleness(sched, k, i)
            if age > min(sched.tau, k):
                raise AssertionError(f"staleness {age} exceeds bound at k={k}, worker {i}")
            j = k - age
            cur = table.get(i)
            if cur is not None and cur.index == j:
                continue
            entry = _Entry(j, history[j][i])
            if not central:
                stream = rngmod.stream(cfg.seed, rngmod.QUANTIZER, j, i)
                entry.msg = compress_dense(spec, entry.grad, stream)
                total_bits += entry.msg.bits
                messages.append((k, i, entry.msg.nnz, entry.msg.bits))
            table.put(i, entry)

        if central:
            agg = np.zeros(problem.dim)
            for i in range(m):
                agg += table.get(i).grad
            msg = compress_dense(spec, agg, rngmod.stream(cfg.seed, rngmod.QUANTIZER, k, 0))
            total_bits += msg.bits
            messages.append((k, 0, msg.nnz, msg.bits))
            step = msg.payload.to_dense()
        else:
            used = [table.get(i).msg for i in range(m)]
            step = np.zeros(problem.dim)
            for mg in used:
                step[mg.payload.indices] += mg.payload.values
            if cfg.record_sigma_k:
                sig[k] = conflict_degrees([mg.payload.indices for mg in used]).sigma
            if cfg.record_smoothness:
                sm_lhs[k], sm_rhs[k] = sampled_smoothness_terms([mg.payload for mg in used])
        bits[k] = total_bits

        x = x - gamma * step
        _check_finite(x, k, lambda: partial(k + 1, x))

    return partial(n, x)


def run_qgd(problem: Problem, cfg: RunConfig) -> Trace:
    _expect(cfg, QGD)
    return run(problem, cfg)


def run_ciag(problem: Problem, cfg: RunConfig) -> Trace:
    _expect(cfg, CIAG)
    return run(problem, cfg)


def run_dqgd(problem: Problem, cfg: RunConfig) -> Trace:
    _expect(cfg, DQGD)
    return run(problem, cfg)


def run_qiag(problem: Problem, cfg: RunConfig) -> Trace:
    _expect(cfg, QIAG)
    return run(problem, cfg)


def _expect(cfg: RunConfig, alg: str) -> None:
    if cfg.algorithm != alg:
        raise ConfigError(f"config is for {cfg.algorithm}, not {alg}")
