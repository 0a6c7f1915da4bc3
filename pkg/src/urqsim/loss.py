"""Regularized least squares split across workers.

Worker ``i`` holds ``f_i(x) = ||A_i x - b_i||^2 / (2 rho) + (reg/2) ||x||^2`` and
the total objective is ``f = sum_i f_i``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from ._backend import kernels
from .data import WorkerShard
from .sparsity import DATA, conflict_degrees, lipschitz_bar, shard_supports

EXACT_MU_MAX_DIM = 64


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossConfig:
    reg_rho: float = 1.0
    reg_sigma: float = 1.0

    def __post_init__(self):
        if not self.reg_rho > 0:
            raise ValueError("reg_rho must be positive")
        if not self.reg_sigma >= 0:
            raise ValueError("reg_sigma must be nonnegative")


@dataclass(frozen=True)
class CurvatureReport:
    L_component: float
    L_bar: float
    mu: float
    C: Optional[float] = None
    delta: float = 0.0
    mu_exact: bool = False
    strongly_convex: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "strongly_convex", self.mu > 0)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["C_is_estimate"] = self.C is not None
        return out


@dataclass(frozen=True)
class Reference:
    """High-accuracy minimizer and the quantities measured against it."""

    x_star: np.ndarray
    grads_star: list[np.ndarray]
    f_star: float
    residual: float

    @property
    def grad_star(self) -> np.ndarray:
        return np.sum(self.grads_star, axis=0)

    @property
    def grad_star_sq(self) -> float:
        return float(sum(np.dot(g, g) for g in self.grads_star))


def _arrays(shard: WorkerShard):
    f = shard.features
    return (np.ascontiguousarray(f.indptr, np.int64), np.ascontiguousarray(f.indices, np.int64),
            np.ascontiguousarray(f.data, np.float64), np.ascontiguousarray(shard.labels, np.float64))


def grad_component(shard: WorkerShard, cfg: LossConfig, x: np.ndarray,
                   out: Optional[np.ndarray] = None) -> np.ndarray:
    """``A_i^T (A_i x - b_i) / rho + reg * x``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape != (shard.dim,):
        raise ValueError(f"x has shape {x.shape}, expected ({shard.dim},)")
    if out is None:
        out = np.empty(shard.dim)
    indptr, indices, data, labels = _arrays(shard)
    kernels.csr_grad(indptr, indices, data, labels, x, float(cfg.reg_rho),
                     float(cfg.reg_sigma), out)
    return out


def component_grads(shards: Sequence[WorkerShard], cfg: LossConfig, x: np.ndarray) -> list[np.ndarray]:
    return [grad_component(sh, cfg, x) for sh in shards]


def full_gradient(shards: Sequence[WorkerShard], cfg: LossConfig, x: np.ndarray) -> np.ndarray:
    """Sum of component gradients in worker order."""
    total = np.zeros(shards[0].dim)
    for sh in shards:
        total += grad_component(sh, cfg, x)
    return total


def value(shards: Sequence[WorkerShard], cfg: LossConfig, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    total = 0.0
    xx = float(np.dot(x, x))
    for sh in shards:
        r = sh.features @ x - sh.labels
        total += float(np.dot(r, r)) / (2.0 * cfg.reg_rho) + 0.5 * cfg.reg_sigma * xx
    return total


def hessian_vec(shards: Sequence[WorkerShard], cfg: LossConfig, v: np.ndarray) -> np.ndarray:
    out = len(shards) * cfg.reg_sigma * v
    for sh in shards:
        out = out + sh.features.T @ (sh.features @ v) / cfg.reg_rho
    return out


def power_iteration(matvec: Callable[[np.ndarray], np.ndarray], dim: int, *,
                    tol: float = 1e-10, max_iter: int = 10_000, seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric PSD operator via the Rayleigh quotient."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = matvec(v)
        lam_new = float(np.dot(v, w))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            return lam_new
        lam = lam_new
    return lam


def _gram_max_eig(a: sparse.csr_matrix, seed: int) -> float:
    if a.shape[1] <= EXACT_MU_MAX_DIM:
        dense = a.toarray()
        return float(np.linalg.eigvalsh(dense.T @ dense)[-1])
    return power_iteration(lambda v: a.T @ (a @ v), a.shape[1], seed=seed)


def estimate_C(shards: Sequence[WorkerShard], cfg: LossConfig, probes: Sequence[np.ndarray]) -> float:
    """Largest component gradient norm over a set of probe points (an estimate, not a bound)."""
    best = 0.0
    for x in probes:
        for sh in shards:
            g = grad_component(sh, cfg, x)
            best = max(best, math.sqrt(float(np.dot(g, g))))
    return best


def curvature(shards: Sequence[WorkerShard], cfg: LossConfig, *, delta: Optional[float] = None,
              sparsity_source: str = DATA, probes: Optional[Sequence[np.ndarray]] = None,
              seed: int = 0) -> CurvatureReport:
    """Component Lipschitz constant, aggregate L_bar, strong convexity modulus and C.

    ``mu`` is ``m * reg_sigma + lambda_min(A^T A) / rho`` with the eigenvalue
    computed exactly when ``d <= 64`` and bounded below by zero otherwise.
    """
    m = len(shards)
    d = shards[0].dim
    L = max(_gram_max_eig(sh.features, seed) / cfg.reg_rho + cfg.reg_sigma for sh in shards)
    if delta is None:
        supports = shard_supports(shards, sparsity_source, cfg.reg_sigma)
        delta = conflict_degrees(supports).delta
    L_bar = lipschitz_bar(L, m, delta)
    mu = m * cfg.reg_sigma
    exact = d <= EXACT_MU_MAX_DIM
    if exact:
        a = sparse.vstack([sh.features for sh in shards]).toarray()
        lam_min = max(float(np.linalg.eigvalsh(a.T @ a)[0]), 0.0)
        mu += lam_min / cfg.reg_rho
    C = estimate_C(shards, cfg, probes) if probes is not None else None
    return CurvatureReport(L, L_bar, mu, C, float(delta), exact)


def solve_reference(shards: Sequence[WorkerShard], cfg: LossConfig, tol: float = 1e-12, *,
                    max_rounds: int = 8) -> Reference:
    """Minimizer of ``f`` by conjugate gradients on the normal equations.

    Solves ``(A^T A / rho + m reg I) x = A^T b / rho`` until the true relative
    residual is at most ``tol``, restarting CG on the residual when rounding
    stalls the recursion.
    """
    d = shards[0].dim
    op = spla.LinearOperator((d, d), matvec=lambda v: hessian_vec(shards, cfg, v), dtype=np.float64)
    rhs = np.zeros(d)
    for sh in shards:
        rhs += sh.features.T @ sh.labels / cfg.reg_rho
    rhs_norm = float(np.linalg.norm(rhs))
    x = np.zeros(d)
    rel = 0.0
    if rhs_norm > 0:
        for _ in range(max_rounds):
            r = rhs - op.matvec(x)
            rel = float(np.linalg.norm(r)) / rhs_norm
            if rel <= tol:
                break
            dx, _ = spla.cg(op, r, rtol=max(tol * rhs_norm / np.linalg.norm(r), 1e-15),
                            atol=0.0, maxiter=20 * d + 100)
            x = x + dx
        else:
            rel = float(np.linalg.norm(rhs - op.matvec(x))) / rhs_norm
            if rel > tol:
                raise ConvergenceError(f"CG stalled at relative residual {rel:.3e} > {tol:.1e}")
    grads = component_grads(shards, cfg, x)
    return Reference(x, grads, value(shards, cfg, x), rel)


def f_gap(ref: Reference, x: np.ndarray, grad: np.ndarray) -> float:
    """``f(x) - f*`` from the gradient at ``x``, free of cancellation.

    For a quadratic, ``f(x) - f(x*) = e^T (grad f(x) + grad f(x*)) / 2`` with
    ``e = x - x*``.
    """
    e = x - ref.x_star
    return 0.5 * float(np.dot(e, grad + ref.grad_star))
