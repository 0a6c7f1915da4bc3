"""Step sizes, contraction factors and complexity predictions.

Each ``thm_*`` function evaluates one convergence guarantee for a given set of
problem constants and returns a :class:`TheoryReport`. Reports never raise on
inadmissible inputs; they come back with ``applicable=False`` and a reason.

Naming of the guarantees:

* ``qgd_sc`` / ``qgd_cvx``: centrally compressed gradient descent
* ``ciag_sc`` / ``ciag_nsc``: centrally compressed incremental aggregated gradient
* ``dqgd``: per-worker compressed gradient descent
* ``qiag``: per-worker compressed incremental aggregated gradient
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

SAFETY = 0.999


@dataclass(frozen=True)
class TheoryInputs:
    mu: float = 0.0
    L: Optional[float] = None
    L_bar: Optional[float] = None
    m: int = 1
    d: int = 1
    alpha: float = 1.0
    beta: Optional[float] = None
    c: Optional[float] = None
    B: Optional[int] = None
    sigma: float = 1.0
    tau: int = 0
    theta: float = 1.0
    C: Optional[float] = None
    grad_star_sq: Optional[float] = None
    eps0: Optional[float] = None
    eps: Optional[float] = None

    def __post_init__(self):
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if self.beta is None:
            object.__setattr__(self, "beta", self.alpha - 1.0)

    @property
    def log_ratio(self) -> Optional[float]:
        if self.eps0 is None or self.eps is None:
            return None
        if not (self.eps0 > 0 and self.eps > 0):
            raise ValueError("eps0 and eps must be positive")
        return math.log(self.eps0 / self.eps)


@dataclass
class TheoryReport:
    """Prediction of one guarantee.

    ``rate_factor`` is the per-iteration contraction of the bounded quantity
    (for the incremental schemes, the block factor raised to ``1/(1+2 tau)``);
    it is ``None`` for sublinear guarantees. ``gamma_max`` is the admissible
    supremum (equal to ``gamma`` for guarantees stated with an exact step).
    """

    name: str
    gamma: Optional[float] = None
    gamma_max: Optional[float] = None
    rate_factor: Optional[float] = None
    residual: Optional[float] = None
    k_star: Optional[float] = None
    B_star: Optional[float] = None
    applicable: bool = True
    reason: str = ""
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _log2_ceil(d: int) -> int:
    return (d - 1).bit_length()


def _bits(inp: TheoryInputs, iters: Optional[float]) -> Optional[float]:
    if iters is None or inp.B is None or inp.c is None:
        return None
    return (_log2_ceil(inp.d) + inp.B) * inp.c * iters


def _refuse(name: str, reason: str, **kw) -> TheoryReport:
    return TheoryReport(name, applicable=False, reason=reason, **kw)


def _require(inp: TheoryInputs, *names: str) -> Optional[str]:
    missing = [n for n in names if getattr(inp, n) is None]
    return f"missing {', '.join(missing)}" if missing else None


def thm_qgd_sc(inp: TheoryInputs) -> TheoryReport:
    """Compressed GD, strongly convex: ``E||x_k - x*||^2 <= rho^k ||x_0 - x*||^2``."""
    name = "qgd_sc"
    if (why := _require(inp, "L_bar")):
        return _refuse(name, why)
    if not inp.mu > 0:
        return _refuse(name, "not strongly convex (mu == 0)")
    mu, Lb, a = inp.mu, inp.L_bar, inp.alpha
    gamma = (1.0 / a) * (2.0 / (mu + Lb))
    rho = 1.0 - (1.0 / a) * 4.0 * mu * Lb / (mu + Lb) ** 2
    lr = inp.log_ratio
    k_star = a * (mu + Lb) ** 2 / (4.0 * mu * Lb) * lr if lr is not None else None
    return TheoryReport(name, gamma, gamma, rho, 0.0, k_star, _bits(inp, k_star),
                        extras={"quantity": "dist2"})


def thm_qgd_cvx(inp: TheoryInputs, T: Optional[int] = None) -> TheoryReport:
    """Compressed GD, convex: ``E f(x_T) - f* <= alpha L_bar ||x_0 - x*||^2 / (2 (T+1))``."""
    name = "qgd_cvx"
    if (why := _require(inp, "L_bar")):
        return _refuse(name, why)
    gamma = 1.0 / (inp.L_bar * inp.alpha)
    extras = {"quantity": "f_gap", "bound_coeff": inp.alpha * inp.L_bar / 2.0}
    if T is not None and inp.eps0 is not None:
        extras["bound"] = inp.alpha * inp.L_bar / (2.0 * (T + 1)) * inp.eps0
    t_star = None
    if inp.eps0 is not None and inp.eps is not None:
        t_star = inp.alpha * inp.L_bar / 2.0 * (inp.eps0 / inp.eps)
    return TheoryReport(name, gamma, gamma, None, 0.0, t_star, _bits(inp, t_star), extras=extras)


def ciag_gamma_bar(inp: TheoryInputs) -> float:
    Lb = inp.L_bar
    branch = 1.0 / (inp.alpha * Lb)
    if inp.tau == 0:
        return branch
    return min(inp.mu / (math.sqrt(inp.alpha) * inp.tau * Lb**2), branch)


def thm_ciag_sc(inp: TheoryInputs, gamma: Optional[float] = None,
                fraction: float = SAFETY) -> TheoryReport:
    """Compressed IAG, strongly convex: f-gap contracts by ``p + q`` every ``1 + 2 tau`` steps.

    With ``tau == 0`` the scheme is compressed GD and :func:`thm_qgd_sc` is returned.
    """
    name = "ciag_sc"
    if inp.tau == 0:
        rep = thm_qgd_sc(inp)
        rep.extras["delegated_from"] = name
        return rep
    if (why := _require(inp, "L_bar")):
        return _refuse(name, why)
    if not inp.mu > 0:
        return _refuse(name, "not strongly convex (mu == 0)")
    mu, Lb, a, tau = inp.mu, inp.L_bar, inp.alpha, inp.tau
    gbar = ciag_gamma_bar(inp)
    g = fraction * gbar if gamma is None else gamma
    if not 0 < g < gbar:
        return _refuse(name, f"gamma={g!r} outside (0, {gbar!r})", gamma=g, gamma_max=gbar)
    p = 1.0 - mu * g
    q = Lb**4 * g**3 * tau**2 * a / mu
    block = 1 + 2 * tau
    lr = inp.log_ratio
    k_star = None
    if lr is not None:
        k_star = block * mu / (g * (mu**2 - Lb**4 * g**2 * tau**2 * a)) * lr
    return TheoryReport(name, g, gbar, (p + q) ** (1.0 / block), 0.0, k_star, _bits(inp, k_star),
                        extras={"quantity": "f_gap", "p": p, "q": q, "block": block})


def ciag_nsc_gamma_bounds(inp: TheoryInputs) -> tuple[float, float]:
    """(printed bound, bound implied by the quadratic condition it is derived from)."""
    psi = (1.0 + inp.beta * (1.0 + inp.theta)) * inp.tau * (inp.tau + 1)
    root = math.sqrt(1.0 + 8.0 * psi)
    return 2.0 / (inp.L_bar * root), 2.0 / (inp.L_bar * (1.0 + root))


def thm_ciag_nsc(inp: TheoryInputs, K: Optional[int] = None, gamma: Optional[float] = None,
                 fraction: float = SAFETY) -> TheoryReport:
    """Compressed IAG, nonconvex-safe: ``min_k E||grad f(x_k)||^2 <= eps0 / (a (K+1))``."""
    name = "ciag_nsc"
    if (why := _require(inp, "L_bar")):
        return _refuse(name, why)
    gate = 1.0 / (2.0 * (1.0 + 1.0 / inp.theta))
    if not inp.beta < gate:
        return _refuse(name, f"beta={inp.beta!r} >= {gate!r}: quantizer too coarse")
    printed, derived = ciag_nsc_gamma_bounds(inp)
    g = fraction * min(printed, derived) if gamma is None else gamma
    if not 0 < g < printed:
        return _refuse(name, f"gamma={g!r} outside (0, {printed!r})", gamma=g, gamma_max=printed)
    a = g / 2.0 - g * inp.beta * (1.0 + 1.0 / inp.theta)
    extras = {"quantity": "min_grad_norm2", "a": a, "gamma_derived_max": derived}
    if K is not None and inp.eps0 is not None:
        extras["bound"] = (1.0 / a) / (K + 1) * inp.eps0
    return TheoryReport(name, g, printed, None, 0.0, extras=extras)


def thm_dqgd(inp: TheoryInputs, convex_only: bool = False, T: Optional[int] = None) -> TheoryReport:
    """Per-worker compressed GD with ``gamma = 1 / (L alpha (1 + theta) sigma)``.

    Strongly convex: ``E||x_k - x*||^2 <= (1 - mu gamma)^k ||x_0 - x*||^2 + residual``.
    Convex: ergodic f-gap bound ``eps0 / (gamma T) + grad_star_sq / (theta L)``.
    """
    name = "dqgd_cvx" if convex_only else "dqgd_sc"
    if (why := _require(inp, "L")):
        return _refuse(name, why)
    L = inp.L
    gamma = 1.0 / (L * inp.alpha * (1.0 + inp.theta) * inp.sigma)
    gs = inp.grad_star_sq
    if convex_only:
        extras = {"quantity": "ergodic_f_gap", "gamma_min": gamma}
        res = gs / (inp.theta * L) if gs is not None else None
        if T is not None and inp.eps0 is not None:
            extras["bound"] = inp.eps0 / (gamma * T) + (res if res is not None else math.nan)
        return TheoryReport(name, gamma, gamma, None, res, extras=extras)
    if not inp.mu > 0:
        return _refuse(name, "not strongly convex (mu == 0)", gamma=gamma, gamma_max=gamma)
    rate = 1.0 - inp.mu * gamma
    if not 0 < rate < 1:
        return _refuse(name, f"1 - mu*gamma = {rate!r} not in (0, 1)", gamma=gamma, gamma_max=gamma)
    res = gs / (inp.mu * inp.theta * L) if gs is not None else None
    return TheoryReport(name, gamma, gamma, rate, res, extras={"quantity": "dist2"})


def qiag_gamma_bar(inp: TheoryInputs) -> float:
    return 2.0 * inp.mu / (1.0 + inp.m * inp.sigma * inp.alpha * inp.L**2
                           * (2.0 * inp.L_bar**2 * inp.tau**2 + (1.0 + inp.theta)))


def qiag_nsc_gamma_max(inp: TheoryInputs) -> float:
    tau = inp.tau
    return 2.0 / (inp.L_bar * (1.0 + math.sqrt(1.0 + 8.0 * tau * (tau + 1))))


def thm_qiag(inp: TheoryInputs, bounded_grad: bool = False, gamma: Optional[float] = None,
             fraction: float = SAFETY, K: Optional[int] = None) -> TheoryReport:
    """Per-worker compressed IAG.

    Strongly convex: ``E||x_k - x*||^2 <= (p+q)^{k/(1+2 tau)} ||x_0 - x*||^2 + e/(1-p-q)``.
    Bounded gradients: ``min_k E||grad f||^2 <= (2/gamma) eps0 / (K+1) + 2 beta sigma m C^2``.
    """
    if bounded_grad:
        name = "qiag_nsc"
        if (why := _require(inp, "L_bar", "C")):
            return _refuse(name, why)
        gmax = qiag_nsc_gamma_max(inp)
        g = fraction * gmax if gamma is None else gamma
        if not 0 < g < gmax:
            return _refuse(name, f"gamma={g!r} outside (0, {gmax!r})", gamma=g, gamma_max=gmax)
        e = 2.0 * inp.beta * inp.sigma * inp.m * inp.C**2
        extras = {"quantity": "min_grad_norm2"}
        if K is not None and inp.eps0 is not None:
            extras["bound"] = (2.0 / g) / (K + 1) * inp.eps0 + e
        return TheoryReport(name, g, gmax, None, e, extras=extras)

    name = "qiag_sc"
    if (why := _require(inp, "L", "L_bar")):
        return _refuse(name, why)
    if not inp.mu > 0:
        return _refuse(name, "not strongly convex (mu == 0)")
    m, s, a, L, Lb, tau, th = inp.m, inp.sigma, inp.alpha, inp.L, inp.L_bar, inp.tau, inp.theta
    gbar = qiag_gamma_bar(inp)
    g = fraction * gbar if gamma is None else gamma
    if not 0 < g < gbar:
        return _refuse(name, f"gamma={g!r} outside (0, {gbar!r})", gamma=g, gamma_max=gbar)
    p = 1.0 - 2.0 * inp.mu * g + g**2
    q = 2.0 * m * s * a * L**2 * g**2 * Lb**2 * tau**2 + (1.0 + th) * g**2 * m * a * s * L**2
    # 1 - p - q written without the cancellation of forming p first
    gap = 2.0 * inp.mu * g - g**2 - q
    if not gap > 0:
        return _refuse(name, f"p + q = {p + q!r} >= 1", gamma=g, gamma_max=gbar)
    block = 1 + 2 * tau
    extras = {"quantity": "dist2", "p": p, "q": q, "block": block}
    res = None
    if inp.grad_star_sq is not None:
        e = (2.0 * m * a * g**2 * Lb**2 * tau**2 + (1.0 + 1.0 / th) * g**2 * s * a) * inp.grad_star_sq
        extras["e"] = e
        res = e / gap
    return TheoryReport(name, g, gbar, (p + q) ** (1.0 / block), res, extras=extras)


RULES = ("qgd_sc", "qgd_cvx", "ciag_sc", "ciag_nsc", "dqgd", "qiag_sc", "qiag_nsc")


def evaluate(rule: str, inp: TheoryInputs, fraction: Optional[float] = None,
             gamma: Optional[float] = None) -> TheoryReport:
    """Dispatch by rule name. ``fraction`` scales strict upper bounds (default 0.999)."""
    f = SAFETY if fraction is None else fraction
    if rule == "qgd_sc":
        return thm_qgd_sc(inp)
    if rule == "qgd_cvx":
        return thm_qgd_cvx(inp)
    if rule == "ciag_sc":
        return thm_ciag_sc(inp, gamma=gamma, fraction=f)
    if rule == "ciag_nsc":
        return thm_ciag_nsc(inp, gamma=gamma, fraction=f)
    if rule == "dqgd":
        return thm_dqgd(inp)
    if rule == "qiag_sc":
        return thm_qiag(inp, gamma=gamma, fraction=f)
    if rule == "qiag_nsc":
        return thm_qiag(inp, bounded_grad=True, gamma=gamma, fraction=f)
    raise ValueError(f"unknown step rule {rule!r}; expected one of {RULES}")


def with_eps(inp: TheoryInputs, eps0: float, eps: float) -> TheoryInputs:
    return replace(inp, eps0=eps0, eps=eps)
