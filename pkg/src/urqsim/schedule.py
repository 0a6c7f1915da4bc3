"""Bounded staleness models for incremental aggregated iterations."""
from __future__ import annotations

from dataclasses import asdict, dataclass

from . import rng as rngmod

ZERO = "zero"
CYCLIC = "cyclic"
RANDOM = "random"
KINDS = (ZERO, CYCLIC, RANDOM)


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class DelaySchedule:
    """How stale worker ``i``'s gradient is at master iteration ``k``.

    ``zero``: always fresh. ``cyclic``: worker ``i`` refreshes at iterations
    ``k = i (mod m)`` (round-robin), so ages reach ``m - 1``. ``random``: age
    drawn uniformly from ``[0, min(tau, k)]`` on a stream keyed by ``(seed, k, i)``.
    """

    kind: str = ZERO
    tau: int = 0
    m: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScheduleError(f"unknown delay kind {self.kind!r}")
        if self.tau < 0 or self.m < 1:
            raise ScheduleError("need tau >= 0 and m >= 1")
        if self.kind == CYCLIC and self.tau < self.m - 1:
            raise ScheduleError(f"cyclic delays reach m-1={self.m - 1} but tau={self.tau}")

    @property
    def effective_tau(self) -> int:
        """Largest staleness the schedule can actually produce."""
        if self.kind == ZERO:
            return 0
        if self.kind == CYCLIC:
            return self.m - 1
        return self.tau

    def to_dict(self) -> dict:
        return asdict(self)


def staleness(sched: DelaySchedule, k: int, i: int) -> int:
    if not 0 <= i < sched.m:
        raise ValueError(f"worker {i} outside [0, {sched.m})")
    if k < 0:
        raise ValueError("k must be nonnegative")
    if sched.kind == ZERO:
        return 0
    if sched.kind == CYCLIC:
        # no refresh yet: fall back to x_0
        return (k - i) % sched.m if k >= i else k
    hi = min(sched.tau, k)
    if hi == 0:
        return 0
    return int(rngmod.stream(sched.seed, rngmod.DELAY, k, i).integers(0, hi + 1))
