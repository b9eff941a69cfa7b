"""Map a cache match score to the stage boundaries (K1, K2)."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .config import SchedulerParams


@dataclass(frozen=True)
class StagePlan:
    k1: int
    k2: int
    n: int
    m: float
    mode: str = "chorus"

    def __post_init__(self):
        if not 0 <= self.k1 <= self.k2 <= self.n:
            raise ValueError(f"invalid stage plan K1={self.k1}, K2={self.k2}, N={self.n}")
        if self.mode == "baseline" and (self.k1 or self.k2):
            raise ValueError("baseline plans have K1 = K2 = 0")
        if self.mode == "nirvana" and self.k1 != self.k2:
            raise ValueError("nirvana plans have K2 = K1")

    @property
    def reuse_steps(self) -> range:
        return range(0, self.k1)

    @property
    def srd_steps(self) -> range:
        return range(self.k1, self.k2)

    @property
    def full_steps(self) -> range:
        return range(self.k2, self.n)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def match_strength(m: float, tau: float) -> float:
    """Match score rescaled so tau maps to 0 and a perfect match to 1."""
    if m < tau:
        return 0.0
    if tau >= 1.0:
        return 1.0
    return min(1.0, max(0.0, (m - tau) / (1.0 - tau)))


def plan_stages(m: float, n: int, params: SchedulerParams, mode: str = "chorus") -> StagePlan:
    if n < 1:
        raise ValueError("N must be >= 1")
    if mode == "baseline" or not m >= params.tau:
        return StagePlan(0, 0, n, m, mode)
    s = match_strength(m, params.tau)
    ceiling = max(0, n - params.stage3_min)
    k1 = min(_round_half_up(s * params.k1_frac * n), ceiling)
    k2 = min(k1 + _round_half_up(s * (params.k2_frac - params.k1_frac) * n), ceiling)
    k2 = max(k1, k2)
    if mode == "nirvana":
        k2 = k1
    return StagePlan(k1, k2, n, m, mode)
