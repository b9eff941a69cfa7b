"""Per-step amplification factors for differential-token keys and the cross-attention output."""
from __future__ import annotations

from dataclasses import dataclass

from .config import TgaaParams
from .scheduler import StagePlan, match_strength


@dataclass(frozen=True)
class StageProgress:
    t: int
    plan: StagePlan
    m: float
    tau: float


def _progress(p: StageProgress) -> float:
    u = (p.t - p.plan.k1) / max(1, p.plan.k2 - p.plan.k1)
    return min(1.0, max(0.0, u))


def _factor(amplitude: float, p: StageProgress) -> float:
    if amplitude == 0:
        return 1.0
    u = _progress(p)
    s = match_strength(p.m, p.tau)
    return max(1.0, 1.0 + amplitude * (1.0 - u) * (1.0 - s))


def gamma_k(progress: StageProgress, params: TgaaParams) -> float:
    """Key factor: decays with progress through [K1, K2) and with match strength; never below 1."""
    if not params.enabled_key:
        return 1.0
    return _factor(params.a_k, progress)


def gamma_o(progress: StageProgress, params: TgaaParams) -> float:
    if not params.enabled_output:
        return 1.0
    return _factor(params.a_o, progress)


def schedule(plan: StagePlan, m: float, tau: float, params: TgaaParams) -> dict[int, tuple[float, float]]:
    """Factor table ``{t: (gamma_k, gamma_o)}`` for every step t in [K1, N)."""
    table = {}
    for t in range(plan.k1, plan.n):
        if m < tau or t >= plan.k2:
            table[t] = (1.0, 1.0)
            continue
        p = StageProgress(t, plan, m, tau)
        table[t] = (gamma_k(p, params), gamma_o(p, params))
    return table
