"""Diagnostics read off a simulator state: effective servers, q-process, Lyapunov value."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import TYPE_CHECKING

from .core_model import Config
from .greedy_planner import GpaResult, GreedyPlan, global_greedy

if TYPE_CHECKING:  # pragma: no cover
    from .sim_engine import SystemState


def effective_counts(state: "SystemState", last_gpa: GpaResult) -> dict[Config, int]:
    """X^(e)_k = min(X_k, X_hat_k) on the greedy configuration set, 0 elsewhere."""
    target = last_gpa.assignment()
    out = {}
    for k in state.profile.greedy_set:
        out[k] = min(state.count(k), target.get(k, 0))
    return out


@dataclass(frozen=True)
class QSnapshot:
    values: tuple[tuple[int, ...], ...]  # rows follow the greedy configuration set
    max_value: int
    min_value: int


def q_values(state: "SystemState", last_gpa: GpaResult, g: int) -> QSnapshot:
    """q[i][j] = sum_{l<=i} X^(e)(kbar_l) kbar_l[j] - Y_j - g."""
    eff = effective_counts(state, last_gpa)
    J = state.J
    acc = [0] * J
    rows = []
    for k in state.profile.greedy_set:
        x = eff[k]
        if x:
            for j in range(J):
                acc[j] += x * k[j]
        rows.append(tuple(acc[j] - state.Y[j] - g for j in range(J)))
    flat = [v for r in rows for v in r]
    return QSnapshot(tuple(rows), max(flat), min(flat))


def check_after_cra(state: "SystemState", last_gpa: GpaResult, g: int) -> None:
    """Invariants that hold right after a classification pass."""
    from .sim_engine import InvariantViolation

    snap = q_values(state, last_gpa, g)
    for i in range(1, len(snap.values)):
        if any(a < b for a, b in zip(snap.values[i], snap.values[i - 1])):
            raise InvariantViolation(f"q not monotone at greedy index {i + 1}", state.dump())
    kmax = state.profile.kmax
    if snap.max_value >= kmax:
        raise InvariantViolation(f"max q = {snap.max_value} >= Kmax = {kmax}", state.dump())
    cg = len(state.profile.greedy_set)
    if len(state.reject) > cg:
        raise InvariantViolation(f"Reject Group has {len(state.reject)} > {cg} servers",
                                 state.dump())


@dataclass(frozen=True)
class LyapunovConfig:
    """Weights of V: Z_i = xi^(gbar - i) * Z_base for i <= gbar, plus Z_big."""

    xi: Fraction
    Z_base: Fraction
    Z: tuple[Fraction, ...]
    Z_big: Fraction

    @classmethod
    def for_plan(cls, plan: GreedyPlan, kmax: int, xi=None, Z_base=1, big_factor=5
                 ) -> "LyapunovConfig":
        xi = Fraction(2 * kmax + 2) if xi is None else Fraction(xi)
        if xi <= 2 * kmax + 1:
            raise ValueError("xi must exceed 2*Kmax + 1")
        Z_base = Fraction(Z_base)
        if Z_base <= 0:
            raise ValueError("Z_base must be positive")
        gbar = plan.g_bar
        Z = tuple(xi ** (gbar - i) * Z_base for i in range(1, gbar + 1))
        big = Fraction(big_factor) * Z[0]
        if big <= 4 * Z[0]:
            raise ValueError("Z_big must exceed 4 * Z_1")
        return cls(xi, Z_base, Z, big)


def lyapunov(state: "SystemState", plan: GreedyPlan, cfg: LyapunovConfig,
             last_gpa: GpaResult) -> float:
    """V = sum_{i<=gbar} Z_i (x_g(kbar_i) - X^(e)(kbar_i)/L) + Z * sum_j (Y_j/L - rho_j)^+."""
    eff = effective_counts(state, last_gpa)
    L = state.L
    gs = state.profile.greedy_set
    v = 0.0
    for i, z in enumerate(cfg.Z):
        k = gs[i]
        v += float(z) * (float(plan.x_of(k)) - eff[k] / L)
    over = sum(max(0.0, y / L - float(r)) for y, r in zip(state.Y, plan.rho))
    return v + float(cfg.Z_big) * over


def sample_diagnostics(state: "SystemState", policy, rho_known: bool = True
                       ) -> tuple[float, float]:
    """(max q, V) for the time series; NaN when the policy keeps no GPA target."""
    gp = getattr(policy, "last_gpa", None)
    if gp is None:
        return math.nan, math.nan
    q = float(q_values(state, gp, getattr(policy, "g", 0)).max_value)
    if not rho_known:
        return q, math.nan
    cache = getattr(policy, "_lyap_cache", None)
    if cache is None or cache[0] is not state.profile:
        plan = global_greedy(state.profile.rho, state.profile)
        cache = (state.profile, plan, LyapunovConfig.for_plan(plan, state.profile.kmax))
        policy._lyap_cache = cache
    return q, lyapunov(state, cache[1], cache[2], gp)
