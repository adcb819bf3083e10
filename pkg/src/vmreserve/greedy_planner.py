"""Greedy packing: GPA, the global greedy assignment and related probes."""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .core_model import CloudProfile, Config, Number, VMType, to_fraction

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GpaResult:
    """Output of one GPA call: ``configs[i]`` gets ``counts[i]`` servers.

    ``order[i]`` is the type removed from the candidate set in step i.
    """

    configs: tuple[Config, ...]
    counts: tuple[int, ...]
    order: tuple[int, ...]

    def assignment(self) -> dict[Config, int]:
        return {k: x for k, x in zip(self.configs, self.counts) if x > 0}

    def get(self, k: Config) -> int:
        for kk, x in zip(self.configs, self.counts):
            if kk == k:
                return x
        return 0


def _ceil_div(a: int | Fraction, b: int) -> int:
    return -((-a) // b)


def gpa(reference: Sequence[int | Fraction], L: int, profile: CloudProfile) -> GpaResult:
    """Greedy Placement Algorithm for reference workload ``reference`` and ``L`` servers.

    Ties in the arg-min are broken by the smallest type index.
    """
    if L < 0:
        raise ValueError("L must be non-negative")
    J = profile.J
    if len(reference) != J:
        raise ValueError(f"reference has {len(reference)} entries, expected {J}")
    r = list(reference)
    N = L
    mask = (1 << J) - 1
    configs, counts, order = [], [], []
    while mask:
        k = profile.max_reward_mask(mask)
        best_j, best_v = -1, None
        for j in range(J):
            if k[j] > 0:
                # jobs left can already be negative after an overshoot
                v = _ceil_div(max(r[j], 0), k[j])
                if best_v is None or v < best_v:
                    best_j, best_v = j, v
        x = min(best_v, N)
        for j in range(J):
            if k[j]:
                r[j] -= x * k[j]
        N -= x
        configs.append(k)
        counts.append(x)
        order.append(best_j)
        mask &= ~(1 << best_j)
    return GpaResult(tuple(configs), tuple(counts), tuple(order))


@dataclass(frozen=True)
class GreedyPlan:
    """Global greedy assignment of a normalized workload.

    ``configs`` holds k^(1)..k^(J) followed by the zero configuration;
    ``i_g`` is 1-based; ``x_g`` only has strictly positive entries.
    """

    rho: tuple[Fraction, ...]
    sigma: tuple[int, ...]
    configs: tuple[Config, ...]
    z: tuple[Fraction, ...]
    i_g: int
    x_g: dict[Config, Fraction]
    greedy_set: tuple[Config, ...]
    greedy_pos: dict[Config, int] = field(repr=False)
    condition2: bool = True

    @property
    def g_bar(self) -> int:
        """Position of k^(i_g) inside the greedy configuration set (1-based)."""
        return self.greedy_pos[self.configs[self.i_g - 1]]

    def x_of(self, k: Config) -> Fraction:
        return self.x_g.get(k, Fraction(0))


def _to_rho(rho: Sequence[Number], J: int) -> tuple[Fraction, ...]:
    if len(rho) != J:
        raise ValueError(f"rho has {len(rho)} entries, expected {J}")
    out = tuple(to_fraction(r) for r in rho)
    if any(r < 0 for r in out):
        raise ValueError("rho must be non-negative")
    return out


def global_greedy(rho: Sequence[Number], profile: CloudProfile) -> GreedyPlan:
    """Compute the permutation, loads and global greedy fractions for ``rho``."""
    J = profile.J
    rho = _to_rho(rho, J)
    mask = (1 << J) - 1
    configs: list[Config] = []
    sigma: list[int] = []
    z: list[Fraction] = []
    # residual[i] = rho_i - sum_l z^(l) k^(l)_i
    residual = list(rho)
    while mask:
        k = profile.max_reward_mask(mask)
        best_i, best_d = -1, None
        for i in range(J):
            if k[i] > 0:
                d = residual[i] / k[i]
                if best_d is None or d < best_d:
                    best_i, best_d = i, d
        assert best_d is not None and best_d >= 0, "negative greedy load"
        for i in range(J):
            if k[i]:
                residual[i] -= best_d * k[i]
        configs.append(k)
        sigma.append(best_i)
        z.append(best_d)
        mask &= ~(1 << best_i)
    configs.append(profile.zero)

    total = Fraction(0)
    i_g = J + 1
    for i, zi in enumerate(z):
        if total + zi >= 1:
            i_g = i + 1
            break
        total += zi
    x_g: dict[Config, Fraction] = {}
    for i in range(i_g - 1):
        if z[i] > 0:
            x_g[configs[i]] = z[i]
    x_g[configs[i_g - 1]] = 1 - total

    ok = _check_condition2(rho, sigma, configs, z)
    if not ok:
        log.warning("greedy permutation violates the tie condition for rho=%s", rho)
    gs = tuple(profile.greedy_set)
    return GreedyPlan(rho, tuple(sigma), tuple(configs), tuple(z), i_g, x_g,
                      gs, profile.greedy_index, ok)


def _check_condition2(rho, sigma, configs, z) -> bool:
    J = len(sigma)
    for j in range(J):
        for jp in range(j + 1, J):
            t = sigma[jp]
            if configs[j][t] == 0:
                continue  # not a candidate at step j, so no tie to break
            filled = sum((configs[l][t] * z[l] for l in range(j + 1)), Fraction(0))
            if filled == rho[t] and not sigma[j] < t:
                return False
    return True


def greedy_reward(plan: GreedyPlan, profile: CloudProfile) -> Fraction:
    """Normalized reward U^(g) of a global greedy plan."""
    return sum((profile.reward_of(k) * x for k, x in plan.x_g.items()), Fraction(0))


def greedy_value(rho: Sequence[Number], profile: CloudProfile) -> Fraction:
    return greedy_reward(global_greedy(rho, profile), profile)


# -- adversarial family -------------------------------------------------------

def gen_adversarial(J: int, N: int, u: Number = 1, *, literal: bool = False
                    ) -> tuple[CloudProfile, tuple[Fraction, ...]]:
    """Instance family on which the global greedy ratio tends to 1 - (1-1/J)^J.

    Types 1..J-1 fit J times alone, type J fits N+1 times alone, and one of
    each type 1..J-1 packs with N of type J.  With ``literal=False`` the
    feasible set is exactly the downward closure of those three families.
    ``literal=True`` keeps the plain additive J+1 resource layout, which also
    admits mixed configurations such as (J-1, 0, ..., N) and does not
    produce the intended greedy structure for J >= 3.
    """
    if J < 2 or N < 1:
        raise ValueError("need J >= 2 and N >= 1")
    u = to_fraction(u)
    # every resource share below is an integer multiple of 1/C
    C = J * N * (N + 1)
    base = Fraction(J - 1, J)
    types = []
    for i in range(J - 1):
        dem = [0] * (J + 1)
        dem[i] = C // J
        dem[J] = C // J
        types.append(VMType(tuple(dem), Fraction(1, J) * base**i * u, Fraction(1),
                            name=f"a{i + 1}"))
    dem = [0] * (J + 1)
    dem[J - 1] = C // (N + 1)
    dem[J] = C // (J * N)
    types.append(VMType(tuple(dem), Fraction(1, N + 1) * base ** (J - 1) * u, Fraction(N),
                        name=f"a{J}"))
    rho = tuple([Fraction(1)] * (J - 1) + [Fraction(N)])

    feasible = None
    if not literal:
        mixed = (1,) * (J - 1) + (N,)

        def feasible(k, J=J, N=N, mixed=mixed):
            if all(a <= b for a, b in zip(k, mixed)):
                return True
            nz = [j for j, c in enumerate(k) if c]
            if len(nz) != 1:
                return False
            j = nz[0]
            return k[j] <= (J if j < J - 1 else N + 1)

    prof = CloudProfile((C,) * (J + 1), tuple(types), feasible=feasible,
                        meta={"family": "adversarial", "J": J, "N": N, "literal": literal})
    return prof, rho


def adversarial_closed_forms(J: int, N: int, u: Number = 1) -> tuple[Fraction, Fraction]:
    """(U^(g)(J,N), U*(J,N)) from the closed forms of the construction."""
    u = to_fraction(u)
    b = Fraction(J - 1, J)
    ug = (1 - b**J) * u
    us = (1 - b ** (J - 1) + Fraction(N, N + 1) * b ** (J - 1)) * u
    return ug, us


# -- monotone greedy probe ----------------------------------------------------

def check_monotone_greedy(profile: CloudProfile, samples: int, seed: int = 0,
                          rho_max: Number = 2, tol: float = 1e-9) -> dict:
    """Sample pairs rho1 >= rho2 and report any with U^(g)[rho1] < U^(g)[rho2].

    This is a probe only: zero violations does not prove the property.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = random.Random(seed)
    hi = to_fraction(rho_max)
    grid = 1000
    violations = []
    for _ in range(samples):
        rho2 = tuple(hi * Fraction(rng.randint(0, grid), grid) for _ in range(profile.J))
        rho1 = tuple(r + hi * Fraction(rng.randint(0, grid), grid) * rng.randint(0, 1)
                     for r in rho2)
        u1 = greedy_value(rho1, profile)
        u2 = greedy_value(rho2, profile)
        if float(u1) < float(u2) - tol:
            violations.append({"rho1": [str(r) for r in rho1], "rho2": [str(r) for r in rho2],
                               "U1": str(u1), "U2": str(u2)})
    return {"samples": samples, "seed": seed, "violations": violations}
