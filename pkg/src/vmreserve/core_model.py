"""VM types, server profiles, feasible configurations and MaxReward.

Resource quantities are stored as fixed-point integers (``SCALE`` units per
abstract resource unit) so that feasibility checks are exact.  Rewards and
rates are kept as :class:`fractions.Fraction`.
"""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, reduce
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

SCALE = 10**6
DEFAULT_CONFIG_CAP = 5_000_000

Config = tuple[int, ...]
Number = int | float | str | Fraction


class ProfileError(ValueError):
    """Invalid VM type or server profile."""


class ConfigExplosionError(RuntimeError):
    """The feasible configuration set exceeds the enumeration cap."""

    def __init__(self, cap: int, lower_bound: int):
        self.cap = cap
        self.lower_bound = lower_bound
        super().__init__(
            f"configuration enumeration exceeded cap={cap}: "
            f"at least {lower_bound} feasible configurations"
        )


def to_fraction(x: Number) -> Fraction:
    # floats go through str() so 0.6 means 6/10, not its binary expansion
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


def to_units(x: Number) -> int:
    """Convert a resource quantity to fixed-point units (rounded to nearest)."""
    return round(to_fraction(x) * SCALE)


@dataclass(frozen=True)
class VMType:
    """A job class: resource demand, reward per unit time, traffic rates.

    ``demand`` is in fixed-point units (see :func:`to_units`).  ``priority``
    and ``size`` are only used by the trace experiments (preemption).
    """

    demand: tuple[int, ...]
    reward: Fraction
    arrival_rate: Fraction = Fraction(1)
    service_rate: Fraction = Fraction(1)
    name: str = ""
    priority: int = 0
    size: Fraction | None = None

    def __post_init__(self):
        if any(d < 0 for d in self.demand):
            raise ProfileError(f"type {self.name!r}: negative demand {self.demand}")
        if not any(d > 0 for d in self.demand):
            raise ProfileError(f"type {self.name!r}: demand must have a positive component")
        if self.reward < 0 or self.arrival_rate < 0:
            raise ProfileError(f"type {self.name!r}: reward and arrival rate must be >= 0")
        if self.service_rate <= 0:
            raise ProfileError(f"type {self.name!r}: service rate must be positive")

    @property
    def load(self) -> Fraction:
        return self.arrival_rate / self.service_rate

    @classmethod
    def make(cls, demand: Sequence[Number], reward: Number, arrival_rate: Number = 1,
             service_rate: Number = 1, **kw) -> "VMType":
        return cls(tuple(to_units(d) for d in demand), to_fraction(reward),
                   to_fraction(arrival_rate), to_fraction(service_rate), **kw)


def config_reward(k: Sequence[int], types: Sequence[VMType]) -> Fraction:
    """U(k): total reward rate of configuration ``k`` with all slots filled."""
    return sum((t.reward * c for t, c in zip(types, k)), Fraction(0))


def config_cmp(a: Sequence[int], b: Sequence[int], types: Sequence[VMType]) -> int:
    """Return 1 if a > b, -1 if b > a, 0 if identical, in the configuration order.

    Higher reward wins; equal rewards are decided at the first differing
    index, where the larger count wins.
    """
    if len(a) != len(b):
        raise ValueError("configurations of different length")
    ka = (config_reward(a, types), tuple(a))
    kb = (config_reward(b, types), tuple(b))
    return (ka > kb) - (ka < kb)


@dataclass(frozen=True, eq=False)
class CloudProfile:
    """Server capacity plus the VM types it hosts.

    ``feasible`` overrides the default additive feasibility rule; it must be
    monotone (closed under componentwise decrease).
    """

    capacity: tuple[int, ...]
    types: tuple[VMType, ...]
    feasible: Callable[[Sequence[int]], bool] | None = None
    config_cap: int = DEFAULT_CONFIG_CAP
    resource_names: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.types:
            raise ProfileError("profile needs at least one VM type")
        n = len(self.capacity)
        for t in self.types:
            if len(t.demand) != n:
                raise ProfileError(
                    f"type {t.name!r} has {len(t.demand)} resources, capacity has {n}")
        for j, t in enumerate(self.types):
            single = [0] * self.J
            single[j] = 1
            if not self.is_feasible(single):
                raise ProfileError(f"type {t.name or j!r} does not fit in an empty server")

    @property
    def J(self) -> int:
        return len(self.types)

    @property
    def n(self) -> int:
        return len(self.capacity)

    @cached_property
    def rho(self) -> tuple[Fraction, ...]:
        return tuple(t.load for t in self.types)

    @cached_property
    def _reward_scale(self) -> int:
        return reduce(math.lcm, (t.reward.denominator for t in self.types), 1)

    @cached_property
    def int_rewards(self) -> tuple[int, ...]:
        """Rewards scaled to integers; U(k) comparisons are exact on these."""
        s = self._reward_scale
        return tuple(int(t.reward * s) for t in self.types)

    def reward_of(self, k: Sequence[int]) -> Fraction:
        return Fraction(self.int_key(k)[0], self._reward_scale)

    def int_key(self, k: Sequence[int]) -> tuple:
        """Sort key realising the configuration order (larger is better)."""
        return (sum(u * c for u, c in zip(self.int_rewards, k)), tuple(k))

    def is_feasible(self, counts: Sequence[int]) -> bool:
        if len(counts) != self.J:
            raise ValueError(f"expected {self.J} counts, got {len(counts)}")
        if any(c < 0 for c in counts):
            raise ValueError("counts must be non-negative")
        if self.feasible is not None:
            return bool(self.feasible(counts))
        for d, cap in enumerate(self.capacity):
            if sum(c * t.demand[d] for c, t in zip(counts, self.types)) > cap:
                return False
        return True

    # -- configuration set ------------------------------------------------

    @cached_property
    def _enumeration(self) -> tuple[list[Config], list[Config]]:
        if self.feasible is None:
            return _enumerate_additive(self)
        return _enumerate_predicate(self)

    @cached_property
    def config_set(self) -> list[Config]:
        """All feasible configurations, best first in the configuration order."""
        configs = list(self._enumeration[0])
        configs.sort(key=self.int_key, reverse=True)
        return configs

    @cached_property
    def maximal_configs(self) -> list[Config]:
        """Feasible configurations that admit no further job, best first."""
        configs = list(self._enumeration[1])
        configs.sort(key=self.int_key, reverse=True)
        return configs

    @property
    def c(self) -> int:
        return len(self.config_set)

    @cached_property
    def kmax(self) -> int:
        return max(sum(k) for k in self.maximal_configs)

    @cached_property
    def zero(self) -> Config:
        return (0,) * self.J

    # -- MaxReward ----------------------------------------------------------

    @cached_property
    def max_reward_table(self) -> dict[int, Config]:
        """MaxReward for every subset of types, keyed by bitmask (J <= 20)."""
        if self.J > 20:
            raise ProfileError("max_reward_table is only precomputed for J <= 20")
        J = self.J
        best: list[Config] = [self.zero] * (1 << J)
        best_key = [self.int_key(self.zero)] * (1 << J)
        # best configuration with exactly the given support
        for k in self._enumeration[0]:
            mask = 0
            for j, c in enumerate(k):
                if c:
                    mask |= 1 << j
            key = self.int_key(k)
            if key > best_key[mask]:
                best_key[mask] = key
                best[mask] = k
        # propagate to supersets: best[S] = max over submasks
        for j in range(J):
            bit = 1 << j
            for S in range(1 << J):
                if S & bit and best_key[S ^ bit] > best_key[S]:
                    best_key[S] = best_key[S ^ bit]
                    best[S] = best[S ^ bit]
        return dict(enumerate(best))

    def max_reward_mask(self, mask: int) -> Config:
        if self.J <= 20:
            return self.max_reward_table[mask]
        return max((k for k in self.config_set
                    if all(c == 0 or mask >> j & 1 for j, c in enumerate(k))),
                   key=self.int_key)

    @cached_property
    def greedy_set(self) -> list[Config]:
        """Every configuration MaxReward can return, plus zero, best first."""
        if self.J <= 20:
            found = set(self.max_reward_table.values())
        else:
            found = {self.max_reward_mask(m) for m in range(1 << self.J)}
        found.add(self.zero)
        return sorted(found, key=self.int_key, reverse=True)

    @cached_property
    def greedy_index(self) -> dict[Config, int]:
        """Map greedy configuration -> 1-based position in :attr:`greedy_set`."""
        return {k: i + 1 for i, k in enumerate(self.greedy_set)}

    def scaled(self, alpha: Number) -> tuple[Fraction, ...]:
        a = to_fraction(alpha)
        return tuple(a * r for r in self.rho)


def enumerate_configs(profile: CloudProfile) -> list[Config]:
    return profile.config_set


def is_feasible(counts: Sequence[int], profile: CloudProfile) -> bool:
    return profile.is_feasible(counts)


def max_reward(subset: Iterable[int], profile: CloudProfile) -> Config:
    """MaxReward over configurations using only the (0-based) types in ``subset``."""
    mask = 0
    for j in subset:
        if not 0 <= j < profile.J:
            raise ValueError(f"type index {j} out of range")
        mask |= 1 << j
    return profile.max_reward_mask(mask)


def _enumerate_additive(profile: CloudProfile) -> tuple[list[Config], list[Config]]:
    types = profile.types
    J, n = profile.J, profile.n
    demands = [t.demand for t in types]
    cap = profile.config_cap
    configs: list[Config] = []
    maximal: list[Config] = []
    counts = [0] * J

    def rec(j: int, rem: list[int]):
        if j == J:
            configs.append(tuple(counts))
            if len(configs) > cap:
                raise ConfigExplosionError(cap, len(configs))
            if all(any(rem[d] < dem[d] for d in range(n)) for dem in demands):
                maximal.append(tuple(counts))
            return
        dem = demands[j]
        m = min(rem[d] // dem[d] for d in range(n) if dem[d] > 0)
        for c in range(m + 1):
            counts[j] = c
            rec(j + 1, [rem[d] - c * dem[d] for d in range(n)])
        counts[j] = 0

    rec(0, list(profile.capacity))
    return configs, maximal


def _enumerate_predicate(profile: CloudProfile) -> tuple[list[Config], list[Config]]:
    J = profile.J
    cap = profile.config_cap
    configs: list[Config] = []
    counts = [0] * J
    fits = profile.feasible

    def rec(j: int):
        if j == J:
            configs.append(tuple(counts))
            if len(configs) > cap:
                raise ConfigExplosionError(cap, len(configs))
            return
        while True:
            rec(j + 1)
            counts[j] += 1
            if not fits(counts):  # monotone: nothing larger fits either
                break
        counts[j] = 0

    rec(0)
    present = set(configs)
    maximal = []
    for k in configs:
        up = list(k)
        ok = True
        for j in range(J):
            up[j] += 1
            if tuple(up) in present:
                ok = False
            up[j] -= 1
            if not ok:
                break
        if ok:
            maximal.append(k)
    return configs, maximal


# -- profile files ------------------------------------------------------------

def profile_from_dict(data: Mapping) -> CloudProfile:
    """Build a profile from the JSON/TOML schema.

    ``capacity`` maps resource name -> amount; each entry of ``types`` gives
    the same resource names plus ``reward`` (or a top-level
    ``reward_per_resource`` map), ``lambda`` and ``mu``.
    """
    try:
        cap = data["capacity"]
        names = tuple(cap)
        per_res = data.get("reward_per_resource")
        types = []
        for i, spec in enumerate(data["types"]):
            missing = [r for r in names if r not in spec]
            if missing:
                raise ProfileError(f"type #{i} is missing resources {missing}")
            if "reward" in spec:
                reward = to_fraction(spec["reward"])
            elif per_res is not None:
                reward = sum((to_fraction(per_res[r]) * to_fraction(spec[r]) for r in names),
                             Fraction(0))
            else:
                raise ProfileError(f"type #{i} has no reward")
            size = spec.get("size")
            types.append(VMType.make(
                [spec[r] for r in names], reward,
                spec.get("lambda", 1), spec.get("mu", 1),
                name=str(spec.get("name", f"t{i + 1}")),
                priority=int(spec.get("priority", 0)),
                size=None if size is None else to_fraction(size),
            ))
        return CloudProfile(tuple(to_units(cap[r]) for r in names), tuple(types),
                            config_cap=int(data.get("config_cap", DEFAULT_CONFIG_CAP)),
                            resource_names=names)
    except (KeyError, TypeError) as e:
        raise ProfileError(f"malformed profile: {e!r}") from e


def load_profile(path: str | Path) -> CloudProfile:
    path = Path(path)
    if path.suffix == ".toml":
        with open(path, "rb") as f:
            data = tomllib.load(f)
    else:
        data = json.loads(path.read_text())
    return profile_from_dict(data)


def profile_to_dict(profile: CloudProfile) -> dict:
    names = profile.resource_names or tuple(f"r{d + 1}" for d in range(profile.n))

    def num(units: int):
        v = Fraction(units, SCALE)
        return int(v) if v.denominator == 1 else float(v)

    def rat(x: Fraction):
        return int(x) if x.denominator == 1 else str(x)

    return {
        "capacity": {r: num(c) for r, c in zip(names, profile.capacity)},
        "types": [
            {"name": t.name, **{r: num(d) for r, d in zip(names, t.demand)},
             "reward": rat(t.reward), "lambda": rat(t.arrival_rate), "mu": rat(t.service_rate),
             "priority": t.priority, **({"size": rat(t.size)} if t.size is not None else {})}
            for t in profile.types
        ],
    }
