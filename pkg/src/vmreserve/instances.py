"""Ready-made profiles: the small illustrative one, the worst-case VM mix,
and the random VM-collection generator built from the instance table."""

from __future__ import annotations

import random
from fractions import Fraction
from typing import Sequence

from .core_model import CloudProfile, Number, VMType, to_fraction, to_units

CPU_REWARD = 8  # reward per vCPU per unit time
MEM_REWARD = 1  # reward per GB per unit time
SERVER = (80, 640)

SMALL_VCPU = (2, 4, 8)
LARGE_VCPU = (32, 64)
GB_PER_VCPU = (1, 2, 4, 8, 16)

WORST_CASE_TYPES = ((1, 1), (4, 16), (2, 32), (32, 256))
WORST_CASE_RHO = (Fraction(2), Fraction(1, 2), Fraction(4, 3), Fraction(1))


def vm_profile(dims: Sequence[tuple[Number, Number]], rho: Sequence[Number] | None = None,
               capacity: tuple[Number, Number] = SERVER, names: Sequence[str] | None = None
               ) -> CloudProfile:
    """Two-resource (vCPU, GB) profile priced at 8 per vCPU plus 1 per GB.

    ``rho`` becomes the arrival rates (service rates are 1).
    """
    rho = [1] * len(dims) if rho is None else rho
    types = []
    for i, ((cpu, mem), r) in enumerate(zip(dims, rho)):
        u = CPU_REWARD * to_fraction(cpu) + MEM_REWARD * to_fraction(mem)
        name = names[i] if names else f"{cpu}x{mem}"
        types.append(VMType.make((cpu, mem), u, arrival_rate=r, name=name))
    return CloudProfile(tuple(to_units(c) for c in capacity), tuple(types),
                        resource_names=("cpu", "mem"))


def worst_case_profile(capacity: tuple[Number, Number] = SERVER, alpha: Number = 1
                       ) -> CloudProfile:
    a = to_fraction(alpha)
    return vm_profile(WORST_CASE_TYPES, [a * r for r in WORST_CASE_RHO], capacity)


def intro_profile() -> CloudProfile:
    """Three types on a unit server; (0.7,0.1) and (0.1,0.7) pack together."""
    types = (VMType.make((0.6, 0.6), 4, name="a"), VMType.make((0.7, 0.1), 3, name="b"),
             VMType.make((0.1, 0.7), 3, name="c"))
    return CloudProfile((to_units(1), to_units(1)), types, resource_names=("cpu", "mem"))


def random_vm_collection(rng: random.Random, capacity: tuple[int, int] = SERVER,
                         n_small: int = 3, n_large: int = 3) -> list[tuple[int, int]]:
    """Distinct (vCPU, GB) pairs: ``n_small`` small and ``n_large`` large ones."""
    def draw(vcpus, n):
        pool = [(c, c * g) for c in vcpus for g in GB_PER_VCPU
                if c <= capacity[0] and c * g <= capacity[1]]
        return rng.sample(pool, n)
    return draw(SMALL_VCPU, n_small) + draw(LARGE_VCPU, n_large)


def random_profile(seed: int, capacity: tuple[int, int] = SERVER) -> CloudProfile:
    """Random collection with rho_j uniform on {0.20, 0.21, ..., 2.00}."""
    rng = random.Random(seed)
    dims = random_vm_collection(rng, capacity)
    rho = [Fraction(rng.randint(20, 200), 100) for _ in dims]
    prof = vm_profile(dims, rho, capacity)
    prof.meta["seed"] = seed
    return prof
