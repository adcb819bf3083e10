import json
import random
from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vmreserve.core_model import CloudProfile, VMType, to_units
from vmreserve.greedy_planner import (adversarial_closed_forms, check_monotone_greedy,
                                      gen_adversarial, global_greedy, gpa, greedy_reward,
                                      greedy_value)
from vmreserve.instances import random_profile
from vmreserve.lp_bounds import optimal_normalized

DATA = Path(__file__).parent / "data"


def one_type(cap=1, per=1):
    return CloudProfile((to_units(cap), to_units(cap)), (VMType.make((per, per), 1),))


def gpa_oracle(reference, L, profile):
    """Direct transcription of the placement loop, without the table lookups."""
    J = profile.J
    left = set(range(J))
    r = list(reference)
    N = L
    out = {}
    while left:
        cands = [k for k in profile.config_set if all(c == 0 or j in left for j, c in enumerate(k))]
        k = max(cands, key=profile.int_key)
        vals = {j: -(-max(r[j], 0) // k[j]) for j in left if k[j] > 0}
        jstar = min(vals, key=lambda j: (vals[j], j))
        x = min(vals[jstar], N)
        for j in range(J):
            r[j] -= x * k[j]
        N -= x
        if x:
            out[k] = out.get(k, 0) + x
        left.discard(jstar)
    return out


# -- GPA ---------------------------------------------------------------------------

def test_gpa_zero_reference(worst):
    res = gpa((0, 0, 0, 0), 50, worst)
    assert res.assignment() == {}
    assert all(x == 0 for x in res.counts)


def test_gpa_single_type_hand_trace():
    res = gpa((5,), 2, one_type())
    assert res.assignment() == {(1,): 2}


def test_gpa_support_and_budget(worst):
    res = gpa((300, 30, 200, 50), 100, worst)
    assert len(res.assignment()) <= worst.J
    assert sum(res.counts) <= 100
    assert res.configs[0] == (16, 3, 10, 1)


def test_gpa_rejects_negative_L(worst):
    with pytest.raises(ValueError):
        gpa((0, 0, 0, 0), -1, worst)


@pytest.mark.parametrize("seed", range(8))
def test_gpa_matches_oracle(seed, worst):
    rng = random.Random(seed)
    ref = [rng.randint(0, 400) for _ in range(4)]
    L = rng.randint(1, 200)
    assert gpa(ref, L, worst).assignment() == gpa_oracle(ref, L, worst)


# -- global greedy ---------------------------------------------------------------------

def test_global_greedy_zero_load(worst):
    plan = global_greedy((0, 0, 0, 0), worst)
    assert all(z == 0 for z in plan.z)
    assert plan.i_g == worst.J + 1
    assert plan.x_g == {worst.zero: 1}
    assert greedy_reward(plan, worst) == 0


def test_global_greedy_worst_case(worst):
    # exact plan for rho = (2, 1/2, 4/3, 1) on the (80, 640) server
    plan = global_greedy(worst.rho, worst)
    assert plan.sigma == (0, 2, 1, 3)
    assert plan.configs[:4] == ((16, 3, 10, 1), (0, 8, 8, 1), (0, 4, 0, 2), (0, 0, 0, 2))
    assert plan.z == (Fraction(1, 8), Fraction(1, 96), Fraction(1, 96), Fraction(27, 64))
    assert plan.i_g == 5
    assert plan.x_g[worst.zero] == Fraction(83, 192)
    assert greedy_reward(plan, worst) == 618
    assert plan.condition2


def test_global_greedy_worst_half(worst_half):
    plan = global_greedy(worst_half.rho, worst_half)
    assert plan.x_g == {(12, 3, 8, 0): Fraction(1, 6), (0, 0, 0, 1): Fraction(5, 6)}
    assert greedy_reward(plan, worst_half) == Fraction(1598, 3)


def _check_plan(plan, profile):
    rho = plan.rho
    J = profile.J
    # each type is exactly filled by the configurations up to its own step
    for j, t in enumerate(plan.sigma):
        filled = sum((plan.configs[l][t] * plan.z[l] for l in range(j + 1)), Fraction(0))
        assert filled == rho[t]
    s = Fraction(0)
    for i in range(plan.i_g - 1):
        s += plan.z[i]
    assert s < 1
    if plan.i_g <= J:
        assert s + plan.z[plan.i_g - 1] >= 1
    assert sum(plan.x_g.values()) == 1
    assert all(v > 0 for v in plan.x_g.values())
    support = set(plan.configs[:plan.i_g])
    assert set(plan.x_g) <= support
    # x_g never over-fills any type
    for j in range(J):
        assert sum((k[j] * x for k, x in plan.x_g.items()), Fraction(0)) <= rho[j]


@pytest.mark.parametrize("seed", range(10))
def test_plan_invariants_random(seed):
    p = random_profile(seed)
    for alpha in (Fraction(1, 4), Fraction(1), Fraction(5)):
        _check_plan(global_greedy([alpha * r for r in p.rho], p), p)


def test_greedy_le_optimal_and_half_bound():
    for seed in range(15):
        p = random_profile(100 + seed)
        ug = float(greedy_value(p.rho, p))
        us = float(optimal_normalized(p.rho, p).value)
        assert ug <= us + 1e-7
        assert ug >= us / 2 - 1e-9


def test_greedy_uses_lowest_index_on_ties(worst_half):
    # after the first configuration types 1, 2 and 3 are all exactly filled
    plan = global_greedy(worst_half.rho, worst_half)
    assert plan.sigma[0] == 0
    assert plan.z[1] == plan.z[2] == 0


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 40), min_size=3, max_size=3), st.randoms(use_true_random=False))
def test_permutation_invariant_under_relabeling(rewards, rnd):
    dims = [(3, 1), (1, 3), (2, 2)]
    # generic rewards and loads: with exact ties the lowest-label rule decides,
    # and relabeling may legitimately change the permutation
    rw = [Fraction(r * 1000 + i, 7) for i, r in enumerate(rewards)]
    rho = [Fraction(rnd.randint(1, 10**6), 333_331) for _ in range(3)]
    base = CloudProfile((to_units(10), to_units(10)),
                        tuple(VMType.make(d, u) for d, u in zip(dims, rw)))
    perm = [0, 1, 2]
    rnd.shuffle(perm)
    shuffled = CloudProfile(base.capacity, tuple(base.types[i] for i in perm))
    p1 = global_greedy(rho, base)
    p2 = global_greedy([rho[i] for i in perm], shuffled)
    assert [perm[j] for j in p2.sigma] == list(p1.sigma)
    assert greedy_reward(p1, base) == greedy_reward(p2, shuffled)


def test_gpa_converges_to_global_greedy(worst):
    plan = global_greedy(worst.rho, worst)
    L = 96_000
    res = gpa([int(L * r) for r in worst.rho], L, worst)
    for k, x in plan.x_g.items():
        if k != worst.zero:
            assert abs(res.get(k) - L * x) <= (worst.kmax + 1) ** 3


# -- adversarial family -----------------------------------------------------------------

@pytest.mark.parametrize("J,N", [(2, 1), (3, 10), (4, 1000)])
def test_adversarial_closed_forms(J, N):
    p, rho = gen_adversarial(J, N)
    ug, us = adversarial_closed_forms(J, N)
    assert greedy_value(rho, p) == ug
    assert optimal_normalized(rho, p, mode="rational").value == us


def test_adversarial_j2_split():
    p, rho = gen_adversarial(2, 1)
    plan = global_greedy(rho, p)
    assert plan.x_g == {(2, 0): Fraction(1, 2), (0, 2): Fraction(1, 2)}


def test_adversarial_feasibility_claims():
    J, N = 3, 10
    p, _ = gen_adversarial(J, N)
    assert p.is_feasible((3, 0, 0)) and not p.is_feasible((4, 0, 0))
    assert p.is_feasible((0, 0, 11)) and not p.is_feasible((0, 0, 12))
    assert p.is_feasible((1, 1, 10))
    assert p.rho == (1, 1, 10)
    assert [t.reward for t in p.types] == [Fraction(1, 3), Fraction(2, 9), Fraction(4, 99)]


def test_adversarial_literal_layout_is_too_permissive():
    # the plain additive layout admits (2, 0, 10): greedy then matches optimal
    p, rho = gen_adversarial(3, 10, literal=True)
    assert p.is_feasible((2, 0, 10))
    assert greedy_value(rho, p) == Fraction(95, 99)


def test_adversarial_ratio_limit():
    ug, us = adversarial_closed_forms(4, 1000)
    assert abs(float(ug / us) - (1 - (3 / 4) ** 4)) < 1e-3


def test_adversarial_bad_args():
    with pytest.raises(ValueError):
        gen_adversarial(1, 5)


# -- monotone probe --------------------------------------------------------------------

def test_two_types_monotone():
    p = CloudProfile((to_units(10), to_units(10)),
                     (VMType.make((3, 1), 5), VMType.make((1, 2), 2)))
    rep = check_monotone_greedy(p, 300, seed=3)
    assert rep["violations"] == []


def test_equal_pairs_never_violate(worst):
    for r in [(1, 1, 1, 1), worst.rho]:
        assert greedy_value(r, worst) == greedy_value(r, worst)


def test_monotone_probe_regression(worst):
    rep = check_monotone_greedy(worst, 1000, seed=42)
    expected = json.loads((DATA / "monotone_probe_worst_case.json").read_text())
    assert rep == expected
    assert len(rep["violations"]) == 7
