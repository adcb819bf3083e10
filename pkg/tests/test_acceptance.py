"""Acceptance criteria 1-9, each at its stated tolerance.

Every test records one PASS/FAIL line (printed in the terminal summary).
Lines labelled ``supp`` are supplementary checks on the (40, 320) server,
where the worst-case numbers appear; see the project notes.
"""

import itertools
import math
import random
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import record_criterion
from vmreserve.cli import analyze, sweep_alpha
from vmreserve.greedy_planner import (adversarial_closed_forms, gen_adversarial, global_greedy,
                                      gpa, greedy_value)
from vmreserve.instances import random_profile, worst_case_profile
from vmreserve.lp_bounds import LinearProgram, optimal_normalized, solve_lp
from vmreserve.policies import Dra, DraPreempt, PowerOfD, RejectAll
from vmreserve.sim_engine import InvariantViolation, run, upper_bound_series
from vmreserve.trace_ingest import build_trace_profile, priority_spike_trace

STATED = (80, 640)
HALF = (40, 320)

# simulation digests collected by criteria 6 and 8 for the replay check in 7
_RUNS: dict = {}


# -- 1. worst-case ratio ---------------------------------------------------------------

def _criterion1(cap, label):
    t0 = time.perf_counter()
    res = analyze(worst_case_profile(cap), worst_case_profile(cap).rho, exact=True)
    dt = time.perf_counter() - t0
    ok = abs(res["ratio"] - 0.862) <= 0.005 and dt < 5
    record_criterion(label, ok, f"capacity {cap}: U_g={res['U_greedy']} U*={res['U_star']} "
                     f"ratio={res['ratio']:.4f} (target 0.862 +/- 0.005), {dt:.2f}s (< 5s)")
    return ok


def test_criterion_1_worst_case_ratio():
    assert _criterion1(STATED, "1")


def test_criterion_1_supp_half_capacity():
    assert _criterion1(HALF, "1-supp")


# -- 2. critical points on the alpha sweep ---------------------------------------------

EQUAL_AT = [Fraction(1, 2), Fraction(6, 7), Fraction(6), Fraction(8)]


def _criterion2(cap, label):
    p = worst_case_profile(cap)
    pts = {a: (g, s) for a, g, s in sweep_alpha(p, EQUAL_AT + [Fraction(1)], exact=True)}
    equal = {a: pts[a][0] == pts[a][1] for a in EQUAL_AT}
    gap = pts[Fraction(1)][0] < pts[Fraction(1)][1]
    t0 = time.perf_counter()
    grid = [Fraction(i, 10) for i in range(1, 101)]
    sweep_alpha(p, grid, exact=True)
    dt = time.perf_counter() - t0
    ok = all(equal.values()) and gap and dt < 30
    detail = ", ".join(f"a={a}: {'equal' if e else 'ratio %.4f' % float(pts[a][0] / pts[a][1])}"
                       for a, e in equal.items())
    record_criterion(label, ok, f"capacity {cap}: {detail}; a=1 strict gap={gap} "
                     f"(ratio {float(pts[Fraction(1)][0] / pts[Fraction(1)][1]):.4f}); "
                     f"100-point exact grid {dt:.1f}s (< 30s)")
    return ok


def test_criterion_2_critical_points():
    assert _criterion2(STATED, "2")


def test_criterion_2_supp_half_capacity():
    assert _criterion2(HALF, "2-supp")


# -- 3. half-approximation over random instances ---------------------------------------

def test_criterion_3_random_instances():
    t0 = time.perf_counter()
    ratios, hard = [], True
    for seed in range(200):
        p = random_profile(seed)
        ug = greedy_value(p.rho, p)
        us = optimal_normalized(p.rho, p, mode="rational").value
        hard &= 2 * ug >= us
        ratios.append(float(ug / us))
    dt = time.perf_counter() - t0
    mean, lo = sum(ratios) / len(ratios), min(ratios)
    ok = hard and mean >= 0.90 and lo >= 0.50 and dt < 120
    record_criterion("3", ok, f"200 instances: U_g >= U*/2 on all={hard}, mean={mean:.4f} "
                     f"(>= 0.90), min={lo:.4f} (>= 0.50), {dt:.1f}s (< 120s)")
    assert ok


# -- 4. adversarial family closed forms ----------------------------------------------------

def test_criterion_4_adversarial_exact():
    parts, ok = [], True
    for J, N in [(2, 1), (3, 10), (4, 1000)]:
        p, rho = gen_adversarial(J, N)
        ug, us = greedy_value(rho, p), optimal_normalized(rho, p, mode="rational").value
        cg, cs = adversarial_closed_forms(J, N)
        ok &= ug == cg and us == cs
        parts.append(f"(J={J},N={N}) U_g={ug} U*={us}")
    r = float(ug / us)
    lim = 1 - (3 / 4) ** 4
    ok &= abs(r - lim) <= 1e-3
    record_criterion("4", ok, "; ".join(parts) + f"; ratio(4,1000)={r:.6f} vs {lim:.6f} (1e-3)")
    assert ok


# -- 5. GPA deviation bound ------------------------------------------------------------------

def test_criterion_5_gpa_deviation():
    t0 = time.perf_counter()
    checked, bad, worst_slack = 0, [], math.inf
    for seed in range(50):
        p = random_profile(1000 + seed)
        plan = global_greedy(p.rho, p)
        for L in (10, 100, 1000):
            asg = gpa([math.floor(L * r) for r in p.rho], L, p).assignment()
            idle = L - sum(asg.values())
            for i, k in enumerate(p.greedy_set, start=1):
                got = asg.get(k, 0) + (idle if k == p.zero else 0)
                dev = abs(got - L * plan.x_of(k))
                bound = (p.kmax + 1) ** (i - 1)
                checked += 1
                worst_slack = min(worst_slack, float(bound - dev))
                if dev > bound:
                    bad.append((seed, L, i))
    dt = time.perf_counter() - t0
    ok = not bad and dt < 60
    record_criterion("5", ok, f"{checked} (profile, L, i) checks, violations={len(bad)}, "
                     f"min slack={worst_slack:.3f}, {dt:.1f}s (< 60s)")
    assert ok


# -- 6. DRA convergence ------------------------------------------------------------------------

def _criterion6(cap, label):
    p = worst_case_profile(cap)
    ug = float(greedy_value(p.rho, p))
    t0 = time.perf_counter()
    means, last = {}, []
    for L in (20, 60, 180):
        rs = []
        for seed in range(3):
            rep = run(p, L, Dra(), horizon=50.0, seed=seed, check=True, full_check_every=500)
            _RUNS[(cap, L, seed)] = rep.digest()
            rs.append(rep.second_half_avg_reward / (L * ug))
        means[L] = sum(rs) / len(rs)
        last = rs
    dt = time.perf_counter() - t0
    within = all(abs(r - 1) <= 0.05 for r in last)
    trend = means[20] <= means[60] <= means[180]
    ok = within and trend and dt < 180
    record_criterion(label, ok, f"capacity {cap}: L=180 ratios "
                     f"{', '.join(f'{r:.4f}' for r in last)} (within 5%={within}); mean ratio "
                     f"by L {', '.join(f'{L}:{m:.4f}' for L, m in means.items())} "
                     f"(monotone={trend}); {dt:.0f}s (< 180s)")
    return ok


def test_criterion_6_dra_convergence():
    assert _criterion6(STATED, "6")


def test_criterion_6_supp_half_capacity():
    assert _criterion6(HALF, "6-supp")


# -- 8. trace pipeline --------------------------------------------------------------------------

def test_criterion_8_trace_pipeline():
    t0 = time.perf_counter()
    tasks = priority_spike_trace(seed=0, L=250, horizon=3000.0)
    prof, wl = build_trace_profile(tasks)
    L, dt_s = 250, wl.horizon / 500
    reps = {}
    for pol in (Dra(), DraPreempt(), PowerOfD(5)):
        rep = run(prof, L, pol, workload=wl, sample_dt=dt_s, check=True, rho_known=False)
        reps[pol.name] = rep
        _RUNS[("trace", pol.name)] = rep.digest()
    ub = run(prof, L, RejectAll(), workload=wl, sample_dt=dt_s, check=True, rho_known=False)
    bound = upper_bound_series(prof, L, wl, ub.t)
    margins = {name: min(b - r for b, r in zip(bound, rep.reward_rate))
               for name, rep in reps.items()}
    same_grid = all(rep.t == ub.t for rep in reps.values())
    dominated = same_grid and all(m >= -1e-9 for m in margins.values())
    pre, dra = reps["dra-preempt"].total_reward, reps["dra"].total_reward
    dt = time.perf_counter() - t0
    ok = dominated and pre >= dra and dt < 120
    record_criterion("8", ok, f"{len(tasks)} tasks, {prof.J} types, L=250; bound - policy min "
                     f"margin {', '.join(f'{k}:{v:.3g}' for k, v in margins.items())} "
                     f"(dominates={dominated}); total reward dra-preempt={pre:.4g} >= "
                     f"dra={dra:.4g}: {pre >= dra}; pod={reps['pod'].total_reward:.4g}; "
                     f"{dt:.0f}s (< 120s)")
    assert ok


# -- 7. runtime invariants + deterministic replay -------------------------------------------------

def test_criterion_7_invariants_and_replay():
    # criteria 6 and 8 ran every simulation with per-event checks and post-CRA checks;
    # an InvariantViolation there would have failed those tests.  Here: replay.
    if not _RUNS:
        pytest.skip("needs criteria 6 and 8 in the same session")
    p = worst_case_profile(STATED)
    again = run(p, 60, Dra(), horizon=50.0, seed=1, check=True, full_check_every=500)
    same_sim = again.digest() == _RUNS[(STATED, 60, 1)]
    prof, wl = build_trace_profile(priority_spike_trace(seed=0, L=250, horizon=3000.0))
    rep = run(prof, 250, DraPreempt(), workload=wl, sample_dt=wl.horizon / 500, check=True,
              rho_known=False)
    same_trace = rep.digest() == _RUNS.get(("trace", "dra-preempt"))
    # a broken state must be detected
    st_err = False
    try:
        pol = Dra()
        from vmreserve.sim_engine import SystemState
        st = SystemState(p, 3)
        pol.bind(st, 0)
        st.per_config[p.zero].pop()
        st.check()
    except InvariantViolation:
        st_err = True
    ok = same_sim and same_trace and st_err
    record_criterion("7", ok, f"{len(_RUNS)} checked simulations without violations; replay "
                     f"digest equal: synthetic={same_sim}, trace={same_trace}; "
                     f"corrupted state detected={st_err}")
    assert ok


# -- 9. LP oracle equivalence ---------------------------------------------------------------------

def _vertex_max(c, A, b):
    n = len(c)
    M = np.vstack([np.array(A, float), -np.eye(n)])
    r = np.concatenate([np.array(b, float), np.zeros(n)])
    best = -math.inf
    combos = np.array(list(itertools.combinations(range(len(M)), n)))
    subs = M[combos]
    rhs = r[combos]
    ok = np.abs(np.linalg.det(subs)) > 1e-9
    xs = np.linalg.solve(subs[ok], rhs[ok][..., None])[..., 0]
    feas = np.all(xs @ M.T <= r + 1e-9, axis=1)
    if feas.any():
        best = float((xs[feas] @ np.array(c, float)).max())
    return best


def test_criterion_9_lp_oracle():
    rng = random.Random(2024)
    worst_err, n_ok = 0.0, 0
    for _ in range(100):
        n = rng.randint(1, 6)
        m = rng.randint(1, 8)
        c = [rng.randint(-5, 10) for _ in range(n)]
        A = [[rng.randint(-3, 8) for _ in range(n)] for _ in range(m - 1)]
        A.append([rng.randint(1, 5) for _ in range(n)])  # keeps the region bounded
        b = [rng.randint(0, 30) for _ in range(m)]
        lp = LinearProgram(c)
        for a, bi in zip(A, b):
            lp.add(a, "<=", bi)
        exact = solve_lp(lp, "rational")
        flt = solve_lp(lp, "float")
        ref = _vertex_max(c, A, b)
        err = max(abs(float(exact.objective_value) - ref), abs(flt.objective_value - ref))
        worst_err = max(worst_err, err)
        n_ok += exact.optimal and flt.optimal and err <= 1e-9
    ok = n_ok == 100
    record_criterion("9", ok, f"{n_ok}/100 random LPs (<= 6 vars, <= 8 rows) match vertex "
                     f"enumeration; max |error| = {worst_err:.2e} (<= 1e-9)")
    assert ok
