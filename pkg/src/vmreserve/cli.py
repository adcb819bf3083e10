"""Command-line front end: ``vmreserve {analyze,simulate,sweep-alpha,sweep-L,trace,gen-trace}``.

Exit codes: 0 success, 2 bad input, 3 invariant violation during a run.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from . import __version__
from .core_model import CloudProfile, ConfigExplosionError, ProfileError, load_profile, to_fraction
from .greedy_planner import global_greedy, greedy_reward, greedy_value
from .instances import intro_profile, worst_case_profile
from .lp_bounds import LpSizeError, optimal_normalized
from .policies import make_policy
from .sim_engine import CSV_SCHEMA, InvariantViolation, generate_workload, run, upper_bound_series
from .trace_ingest import TraceError, build_trace_profile, parse_trace, priority_spike_trace, write_trace

log = logging.getLogger("vmreserve")

BUILTIN_PROFILES = {
    "worst-case": lambda: worst_case_profile(),
    "worst-case-half": lambda: worst_case_profile((40, 320)),
    "intro": intro_profile,
}

EXIT_INPUT = 2
EXIT_INVARIANT = 3


class InputError(ValueError):
    pass


# -- helpers ------------------------------------------------------------------

def resolve_profile(spec: str) -> CloudProfile:
    if spec in BUILTIN_PROFILES and not Path(spec).exists():
        return BUILTIN_PROFILES[spec]()
    p = Path(spec)
    if not p.exists():
        raise InputError(f"profile {spec!r} not found (builtins: {', '.join(BUILTIN_PROFILES)})")
    return load_profile(p)


def parse_numbers(text: str) -> list[Fraction]:
    """``"0.5,6/7,1"`` or a range ``"start:stop:step"`` (inclusive, exact)."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise InputError(f"bad range {text!r}, expected start:stop:step")
        a, b, s = (to_fraction(x) for x in parts)
        if s <= 0:
            raise InputError("range step must be positive")
        out, x = [], a
        while x <= b:
            out.append(x)
            x += s
        return out
    try:
        return [to_fraction(x) for x in text.split(",") if x.strip()]
    except (ValueError, ZeroDivisionError) as e:
        raise InputError(f"bad number list {text!r}: {e}") from None


def parse_cra_period(text: str) -> tuple[int, float | None]:
    """``every_event`` | ``<k>`` events | ``<dt>t`` simulated time."""
    if text in ("every_event", "event", "1"):
        return 1, None
    if text.endswith("t"):
        return 1, float(text[:-1])
    k = int(text)
    if k < 1:
        raise InputError("cra period must be >= 1 event")
    return k, None


def ratio(a, b) -> float:
    # 0/0 (empty workload) is reported as a perfect ratio
    if b == 0:
        return 1.0
    if isinstance(a, (int, Fraction)) and isinstance(b, (int, Fraction)):
        return float(Fraction(a) / Fraction(b))
    return float(a) / float(b)


def _rat(x) -> str | int | float:
    if isinstance(x, Fraction):
        return int(x) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"
    return x


def analyze(profile: CloudProfile, rho: Sequence[Fraction], exact: bool = True) -> dict:
    plan = global_greedy(rho, profile)
    ug = greedy_reward(plan, profile)
    us = optimal_normalized(rho, profile, mode="rational" if exact else "float").value
    names = [t.name or f"t{j + 1}" for j, t in enumerate(profile.types)]
    return {
        "rho": [_rat(r) for r in rho],
        "sigma": [names[j] for j in plan.sigma],
        "z": [_rat(z) for z in plan.z],
        "i_g": plan.i_g,
        "x_g": [{"config": list(k), "fraction": _rat(x)} for k, x in plan.x_g.items()],
        "U_greedy": _rat(ug),
        "U_star": _rat(us),
        "U_greedy_float": float(ug),
        "U_star_float": float(us),
        "ratio": ratio(ug, us),
        "condition2": plan.condition2,
        "configs": profile.c,
        "Kmax": profile.kmax,
    }


def _rho_from_args(profile: CloudProfile, args) -> list[Fraction]:
    if getattr(args, "rho", None):
        rho = parse_numbers(args.rho)
        if len(rho) != profile.J:
            raise InputError(f"--rho needs {profile.J} values")
    else:
        rho = list(profile.rho)
    a = to_fraction(args.alpha) if getattr(args, "alpha", None) is not None else Fraction(1)
    return [a * r for r in rho]


def _write(out: Path | None, name: str, text: str) -> None:
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _csv(rows: list[list], header: list[str]) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: {CSV_SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _policy(args, name: str | None = None):
    every, dt = parse_cra_period(args.cra_period)
    return make_policy(name or args.policy, d=args.d, g_exp=args.g_exp, g=args.g,
                       cra_every=every, cra_dt=dt)


def _runspec(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


# -- commands -----------------------------------------------------------------

def cmd_analyze(args) -> int:
    prof = resolve_profile(args.profile)
    res = analyze(prof, _rho_from_args(prof, args), exact=not args.float)
    res["runspec"] = _runspec(args)
    text = json.dumps(res, indent=2, default=str)
    print(text)
    _write(args.out, "analyze.json", text)
    return 0


def sweep_alpha(profile: CloudProfile, alphas: Sequence[Fraction], exact: bool = False,
                rho: Sequence[Fraction] | None = None) -> list[tuple[Fraction, Fraction, object]]:
    base = list(profile.rho if rho is None else rho)
    out = []
    for a in alphas:
        r = [a * x for x in base]
        out.append((a, greedy_value(r, profile),
                    optimal_normalized(r, profile, mode="rational" if exact else "float").value))
    return out


def cmd_sweep_alpha(args) -> int:
    prof = resolve_profile(args.profile)
    alphas = parse_numbers(args.alpha_grid)
    if not alphas:
        raise InputError("empty alpha grid")
    base = _rho_from_args(prof, argparse.Namespace(rho=args.rho, alpha=None))
    rows = [[float(a), float(g), float(s), ratio(g, s)]
            for a, g, s in sweep_alpha(prof, alphas, args.exact, base)]
    text = _csv(rows, ["alpha", "U_greedy", "U_star", "ratio"])
    sys.stdout.write(text)
    _write(args.out, "sweep_alpha.csv", text)
    return 0


def cmd_simulate(args) -> int:
    prof = resolve_profile(args.profile)
    if args.horizon <= 0 or args.L < 1:
        raise InputError("need --horizon > 0 and -L >= 1")
    if args.policy == "upper-bound":
        wl = generate_workload(prof, args.L, args.horizon, args.seed)
        rep = run(prof, args.L, make_policy("upper-bound"), workload=wl, seed=args.seed,
                  bound=True, check=not args.no_check)
        _as_bound_report(rep)
    else:
        rep = run(prof, args.L, _policy(args), horizon=args.horizon, seed=args.seed,
                  check=not args.no_check, bound=args.bound)
    ug = float(greedy_value(prof.rho, prof))
    agg = rep.aggregates()
    agg.update({"L_times_U_greedy": args.L * ug,
                "second_half_ratio_vs_greedy": ratio(rep.second_half_avg_reward, args.L * ug),
                "digest": rep.digest(), "runspec": _runspec(args)})
    text = json.dumps(agg, indent=2, default=str)
    print(text)
    _write(args.out, "report.json", text)
    _write(args.out, "series.csv", rep.to_csv())
    return 0


def _pool_map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as ex:
        return list(ex.map(fn, items))  # map keeps input order


def cmd_sweep_L(args) -> int:
    prof = resolve_profile(args.profile)
    Ls = [int(x) for x in parse_numbers(args.L_grid)]
    seeds = list(range(args.seed, args.seed + args.seeds))
    ug = float(greedy_value(prof.rho, prof))
    us = float(optimal_normalized(prof.rho, prof).value)

    def one(job):
        L, seed = job
        rep = run(prof, L, _policy(args), horizon=args.horizon, seed=seed,
                  check=not args.no_check)
        return L, seed, rep.second_half_avg_reward

    results = _pool_map(one, [(L, s) for L in Ls for s in seeds], args.workers)
    rows = []
    for L in Ls:
        vals = [r for (l, _, r) in results if l == L]
        mean = sum(vals) / len(vals)
        rows.append([L, args.policy, len(vals), mean, ratio(mean, L * ug), ratio(mean, L * us)])
    text = _csv(rows, ["L", "policy", "seeds", "mean_reward", "ratio_vs_greedy",
                       "ratio_vs_optimal"])
    sys.stdout.write(text)
    _write(args.out, "sweep_L.csv", text)
    return 0


def trace_experiment(profile, workload, L: int, policies: Sequence[str], args,
                     sample_dt: float, check: bool = True) -> dict:
    """Run each policy on the same trace; returns name -> SimReport ("upper-bound" too)."""
    reports = {}
    times = None
    for name in policies:
        if name == "upper-bound":
            continue
        rep = run(profile, L, _policy(args, name), workload=workload, seed=args.seed,
                  sample_dt=sample_dt, check=check, rho_known=False)
        reports[name] = rep
        times = rep.t
    if "upper-bound" in policies:
        rep = run(profile, L, make_policy("upper-bound"), workload=workload, seed=args.seed,
                  sample_dt=sample_dt, check=check, rho_known=False)
        rep.bound = upper_bound_series(profile, L, workload, rep.t)
        reports["upper-bound"] = _as_bound_report(rep)
    return reports


def _step_integral(t, y, horizon, start: float = 0.0) -> float:
    # the bound series is piecewise constant between samples
    total = 0.0
    for i, v in enumerate(y):
        end = t[i + 1] if i + 1 < len(t) else horizon
        lo = max(t[i], start)
        if end > lo:
            total += v * (end - lo)
    return total


def _as_bound_report(rep):
    """Turn a reject-all run carrying a bound series into the bound's own report."""
    rep.reward_rate = list(rep.bound)
    rep.total_reward = _step_integral(rep.t, rep.bound, rep.horizon)
    rep.second_half_reward = _step_integral(rep.t, rep.bound, rep.horizon, rep.horizon / 2)
    return rep


def cmd_trace(args) -> int:
    issues: list[TraceError] = []
    tasks = parse_trace(args.trace, strict=not args.lenient, issues=issues)
    prof, wl = build_trace_profile(tasks, args.horizon)
    Ls = [int(x) for x in parse_numbers(args.L_grid)]
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    for p in policies:
        make_policy(p)  # validate names early
    dt = args.sample_dt or wl.horizon / 500
    rows = []
    for L in Ls:
        reps = trace_experiment(prof, wl, L, policies, args, dt, check=not args.no_check)
        for name, rep in reps.items():
            rows.append([L, name, rep.total_reward, rep.time_avg_reward,
                         rep.counters.get("rejections", 0), rep.counters.get("preemptions", 0),
                         rep.counters.get("migrations", 0)])
            _write(args.out, f"trace_L{L}_{name}.csv", rep.to_csv())
    text = _csv(rows, ["L", "policy", "total_reward", "time_avg_reward", "rejections",
                       "preemptions", "migrations"])
    sys.stdout.write(text)
    _write(args.out, "trace_summary.csv", text)
    if issues:
        print(f"# skipped {len(issues)} malformed rows", file=sys.stderr)
    return 0


def cmd_gen_trace(args) -> int:
    tasks = priority_spike_trace(args.seed, args.L, args.horizon)
    write_trace(args.out_file, tasks)
    print(f"wrote {len(tasks)} tasks to {args.out_file}")
    return 0


# -- parser -------------------------------------------------------------------

def _policy_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--g-exp", type=float, default=1.5,
                   help="reservation factor g(L) = ceil((ln L)^exp)")
    p.add_argument("--g", type=int, default=None, help="fixed reservation factor")
    p.add_argument("--cra-period", default="every_event",
                   help="every_event | <k> events | <dt>t time units")
    p.add_argument("--d", type=int, default=5, help="power-of-d sample size")
    p.add_argument("--no-check", action="store_true", help="skip runtime invariant checks")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vmreserve", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="greedy vs optimal normalized reward")
    p.add_argument("--profile", required=True)
    p.add_argument("--rho", help="comma-separated workload (default: lambda/mu)")
    p.add_argument("--alpha", help="scale the workload by this factor")
    p.add_argument("--float", action="store_true", help="float LP instead of exact")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep-alpha", help="U_greedy and U_star over scaled workloads")
    p.add_argument("--profile", required=True)
    p.add_argument("--rho")
    p.add_argument("--alpha-grid", default="0.1:10:0.1")
    p.add_argument("--exact", action="store_true")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_sweep_alpha)

    p = sub.add_parser("simulate", help="one simulation run")
    p.add_argument("--profile", required=True)
    p.add_argument("--policy", default="dra", choices=["dra", "dra-preempt", "pod", "upper-bound"])
    p.add_argument("-L", "--L", dest="L", type=int, required=True)
    p.add_argument("--horizon", type=float, default=50.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bound", action="store_true", help="add the LP upper-bound series")
    p.add_argument("--out", type=Path)
    _policy_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep-L", help="reward ratio across server counts")
    p.add_argument("--profile", required=True)
    p.add_argument("--policy", default="dra", choices=["dra", "dra-preempt", "pod"])
    p.add_argument("--L-grid", default="20,60,120,180")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=float, default=50.0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path)
    _policy_flags(p)
    p.set_defaults(func=cmd_sweep_L)

    p = sub.add_parser("trace", help="replay a task trace under several policies")
    p.add_argument("--trace", required=True)
    p.add_argument("--L-grid", default="250,500,1000")
    p.add_argument("--policies", default="dra,dra-preempt,pod,upper-bound")
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--sample-dt", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--strict", action="store_true", default=True)
    g.add_argument("--lenient", action="store_true")
    p.add_argument("--out", type=Path)
    _policy_flags(p)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("gen-trace", help="write the synthetic priority-spike trace")
    p.add_argument("out_file", type=Path)
    p.add_argument("-L", "--L", dest="L", type=int, default=250)
    p.add_argument("--horizon", type=float, default=3000.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_trace)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvariantViolation as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        print(json.dumps(e.dump, indent=2, default=str), file=sys.stderr)
        return EXIT_INVARIANT
    except (InputError, ProfileError, TraceError, ConfigExplosionError, LpSizeError,
            FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
