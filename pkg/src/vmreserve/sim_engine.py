"""Continuous-time discrete-event simulator for the many-server loss system.

The engine owns a :class:`SystemState` and a :class:`Workload` (arrival
times, types and service durations fixed up front), and hands every arrival
and departure to a policy.  Because durations are drawn per job rather than
per policy, two runs with the same seed see exactly the same jobs (common
random numbers), and an infinite-server shadow driven by that workload
dominates every policy's occupancy.
"""

from __future__ import annotations

import bisect
import csv
import hashlib
import heapq
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .core_model import CloudProfile, Config

if TYPE_CHECKING:  # pragma: no cover
    from .policies import Policy

log = logging.getLogger(__name__)

CSV_SCHEMA = "vmreserve-series/1"


class InvariantViolation(RuntimeError):
    """A state invariant broke; ``dump`` holds a JSON-able state snapshot."""

    def __init__(self, msg: str, dump: dict | None = None):
        super().__init__(msg)
        self.dump = dump or {}


# -- state --------------------------------------------------------------------

@dataclass
class ServerState:
    sid: int
    config: Config
    placement: list[int]
    jobs: list[set[int]]
    stamp: int = 0  # order of assignment to the current configuration

    @property
    def is_empty(self) -> bool:
        return not any(self.placement)

    def n_jobs(self) -> int:
        return sum(self.placement)


@dataclass
class Job:
    jid: int
    type: int
    arrival: float
    departure: float
    server: int = -1


class SystemState:
    """Servers, per-configuration ordering, job table and counters.

    Within a configuration servers are kept oldest first; the server at list
    position ``p`` has index ``X_k - p``, so index 1 is the newest.  Rank and
    group data are written by the reservation policy (``cfg_rank``,
    ``cfg_n_ranked``, ``reject``); ranks are stored per configuration: the
    ``cfg_n_ranked[k]`` oldest servers of ``k`` carry rank ``cfg_rank[k]``,
    every other server has rank J+1.
    """

    def __init__(self, profile: CloudProfile, L: int):
        if L < 1:
            raise ValueError("L must be >= 1")
        self.profile = profile
        self.L = L
        self.J = profile.J
        zero = profile.zero
        self.servers = [ServerState(i, zero, [0] * self.J, [set() for _ in range(self.J)], i)
                        for i in range(L)]
        self._stamp = L
        self.per_config: dict[Config, list[int]] = {zero: list(range(L))}
        self._stamps: dict[Config, list[int]] = {zero: list(range(L))}
        self.empty_by_config: dict[Config, set[int]] = {zero: set(range(L))}
        # servers with at least one empty type-j slot
        self.free: list[set[int]] = [set() for _ in range(self.J)]
        self.Y = [0] * self.J
        self.jobs: dict[int, Job] = {}
        self.clock = 0.0
        self.counters = dict(admissions=0, rejections=0, departures=0, migrations=0,
                             preemptions=0, reassignments=0)
        self.cfg_rank: dict[Config, int] = {}
        self.cfg_n_ranked: dict[Config, int] = {}
        self.reject: set[int] = set()
        self.touched: set[int] = set()
        self._rates = [t.reward for t in profile.types]
        self._rates_f = [float(u) for u in self._rates]

    # -- queries --------------------------------------------------------

    def count(self, k: Config) -> int:
        lst = self.per_config.get(k)
        return len(lst) if lst else 0

    def counts(self) -> dict[Config, int]:
        return {k: len(v) for k, v in self.per_config.items() if v}

    def position(self, sid: int) -> int:
        """0-based position of ``sid`` in its configuration list (0 = oldest)."""
        s = self.servers[sid]
        return bisect.bisect_left(self._stamps[s.config], s.stamp)

    def index(self, sid: int) -> int:
        """1-based index within the configuration, 1 = most recently assigned."""
        s = self.servers[sid]
        return len(self.per_config[s.config]) - self.position(sid)

    def rank(self, sid: int) -> int:
        k = self.servers[sid].config
        r = self.cfg_rank.get(k)
        if r is None or self.position(sid) >= self.cfg_n_ranked.get(k, 0):
            return self.J + 1
        return r

    def group(self, sid: int) -> str:
        return "reject" if sid in self.reject else "accept"

    def reward_rate(self) -> float:
        return sum(u * y for u, y in zip(self._rates_f, self.Y))

    def has_slot(self, sid: int, j: int) -> bool:
        s = self.servers[sid]
        return s.placement[j] < s.config[j]

    # -- bookkeeping helpers --------------------------------------------

    def _refresh_server(self, s: ServerState) -> None:
        for j in range(self.J):
            if s.placement[j] < s.config[j]:
                self.free[j].add(s.sid)
            else:
                self.free[j].discard(s.sid)
        e = self.empty_by_config.setdefault(s.config, set())
        if s.is_empty:
            e.add(s.sid)
        else:
            e.discard(s.sid)
        self.touched.add(s.sid)

    def _move_config(self, s: ServerState, k: Config) -> None:
        old = s.config
        lst, st = self.per_config[old], self._stamps[old]
        p = bisect.bisect_left(st, s.stamp)
        del lst[p]
        del st[p]
        self.empty_by_config.get(old, set()).discard(s.sid)
        s.config = k
        s.stamp = self._stamp
        self._stamp += 1
        self.per_config.setdefault(k, []).append(s.sid)
        self._stamps.setdefault(k, []).append(s.stamp)
        self._refresh_server(s)

    # -- primitives -------------------------------------------------------

    def apply_arrival(self, sid: int, job: Job) -> None:
        s = self.servers[sid]
        j = job.type
        if s.placement[j] >= s.config[j]:
            raise InvariantViolation(f"server {sid} has no empty type-{j} slot", self.dump(sid))
        s.placement[j] += 1
        s.jobs[j].add(job.jid)
        job.server = sid
        self.jobs[job.jid] = job
        self.Y[j] += 1
        self.counters["admissions"] += 1
        self._refresh_server(s)

    def _remove_job(self, jid: int) -> Job:
        job = self.jobs.pop(jid, None)
        if job is None:
            raise InvariantViolation(f"unknown job {jid}")
        s = self.servers[job.server]
        s.placement[job.type] -= 1
        s.jobs[job.type].discard(jid)
        self.Y[job.type] -= 1
        self._refresh_server(s)
        return job

    def apply_departure(self, jid: int) -> Job:
        job = self._remove_job(jid)
        self.counters["departures"] += 1
        return job

    def preempt(self, jid: int) -> Job:
        job = self._remove_job(jid)
        self.counters["preemptions"] += 1
        return job

    def migrate(self, jid: int, to_sid: int) -> None:
        job = self.jobs.get(jid)
        if job is None:
            raise InvariantViolation(f"unknown job {jid}")
        src, dst = self.servers[job.server], self.servers[to_sid]
        j = job.type
        if dst.placement[j] >= dst.config[j]:
            raise InvariantViolation(f"migration target {to_sid} has no type-{j} slot",
                                     self.dump(to_sid))
        src.placement[j] -= 1
        src.jobs[j].discard(jid)
        dst.placement[j] += 1
        dst.jobs[j].add(jid)
        job.server = to_sid
        self.counters["migrations"] += 1
        self._refresh_server(src)
        self._refresh_server(dst)

    def reassign(self, sid: int, k: Config) -> None:
        """Give an empty server a new configuration; it becomes index 1 of ``k``."""
        s = self.servers[sid]
        if not s.is_empty:
            raise InvariantViolation(f"reassigning non-empty server {sid}", self.dump(sid))
        self._move_config(s, tuple(k))
        self.counters["reassignments"] += 1

    def resize(self, sid: int, k: Config) -> None:
        """Change the configuration of a possibly busy server, keeping placement <= k.

        Used by policies that do not reserve slots (configuration follows
        placement); the server moves to index 1 of ``k``.
        """
        s = self.servers[sid]
        k = tuple(k)
        if any(p > c for p, c in zip(s.placement, k)):
            raise InvariantViolation(f"resize of {sid} below its placement", self.dump(sid))
        if k != s.config:
            self._move_config(s, k)

    # -- checks -----------------------------------------------------------

    def dump(self, sid: int | None = None) -> dict:
        d = {"clock": self.clock, "Y": list(self.Y), "counts": {str(k): v for k, v in self.counts().items()},
             "counters": dict(self.counters)}
        if sid is not None:
            s = self.servers[sid]
            d["server"] = {"sid": sid, "config": list(s.config), "placement": list(s.placement)}
        return d

    def check(self, full: bool = False) -> None:
        total = sum(len(v) for v in self.per_config.values())
        if total != self.L:
            raise InvariantViolation(f"sum of X_k is {total}, expected {self.L}", self.dump())
        ids = range(self.L) if full else self.touched
        for sid in ids:
            s = self.servers[sid]
            if any(p > c for p, c in zip(s.placement, s.config)):
                raise InvariantViolation(f"placement exceeds configuration on {sid}", self.dump(sid))
        self.touched.clear()
        if full:
            Y = [0] * self.J
            for s in self.servers:
                for j, p in enumerate(s.placement):
                    Y[j] += p
            if Y != self.Y:
                raise InvariantViolation(f"job counts {self.Y} disagree with placements {Y}",
                                         self.dump())


# -- workload -----------------------------------------------------------------

@dataclass
class Workload:
    """Arrival stream with per-job service durations, sorted by arrival time."""

    times: np.ndarray
    types: np.ndarray
    durations: np.ndarray
    horizon: float

    def __len__(self) -> int:
        return len(self.times)

    @classmethod
    def from_jobs(cls, jobs: Iterable[tuple[float, int, float]], horizon: float | None = None
                  ) -> "Workload":
        rows = sorted(jobs, key=lambda r: r[0])
        t = np.array([r[0] for r in rows], dtype=float)
        ty = np.array([r[1] for r in rows], dtype=np.int64)
        du = np.array([r[2] for r in rows], dtype=float)
        if horizon is None:
            horizon = float((t + du).max()) if len(t) else 0.0
        return cls(t, ty, du, float(horizon))


def _exp(rng: np.random.Generator, n: int, rate: float) -> np.ndarray:
    # inverse CDF on (0, 1]; 1 - U avoids log(0)
    return -np.log1p(-rng.random(n)) / rate


def generate_workload(profile: CloudProfile, L: int, horizon: float, seed: int) -> Workload:
    """Poisson arrivals at rate lambda_j * L per type, exponential(mu_j) durations.

    One random stream per type for arrivals and one per type for services;
    the k-th type-j job always gets the same duration for a given seed.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    J = profile.J
    streams = np.random.SeedSequence(seed).spawn(2 * J)
    times, types, durs = [], [], []
    for j, t in enumerate(profile.types):
        lam = float(t.arrival_rate) * L
        if lam <= 0:
            continue
        arr_rng = np.random.Generator(np.random.PCG64(streams[2 * j]))
        svc_rng = np.random.Generator(np.random.PCG64(streams[2 * j + 1]))
        chunk = max(16, int(lam * horizon * 1.1) + 16)
        ts = []
        last = 0.0
        while True:
            gaps = _exp(arr_rng, chunk, lam)
            cum = last + np.cumsum(gaps)
            ts.append(cum[cum <= horizon])
            if cum[-1] > horizon:
                break
            last = cum[-1]
        tj = np.concatenate(ts)
        times.append(tj)
        types.append(np.full(len(tj), j, dtype=np.int64))
        durs.append(_exp(svc_rng, len(tj), float(t.service_rate)))
    if not times:
        return Workload(np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0), float(horizon))
    t = np.concatenate(times)
    ty = np.concatenate(types)
    du = np.concatenate(durs)
    order = np.lexsort((ty, t))
    return Workload(t[order], ty[order], du[order], float(horizon))


def shadow_occupancy(workload: Workload, J: int, at: Sequence[float]) -> np.ndarray:
    """Infinite-server occupancy Y_hat(t) for each time in ``at`` (rows) and type."""
    at = np.asarray(at, dtype=float)
    out = np.zeros((len(at), J), dtype=np.int64)
    ends = workload.times + workload.durations
    for j in range(J):
        m = workload.types == j
        a = np.sort(workload.times[m])
        e = np.sort(ends[m])
        # arrived at or before t, not yet departed by t
        out[:, j] = np.searchsorted(a, at, side="right") - np.searchsorted(e, at, side="right")
    return out


# -- report -------------------------------------------------------------------

@dataclass
class SimReport:
    policy: str
    L: int
    seed: int | None
    horizon: float
    type_names: list[str]
    t: list[float] = field(default_factory=list)
    reward_rate: list[float] = field(default_factory=list)
    Y: list[list[int]] = field(default_factory=list)
    q_max: list[float] = field(default_factory=list)
    V: list[float] = field(default_factory=list)
    bound: list[float] = field(default_factory=list)
    counter_series: list[dict] = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    total_reward: float = 0.0
    second_half_reward: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def time_avg_reward(self) -> float:
        return self.total_reward / self.horizon if self.horizon > 0 else 0.0

    @property
    def second_half_avg_reward(self) -> float:
        return self.second_half_reward / (self.horizon / 2) if self.horizon > 0 else 0.0

    def aggregates(self) -> dict:
        return {
            "policy": self.policy, "L": self.L, "seed": self.seed, "horizon": self.horizon,
            "total_reward": self.total_reward,
            "time_avg_reward": self.time_avg_reward,
            "second_half_avg_reward": self.second_half_avg_reward,
            "counters": dict(self.counters),
            "samples": len(self.t),
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.aggregates(), indent=2, sort_keys=True, default=str)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema: {CSV_SCHEMA}\n")
        w = csv.writer(buf, lineterminator="\n")
        cnames = list(self.counters) or ["admissions", "rejections", "departures", "migrations",
                                          "preemptions", "reassignments"]
        head = ["t", "reward_rate"] + [f"Y_{n}" for n in self.type_names] + ["q_max", "V"]
        if self.bound:
            head.append("bound")
        w.writerow(head + cnames)
        for i, t in enumerate(self.t):
            row = [repr(t), repr(self.reward_rate[i]), *self.Y[i],
                   _fmt(self.q_max[i]), _fmt(self.V[i])]
            if self.bound:
                row.append(repr(self.bound[i]))
            row += [self.counter_series[i].get(c, 0) for c in cnames]
            w.writerow(row)
        return buf.getvalue()

    def digest(self) -> str:
        """SHA-256 over aggregates and every series; equal runs give equal digests."""
        payload = json.dumps({"agg": self.aggregates(), "t": self.t, "r": self.reward_rate,
                              "Y": self.Y, "q": self.q_max, "V": self.V, "b": self.bound,
                              "c": self.counter_series}, sort_keys=True, default=repr)
        return hashlib.sha256(payload.encode()).hexdigest()


def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(x)


# -- main loop ----------------------------------------------------------------

def run(profile: CloudProfile, L: int, policy: "Policy", horizon: float | None = None,
        seed: int = 0, workload: Workload | None = None, sample_dt: float | None = None,
        check: bool = True, full_check_every: int = 0, bound: bool = False,
        rho_known: bool = True) -> SimReport:
    """Simulate ``policy`` on ``L`` servers.

    Without ``workload`` a Poisson workload is generated from ``seed``.
    ``sample_dt`` defaults to 1/100 of the mean service time.  With ``check``
    the cheap invariants are verified after every event (configuration
    conservation, placement <= configuration on touched servers, occupancy
    dominated by the infinite-server shadow); ``full_check_every`` adds a full
    scan every that many events.  ``bound`` adds the LP upper-bound series.
    """
    if workload is None:
        if horizon is None:
            raise ValueError("need a horizon or a workload")
        workload = generate_workload(profile, L, horizon, seed)
    H = float(horizon if horizon is not None else workload.horizon)
    if H <= 0:
        raise ValueError("horizon must be positive")
    if sample_dt is None:
        mean_svc = float(sum(1 / t.service_rate for t in profile.types) / profile.J)
        sample_dt = mean_svc / 100
    state = SystemState(profile, L)
    state.check_enabled = check
    policy.bind(state, seed)
    policy.on_init(state)
    if check:
        state.check(full=True)

    report = SimReport(policy.name, L, seed, H, [t.name or f"t{j + 1}" for j, t in
                                                 enumerate(profile.types)])
    n_samples = int(math.floor(H / sample_dt + 1e-9)) + 1
    sample_times = [i * sample_dt for i in range(n_samples)]
    si = 0
    half = H / 2
    total = 0.0
    second = 0.0
    prev = 0.0

    from . import metrics  # local import: metrics depends on this module

    def emit_until(t_next: float):
        nonlocal si
        while si < n_samples and sample_times[si] < t_next:
            report.t.append(sample_times[si])
            report.reward_rate.append(state.reward_rate())
            report.Y.append(list(state.Y))
            q, v = metrics.sample_diagnostics(state, policy, rho_known)
            report.q_max.append(q)
            report.V.append(v)
            report.counter_series.append(dict(state.counters))
            si += 1

    def advance(t_next: float):
        nonlocal total, second, prev
        r = state.reward_rate()
        total += r * (t_next - prev)
        if t_next > half:
            second += r * (t_next - max(prev, half))
        prev = t_next

    times, types, durs = workload.times, workload.types, workload.durations
    n_arr = len(times)
    ai = 0
    heap: list[tuple[float, int, int]] = []
    seq = n_arr
    shadow = [0] * profile.J
    shadow_heap: list[tuple[float, int]] = []
    n_events = 0
    while True:
        t_arr = times[ai] if ai < n_arr else math.inf
        while heap and heap[0][2] not in state.jobs:
            heapq.heappop(heap)  # preempted job: stale departure
        t_dep = heap[0][0] if heap else math.inf
        te = min(t_arr, t_dep)
        if te > H:
            break
        emit_until(te)
        advance(te)
        state.clock = te
        if t_arr <= t_dep:
            j = int(types[ai])
            job = Job(ai, j, float(t_arr), float(t_arr + durs[ai]))
            ai += 1
            shadow[j] += 1
            heapq.heappush(shadow_heap, (job.departure, j))
            _drain(shadow_heap, shadow, te)
            if policy.on_arrival(state, job):
                heapq.heappush(heap, (job.departure, seq, job.jid))
                seq += 1
            else:
                state.counters["rejections"] += 1
        else:
            _, _, jid = heapq.heappop(heap)
            _drain(shadow_heap, shadow, te)
            job = state.apply_departure(jid)
            mig = state.counters["migrations"]
            policy.on_departure(state, job)
            if check and state.counters["migrations"] - mig > 1:
                raise InvariantViolation("more than one migration after a departure",
                                         state.dump())
        n_events += 1
        if check:
            state.check(full=bool(full_check_every) and n_events % full_check_every == 0)
            if any(y > s for y, s in zip(state.Y, shadow)):
                raise InvariantViolation(f"occupancy {state.Y} exceeds shadow {shadow}",
                                         state.dump())
    emit_until(H + sample_dt / 2)
    advance(H)
    if check:
        state.check(full=True)
    report.total_reward = total
    report.second_half_reward = second
    report.counters = dict(state.counters)
    report.meta = {"sample_dt": sample_dt, "events": n_events, "arrivals": int(n_arr),
                   **policy.describe()}
    if bound:
        report.bound = upper_bound_series(profile, L, workload, report.t)
    return report


def _drain(shadow_heap, shadow, t):
    # strict: a shadow job leaving exactly at t may still be in the real
    # system until its own departure event at t is processed
    while shadow_heap and shadow_heap[0][0] < t:
        shadow[heapq.heappop(shadow_heap)[1]] -= 1


def upper_bound_series(profile: CloudProfile, L: int, workload: Workload,
                       sample_times: Sequence[float], cache: dict | None = None) -> list[float]:
    """F*(L, Y_hat(t)) at each sample time, Y_hat the infinite-server occupancy.

    Solved at every sample (with memoisation on Y_hat), so the series bounds
    the reward rate of any policy fed the same workload at those instants.
    """
    from .lp_bounds import optimal_static

    if len(sample_times) == 0:
        return []
    occ = shadow_occupancy(workload, profile.J, sample_times)
    cache = {} if cache is None else cache
    out = []
    for row in occ:
        key = tuple(int(v) for v in row)
        if key not in cache:
            cache[key] = 0.0 if not any(key) else float(optimal_static(L, key, profile).value)
        out.append(cache[key])
    return out
