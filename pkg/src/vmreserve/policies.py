"""Admission / placement policies driven by the simulator.

A policy sees the :class:`~vmreserve.sim_engine.SystemState` and changes it
only through the state's primitives (``apply_arrival``, ``migrate``,
``reassign``, ``resize``, ``preempt``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import metrics
from .core_model import CloudProfile, Config
from .greedy_planner import GpaResult, gpa
from .sim_engine import InvariantViolation, Job, SystemState, Workload, upper_bound_series


def reservation_factor(L: int, exponent: float = 1.5) -> int:
    """g(L) = ceil((ln L)^exponent), at least 1."""
    if L < 1:
        raise ValueError("L must be >= 1")
    return max(1, math.ceil(math.log(L) ** exponent))


class Policy:
    name = "policy"

    def bind(self, state: SystemState, seed: int) -> None:
        """Called once before ``on_init``; policies keep their own streams here."""

    def on_init(self, state: SystemState) -> None:
        pass

    def on_arrival(self, state: SystemState, job: Job) -> bool:
        raise NotImplementedError

    def on_departure(self, state: SystemState, job: Job) -> None:
        pass

    def describe(self) -> dict:
        return {"policy": self.name}


@dataclass
class CraResult:
    gpa: GpaResult
    i_star: int
    reassigned: list[tuple[int, Config]]
    reject: set[int]


class Dra(Policy):
    """Dynamic reservation: GPA target on Y + g(L), classification, migrations.

    ``g`` overrides the reservation factor (an int, or a function of L);
    ``cra_every`` runs the classification every that many update times and
    ``cra_dt`` at most once per that much simulated time.  ``reference``
    replaces the Y + g(L) workload estimate when given (a function of state).
    """

    name = "dra"

    def __init__(self, g: int | Callable[[int], int] | None = None, g_exp: float = 1.5,
                 cra_every: int = 1, cra_dt: float | None = None,
                 reference: Callable[[SystemState], Sequence[int]] | None = None):
        if cra_every < 1:
            raise ValueError("cra_every must be >= 1")
        self._g = g
        self.g_exp = g_exp
        self.cra_every = cra_every
        self.cra_dt = cra_dt
        self.reference = reference
        self.g = 1
        self.last_gpa: GpaResult | None = None
        self.last_cra: CraResult | None = None
        self._updates = 0
        self._last_cra_t = -math.inf
        self.n_cra = 0

    def bind(self, state: SystemState, seed: int) -> None:
        if self._g is None:
            self.g = reservation_factor(state.L, self.g_exp)
        elif callable(self._g):
            self.g = int(self._g(state.L))
        else:
            self.g = int(self._g)
        if self.g < 1:
            raise ValueError("reservation factor must be >= 1")

    def describe(self) -> dict:
        return {"policy": self.name, "g": self.g, "g_exp": self.g_exp,
                "cra_every": self.cra_every, "cra_dt": self.cra_dt}

    # -- CRA ---------------------------------------------------------------

    def _find_empty(self, state: SystemState) -> int | None:
        """An empty rank-(J+1) server: zero configuration first, then the
        configuration lowest in the order, then lowest id."""
        prof = state.profile
        cands = [k for k, e in state.empty_by_config.items() if e]
        cands.sort(key=prof.int_key)
        for k in cands:
            e = state.empty_by_config[k]
            if k in state.cfg_rank:
                nr = state.cfg_n_ranked[k]
                ok = [sid for sid in e if state.position(sid) >= nr]
            else:
                ok = e
            if ok:
                return min(ok)
        return None

    def cra(self, state: SystemState, reference: Sequence[int] | None = None) -> CraResult:
        """Classify servers against GPA(reference) and reassign empty ones."""
        J = state.J
        default_ref = reference is None
        if default_ref:
            reference = [y + self.g for y in state.Y]
        res = gpa(reference, state.L, state.profile)
        state.cfg_rank = {}
        state.cfg_n_ranked = {}
        i_star = J
        moved = []
        for i, (k, xh) in enumerate(zip(res.configs, res.counts), start=1):
            X = state.count(k)
            state.cfg_rank[k] = i
            if X >= xh:
                # the oldest xh servers (indices above X - xh) get rank i
                state.cfg_n_ranked[k] = xh
                continue
            state.cfg_n_ranked[k] = X
            while X < xh:
                sid = self._find_empty(state)
                if sid is None:
                    i_star = min(i_star, i)
                    break
                state.reassign(sid, k)
                moved.append((sid, k))
                X += 1
                state.cfg_n_ranked[k] = X
        reject = set()
        for k, lst in state.per_config.items():
            if not lst:
                continue
            r = state.cfg_rank.get(k, J + 1)
            if len(lst) > state.cfg_n_ranked.get(k, 0):
                r = J + 1
            if r > i_star:
                reject.add(lst[-1])
        state.reject = reject
        self.last_gpa = res
        self.last_cra = CraResult(res, i_star, moved, reject)
        self.n_cra += 1
        # the q bound is a property of the Y + g(L) reference only
        if default_ref and getattr(state, "check_enabled", False):
            metrics.check_after_cra(state, res, self.g)
        return self.last_cra

    def _update(self, state: SystemState) -> None:
        self._updates += 1
        if self._updates % self.cra_every:
            return
        if self.cra_dt is not None and state.clock - self._last_cra_t < self.cra_dt:
            return
        self._last_cra_t = state.clock
        ref = None if self.reference is None else self.reference(state)
        self.cra(state, ref)

    # -- callbacks ---------------------------------------------------------

    def on_init(self, state: SystemState) -> None:
        # servers holding jobs adopt their placement as configuration
        for s in state.servers:
            if not s.is_empty and any(p > c for p, c in zip(s.placement, s.config)):
                state.resize(s.sid, tuple(s.placement))
        self._last_cra_t = state.clock
        ref = None if self.reference is None else self.reference(state)
        self.cra(state, ref)

    def accept_target(self, state: SystemState, j: int) -> int | None:
        """AG_j: lowest rank, then highest index (oldest), then lowest id."""
        best, best_key = None, None
        for sid in state.free[j]:
            if sid in state.reject:
                continue
            key = (state.rank(sid), state.position(sid), sid)
            if best_key is None or key < best_key:
                best, best_key = sid, key
        return best

    def reject_source(self, state: SystemState, j: int) -> int | None:
        """RG_j: the highest-rank Reject Group server holding a type-j job."""
        best, best_key = None, None
        for sid in state.reject:
            if state.servers[sid].placement[j] > 0:
                key = (-state.rank(sid), sid)
                if best_key is None or key < best_key:
                    best, best_key = sid, key
        return best

    def on_arrival(self, state: SystemState, job: Job) -> bool:
        sid = self.accept_target(state, job.type)
        if sid is None:
            return False
        state.apply_arrival(sid, job)
        self._update(state)
        return True

    def on_departure(self, state: SystemState, job: Job) -> None:
        j = job.type
        if job.server not in state.reject:
            src = self.reject_source(state, j)
            if src is not None:
                moving = min(state.servers[src].jobs[j])
                state.migrate(moving, job.server)
        self._update(state)


class DraPreempt(Dra):
    """DRA that, on rejecting a priority >= 1 job, preempts priority-0 jobs.

    Priority-0 jobs go smallest first until their total size reaches
    g(L) times the rejected job's size; then classification runs and the
    arrival is retried once.  Preempted jobs are lost.
    """

    name = "dra-preempt"

    def on_arrival(self, state: SystemState, job: Job) -> bool:
        if super().on_arrival(state, job):
            return True
        types = state.profile.types
        t = types[job.type]
        if t.priority < 1:
            return False
        victims = self.preempt_candidates(state)
        if not victims:
            return False
        need = self.g * _size(t)
        done = Fraction(0)
        for _, _, _, jid in victims:
            if done >= need:
                break
            done += _size(types[state.jobs[jid].type])
            state.preempt(jid)
        self.cra(state)
        sid = self.accept_target(state, job.type)
        if sid is None:
            return False
        state.apply_arrival(sid, job)
        self._update(state)
        return True

    def preempt_candidates(self, state: SystemState) -> list[tuple]:
        types = state.profile.types
        out = []
        for jid, jb in state.jobs.items():
            t = types[jb.type]
            if t.priority == 0:
                srv = state.servers[jb.server]
                # ties: drain Reject Group and lightly used servers first
                out.append((_size(t), 0 if jb.server in state.reject else 1,
                            srv.n_jobs(), jid))
        out.sort()
        return out


def _size(t) -> Fraction:
    if t.size is not None:
        return Fraction(t.size)
    raise ValueError(f"type {t.name!r} has no size; preemption needs sized types")


class PowerOfD(Policy):
    """Sample d servers with replacement; place in the least loaded one that fits.

    Load is the sum over resources of the used fraction of capacity.  A
    server's configuration always equals its placement.
    """

    name = "pod"

    def __init__(self, d: int = 5):
        if d < 1:
            raise ValueError("d must be >= 1")
        self.d = d
        self.rng: np.random.Generator | None = None

    def bind(self, state: SystemState, seed: int) -> None:
        ss = np.random.SeedSequence([seed, 0x706F64])
        self.rng = np.random.Generator(np.random.PCG64(ss))
        prof = state.profile
        self._w = []
        for t in prof.types:
            w = 0.0
            for dem, cap in zip(t.demand, prof.capacity):
                if cap > 0:
                    w += dem / cap
            self._w.append(w)

    def describe(self) -> dict:
        return {"policy": self.name, "d": self.d}

    def load(self, state: SystemState, sid: int) -> float:
        return sum(p * w for p, w in zip(state.servers[sid].placement, self._w))

    def on_arrival(self, state: SystemState, job: Job) -> bool:
        j = job.type
        best, best_key = None, None
        for sid in self.rng.integers(0, state.L, self.d):
            sid = int(sid)
            s = state.servers[sid]
            grown = list(s.placement)
            grown[j] += 1
            if not state.profile.is_feasible(grown):
                continue
            key = (self.load(state, sid), sid)
            if best_key is None or key < best_key:
                best, best_key = sid, key
        if best is None:
            return False
        s = state.servers[best]
        grown = list(s.placement)
        grown[j] += 1
        state.resize(best, tuple(grown))
        state.apply_arrival(best, job)
        return True

    def on_departure(self, state: SystemState, job: Job) -> None:
        s = state.servers[job.server]
        state.resize(job.server, tuple(s.placement))


class RejectAll(Policy):
    """Admits nothing; used to drive the upper-bound reference run."""

    name = "upper-bound"

    def on_arrival(self, state: SystemState, job: Job) -> bool:
        return False


def upper_bound_reference(profile: CloudProfile, L: int, workload: Workload,
                          sample_times: Sequence[float]) -> list[float]:
    """Reward-rate bound series F*(L, Y_hat(t)) for a workload (see sim_engine)."""
    return upper_bound_series(profile, L, workload, sample_times)


def make_policy(name: str, *, d: int = 5, g_exp: float = 1.5, g: int | None = None,
                cra_every: int = 1, cra_dt: float | None = None) -> Policy:
    if name == "dra":
        return Dra(g=g, g_exp=g_exp, cra_every=cra_every, cra_dt=cra_dt)
    if name == "dra-preempt":
        return DraPreempt(g=g, g_exp=g_exp, cra_every=cra_every, cra_dt=cra_dt)
    if name == "pod":
        return PowerOfD(d)
    if name == "upper-bound":
        return RejectAll()
    raise ValueError(f"unknown policy {name!r}")


__all__ = ["Policy", "Dra", "DraPreempt", "PowerOfD", "RejectAll", "CraResult",
           "reservation_factor", "upper_bound_reference", "make_policy", "InvariantViolation"]
