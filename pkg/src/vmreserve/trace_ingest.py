"""Task traces: CSV parsing/writing, task-to-type mapping and synthetic fixtures.

Trace schema (one task per row, ``#`` lines are comments)::

    # time_unit: seconds
    arrival_time,duration,cpu,mem,priority
    0.0,120.5,0.1,0.05,0

Resource columns are fractions of one server; any column other than
``arrival_time``, ``duration`` and ``priority`` is treated as a resource.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core_model import SCALE, CloudProfile, VMType
from .sim_engine import Workload

log = logging.getLogger(__name__)

REQUIRED = ("arrival_time", "duration", "cpu", "mem", "priority")
PRIORITY_FACTOR = {0: 1, 1: 3, 2: 9}
MIN_SIZE_EXP = 30  # sizes below 2^-30 are clamped up


class TraceError(ValueError):
    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


@dataclass(frozen=True)
class RawTask:
    arrival_time: float
    duration: float
    resources: tuple[float, ...]
    priority: int


@dataclass(frozen=True)
class MappedType:
    size: Fraction
    priority: int
    reward: Fraction


def _check(task: RawTask, line: int) -> None:
    if not (task.duration > 0 and math.isfinite(task.duration)):
        raise TraceError(f"duration must be positive, got {task.duration}", line)
    if not (task.arrival_time >= 0 and math.isfinite(task.arrival_time)):
        raise TraceError(f"arrival_time must be >= 0, got {task.arrival_time}", line)
    if any(not (r >= 0) for r in task.resources):
        raise TraceError(f"negative resource request {task.resources}", line)
    if task.priority not in PRIORITY_FACTOR:
        raise TraceError(f"priority must be 0, 1 or 2, got {task.priority}", line)


def parse_trace(path: str | Path, strict: bool = True,
                issues: list[TraceError] | None = None) -> list[RawTask]:
    """Read a trace CSV; tasks come back sorted by arrival time (stable).

    In strict mode the first malformed row raises :class:`TraceError`; in
    lenient mode bad rows are skipped, logged and appended to ``issues``.
    """
    tasks: list[RawTask] = []
    with open(path, newline="") as f:
        lines = (ln for ln in enumerate(f, start=1))
        header = None
        for lineno, raw in lines:
            s = raw.strip()
            if not s or s.startswith("#"):
                continue
            header = [h.strip() for h in next(csv.reader([s]))]
            break
        if header is None:
            raise TraceError("missing header row")
        missing = [c for c in REQUIRED if c not in header]
        if missing:
            raise TraceError(f"missing columns {missing}", lineno)
        i_arr, i_dur, i_pri = (header.index(c) for c in ("arrival_time", "duration", "priority"))
        res_cols = [i for i, h in enumerate(header) if h not in ("arrival_time", "duration",
                                                                  "priority")]
        for lineno, raw in lines:
            s = raw.strip()
            if not s or s.startswith("#"):
                continue
            try:
                row = next(csv.reader([s]))
                if len(row) != len(header):
                    raise TraceError(f"expected {len(header)} fields, got {len(row)}", lineno)
                task = RawTask(float(row[i_arr]), float(row[i_dur]),
                               tuple(float(row[i]) for i in res_cols), int(row[i_pri]))
                _check(task, lineno)
            except (ValueError, TraceError) as e:
                err = e if isinstance(e, TraceError) else TraceError(str(e), lineno)
                if strict:
                    raise err from None
                log.warning("skipping %s", err)
                if issues is not None:
                    issues.append(err)
                continue
            tasks.append(task)
    tasks.sort(key=lambda t: t.arrival_time)
    return tasks


def trace_resource_names(path: str | Path) -> list[str]:
    with open(path, newline="") as f:
        for raw in f:
            s = raw.strip()
            if s and not s.startswith("#"):
                header = [h.strip() for h in next(csv.reader([s]))]
                return [h for h in header if h not in ("arrival_time", "duration", "priority")]
    raise TraceError("missing header row")


def write_trace(path: str | Path, tasks: Iterable[RawTask],
                resource_names: Sequence[str] = ("cpu", "mem"), time_unit: str = "seconds") -> None:
    """Write tasks in the trace schema; floats use repr so parsing round-trips exactly."""
    with open(path, "w", newline="") as f:
        f.write(f"# time_unit: {time_unit}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["arrival_time", "duration", *resource_names, "priority"])
        for t in tasks:
            if len(t.resources) != len(resource_names):
                raise ValueError("task resources do not match the column names")
            w.writerow([repr(t.arrival_time), repr(t.duration),
                        *(repr(r) for r in t.resources), t.priority])


def round_up_pow_half(x: float | Fraction) -> Fraction:
    """Smallest power of 1/2 that is >= x (x clamped into (0, 1])."""
    v = Fraction(repr(x)) if isinstance(x, float) else Fraction(x)
    if v > 1:
        log.warning("request %s exceeds a whole server; clamped to 1", x)
        v = Fraction(1)
    size = Fraction(1)
    for _ in range(MIN_SIZE_EXP):
        if size / 2 >= v:
            size /= 2
        else:
            break
    return size


def map_task_to_type(task: RawTask) -> MappedType:
    """Size = largest request rounded up to a power of 1/2; reward = size x {1,3,9}."""
    size = round_up_pow_half(max(task.resources))
    return MappedType(size, task.priority, size * PRIORITY_FACTOR[task.priority])


def build_trace_profile(tasks: Sequence[RawTask], horizon: float | None = None
                        ) -> tuple[CloudProfile, Workload]:
    """One-resource profile (capacity 1) with one type per (size, priority).

    Types are ordered by priority, then size, both descending.  Arrival and
    service rates are informational (tasks per unit time over the trace span,
    inverse mean duration); the workload replays the trace verbatim.
    """
    if not tasks:
        raise TraceError("trace has no tasks")
    mapped = [map_task_to_type(t) for t in tasks]
    keys = sorted({(m.priority, m.size) for m in mapped}, key=lambda k: (-k[0], -k[1]))
    index = {k: i for i, k in enumerate(keys)}
    span = max(t.arrival_time for t in tasks) or 1.0
    counts = [0] * len(keys)
    dur = [0.0] * len(keys)
    jobs = []
    for t, m in zip(tasks, mapped):
        j = index[(m.priority, m.size)]
        counts[j] += 1
        dur[j] += t.duration
        jobs.append((t.arrival_time, j, t.duration))
    types = []
    for (pri, size), n, d in zip(keys, counts, dur):
        types.append(VMType((int(size * SCALE),), size * PRIORITY_FACTOR[pri],
                            Fraction(repr(n / span)), Fraction(repr(n / d)),
                            name=f"p{pri}s{size}", priority=pri, size=size))
    prof = CloudProfile((SCALE,), tuple(types), resource_names=("size",),
                        meta={"source": "trace"})
    return prof, Workload.from_jobs(jobs, horizon)


# -- fixtures -----------------------------------------------------------------

def priority_spike_trace(seed: int = 0, L: int = 250, horizon: float = 3000.0,
                         mean_duration: float = 100.0) -> list[RawTask]:
    """Synthetic trace: steady mixed load, a priority-0 surge, then a priority-1 surge.

    Rates scale with L so that the baseline fills about 70% of capacity and
    each surge pushes demand well past it.  Sizes land on 1/2, 1/4 and 1/8.
    """
    rng = np.random.default_rng(seed)
    sizes = (0.5, 0.25, 0.125)
    size_p = (0.2, 0.4, 0.4)
    mean_size = sum(s * p for s, p in zip(sizes, size_p))
    # jobs/time so that the occupied capacity of a class is ``frac * L``
    def rate(frac):
        return frac * L / (mean_size * mean_duration)

    phases = [  # (start, end, {priority: fraction of capacity})
        (0.0, horizon, {0: 0.45, 1: 0.2, 2: 0.05}),
        (horizon / 4, horizon / 2, {0: 0.6}),
        (horizon / 2, 3 * horizon / 4, {1: 0.6}),
    ]
    tasks = []
    for start, end, mix in phases:
        for pri, frac in mix.items():
            lam = rate(frac)
            n = rng.poisson(lam * (end - start))
            arr = np.sort(rng.uniform(start, end, n))
            dur = rng.exponential(mean_duration, n)
            sz = rng.choice(len(sizes), n, p=size_p)
            for a, d, si in zip(arr, dur, sz):
                hi = sizes[si]
                # largest request strictly inside (hi/2, hi]
                top = hi * float(rng.uniform(0.55, 1.0))
                other = top * float(rng.uniform(0.1, 1.0))
                res = (top, other) if rng.random() < 0.5 else (other, top)
                tasks.append(RawTask(round(float(a), 6), max(round(float(d), 6), 1e-6),
                                     tuple(round(r, 6) for r in res), pri))
    tasks.sort(key=lambda t: t.arrival_time)
    return tasks
