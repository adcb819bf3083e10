"""Dense two-phase primal simplex and the static LP bounds.

The solver runs either on exact rationals (``mode="rational"``) or on
float64 with a 1e-9 pivot tolerance.  Bland's rule picks both entering and
leaving variables, so it always terminates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Literal, Sequence

import numpy as np

from .core_model import CloudProfile, Config, Number, to_fraction

FLOAT_TOL = 1e-9
MAX_COLUMNS = 50_000

Relation = Literal["<=", "=", ">="]


class LpSizeError(RuntimeError):
    pass


@dataclass
class LinearProgram:
    """maximize c.x subject to rows (a, rel, b) and x >= 0."""

    objective: list
    constraints: list[tuple[list, Relation, object]] = field(default_factory=list)

    def add(self, coeffs: Sequence, rel: Relation, rhs) -> None:
        if rel not in ("<=", "=", ">="):
            raise ValueError(f"unknown relation {rel!r}")
        if len(coeffs) != len(self.objective):
            raise ValueError("constraint width differs from objective")
        self.constraints.append((list(coeffs), rel, rhs))

    @property
    def n_vars(self) -> int:
        return len(self.objective)


@dataclass
class LpSolution:
    status: Literal["optimal", "infeasible", "unbounded"]
    objective_value: Fraction | float | None
    primal: list
    iterations: int

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _pivot(T, r: int, c: int) -> None:
    T[r] = T[r] / T[r, c]
    col = T[:, c].copy()
    col[r] = 0
    nz = np.nonzero(col)[0]
    if len(nz):
        T[nz] -= np.outer(col[nz], T[r])


def _simplex(T, basis: list[int], allowed: int, tol, max_iter: int) -> tuple[str, int]:
    """Maximise the objective in the last row of T (stored as -c).

    Columns >= ``allowed`` (before the rhs) never enter.
    """
    m = T.shape[0] - 1
    it = 0
    while it < max_iter:
        obj = T[m, :allowed]
        cand = np.nonzero(obj < -tol)[0]
        if len(cand) == 0:
            return "optimal", it
        c = int(cand[0])  # Bland: lowest index with positive reduced gain
        col = T[:m, c]
        rows = np.nonzero(col > tol)[0]
        if len(rows) == 0:
            return "unbounded", it
        ratios = [T[r, -1] / T[r, c] for r in rows]
        best = min(ratios)
        # Bland: among tied ratios, leave the lowest-index basic variable
        r = min((rr for rr, q in zip(rows, ratios) if q == best or
                 (tol and abs(q - best) <= tol)), key=lambda rr: basis[rr])
        _pivot(T, int(r), c)
        basis[int(r)] = c
        it += 1
    raise RuntimeError("simplex iteration limit reached")


def _build_tableau(lp: LinearProgram, exact: bool):
    conv = to_fraction if exact else float
    rows = []
    for coeffs, rel, rhs in lp.constraints:
        a = [conv(v) for v in coeffs]
        b = conv(rhs)
        if b < 0:
            a = [-v for v in a]
            b = -b
            rel = {"<=": ">=", ">=": "<=", "=": "="}[rel]
        rows.append((a, rel, b))
    n = lp.n_vars
    m = len(rows)
    n_slack = sum(1 for _, rel, _ in rows if rel != "=")
    n_art = sum(1 for _, rel, _ in rows if rel != "<=")
    width = n + n_slack + n_art + 1
    zero = Fraction(0) if exact else 0.0
    one = Fraction(1) if exact else 1.0
    T = np.full((m + 1, width), zero, dtype=object if exact else float)
    basis = []
    s = n
    a_col = n + n_slack
    for i, (a, rel, b) in enumerate(rows):
        T[i, :n] = a
        T[i, -1] = b
        if rel == "<=":
            T[i, s] = one
            basis.append(s)
            s += 1
        else:
            if rel == ">=":
                T[i, s] = -one
                s += 1
            T[i, a_col] = one
            basis.append(a_col)
            a_col += 1
    return T, basis, n + n_slack


def _drive_out_artificials(T, basis, first_art: int, tol) -> None:
    m = T.shape[0] - 1
    for i in range(m):
        if basis[i] >= first_art:
            nz = [c for c in range(first_art) if abs(T[i, c]) > tol]
            if nz:
                _pivot(T, i, nz[0])
                basis[i] = nz[0]


def _phase_two(lp, T, basis, allowed, exact, tol, max_iter) -> LpSolution | tuple:
    conv = to_fraction if exact else float
    zero = Fraction(0) if exact else 0.0
    n = lp.n_vars
    m = T.shape[0] - 1
    T[m, :] = zero
    T[m, :n] = [-conv(v) for v in lp.objective]
    for i, col in enumerate(basis):
        if col < allowed and T[m, col] != 0:
            T[m] -= T[m, col] * T[i]
    status, it = _simplex(T, basis, allowed, tol, max_iter)
    if status == "unbounded":
        return LpSolution("unbounded", None, [], it)
    x = [zero] * n
    for i, col in enumerate(basis):
        if col < n:
            x[col] = T[i, -1]
    value = sum((conv(c) * v for c, v in zip(lp.objective, x)), zero)
    return LpSolution("optimal", value, x, it)


def _cold_solve(lp, exact, max_iter) -> tuple[LpSolution, list[int]]:
    tol = 0 if exact else FLOAT_TOL
    T, basis, first_art = _build_tableau(lp, exact)
    m = T.shape[0] - 1
    width = T.shape[1]
    iters = 0
    if first_art < width - 1:
        zero = T[0, 0] * 0
        # phase one: maximise -(sum of artificials)
        T[m, :] = zero
        for i, col in enumerate(basis):
            if col >= first_art:
                T[m] -= T[i]
        T[m, first_art:width - 1] = zero
        _, it = _simplex(T, basis, width - 1, tol, max_iter)
        iters += it
        if T[m, -1] < -tol or (exact and T[m, -1] != 0):
            return LpSolution("infeasible", None, [], iters), basis
        _drive_out_artificials(T, basis, first_art, tol)
        allowed = first_art
    else:
        allowed = width - 1
    sol = _phase_two(lp, T, basis, allowed, exact, tol, max_iter)
    sol.iterations += iters
    return sol, basis


def _warm_rational(lp, target: list[int], max_iter) -> LpSolution | None:
    """Re-derive a float-optimal basis exactly and finish with exact pivots.

    Returns None when the basis is singular or infeasible in exact arithmetic.
    """
    T, basis, first_art = _build_tableau(lp, True)
    m = T.shape[0] - 1
    want = set(target)
    pivots = 0
    for c in target:
        if c in basis:
            continue
        rows = [r for r in range(m) if basis[r] not in want and T[r, c] != 0]
        if not rows:
            return None
        r = rows[0]
        _pivot(T, r, c)
        basis[r] = c
        pivots += 1
    if any(T[r, -1] < 0 for r in range(m)):
        return None
    if any(basis[r] >= first_art and T[r, -1] != 0 for r in range(m)):
        return None
    _drive_out_artificials(T, basis, first_art, 0)
    sol = _phase_two(lp, T, basis, first_art, True, 0, max_iter)
    sol.iterations += pivots
    return sol


def solve_lp(lp: LinearProgram, mode: Literal["rational", "float"] = "float",
             max_iter: int = 100_000, warm_start: bool = True) -> LpSolution:
    """Solve ``lp`` with the two-phase simplex method.

    In rational mode the float solver first finds a candidate optimal basis
    (``warm_start``); the exact solve then starts from that basis and keeps
    pivoting until exact optimality, so the answer is still exact.
    """
    n = lp.n_vars
    if n < 1:
        raise ValueError("LP needs at least one variable")
    if n > MAX_COLUMNS:
        raise LpSizeError(f"{n} columns exceeds the dense tableau limit {MAX_COLUMNS}")
    if mode not in ("rational", "float"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "float":
        if not all(np.isfinite(float(v)) for v in lp.objective):
            raise ValueError("non-finite objective coefficient")
        return _cold_solve(lp, False, max_iter)[0]
    if warm_start:
        fsol, fbasis = _cold_solve(lp, False, max_iter)
        if fsol.optimal:
            sol = _warm_rational(lp, fbasis, max_iter)
            if sol is not None:
                return sol
    return _cold_solve(lp, True, max_iter)[0]


# -- bound builders -----------------------------------------------------------

@dataclass
class BoundSolution:
    """Optimal value of a static LP plus its configuration mix."""

    value: Fraction | float
    x: dict[Config, Fraction | float]
    y: list
    lp: LpSolution


def _columns(profile: CloudProfile, columns: str) -> list[Config]:
    if columns == "maximal":
        return profile.maximal_configs
    if columns == "all":
        return profile.config_set
    raise ValueError(f"unknown column set {columns!r}")


def _bound_lp(profile: CloudProfile, cap, servers, columns: str, equality: bool
              ) -> tuple[LinearProgram, list[Config]]:
    J = profile.J
    ks = _columns(profile, columns)
    nk = len(ks)
    # variables: x_k for k in ks, then y_j
    obj = [0] * nk + [t.reward for t in profile.types]
    lp = LinearProgram(obj)
    for j in range(J):
        row = [0] * (nk + J)
        row[nk + j] = 1
        lp.add(row, "<=", cap[j])
    for j in range(J):
        row = [k[j] for k in ks] + [0] * J
        row[nk + j] = -1
        lp.add(row, "=" if equality else ">=", 0)
    lp.add([1] * nk + [0] * J, "=", servers)
    return lp, ks


def _solve_bound(profile, cap, servers, mode, columns, equality) -> BoundSolution:
    lp, ks = _bound_lp(profile, cap, servers, columns, equality)
    sol = solve_lp(lp, mode)
    if not sol.optimal:
        raise RuntimeError(f"static bound LP ended {sol.status}")
    nk = len(ks)
    x = {k: v for k, v in zip(ks, sol.primal[:nk]) if v != 0}
    return BoundSolution(sol.objective_value, x, sol.primal[nk:], sol)


def optimal_normalized(rho: Sequence[Number], profile: CloudProfile, mode: str = "float",
                       columns: str = "maximal", equality: bool = False) -> BoundSolution:
    """U*[rho]: best reward per server over fractional configuration mixes.

    With the default ``>=`` slot constraint only maximal configurations can
    matter, so they are the default column set.
    """
    rho = [to_fraction(r) for r in rho]
    if len(rho) != profile.J:
        raise ValueError("rho length mismatch")
    return _solve_bound(profile, rho, 1, mode, columns, equality)


def optimal_static(L: int, reference: Sequence[Number], profile: CloudProfile,
                   mode: str = "float", columns: str = "maximal") -> BoundSolution:
    """F*(L, Y_hat): continuous relaxation of the best static packing."""
    ref = [to_fraction(r) for r in reference]
    if len(ref) != profile.J:
        raise ValueError("reference length mismatch")
    return _solve_bound(profile, ref, L, mode, columns, False)
