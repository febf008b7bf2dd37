"""Dense two-phase simplex with Bland's rule.

Solves  max c.x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  x >= 0  on a dense
tableau.  Bland's smallest-index rule is used for both the entering and the
leaving variable, which rules out cycling; a generous iteration cap acts as a
hard guard anyway.  Desk-scale only: no sparsity, no factorization updates.

``solve`` runs in floating point and also returns dual multipliers for the
rows (recovered from the final basis).  ``solve_exact`` reruns the same
pivoting in exact rational arithmetic for tiny instances, which is handy for
golden-value tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


class SimplexGuardError(RuntimeError):
    """Iteration cap exceeded; should be unreachable under Bland's rule."""


@dataclass
class LpResult:
    status: str
    value: float
    x: np.ndarray = None
    duals: np.ndarray = None        # one multiplier per row, ub rows first
    basis: list = None
    iterations: int = 0


def _pivot(T, r, j):
    T[r] = T[r] / T[r, j]
    col = T[:, j].copy()
    col[r] = 0
    T -= np.outer(col, T[r])


def _bland_entering(obj_row, tol):
    for j, rc in enumerate(obj_row):
        if rc > tol:
            return j
    return -1


def _bland_leaving(T, j, basis, tol):
    best_ratio = None
    best_row = -1
    best_var = None
    for i in range(T.shape[0] - 1):
        a = T[i, j]
        if a <= tol:
            continue
        ratio = T[i, -1] / a
        if best_ratio is None or ratio < best_ratio - tol or (
            abs(ratio - best_ratio) <= tol and basis[i] < best_var
        ):
            best_ratio = ratio
            best_row = i
            best_var = basis[i]
    return best_row


def _run(T, basis, tol, max_iter):
    it = 0
    while True:
        j = _bland_entering(T[-1, :-1], tol)
        if j < 0:
            return it
        r = _bland_leaving(T, j, basis, tol)
        if r < 0:
            raise _Unbounded
        _pivot(T, r, j)
        basis[r] = j
        it += 1
        if it > max_iter:
            raise SimplexGuardError(f"simplex exceeded {max_iter} pivots")


class _Unbounded(Exception):
    pass


def _prepare(c, A_ub, b_ub, A_eq, b_eq, value):
    """Assemble rows with nonnegative rhs; returns (A, b, signs, n_ub)."""
    rows = []
    rhs = []
    signs = []
    n = len(c)
    for A, b in ((A_ub, b_ub), (A_eq, b_eq)):
        for i in range(len(b)):
            row = [value(v) for v in A[i]]
            assert len(row) == n
            bv = value(b[i])
            if bv < 0:
                row = [-v for v in row]
                bv = -bv
                signs.append(-1)
            else:
                signs.append(1)
            rows.append(row)
            rhs.append(bv)
    return rows, rhs, signs


def _solve_core(c, A_ub, b_ub, A_eq, b_eq, value, zero, one, tol, max_iter, exact):
    n = len(c)
    m_ub = len(b_ub)
    rows, rhs, signs = _prepare(c, A_ub, b_ub, A_eq, b_eq, value)
    m = len(rows)

    # layout: [x (n) | slack (m_ub) | artificial (one per row needing it)]
    needs_art = []
    for i in range(m):
        if i < m_ub and signs[i] > 0:
            needs_art.append(False)   # the +1 slack is basic
        else:
            needs_art.append(True)
    n_art = sum(needs_art)
    n_tot = n + m_ub + n_art

    T = np.full((m + 1, n_tot + 1), zero, dtype=object if exact else float)
    basis = [0] * m
    ai = 0
    for i in range(m):
        for j in range(n):
            T[i, j] = rows[i][j]
        if i < m_ub:
            T[i, n + i] = one if signs[i] > 0 else -one
        if needs_art[i]:
            T[i, n + m_ub + ai] = one
            basis[i] = n + m_ub + ai
            ai += 1
        else:
            basis[i] = n + i
        T[i, -1] = rhs[i]

    # phase 1: maximize -(sum of artificials)
    if n_art:
        for j in range(n + m_ub, n_tot):
            T[-1, j] = -one
        for i in range(m):
            if needs_art[i]:
                T[-1] += T[i]          # zero out reduced costs of basic artificials
        it1 = _run(T, basis, tol, max_iter)
        # obj row keeps (0 - c_B . x_B) in the rhs column, which for the
        # phase-1 costs is the current sum of artificial values
        scale = max(1.0, float(sum(abs(v) for v in rhs))) if rhs else 1.0
        if T[-1, -1] > (tol * scale if not exact else 0):
            return LpResult(status=INFEASIBLE, value=float("-inf")), None, None, None
        # drive surviving artificials out of the basis where possible
        for i in range(m):
            if basis[i] >= n + m_ub:
                for j in range(n + m_ub):
                    if abs(T[i, j]) > tol if tol else T[i, j] != 0:
                        _pivot(T, i, j)
                        basis[i] = j
                        break
        T = np.delete(T, np.s_[n + m_ub : n_tot], axis=1)
        n_tot = n + m_ub
    else:
        it1 = 0

    # phase 2: original objective
    T[-1, :] = zero
    for j in range(n):
        T[-1, j] = value(c[j])
    for i in range(m):
        if basis[i] < n_tot and T[-1, basis[i]] != zero:
            T[-1] -= T[-1, basis[i]] * T[i]
    try:
        it2 = _run(T, basis, tol, max_iter)
    except _Unbounded:
        return LpResult(status=UNBOUNDED, value=float("inf")), None, None, None

    x = [zero] * n_tot
    for i in range(m):
        if basis[i] < n_tot:
            x[basis[i]] = T[i, -1]
    return None, T, basis, (x, signs, it1 + it2)


def solve(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, tol=1e-9, max_iter=None) -> LpResult:
    """Float simplex.  Returns optimal x, value and per-row dual multipliers."""
    A_ub = [] if A_ub is None else list(A_ub)
    b_ub = [] if b_ub is None else list(b_ub)
    A_eq = [] if A_eq is None else list(A_eq)
    b_eq = [] if b_eq is None else list(b_eq)
    n = len(c)
    m = len(b_ub) + len(b_eq)
    if max_iter is None:
        max_iter = 200 + 50 * (n + m)
    early, T, basis, packed = _solve_core(
        c, A_ub, b_ub, A_eq, b_eq, float, 0.0, 1.0, tol, max_iter, exact=False
    )
    if early is not None:
        return early
    x_full, signs, iters = packed

    m_ub = len(b_ub)
    # rebuild standard-form matrix in the ORIGINAL row orientation to get
    # clean primal/dual values independent of accumulated pivot roundoff
    A_std = np.zeros((m, n + m_ub))
    b_std = np.zeros(m)
    for i in range(m_ub):
        A_std[i, :n] = A_ub[i]
        A_std[i, n + i] = 1.0
        b_std[i] = b_ub[i]
    for i in range(len(b_eq)):
        A_std[m_ub + i, :n] = A_eq[i]
        b_std[m_ub + i] = b_eq[i]
    c_std = np.concatenate([np.asarray(c, dtype=float), np.zeros(m_ub)])

    basis = list(basis)
    xb = None
    duals = None
    if all(j < n + m_ub for j in basis):
        B = A_std[:, basis]
        try:
            xb = np.linalg.solve(B, b_std)
            duals = np.linalg.solve(B.T, c_std[basis])
        except np.linalg.LinAlgError:
            xb = None
            duals = None
    x_res = np.zeros(n + m_ub)
    if xb is not None:
        for i, j in enumerate(basis):
            x_res[j] = xb[i]
        # degenerate bases can leave tiny negative entries; clamp exact zeros
        x_res[np.abs(x_res) < tol] = 0.0
    else:
        x_res[: len(x_full)] = [float(v) for v in x_full[: n + m_ub]]
    value = float(np.dot(c_std, x_res))
    return LpResult(
        status=OPTIMAL,
        value=value,
        x=x_res[:n],
        duals=duals,
        basis=basis,
        iterations=iters,
    )


def solve_exact(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, max_iter=None):
    """Exact-rational simplex for tiny instances; returns (status, value, x).

    Arguments may be ints, floats, strings or Fractions; floats are converted
    via Fraction(float) exactly.
    """
    A_ub = [] if A_ub is None else [list(r) for r in A_ub]
    b_ub = [] if b_ub is None else list(b_ub)
    A_eq = [] if A_eq is None else [list(r) for r in A_eq]
    b_eq = [] if b_eq is None else list(b_eq)
    n = len(c)
    m = len(b_ub) + len(b_eq)
    if max_iter is None:
        max_iter = 200 + 50 * (n + m)
    early, T, basis, packed = _solve_core(
        c, A_ub, b_ub, A_eq, b_eq, Fraction, Fraction(0), Fraction(1), Fraction(0),
        max_iter, exact=True,
    )
    if early is not None:
        return early.status, None, None
    x_full, signs, iters = packed
    x = [Fraction(0)] * n
    for j in range(n):
        x[j] = x_full[j]
    value = sum(Fraction(ci) * x[j] for j, ci in enumerate(c))
    return OPTIMAL, value, x
