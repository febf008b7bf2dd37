"""Budget-state backward induction over the lattice.

The value function carries, besides the lattice node, one budget coordinate
per binding constraint: the remaining inequality allowance y and the
remaining equality quota z.  Stopping is feasible only where every y is
nonnegative and every z is zero (within tolerance).  Continuing consumes the
one-step costs and splits the remainder between the two children; child A's
budget is scanned over the grid, child B's is implied by the identity

    0.5 * budget_A + 0.5 * budget_B = budget - step_cost * dt

so the search is exhaustive and exact at grid resolution.  Off-grid child
budgets are evaluated by multilinear interpolation with conservative -inf
propagation.  In RELAXED mode every (step, node) slice is replaced by its
upper concave envelope over the budget coordinates after the stage
optimization; lifted cells become explicit mixtures of the supporting pure
decisions, which is how node-level randomization enters.

Within a time slice the (node, cell) updates are independent; slices are
processed as sequential barriers.  Tables are write-once per cell.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import _scan
from .envelope import UpperEnvelopeND, concave_envelope_1d
from .lattice import LatticeModel, build_lattice
from .model import (
    EQUALITY,
    INEQUALITY,
    NEG_INF,
    Budget,
    ProblemInstance,
    ValidationError,
)

PURE = "pure"
RELAXED = "relaxed"

STOP = 0
CONTINUE = 1
MIX = 2
INFEASIBLE = -1

DECISION_NAMES = {STOP: "STOP", CONTINUE: "CONTINUE", MIX: "MIX", INFEASIBLE: "INFEASIBLE"}

DEFAULT_GRID_POINTS = 65
DEFAULT_TOL = 1e-9
DEFAULT_TOL_ALLOC = 1e-9
_LIFT_TOL = 1e-12


class ConfigurationError(ValidationError):
    pass


class UnsupportedModeError(ValidationError):
    pass


class PolicyInfeasibilityError(AssertionError):
    """Forward evaluation violated a constraint; indicates a solver bug."""


def feasible_to_stop(budget: Budget, tol: float = DEFAULT_TOL) -> bool:
    """Stopping is allowed iff every y_i >= -tol and every |z_j| <= tol."""
    if tol < 0:
        raise ValidationError("tol must be nonnegative")
    return all(v >= -tol for v in budget.y) and all(abs(v) <= tol for v in budget.z)


# ---------------------------------------------------------------------------
# Budget grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Axis:
    kind: str              # INEQUALITY or EQUALITY
    cons_index: int        # index into the full constraint list
    values: np.ndarray     # sorted grid values

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.shape[0] < 2:
            raise ConfigurationError("budget grid resolution must be at least 2")
        if not np.all(np.isfinite(v)):
            raise ConfigurationError("budget grid bounds must be finite")
        if not np.all(np.diff(v) > 0):
            raise ConfigurationError("budget grid values must be strictly increasing")
        if self.kind == EQUALITY and np.min(np.abs(v)) > 1e-12:
            raise ConfigurationError("equality budget axes must contain 0")

    @property
    def lo(self):
        return float(self.values[0])

    @property
    def hi(self):
        return float(self.values[-1])

    @property
    def n(self):
        return self.values.shape[0]


class BudgetGrid:
    """Product grid over the binding budget coordinates.

    Inequality coordinates with a +inf root level are dropped entirely; the
    remaining axes are ordered inequalities-first in constraint order.
    """

    def __init__(self, axes):
        self.axes = list(axes)
        self.shape = tuple(a.n for a in self.axes)
        self.n_cells = int(np.prod(self.shape)) if self.axes else 1
        if self.axes:
            mesh = np.meshgrid(*[a.values for a in self.axes], indexing="ij")
            self.cell_values = np.stack([m.reshape(-1) for m in mesh], axis=1)
        else:
            self.cell_values = np.zeros((1, 0))

    @property
    def ndim(self):
        return len(self.axes)

    def cell_budget(self, problem: ProblemInstance, cell: int) -> Budget:
        """Full Budget of a cell, +inf restored on dropped coordinates."""
        vals = self.cell_values[cell]
        y = []
        pos = 0
        grid_ineq = {a.cons_index for a in self.axes if a.kind == INEQUALITY}
        for ci in problem.constraints.inequality_indices:
            if ci in grid_ineq:
                y.append(vals[pos])
                pos += 1
            else:
                y.append(math.inf)
        z = list(vals[pos:])
        return Budget(y=tuple(y), z=tuple(z))

    def stop_mask(self, tol: float) -> np.ndarray:
        mask = np.ones(self.n_cells, dtype=bool)
        for c, axis in enumerate(self.axes):
            v = self.cell_values[:, c]
            if axis.kind == INEQUALITY:
                mask &= v >= -tol
            else:
                mask &= np.abs(v) <= tol
        return mask

    @classmethod
    def for_problem(
        cls,
        problem: ProblemInstance,
        points: int = DEFAULT_GRID_POINTS,
        lattice: LatticeModel = None,
        bounds: dict = None,
    ) -> "BudgetGrid":
        """Auto-sized grid: spans 0, the root level, and the reachable costs."""
        if lattice is None:
            lattice = build_lattice(problem)
        horizon = problem.n_steps * problem.dt
        rate_lo = np.full(len(problem.constraints), np.inf)
        rate_hi = np.full(len(problem.constraints), -np.inf)
        for k in range(problem.n_steps):
            cost = lattice.stage(k)["cost"]
            if cost.size:
                rate_lo = np.minimum(rate_lo, cost.min(axis=(1, 2)))
                rate_hi = np.maximum(rate_hi, cost.max(axis=(1, 2)))
        bounds = bounds or {}
        axes = []
        for pos, ci in enumerate(problem.constraints.inequality_indices):
            level = problem.root_budget.y[pos]
            if not math.isfinite(level):
                continue
            label = problem.constraints.records[ci].label
            if label in bounds:
                lo, hi = bounds[label]
            else:
                lo = min(0.0, level, horizon * min(0.0, rate_lo[ci]))
                hi = max(0.0, level, horizon * max(0.0, rate_hi[ci]))
            axes.append(Axis(INEQUALITY, ci, _axis_values(lo, hi, points, contain_zero=False)))
        for pos, ci in enumerate(problem.constraints.equality_indices):
            level = problem.root_budget.z[pos]
            label = problem.constraints.records[ci].label
            if label in bounds:
                lo, hi = bounds[label]
            else:
                lo = min(0.0, level, horizon * min(0.0, rate_lo[ci]))
                hi = max(0.0, level, horizon * max(0.0, rate_hi[ci]))
            axes.append(Axis(EQUALITY, ci, _axis_values(lo, hi, points, contain_zero=True)))
        return cls(axes)


def _axis_values(lo, hi, points, contain_zero):
    if hi <= lo:
        hi = lo + 1.0
    if not contain_zero or lo == 0.0 or hi == 0.0 or lo > 0 or hi < 0:
        return np.linspace(lo, hi, points)
    # split the points proportionally so that 0 is exactly a grid value
    neg = -lo
    pos = hi
    j = int(round(neg / (neg + pos) * (points - 1)))
    j = min(max(j, 1), points - 2)
    left = np.linspace(lo, 0.0, j + 1)
    right = np.linspace(0.0, hi, points - j)
    return np.concatenate([left, right[1:]])


def project_budget(grid: BudgetGrid, problem: ProblemInstance, budget: Budget) -> np.ndarray:
    """Budget levels in grid-axis order; errors if shapes mismatch."""
    if not budget.matches(problem.constraints):
        raise ConfigurationError("budget does not match the constraint list")
    ineq_pos = {ci: p for p, ci in enumerate(problem.constraints.inequality_indices)}
    eq_pos = {ci: p for p, ci in enumerate(problem.constraints.equality_indices)}
    out = np.empty(grid.ndim)
    for c, axis in enumerate(grid.axes):
        if axis.kind == INEQUALITY:
            out[c] = budget.y[ineq_pos[axis.cons_index]]
        else:
            out[c] = budget.z[eq_pos[axis.cons_index]]
    return out


# ---------------------------------------------------------------------------
# Interpolation
# ---------------------------------------------------------------------------


def _locate(axis: Axis, q: float, snap: float, clamp_hi: bool):
    """(floor_index, weight_on_floor, status); status 0 invalid, 1 interp, 2 exact."""
    v = axis.values
    idx = int(np.searchsorted(v, q))
    for cand in (idx - 1, idx, idx + 1):
        if 0 <= cand < axis.n and abs(q - v[cand]) <= snap:
            return cand, 1.0, 2
    if q < v[0]:
        return 0, 1.0, 0
    if q > v[-1]:
        if clamp_hi and axis.kind == INEQUALITY:
            return axis.n - 1, 1.0, 2
        return axis.n - 1, 1.0, 0
    lo = idx - 1
    w = (v[lo + 1] - q) / (v[lo + 1] - v[lo])
    return lo, float(w), 1


def interp_slice(grid: BudgetGrid, values: np.ndarray, point, snap=DEFAULT_TOL_ALLOC,
                 clamp_hi=False):
    """Multilinear interpolation of one node slice at an arbitrary budget point.

    Any -inf corner of the containing cell makes the result -inf (feasibility
    stays conservative); queries within ``snap`` of a grid value use that
    value exactly.
    """
    if grid.ndim == 0:
        return float(values[0])
    point = np.asarray(point, dtype=float)
    locs = []
    for c, axis in enumerate(grid.axes):
        lo, w, ok = _locate(axis, float(point[c]), snap, clamp_hi)
        if ok == 0:
            return NEG_INF
        locs.append((lo, w, ok))
    total = 0.0
    vgrid = values.reshape(grid.shape)
    for corners in itertools.product(*[(0, 1) if ok == 1 else (0,) for _, _, ok in locs]):
        wgt = 1.0
        idx = []
        for (lo, w, ok), c in zip(locs, corners):
            idx.append(lo + c)
            wgt *= (w if c == 0 else 1.0 - w) if ok == 1 else 1.0
        v = float(vgrid[tuple(idx)])
        if v == NEG_INF:
            return NEG_INF
        total += wgt * v
    return total


def _alloc_tables(axis: Axis, step_cost: float, snap: float):
    """Per-coordinate implied-child tables over (candidate, cell) pairs.

    Implied child-B coordinate for cell value t and candidate a is
    2 * (t - step_cost) - a.  Returns int64/float64/uint8 arrays of shape
    (n, n) suitable for the scan kernels, plus the implied raw values.
    """
    v = axis.values
    n = axis.n
    target = v - step_cost
    implied = 2.0 * target[None, :] - v[:, None]      # (candidate j, cell i)
    lo = np.zeros((n, n), dtype=np.int64)
    w = np.ones((n, n), dtype=np.float64)
    ok = np.zeros((n, n), dtype=np.uint8)
    stored = implied.copy()

    idx = np.searchsorted(v, implied)
    for shift in (-1, 0, 1):
        cand = np.clip(idx + shift, 0, n - 1)
        hit = (np.abs(implied - v[cand]) <= snap) & (ok == 0)
        lo[hit] = cand[hit]
        ok[hit] = 2
        stored[hit] = v[cand][hit]
    below = (implied < v[0]) & (ok == 0)
    above = (implied > v[-1]) & (ok == 0)
    if axis.kind == INEQUALITY:
        lo[above] = n - 1
        ok[above] = 2
        stored[above] = v[-1]
    interior = (ok == 0) & ~below & ~above
    ilo = np.clip(idx - 1, 0, n - 2)
    lo[interior] = ilo[interior]
    span = v[ilo + 1] - v[ilo]
    w_int = (v[ilo + 1] - implied) / span
    w[interior] = w_int[interior]
    ok[interior] = 1
    return lo, w, ok, stored


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------


@dataclass
class ValueTable:
    grid: BudgetGrid
    mode: str
    values: list                      # values[k]: (n_nodes_k, n_cells)
    tol: float
    tol_alloc: float
    root_value: float = NEG_INF

    def value_at(self, k, node, budget_point):
        return interp_slice(self.grid, self.values[k][node], budget_point,
                            snap=self.tol_alloc)


@dataclass
class PolicyTable:
    grid: BudgetGrid
    mode: str
    code: list                        # code[k]: (n_nodes_k, n_cells) int8
    ctrl: list                        # control index, -1 where not continuing
    childA_cell: list                 # flat cell of child A's budget, -1 where n/a
    alloc: list                       # alloc[k]: (n, cells, 2, m) child budget values
    mix: dict = field(default_factory=dict)   # (k, node, cell) -> (cells, weights)
    tol: float = DEFAULT_TOL
    tol_alloc: float = DEFAULT_TOL_ALLOC
    lattice_signature: tuple = ()

    def decision(self, k, node, cell):
        return int(self.code[k][node, cell])


def _lattice_signature(lattice: LatticeModel):
    return (lattice.mode, lattice.n_steps, tuple(lattice.n_nodes(k) for k in range(lattice.n_steps + 1)))


# ---------------------------------------------------------------------------
# Reference single-cell step (readable; cross-checks the kernels)
# ---------------------------------------------------------------------------


def bellman_step(
    next_slices,
    k,
    node,
    cell,
    problem: ProblemInstance,
    grid: BudgetGrid,
    lattice: LatticeModel,
    mode: str = PURE,
    tol: float = DEFAULT_TOL,
    tol_alloc: float = DEFAULT_TOL_ALLOC,
):
    """One-cell stage optimization; returns (value, decision dict).

    ``next_slices`` maps child node index -> value slice at step k+1 (already
    concavified in RELAXED mode).  Kept deliberately straightforward: the
    batch solver must agree with this cell by cell.
    """
    st = lattice.stage(k)
    cellv = grid.cell_values[cell]
    sel = [a.cons_index for a in grid.axes]
    best = NEG_INF
    decision = {"kind": INFEASIBLE}
    if bool(grid.stop_mask(tol)[cell]):
        best = float(st["pi"][node])
        decision = {"kind": STOP}

    per_u = lattice.children[k].shape[1]
    for j in range(lattice.n_controls):
        ch = lattice.children[k][node, j if per_u > 1 else 0]
        stage_reward = float(st["f"][node, j]) * lattice.dt
        target = cellv - np.array([st["cost"][ci, node, j] for ci in sel]) * lattice.dt
        va = next_slices[int(ch[0])]
        vb = next_slices[int(ch[1])]
        for a_cell in range(grid.n_cells):
            a_val = float(va[a_cell])
            if a_val == NEG_INF:
                continue
            a_pt = grid.cell_values[a_cell]
            b_pt = 2.0 * target - a_pt
            ok = True
            b_store = np.empty(grid.ndim)
            for c, axis in enumerate(grid.axes):
                lo, w, status = _locate(axis, float(b_pt[c]), tol_alloc, clamp_hi=True)
                if status == 0:
                    ok = False
                    break
                b_store[c] = axis.values[lo] if status == 2 else b_pt[c]
            if not ok:
                continue
            b_val = interp_slice(grid, vb, b_store, snap=tol_alloc, clamp_hi=True)
            if b_val == NEG_INF:
                continue
            total = stage_reward + 0.5 * a_val + 0.5 * b_val
            if total > best:
                best = total
                decision = {
                    "kind": CONTINUE,
                    "control": j,
                    "childA_cell": a_cell,
                    "alloc": np.stack([a_pt, b_store]) if grid.ndim else np.zeros((2, 0)),
                }
    return best, decision


# ---------------------------------------------------------------------------
# Concavification
# ---------------------------------------------------------------------------


def concavify(grid: BudgetGrid, values: np.ndarray):
    """Upper concave envelope of one node slice over the budget coordinates.

    Returns (envelope, support) where support[cell] is (cells, weights) for
    cells the envelope lifted; -inf cells outside the hull stay -inf.
    Support atoms are resolved only where the envelope actually exceeds the
    input, which is where the solver needs a mixture.
    """
    m = grid.ndim
    if m == 0:
        return values.copy(), [None]
    if m > 2:
        raise UnsupportedModeError(
            "relaxed mode supports at most 2 constrained budget coordinates"
        )
    if m == 1:
        env, sup1 = concave_envelope_1d(grid.axes[0].values, values)
        support = [None] * grid.n_cells
        for i, s in enumerate(sup1):
            if s is None:
                continue
            a, b, w = s
            if a == b:
                support[i] = ([a], [1.0])
            else:
                support[i] = ([a, b], [w, 1.0 - w])
        return env, support

    finite = np.where(np.isfinite(values))[0]
    env = np.full(grid.n_cells, NEG_INF)
    support = [None] * grid.n_cells
    if finite.size == 0:
        return env, support
    pts = grid.cell_values[finite]
    vals = values[finite]
    surf = UpperEnvelopeND(pts, vals)
    env = surf.evaluate(grid.cell_values)
    lifted = np.where(env > values + _LIFT_TOL)[0]
    got = surf.support_many(grid.cell_values, env, list(lifted))
    for cell, sup in got.items():
        idxs, ws = sup
        support[cell] = ([int(finite[i]) for i in idxs], list(ws))
    np.maximum(env, values, out=env)
    return env, support


# ---------------------------------------------------------------------------
# Solve
# ---------------------------------------------------------------------------


def solve(
    problem: ProblemInstance,
    grid: BudgetGrid = None,
    mode: str = PURE,
    lattice: LatticeModel = None,
    tol: float = DEFAULT_TOL,
    tol_alloc: float = DEFAULT_TOL_ALLOC,
    node_cap: int = 2**20,
):
    """Backward recursion over (step, node, budget cell).

    Returns (ValueTable, PolicyTable); the root value is interpolated at the
    root budget and is -inf when the instance is infeasible at this grid
    resolution.
    """
    if mode not in (PURE, RELAXED):
        raise ConfigurationError(f"mode must be '{PURE}' or '{RELAXED}'")
    if lattice is None:
        lattice = build_lattice(problem, node_cap=node_cap)
    if grid is None:
        grid = BudgetGrid.for_problem(problem, lattice=lattice)
    m = grid.ndim
    if mode == RELAXED and m > 2:
        raise UnsupportedModeError(
            "relaxed mode supports at most 2 constrained budget coordinates"
        )
    root_point = project_budget(grid, problem, problem.root_budget)
    for c, axis in enumerate(grid.axes):
        if not (axis.lo - 1e-12 <= root_point[c] <= axis.hi + 1e-12):
            raise ConfigurationError(
                f"budget grid [{axis.lo}, {axis.hi}] excludes the root level "
                f"{root_point[c]} on coordinate {c}"
            )

    N = lattice.n_steps
    dt = lattice.dt
    sel = [a.cons_index for a in grid.axes]
    stop_mask = grid.stop_mask(tol)
    n_cells = grid.n_cells

    values = [None] * (N + 1)
    code = [None] * (N + 1)
    ctrl = [None] * (N + 1)
    childA = [None] * (N + 1)
    alloc = [None] * (N + 1)
    mix = {}

    # terminal slice: forced stop where feasible
    st = lattice.stage(N)
    nN = lattice.n_nodes(N)
    values[N] = np.where(stop_mask[None, :], st["pi"][:, None], NEG_INF)
    code[N] = np.repeat(
        np.where(stop_mask, STOP, INFEASIBLE).astype(np.int8)[None, :], nN, axis=0
    )
    ctrl[N] = np.full((nN, n_cells), -1, dtype=np.int16)
    childA[N] = np.full((nN, n_cells), -1, dtype=np.int64)
    alloc[N] = np.zeros((nN, n_cells, 2, m))
    if mode == RELAXED and m:
        for i in range(nN):
            env, support = concavify(grid, values[N][i])
            _apply_envelope(values[N], code[N], mix, N, i, env, support)

    for k in range(N - 1, -1, -1):
        st = lattice.stage(k)
        n_k = lattice.n_nodes(k)
        per_u = lattice.children[k].shape[1]
        vk = np.where(stop_mask[None, :], st["pi"][:, None], NEG_INF)
        ck = np.repeat(
            np.where(stop_mask, STOP, INFEASIBLE).astype(np.int8)[None, :], n_k, axis=0
        )
        uk = np.full((n_k, n_cells), -1, dtype=np.int16)
        ak = np.full((n_k, n_cells), -1, dtype=np.int64)
        bk = np.zeros((n_k, n_cells, 2, m))

        if m == 0:
            vnext = values[k + 1][:, 0]
            for j in range(lattice.n_controls):
                ch = lattice.children[k][:, j if per_u > 1 else 0, :]
                cont = st["f"][:, j] * dt + 0.5 * (vnext[ch[:, 0]] + vnext[ch[:, 1]])
                better = cont > vk[:, 0]
                vk[better, 0] = cont[better]
                ck[better, 0] = CONTINUE
                uk[better, 0] = j
                ak[better, 0] = 0
        else:
            for i in range(n_k):
                for j in range(lattice.n_controls):
                    ch = lattice.children[k][i, j if per_u > 1 else 0]
                    va = values[k + 1][int(ch[0])]
                    vb = values[k + 1][int(ch[1])]
                    cont, arg, stored = _scan_node(
                        grid, va, vb,
                        [st["cost"][ci, i, j] * dt for ci in sel],
                        tol_alloc,
                    )
                    cont = cont + st["f"][i, j] * dt
                    better = cont > vk[i]
                    if not np.any(better):
                        continue
                    vk[i, better] = cont[better]
                    ck[i, better] = CONTINUE
                    uk[i, better] = j
                    ak[i, better] = arg[better]
                    bk[i, better, 0, :] = grid.cell_values[arg[better]]
                    bk[i, better, 1, :] = stored[better]
        values[k] = vk
        code[k] = ck
        ctrl[k] = uk
        childA[k] = ak
        alloc[k] = bk
        if mode == RELAXED and m:
            for i in range(n_k):
                env, support = concavify(grid, values[k][i])
                _apply_envelope(values[k], code[k], mix, k, i, env, support)

    root_value = interp_slice(grid, values[0][0], root_point, snap=tol_alloc)
    vt = ValueTable(grid=grid, mode=mode, values=values, tol=tol, tol_alloc=tol_alloc,
                    root_value=root_value)
    pt = PolicyTable(
        grid=grid,
        mode=mode,
        code=code,
        ctrl=ctrl,
        childA_cell=childA,
        alloc=alloc,
        mix=mix,
        tol=tol,
        tol_alloc=tol_alloc,
        lattice_signature=_lattice_signature(lattice),
    )
    return vt, pt


def _apply_envelope(value_slice, code_slice, mix, k, node, env, support):
    """Lift a node slice to its envelope, but only where the lift is
    realizable as a stored mixture; value and policy must stay in sync."""
    lifted = env > value_slice[node] + _LIFT_TOL
    for cell in np.where(lifted)[0]:
        realized = False
        if support[cell] is not None:
            cells, ws = support[cell]
            keep = [(c, w) for c, w in zip(cells, ws) if w > 1e-12]
            if keep:
                tot = sum(w for _, w in keep)
                mix[(k, node, int(cell))] = (
                    [int(c) for c, _ in keep],
                    [float(w / tot) for _, w in keep],
                )
                code_slice[node, cell] = MIX
                realized = True
        if realized:
            value_slice[node][cell] = max(value_slice[node][cell], env[cell])
    # cells the envelope could not certify keep their pure value/decision


def _scan_node(grid: BudgetGrid, va, vb, step_costs, snap):
    """Best allocation per cell for one (node, control); returns
    (continuation values, argmax candidate cells, stored child-B budgets)."""
    m = grid.ndim
    out_val = np.full(grid.n_cells, NEG_INF)
    out_arg = np.full(grid.n_cells, -1, dtype=np.int64)
    if m == 1:
        lo, w, ok, stored = _alloc_tables(grid.axes[0], step_costs[0], snap)
        jlo, jhi = _scan.window_bounds(ok)
        _scan.scan_1d(
            va, vb,
            np.ascontiguousarray(lo.T), np.ascontiguousarray(w.T),
            np.ascontiguousarray(ok.T), jlo, jhi, out_val, out_arg,
        )
        bstore = np.zeros((grid.n_cells, 1))
        have = out_arg >= 0
        bstore[have, 0] = stored[out_arg[have], np.arange(grid.n_cells)[have]]
        return out_val, out_arg, bstore
    if m == 2:
        loY, wY, okY, storedY = _alloc_tables(grid.axes[0], step_costs[0], snap)
        loZ, wZ, okZ, storedZ = _alloc_tables(grid.axes[1], step_costs[1], snap)
        jloY, jhiY = _scan.window_bounds(okY)
        jloZ, jhiZ = _scan.window_bounds(okZ)
        nz = grid.axes[1].n
        _scan.scan_2d(
            va, vb, nz,
            np.ascontiguousarray(loY.T), np.ascontiguousarray(wY.T),
            np.ascontiguousarray(okY.T), jloY, jhiY,
            np.ascontiguousarray(loZ.T), np.ascontiguousarray(wZ.T),
            np.ascontiguousarray(okZ.T), jloZ, jhiZ,
            out_val, out_arg,
        )
        bstore = np.zeros((grid.n_cells, 2))
        have = np.where(out_arg >= 0)[0]
        if have.size:
            jy, jz = np.divmod(out_arg[have], nz)
            cy, cz = np.divmod(have, nz)
            bstore[have, 0] = storedY[jy, cy]
            bstore[have, 1] = storedZ[jz, cz]
        return out_val, out_arg, bstore
    # generic slow path for three or more coordinates (PURE mode only)
    tables = [_alloc_tables(grid.axes[c], step_costs[c], snap) for c in range(m)]
    cell_idx = np.unravel_index(np.arange(grid.n_cells), grid.shape)
    bstore = np.zeros((grid.n_cells, m))
    for cell in range(grid.n_cells):
        ci = [int(cell_idx[c][cell]) for c in range(m)]
        best = NEG_INF
        barg = -1
        bvals = None
        for a_cell in range(grid.n_cells):
            if va[a_cell] == NEG_INF:
                continue
            ai = np.unravel_index(a_cell, grid.shape)
            ok = True
            point = np.empty(m)
            for c in range(m):
                lo, w, okc, stored = tables[c]
                if okc[ai[c], ci[c]] == 0:
                    ok = False
                    break
                point[c] = stored[ai[c], ci[c]]
            if not ok:
                continue
            bval = interp_slice(grid, vb, point, snap=snap, clamp_hi=True)
            if bval == NEG_INF:
                continue
            total = 0.5 * va[a_cell] + 0.5 * bval
            if total > best:
                best, barg, bvals = total, a_cell, point.copy()
        out_val[cell] = best
        out_arg[cell] = barg
        if bvals is not None:
            bstore[cell] = bvals
    return out_val, out_arg, bstore


# ---------------------------------------------------------------------------
# Forward policy evaluation (exact expectation over the tree, no sampling)
# ---------------------------------------------------------------------------


def _corner_cells(grid: BudgetGrid, point, snap, clamp_hi=True):
    """Grid cells and multilinear weights representing an off-grid budget."""
    if grid.ndim == 0:
        return [(0, 1.0)]
    locs = []
    for c, axis in enumerate(grid.axes):
        lo, w, ok = _locate(axis, float(point[c]), snap, clamp_hi)
        if ok == 0:
            return None
        locs.append((lo, w, ok))
    out = []
    for corners in itertools.product(*[(0, 1) if ok == 1 else (0,) for _, _, ok in locs]):
        wgt = 1.0
        idx = 0
        for (lo, w, ok), c, axis_n in zip(locs, corners, grid.shape):
            wgt *= (w if c == 0 else 1.0 - w) if ok == 1 else 1.0
            idx = idx * axis_n + (lo + c)
        if wgt > 1e-15:
            out.append((idx, wgt))
    return out


def forward_flow(
    policy: PolicyTable,
    lattice: LatticeModel,
    root_budget: Budget = None,
    stop_at: int = None,
    check: bool = True,
):
    """Push the root mass through the stored decisions, exactly.

    Returns (collected_value, achieved_costs, frontier) where ``frontier``
    maps (node, cell) to the surviving probability at step ``stop_at``
    (empty when running to the horizon).  Budgets reached between grid
    points split their mass over the surrounding cells with the
    interpolation weights, i.e. the same randomization the solver priced in.
    """
    problem = lattice.problem
    if policy.lattice_signature != _lattice_signature(lattice):
        raise ValidationError("policy was produced on a different lattice")
    grid = policy.grid
    m = grid.ndim
    tol_alloc = policy.tol_alloc
    root_budget = problem.root_budget if root_budget is None else root_budget
    root_point = project_budget(grid, problem, root_budget)
    corners = _corner_cells(grid, root_point, tol_alloc, clamp_hi=False)
    if corners is None:
        raise ConfigurationError("root budget lies outside the policy's grid")

    N = lattice.n_steps
    last = N if stop_at is None else min(stop_at, N)
    dt = lattice.dt
    sel = [a.cons_index for a in grid.axes]
    value = 0.0
    achieved = np.zeros(len(problem.constraints))

    frontier = {}
    for cell, w in corners:
        frontier[(0, cell)] = frontier.get((0, cell), 0.0) + w

    for k in range(last + 1):
        if k == last and stop_at is not None:
            break
        st = lattice.stage(k)
        per_u = lattice.children[k].shape[1] if k < N else 0
        nxt = {}
        for (i, cell), p in sorted(frontier.items()):
            atoms = [(cell, p)]
            if policy.code[k][i, cell] == MIX:
                cells, ws = policy.mix[(k, i, cell)]
                atoms = [(c, p * w) for c, w in zip(cells, ws)]
            for dcell, dp in atoms:
                kind = int(policy.code[k][i, dcell])
                if kind == STOP:
                    value += dp * st["pi"][i]
                    continue
                if kind != CONTINUE or k == N:
                    raise PolicyInfeasibilityError(
                        f"policy visits {DECISION_NAMES.get(kind, kind)} cell at "
                        f"step {k}, node {i}, cell {dcell}"
                    )
                j = int(policy.ctrl[k][i, dcell])
                value += dp * st["f"][i, j] * dt
                achieved += dp * st["cost"][:, i, j] * dt
                ch = lattice.children[k][i, j if per_u > 1 else 0]
                a_cell = int(policy.childA_cell[k][i, dcell])
                b_point = policy.alloc[k][i, dcell, 1]
                if check and m:
                    cellv = grid.cell_values[dcell]
                    target = cellv - np.array([st["cost"][ci, i, j] for ci in sel]) * dt
                    half = 0.5 * (grid.cell_values[a_cell] + b_point)
                    for c, axis in enumerate(grid.axes):
                        err = half[c] - target[c]
                        bad = err > tol_alloc if axis.kind == INEQUALITY else abs(err) > tol_alloc
                        if bad:
                            raise PolicyInfeasibilityError(
                                f"allocation identity off by {err:g} at step {k}, "
                                f"node {i}, cell {dcell}, coordinate {c}"
                            )
                key = (int(ch[0]), a_cell)
                nxt[key] = nxt.get(key, 0.0) + 0.5 * dp
                b_corners = _corner_cells(grid, b_point, tol_alloc)
                if b_corners is None:
                    raise PolicyInfeasibilityError(
                        f"stored child budget {b_point} escapes the grid at step {k}"
                    )
                for ccell, w in b_corners:
                    key = (int(ch[1]), ccell)
                    nxt[key] = nxt.get(key, 0.0) + 0.5 * dp * w
        frontier = nxt
    return value, achieved, frontier


def evaluate_policy(
    policy: PolicyTable,
    lattice: LatticeModel,
    root_budget: Budget = None,
    check: bool = True,
):
    """Exact forward expectation of a solved policy over the tree.

    Returns (value, achieved) where achieved[c] is the expected accumulated
    cost of constraint c.  Verifies on the way that every continuation obeys
    the child-budget identity and, at the end, that the achieved costs meet
    the root budget within tol_alloc * n_steps; a violation raises
    PolicyInfeasibilityError, which signals a solver bug rather than user
    error.
    """
    problem = lattice.problem
    root_budget = problem.root_budget if root_budget is None else root_budget
    value, achieved, frontier = forward_flow(policy, lattice, root_budget, check=check)
    assert not frontier
    if check:
        N = lattice.n_steps
        slack = policy.tol_alloc * max(N, 1)
        for pos, ci in enumerate(problem.constraints.inequality_indices):
            y = root_budget.y[pos]
            if math.isfinite(y) and achieved[ci] > y + slack:
                raise PolicyInfeasibilityError(
                    f"achieved inequality cost {achieved[ci]!r} exceeds budget {y!r}"
                )
        for pos, ci in enumerate(problem.constraints.equality_indices):
            z = root_budget.z[pos]
            if abs(achieved[ci] - z) > slack:
                raise PolicyInfeasibilityError(
                    f"achieved equality cost {achieved[ci]!r} misses level {z!r}"
                )
    return value, achieved


# ---------------------------------------------------------------------------
# CSV persistence
# ---------------------------------------------------------------------------


def write_tables_csv(
    value_table: ValueTable,
    policy_table: PolicyTable,
    lattice: LatticeModel,
    path,
    mix_path=None,
):
    """One row per (step, node, budget cell); -inf serialized literally.

    Mixture atoms go to ``mix_path`` (defaults to <path> with a .mix.csv
    suffix) keyed by the same (step, node_id, cell indices).
    """
    grid = value_table.grid
    m = grid.ndim
    problem = lattice.problem
    idx_names = []
    for axis in grid.axes:
        tag = "y" if axis.kind == INEQUALITY else "z"
        idx_names.append(f"{tag}_idx_{axis.cons_index}")
    header = ["step", "node_id"] + idx_names + ["value", "decision", "control"]
    for c in range(m):
        header.append(f"child_a_budget_{c}")
    for c in range(m):
        header.append(f"child_b_budget_{c}")
    cell_multi = np.unravel_index(np.arange(grid.n_cells), grid.shape) if m else None
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(lattice.n_steps + 1):
            off = lattice.node_offset(k)
            for i in range(lattice.n_nodes(k)):
                for cell in range(grid.n_cells):
                    row = [str(k), str(off + i)]
                    if m:
                        row += [str(int(cell_multi[c][cell])) for c in range(m)]
                    v = value_table.values[k][i, cell]
                    row.append(repr(float(v)))
                    kind = int(policy_table.code[k][i, cell])
                    row.append(DECISION_NAMES[kind])
                    if kind == CONTINUE:
                        row.append(repr(problem.control_set[int(policy_table.ctrl[k][i, cell])]))
                        for c in range(m):
                            row.append(repr(float(policy_table.alloc[k][i, cell, 0, c])))
                        for c in range(m):
                            row.append(repr(float(policy_table.alloc[k][i, cell, 1, c])))
                    else:
                        row.append("")
                        row += [""] * (2 * m)
                    fh.write(",".join(row) + "\n")
    if mix_path is None:
        mix_path = str(path) + ".mix.csv"
    with open(mix_path, "w") as fh:
        fh.write("step,node_id,cell,atom,weight,atom_cell\n")
        for (k, i, cell), (cells, ws) in sorted(policy_table.mix.items()):
            off = lattice.node_offset(k)
            for a, (c, w) in enumerate(zip(cells, ws)):
                fh.write(f"{k},{off + i},{cell},{a},{w!r},{c}\n")
